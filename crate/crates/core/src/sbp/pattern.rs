use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How features of an activation map share noise variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSpec {
    /// One group per scalar feature.
    PerFeature,
    /// One group per channel (last axis).
    PerChannel,
    /// Explicit surjective feature → group map over the flattened features.
    Custom { group_of: Vec<usize> },
}

impl GroupSpec {
    pub fn build(&self, input_shape: &[usize]) -> Result<GroupPattern> {
        match self {
            GroupSpec::PerFeature => GroupPattern::per_feature(input_shape),
            GroupSpec::PerChannel => GroupPattern::per_channel(input_shape),
            GroupSpec::Custom { group_of } => GroupPattern::custom(input_shape, group_of.clone()),
        }
    }
}

/// Total, surjective map from the flattened features of one example to
/// noise groups `0..groups`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPattern {
    spec: GroupSpec,
    input_shape: Vec<usize>,
    group_of: Vec<usize>,
    groups: usize,
}

fn feature_count(input_shape: &[usize]) -> Result<usize> {
    let n: usize = input_shape.iter().product();
    if input_shape.is_empty() || n == 0 {
        return Err(Error::Shape(format!("noise groups need a non-empty input shape, got {input_shape:?}")));
    }
    Ok(n)
}

impl GroupPattern {
    pub fn per_feature(input_shape: &[usize]) -> Result<Self> {
        let n = feature_count(input_shape)?;
        Ok(Self { spec: GroupSpec::PerFeature, input_shape: input_shape.to_vec(), group_of: (0..n).collect(), groups: n })
    }

    /// Groups by the last axis, e.g. `group_of(h, w, c) = c` for `[H, W, C]`.
    pub fn per_channel(input_shape: &[usize]) -> Result<Self> {
        let n = feature_count(input_shape)?;
        let c = *input_shape.last().unwrap_or(&0);
        Ok(Self {
            spec: GroupSpec::PerChannel,
            input_shape: input_shape.to_vec(),
            group_of: (0..n).map(|f| f % c).collect(),
            groups: c,
        })
    }

    pub fn custom(input_shape: &[usize], group_of: Vec<usize>) -> Result<Self> {
        let n = feature_count(input_shape)?;
        if group_of.len() != n {
            return Err(Error::Shape(format!("custom pattern maps {} features, input has {n}", group_of.len())));
        }
        let groups = group_of.iter().max().map_or(0, |g| g + 1);
        let mut seen = vec![false; groups];
        for &g in &group_of {
            seen[g] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Shape(format!("custom pattern leaves group {empty} without features")));
        }
        Ok(Self { spec: GroupSpec::Custom { group_of: group_of.clone() }, input_shape: input_shape.to_vec(), group_of, groups })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn features(&self) -> usize {
        self.group_of.len()
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    /// Per-feature expansion of per-group values.
    pub fn expand(&self, per_group: &[f64]) -> Vec<f64> {
        self.group_of.iter().map(|&g| per_group[g]).collect()
    }
}
