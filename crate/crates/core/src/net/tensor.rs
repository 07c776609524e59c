use crate::error::{Error, Result};
use crate::net::Real;

/// Dense row-major n-dimensional array. The leading axis is the minibatch
/// axis wherever a tensor carries activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {:?} ({} expected)",
                data.len(),
                shape,
                want
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Shape without the batch axis.
    pub fn item_shape(&self) -> &[usize] {
        self.shape.get(1..).unwrap_or(&[])
    }

    /// Number of scalars per batch entry.
    pub fn item_len(&self) -> usize {
        self.item_shape().iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copies batch rows `rows` (in that order) into a new tensor.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let len = self.item_len();
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            data.extend_from_slice(&self.data[r * len..(r + 1) * len]);
        }
        let mut shape = self.shape.clone();
        if let Some(s) = shape.first_mut() {
            *s = rows.len();
        }
        Self { shape, data }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// NaN/∞ guard run after every layer when debug assertions are on.
    pub(crate) fn debug_check_finite(&self, op: &str) -> Result<()> {
        if cfg!(debug_assertions) && !self.all_finite() {
            return Err(Error::Numeric(format!("{op} produced a non-finite activation")));
        }
        Ok(())
    }

    pub(crate) fn expect_item_shape(&self, want: &[usize], op: &str) -> Result<()> {
        if self.shape.is_empty() || self.item_shape() != want {
            return Err(Error::Shape(format!(
                "{op} expects [batch, {}], got {:?}",
                want.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                self.shape
            )));
        }
        Ok(())
    }
}
