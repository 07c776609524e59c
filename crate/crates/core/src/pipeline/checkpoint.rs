//! Binary checkpoint: magic `SBP1`, a little-endian `u32` header length, a
//! UTF-8 JSON header (format version, network spec, array manifest), then
//! the arrays as little-endian `f32` in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Network, NetworkSpec, ParamKind, Real};

pub const MAGIC: &[u8; 4] = b"SBP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    /// Length in bytes.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub network: NetworkSpec,
    pub arrays: Vec<ArrayEntry>,
}

fn param_name(layer: usize, kind: ParamKind) -> String {
    let suffix = match kind {
        ParamKind::Weight => "weight",
        ParamKind::Bias => "bias",
        ParamKind::Mu => "mu",
        ParamKind::LogSigma => "log_sigma",
    };
    format!("{layer}.{suffix}")
}

/// Shapes of the arrays `net` exposes, in visit order.
fn param_shapes<T: Real>(net: &Network<T>) -> Vec<Vec<usize>> {
    net.layers()
        .iter()
        .flat_map(|l| match l {
            crate::net::Layer::Dense(d) => vec![vec![d.inputs, d.outputs], vec![d.outputs]],
            crate::net::Layer::Conv2d(c) => {
                let g = c.geometry();
                vec![vec![g.kernel_h, g.kernel_w, g.in_channels, g.out_channels], vec![g.out_channels]]
            }
            crate::net::Layer::Sbp(s) => vec![vec![s.groups()], vec![s.groups()]],
            _ => vec![],
        })
        .collect()
}

/// Serializes `net` (values rounded to `f32`).
pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut net = net.clone();
    let shapes = param_shapes(&net);
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    let mut idx = 0;
    net.visit_params(|layer, kind, values, _| {
        let start = payload.len() as u64;
        for v in values.iter() {
            payload.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: param_name(layer, kind),
            shape: shapes[idx].clone(),
            offset: start,
            length: payload.len() as u64 - start,
        });
        idx += 1;
    });
    let header = CheckpointHeader { format_version: FORMAT_VERSION, network: net.spec(), arrays };
    let json = serde_json::to_vec(&header).expect("header is always serializable");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parses and validates the header of an in-memory checkpoint; returns it
/// with the payload start offset.
pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 8 {
        return Err(corrupt(format!("file is {} bytes, too short for the preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt(format!("bad magic {:?}, expected \"SBP1\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let hbytes = bytes.get(8..8 + hlen).ok_or_else(|| corrupt("file ends inside the header"))?;
    let header = parse_header(hbytes)?;
    Ok((header, 8 + hlen))
}

fn parse_header(hbytes: &[u8]) -> Result<CheckpointHeader> {
    let text = std::str::from_utf8(hbytes).map_err(|e| corrupt(format!("header is not UTF-8: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(format!("header JSON: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(corrupt(format!(
            "unsupported format version {}, this build reads version {FORMAT_VERSION}",
            version.map_or("(missing)".to_string(), |v| v.to_string())
        )));
    }
    let header: CheckpointHeader =
        serde_json::from_value(value).map_err(|e| corrupt(format!("header schema: {e}")))?;
    // Manifest ranges must tile the payload exactly, in order.
    let mut expect = 0u64;
    for a in &header.arrays {
        let want = 4 * a.shape.iter().product::<usize>() as u64;
        if a.offset != expect || a.length != want {
            return Err(corrupt(format!(
                "array {} spans [{}, +{}) but should start at {expect} with {want} bytes",
                a.name, a.offset, a.length
            )));
        }
        expect += a.length;
    }
    Ok(header)
}

fn payload_len(header: &CheckpointHeader) -> u64 {
    header.arrays.iter().map(|a| a.length).sum()
}

/// Rebuilds a network from an in-memory checkpoint.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network<f32>> {
    let (header, start) = decode_header(bytes)?;
    build(&header, &bytes[start..])
}

fn build(header: &CheckpointHeader, payload: &[u8]) -> Result<Network<f32>> {
    let want = payload_len(header);
    if payload.len() as u64 != want {
        return Err(corrupt(format!("payload has {} bytes, manifest describes {want}", payload.len())));
    }
    let mut net = Network::<f32>::from_spec(&header.network, 0)
        .map_err(|e| corrupt(format!("network spec does not build: {e}")))?;
    let shapes = param_shapes(&net);
    if shapes.len() != header.arrays.len() {
        return Err(corrupt(format!(
            "network has {} parameter arrays, manifest lists {}",
            shapes.len(),
            header.arrays.len()
        )));
    }
    let mut idx = 0;
    let mut mismatch = None;
    net.visit_params(|layer, kind, values, _| {
        let entry = &header.arrays[idx];
        if mismatch.is_none() && (entry.name != param_name(layer, kind) || entry.shape != shapes[idx]) {
            mismatch = Some(format!(
                "manifest entry {idx} is {} {:?}, network expects {} {:?}",
                entry.name,
                entry.shape,
                param_name(layer, kind),
                shapes[idx]
            ));
        }
        if mismatch.is_none() {
            let bytes = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
            for (v, chunk) in values.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
        }
        idx += 1;
    });
    if let Some(m) = mismatch {
        return Err(corrupt(m));
    }
    for (_, s) in net.sbp_layers() {
        for g in 0..s.groups() {
            s.params(g).map_err(|e| corrupt(format!("noise parameters out of domain: {e}")))?;
        }
    }
    Ok(net)
}

/// Loads a checkpoint, validating the header before reading the payload.
pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pre = [0u8; 8];
    f.read_exact(&mut pre).map_err(|_| corrupt(format!("{}: too short for the preamble", path.display())))?;
    if &pre[..4] != MAGIC {
        return Err(corrupt(format!("{}: bad magic, not an SBP1 checkpoint", path.display())));
    }
    let hlen = u32::from_le_bytes([pre[4], pre[5], pre[6], pre[7]]) as usize;
    let mut hbytes = vec![0u8; hlen];
    f.read_exact(&mut hbytes).map_err(|_| corrupt(format!("{}: file ends inside the header", path.display())))?;
    let header = parse_header(&hbytes).map_err(|e| match e {
        Error::Checkpoint(m) => corrupt(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let mut payload = Vec::with_capacity(payload_len(&header) as usize);
    f.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    build(&header, &payload).map_err(|e| match e {
        Error::Checkpoint(m) => corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}
