//! `FPW1` weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FPW1" | u16 version | u32 layer count
//! per layer: u16 name length | name (UTF-8) | u8 dtype (0 = f32, 1 = f64)
//!            | u8 rank | rank x u32 dims | row-major values
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{DenseOwnership, ModelWeights, Params, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::preprocess::{Scaler, ScalerMode};

pub const MAGIC: &[u8; 4] = b"FPW1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

/// One named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Layer {
    pub fn new(name: &str, dims: Vec<usize>, values: Vec<f64>) -> Self {
        Self { name: name.to_string(), dims, values }
    }
}

pub fn encode_layers(layers: &[Layer], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        out.extend_from_slice(&(layer.name.len() as u16).to_le_bytes());
        out.extend_from_slice(layer.name.as_bytes());
        out.push(dtype.code());
        out.push(layer.dims.len() as u8);
        for &d in &layer.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &layer.values {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::ShapeMismatch("weight blob ends mid-layer".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Layer>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 4 + 2 + 4 + 4 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch);
    }
    let mut cur = Cursor { buf: body, pos: 4 };
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::ShapeMismatch("layer name is not UTF-8".into()))?
            .to_string();
        let dtype = cur.u8()?;
        let rank = cur.u8()? as usize;
        let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = match dtype {
            0 => cur.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            1 => cur.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            other => return Err(Error::ShapeMismatch(format!("unknown dtype code {other}"))),
        };
        layers.push(Layer { name, dims, values });
    }
    if cur.pos != body.len() {
        return Err(Error::ShapeMismatch("trailing bytes after last layer".into()));
    }
    Ok(layers)
}

fn find<'a>(layers: &'a [Layer], name: &str) -> Option<&'a Layer> {
    layers.iter().find(|l| l.name == name)
}

impl ModelWeights {
    /// Every parameter tensor, then the scaler bounds if present.
    pub fn to_layers(&self) -> Vec<Layer> {
        let p = &self.params;
        let mut out: Vec<Layer> = LAYER_NAMES
            .iter()
            .zip(p.tensor_dims())
            .zip(p.tensors())
            .map(|((name, dims), t)| Layer::new(name, dims, t.to_vec()))
            .collect();
        if let Some(sc) = &self.scaler {
            out.push(Layer::new("scaler.min", vec![sc.lo.len()], sc.lo.clone()));
            out.push(Layer::new("scaler.max", vec![sc.hi.len()], sc.hi.clone()));
        }
        out
    }

    /// The aggregated part only.
    pub fn global_layers(&self) -> Vec<Layer> {
        let names = self.global_layer_names();
        self.to_layers().into_iter().filter(|l| names.contains(&l.name.as_str())).collect()
    }

    /// The part that stays on the client.
    pub fn local_layers(&self) -> Vec<Layer> {
        let names = self.local_layer_names();
        self.to_layers().into_iter().filter(|l| names.contains(&l.name.as_str())).collect()
    }

    pub fn from_layers(layers: &[Layer]) -> Result<ModelWeights> {
        let wx1 = find(layers, "lstm1.wx").ok_or_else(|| Error::MissingColumn("lstm1.wx".into()))?;
        let wx2 = find(layers, "lstm2.wx").ok_or_else(|| Error::MissingColumn("lstm2.wx".into()))?;
        if wx1.dims.len() != 2 || wx2.dims.len() != 2 || wx1.dims[0] % 4 != 0 || wx2.dims[0] % 4 != 0 {
            return Err(Error::ShapeMismatch("malformed LSTM input kernels".into()));
        }
        let shape = super::ModelShape { input_dim: wx1.dims[1], hidden1: wx1.dims[0] / 4, hidden2: wx2.dims[0] / 4 };
        let mut w = ModelWeights { params: Params::zeros(shape), scaler: None, dense_ownership: DenseOwnership::Local };
        let all: Vec<Layer> = layers.iter().filter(|l| !l.name.starts_with("scaler.")).cloned().collect();
        for name in LAYER_NAMES {
            if find(&all, name).is_none() {
                return Err(Error::MissingColumn(name.to_string()));
            }
        }
        w.install_layers(&all)?;
        match (find(layers, "scaler.min"), find(layers, "scaler.max")) {
            (Some(lo), Some(hi)) => {
                if lo.values.len() != shape.input_dim || hi.values.len() != shape.input_dim {
                    return Err(Error::ShapeMismatch("scaler width differs from model input".into()));
                }
                w.scaler = Some(Scaler {
                    lo: lo.values.clone(),
                    hi: hi.values.clone(),
                    mode: ScalerMode::MinMax,
                    degenerate: Vec::new(),
                });
            }
            (None, None) => {}
            _ => return Err(Error::ShapeMismatch("scaler bounds must come in pairs".into())),
        }
        Ok(w)
    }

    /// Overwrites the named tensors. Every layer must exist in this model
    /// with identical dimensions.
    pub fn install_layers(&mut self, layers: &[Layer]) -> Result<()> {
        let dims = self.params.tensor_dims();
        for layer in layers {
            let idx = LAYER_NAMES
                .iter()
                .position(|n| *n == layer.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("unexpected layer '{}'", layer.name)))?;
            if layer.dims != dims[idx] || layer.values.len() != dims[idx].iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "layer '{}' has dims {:?}, expected {:?}",
                    layer.name, layer.dims, dims[idx]
                )));
            }
        }
        for layer in layers {
            let idx = LAYER_NAMES.iter().position(|n| *n == layer.name).unwrap();
            self.params.tensors_mut()[idx].copy_from_slice(&layer.values);
        }
        Ok(())
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Vec<u8> {
        encode_layers(&self.to_layers(), dtype)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
        Self::from_layers(&decode_layers(bytes)?)
    }

    /// SHA-256 over the f64 `FPW1` encoding of the aggregated part.
    pub fn global_digest(&self) -> String {
        hex_digest(&encode_layers(&self.global_layers(), Dtype::F64))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    fs::write(path, w.to_bytes(dtype))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    ModelWeights::from_bytes(&fs::read(path)?)
}
