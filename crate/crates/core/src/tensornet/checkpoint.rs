//! Binary network checkpoints.
//!
//! Layout of one encoded network (all integers little-endian):
//!
//! | bytes | field                                                   |
//! |-------|---------------------------------------------------------|
//! | 8     | magic `TNETCKPT`                                        |
//! | 4     | `u32` format version (currently 1)                      |
//! | 4     | `u32` layer count `L`                                   |
//! | 9·L   | per layer: `u32` in, `u32` out, `u8` activation tag     |
//! | …     | per layer: weights row-major `f64`, then biases `f64`   |
//!
//! Activation tags: 0 = tanh, 1 = elu, 255 = linear (always the last layer).
//! Several networks can be concatenated; [`Reader`] walks them in order.

use std::fs;
use std::path::{Path, PathBuf};

use super::mlp::{Activation, Layer, Matrix, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TNETCKPT";
pub const VERSION: u32 = 1;
const LINEAR_TAG: u8 = 255;

pub fn encode_mlp(net: &Mlp, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for (l, layer) in net.layers().iter().enumerate() {
        out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
        out.push(net.activations().get(l).map_or(LINEAR_TAG, |a| a.tag()));
    }
    for layer in net.layers() {
        for v in layer.weights.as_slice().iter().chain(&layer.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Cursor over a checkpoint byte buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn mlp(&mut self) -> Result<Mlp> {
        if self.bytes(8)? != MAGIC {
            return Err(Error::Checkpoint("bad network magic".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported network version {version}")));
        }
        let count = self.u32()? as usize;
        if count == 0 {
            return Err(Error::Checkpoint("network with no layers".into()));
        }
        let mut dims = Vec::with_capacity(count);
        let mut activations = Vec::new();
        for l in 0..count {
            let input = self.u32()? as usize;
            let output = self.u32()? as usize;
            let tag = self.u8()?;
            if l + 1 < count {
                let act = Activation::from_tag(tag)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {tag}")))?;
                activations.push(act);
            } else if tag != LINEAR_TAG {
                return Err(Error::Checkpoint("output layer must be linear".into()));
            }
            dims.push((input, output));
        }
        let mut layers = Vec::with_capacity(count);
        for (input, output) in dims {
            let weights = (0..input * output).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let biases = (0..output).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                weights: Matrix::from_vec(output, input, weights)?,
                biases,
            });
        }
        Mlp::from_layers(layers, activations)
    }
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader::new(bytes);
    let net = r.mlp()?;
    if !r.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after network".into()));
    }
    Ok(net)
}

/// Path of the JSON sidecar that accompanies a binary checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `net` to `path` and `hyper` to the `.json` sidecar next to it.
pub fn save_mlp(path: &Path, net: &Mlp, hyper: &serde_json::Value) -> Result<()> {
    let mut bytes = Vec::new();
    encode_mlp(net, &mut bytes);
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(hyper)?)?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<(Mlp, serde_json::Value)> {
    let net = decode_mlp(&fs::read(path)?)?;
    let hyper = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    Ok((net, hyper))
}
