//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "AWCL"  u32 version  u32 model_id  u64 seed  u64 config_hash
//! u32 n_layers  { u32 out  u32 in } × n_layers
//! u64 adam_step  f64 lr  f64 beta1  f64 beta2  f64 epsilon
//! f64 × P parameters  f64 × P first moment  f64 × P second moment
//! u64 FNV-1a checksum of everything above
//! ```
//!
//! `P` is the parameter count implied by the shape table; values are in
//! [`EncoderParams::values`] order.

use std::fs;
use std::path::Path;

use super::config::fnv1a;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, EncoderParams, Layer};
use crate::protonet::ProtoModel;

pub const MAGIC: &[u8; 4] = b"AWCL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ProtoModel,
    pub seed: u64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let enc = &self.model.encoder;
        let adam = &self.model.adam;
        let mut b = Vec::with_capacity(64 + 24 * enc.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.model.model_id() as u32).to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.config_hash.to_le_bytes());
        let dims = enc.dims();
        b.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for (out, inp) in dims {
            b.extend_from_slice(&(out as u32).to_le_bytes());
            b.extend_from_slice(&(inp as u32).to_le_bytes());
        }
        b.extend_from_slice(&adam.step.to_le_bytes());
        for v in [adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in enc
            .values()
            .chain(adam.first_moment.values())
            .chain(adam.second_moment.values())
        {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(bad("missing AWCL magic bytes"));
        }
        if bytes.len() < 12 {
            return Err(bad("truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != fnv1a(body) {
            return Err(bad("checksum mismatch: file is truncated or corrupt"));
        }
        let model_id = r.u32()?;
        let seed = r.u64()?;
        let config_hash = r.u64()?;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(bad(&format!("implausible layer count {n_layers}")));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            dims.push((r.u32()? as usize, r.u32()? as usize));
        }
        let step = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let epsilon = r.f64()?;

        let layers: Vec<Layer> = dims.iter().map(|&(o, i)| Layer::zeros(i, o)).collect();
        let count: usize = dims.iter().map(|(o, i)| o * i + o).sum();
        if r.remaining() != 3 * count * 8 {
            return Err(bad(&format!(
                "payload has {} bytes, shape table implies {}",
                r.remaining(),
                3 * count * 8
            )));
        }
        let mut read_params = || -> Result<EncoderParams> {
            let mut p = EncoderParams::new(layers.clone())?;
            for v in p.values_mut() {
                *v = r.f64()?;
            }
            Ok(p)
        };
        let encoder = read_params()?;
        let m = read_params()?;
        let v = read_params()?;
        let to_grads = |p: EncoderParams| {
            let mut g = p.zeros_like();
            for (dst, &src) in g.values_mut().zip(p.values()) {
                *dst = src;
            }
            g
        };
        let adam = AdamState {
            step,
            first_moment: to_grads(m),
            second_moment: to_grads(v),
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        };
        let model_id = u8::try_from(model_id).map_err(|_| bad("model id out of range"))?;
        let model = ProtoModel::from_parts(model_id, encoder, adam)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            model,
            seed,
            config_hash,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has N bytes"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
