//! `VSEGW1` weight container.
//!
//! Layout (little-endian): magic `VSEGW1\0\0`; `u32` tensor count; `u32`
//! fingerprint length and UTF-8 fingerprint; then per tensor `u32` name
//! length, UTF-8 name, `u32` ndim, `u32` dims, and `f32` values in
//! row-major order. Kernels are `(out, in, ky, kx)`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{define_architecture, FINGERPRINT};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: [u8; 8] = *b"VSEGW1\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub fingerprint: String,
    pub tensors: Vec<Tensor>,
}

impl WeightBundle {
    fn from_fn(mut f: impl FnMut(&str, &[usize], usize) -> Vec<f32>) -> Self {
        let tensors = define_architecture()
            .tensor_specs()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let values = f(&name, &shape, n);
                Tensor { name, shape, values }
            })
            .collect();
        WeightBundle {
            fingerprint: FINGERPRINT.to_string(),
            tensors,
        }
    }

    pub fn zeros() -> Self {
        Self::from_fn(|_, _, n| vec![0.0; n])
    }

    /// He-normal kernels and small random biases from a fixed seed.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(|name, shape, n| {
            let std = if name.ends_with(".bias") {
                0.05
            } else {
                let fan_in: usize = shape[1..].iter().product();
                (2.0 / fan_in as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).unwrap();
            (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
        })
    }

    /// Weights whose forward pass outputs `p` everywhere: every tensor is
    /// zero except the output bias, set to `logit(p)`.
    pub fn constant_output(p: f64) -> Self {
        let logit = (p / (1.0 - p)).ln() as f32;
        Self::from_fn(|name, _, n| {
            if name == "out.conv.bias" {
                vec![logit; n]
            } else {
                vec![0.0; n]
            }
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Check fingerprint, names, shapes and finiteness against the
    /// canonical architecture.
    pub fn validate(&self) -> Result<()> {
        if self.fingerprint != FINGERPRINT {
            return Err(Error::Config(format!(
                "architecture fingerprint mismatch: got {:?}",
                self.fingerprint
            )));
        }
        let mut seen: HashMap<&str, &Tensor> = HashMap::new();
        for t in &self.tensors {
            if seen.insert(&t.name, t).is_some() {
                return Err(Error::Config(format!("duplicate tensor {}", t.name)));
            }
            if t.values.len() != t.shape.iter().product::<usize>() {
                return Err(Error::Config(format!(
                    "tensor {} holds {} values for shape {:?}",
                    t.name,
                    t.values.len(),
                    t.shape
                )));
            }
            if let Some(i) = t.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "tensor {} has non-finite value at index {i}",
                    t.name
                )));
            }
        }
        let specs = define_architecture().tensor_specs();
        for (name, shape) in &specs {
            match seen.get(name.as_str()) {
                None => return Err(Error::Config(format!("missing tensor {name}"))),
                Some(t) if &t.shape != shape => {
                    return Err(Error::Config(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.iter().find(|t| !specs.iter().any(|(n, _)| n == &t.name)) {
            return Err(Error::Config(format!("unexpected tensor {}", extra.name)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHT_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(self.fingerprint.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse without architecture validation; errors carry byte offsets.
    pub fn parse(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != WEIGHT_MAGIC {
            return Err("bad magic at byte offset 0".into());
        }
        let count = cur.u32()? as usize;
        let fingerprint = cur.string()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = cur.string()?;
            let ndim = cur.u32()? as usize;
            if ndim > 8 {
                return Err(format!("tensor {name}: ndim {ndim} at byte offset {}", cur.pos - 4));
            }
            let shape = (0..ndim)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, values });
        }
        if cur.pos != bytes.len() {
            return Err(format!("trailing data at byte offset {}", cur.pos));
        }
        Ok(WeightBundle { fingerprint, tensors })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!(
                "truncated at byte offset {} (needed {n} more bytes, {} available)",
                self.pos,
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| format!("invalid UTF-8 at byte offset {at}"))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bundle = WeightBundle::parse(&bytes).map_err(|m| Error::format(path, m))?;
    bundle.validate().map_err(|e| match e {
        Error::Config(m) | Error::Numeric(m) => Error::format(path, m),
        other => other,
    })?;
    Ok(bundle)
}

pub fn save_weights(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    bundle.validate()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bundle.to_bytes()).map_err(|e| Error::io(path, e))
}
