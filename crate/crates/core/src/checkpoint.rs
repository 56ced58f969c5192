//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "DATF"
//! version      u32      1
//! config_len   u32      followed by config_len bytes of ModelConfig JSON
//! flags        u32      bit 0: optimizer state present
//! tensors      block    model parameters
//! [adam]       u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!              tensors block of first moments, tensors block of second moments
//!
//! tensors block:
//! count        u32
//! per tensor:  u32 name_len, name (UTF-8), u32 rows, u32 cols, rows*cols f64
//! ```
//!
//! Tensors appear in the fixed order of [`Parameters::params`].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdamState, ModelConfig, ModelParams};
use crate::params::Parameters;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"DATF";
pub const VERSION: u32 = 1;
const FLAG_ADAM: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensors(out: &mut Vec<u8>, params: &ModelParams) {
    let views = params.params();
    put_u32(out, views.len() as u32);
    for p in views {
        put_u32(out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(out, p.shape.0 as u32);
        put_u32(out, p.shape.1 as u32);
        for v in p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(
    config: &ModelConfig,
    params: &ModelParams,
    adam: Option<&AdamState>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(config)?;
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    put_u32(&mut out, if adam.is_some() { FLAG_ADAM } else { 0 });
    put_tensors(&mut out, params);
    if let Some(a) = adam {
        out.extend_from_slice(&a.step.to_le_bytes());
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_tensors(&mut out, &a.first_moment);
        put_tensors(&mut out, &a.second_moment);
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams,
    adam: Option<&AdamState>,
) -> Result<()> {
    fs::write(path, encode(config, params, adam)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    /// Reads a tensors block into a copy of `template`, checking names and shapes.
    fn tensors(&mut self, template: &ModelParams) -> Result<ModelParams> {
        let expected: Vec<(String, (usize, usize))> = template
            .params()
            .into_iter()
            .map(|p| (p.name, p.shape))
            .collect();
        let count = self.u32("tensor count")? as usize;
        if count != expected.len() {
            return Err(self.error(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (name, shape) in &expected {
            let name_len = self.u32("tensor name length")? as usize;
            let start = self.pos;
            let found = std::str::from_utf8(self.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format {
                    offset: start,
                    message: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            if &found != name {
                return Err(Error::Format {
                    offset: start,
                    message: format!("expected tensor {name:?}, found {found:?}"),
                });
            }
            let rows = self.u32("rows")? as usize;
            let cols = self.u32("cols")? as usize;
            if (rows, cols) != *shape {
                return Err(Error::ShapeMismatch {
                    name: found,
                    expected: *shape,
                    found: (rows, cols),
                });
            }
            let raw = self.take(rows * cols * 8, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            values.push(Matrix::from_vec(rows, cols, data)?);
        }
        let mut out = template.clone();
        out.assign_matrices(&values)?;
        Ok(out)
    }
}

/// Parses a checkpoint. Malformed input yields [`Error::Format`] with the
/// byte offset of the problem.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let len = r.u32("config length")? as usize;
    let start = r.pos;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| Error::Format {
            offset: start,
            message: format!("bad config block: {e}"),
        })?;
    config.validate().map_err(|e| Error::Format {
        offset: start,
        message: e.to_string(),
    })?;
    let flags = r.u32("flags")?;
    let template = ModelParams::init(&config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let params = r.tensors(&template)?;
    let adam = if flags & FLAG_ADAM != 0 {
        let step = r.u64("adam step")?;
        let lr = r.f64("adam lr")?;
        let beta1 = r.f64("adam beta1")?;
        let beta2 = r.f64("adam beta2")?;
        let eps = r.f64("adam eps")?;
        let first_moment = r.tensors(&template)?;
        let second_moment = r.tensors(&template)?;
        Some(AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step,
            first_moment,
            second_moment,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        params,
        adam,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and checks it against `expected`; a checkpoint written
/// for different dimensions yields [`Error::ShapeMismatch`].
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    ck.params.check_shapes(expected)?;
    Ok(ck)
}
