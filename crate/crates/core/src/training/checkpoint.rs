//! Checkpoints and their binary file format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      4 bytes  "IRIS"
//! version    u32      1
//! fingerprint 32 bytes  SHA-256 of the architecture description
//! entries    u32
//! per entry:
//!   name_len u32, name (UTF-8), rank u32, extents u32 * rank,
//!   values   f32 * product(extents)
//! ```
//!
//! Entries named `meta.epoch`, `meta.validation` and `meta.metric` carry the
//! epoch, the validation value and its kind (0 = accuracy, 1 = SI-SNR in dB)
//! as single values. The frozen `sslr.*` partition is not written; it is a
//! pure function of the feature seed, which the fingerprint covers.

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{IrisError, Result};
use crate::params::{ParameterStore, Partition};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"IRIS";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of a canonical architecture description.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of(description: &str) -> Self {
        Self(Sha256::digest(description.as_bytes()).into())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMetric {
    /// Teacher-forced token accuracy in `[0, 1]`.
    Accuracy,
    /// Mean SI-SNR in dB.
    SiSnrDb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterStore,
    pub epoch: usize,
    pub validation: f64,
    pub metric: ValidationMetric,
    pub fingerprint: Fingerprint,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(IrisError::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn push_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend((v as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let stored: Vec<(&String, &Tensor)> = self
            .params
            .iter()
            .filter(|(n, _)| Partition::of(n).map(|p| p != Partition::Sslr).unwrap_or(true))
            .collect();
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend(self.fingerprint.0);
        out.extend(((stored.len() + 3) as u32).to_le_bytes());
        let metric = match self.metric {
            ValidationMetric::Accuracy => 0.0,
            ValidationMetric::SiSnrDb => 1.0,
        };
        push_entry(&mut out, "meta.epoch", &[1], &[self.epoch as f64]);
        push_entry(&mut out, "meta.validation", &[1], &[self.validation]);
        push_entry(&mut out, "meta.metric", &[1], &[metric]);
        for (name, t) in stored {
            push_entry(&mut out, name, t.shape(), t.data());
        }
        out
    }

    /// Parses a checkpoint; with `expected` set, a different fingerprint is
    /// rejected.
    pub fn from_bytes(buf: &[u8], expected: Option<Fingerprint>) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IrisError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IrisError::Checkpoint(format!("unsupported version {version}")));
        }
        let fingerprint = Fingerprint(r.take(32)?.try_into().expect("32 bytes"));
        if let Some(e) = expected {
            if e != fingerprint {
                return Err(IrisError::Fingerprint {
                    expected: e.to_string(),
                    found: fingerprint.to_string(),
                });
            }
        }
        let count = r.u32()?;
        let mut params = ParameterStore::new();
        let (mut epoch, mut validation, mut metric) = (None, None, None);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| IrisError::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            match name.as_str() {
                "meta.epoch" => epoch = values.first().copied(),
                "meta.validation" => validation = values.first().copied(),
                "meta.metric" => metric = values.first().copied(),
                _ => params.insert(name, Tensor::new(shape, values)?)?,
            }
        }
        if r.pos != buf.len() {
            return Err(IrisError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let missing = |k: &str| IrisError::Checkpoint(format!("missing `{k}` entry"));
        Ok(Self {
            params,
            epoch: epoch.ok_or_else(|| missing("meta.epoch"))? as usize,
            validation: validation.ok_or_else(|| missing("meta.validation"))?,
            metric: match metric.ok_or_else(|| missing("meta.metric"))? {
                v if v == 0.0 => ValidationMetric::Accuracy,
                _ => ValidationMetric::SiSnrDb,
            },
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| IrisError::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<Fingerprint>) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| IrisError::io(path, e))?;
        Self::from_bytes(&buf, expected)
    }
}

/// The `k` checkpoints with the highest validation value; ties go to the
/// later epoch. The result is ordered best first.
pub fn select_best_checkpoints(checkpoints: &[Checkpoint], k: usize) -> Vec<Checkpoint> {
    let mut order: Vec<&Checkpoint> = checkpoints.iter().collect();
    order.sort_by(|a, b| {
        b.validation
            .total_cmp(&a.validation)
            .then_with(|| b.epoch.cmp(&a.epoch))
    });
    order.into_iter().take(k).cloned().collect()
}

/// Elementwise mean of every parameter. The result is summed in a fixed
/// (name, epoch) order so it does not depend on the input order.
pub fn average_checkpoints(checkpoints: &[Checkpoint]) -> Result<ParameterStore> {
    let first = checkpoints
        .first()
        .ok_or_else(|| IrisError::InvalidArgument("cannot average zero checkpoints".into()))?;
    for c in checkpoints {
        if c.fingerprint != first.fingerprint {
            return Err(IrisError::Fingerprint {
                expected: first.fingerprint.to_string(),
                found: c.fingerprint.to_string(),
            });
        }
    }
    let mut ordered: Vec<&Checkpoint> = checkpoints.iter().collect();
    ordered.sort_by(|a, b| {
        a.epoch
            .cmp(&b.epoch)
            .then_with(|| a.validation.total_cmp(&b.validation))
    });
    let n = checkpoints.len() as f64;
    let mut out = first.params.clone();
    for (name, t) in first.params.iter() {
        let mut acc = vec![0.0; t.numel()];
        for c in &ordered {
            let other = c.params.expect(name, t.shape())?;
            for (a, v) in acc.iter_mut().zip(other.data()) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= n;
        }
        out.set(name, Tensor::new(t.shape().to_vec(), acc)?)?;
    }
    for c in checkpoints {
        if c.params.len() != first.params.len() {
            return Err(IrisError::InvalidArgument(
                "checkpoints hold different parameter sets".into(),
            ));
        }
    }
    Ok(out)
}
