//! Named, partitioned parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IrisError, Result};
use crate::tensor::Tensor;

/// Top-level parameter group. Every parameter name starts with one of these
/// prefixes followed by a dot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Se,
    Sslr,
    Asr,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Se, Partition::Sslr, Partition::Asr];

    pub fn prefix(self) -> &'static str {
        match self {
            Partition::Se => "se",
            Partition::Sslr => "sslr",
            Partition::Asr => "asr",
        }
    }

    /// Partition owning a hierarchical parameter name.
    pub fn of(name: &str) -> Result<Partition> {
        let head = name.split('.').next().unwrap_or_default();
        let p: Partition = head.parse()?;
        if name.len() <= head.len() + 1 {
            return Err(IrisError::InvalidArgument(format!(
                "parameter name `{name}` has no component after its partition"
            )));
        }
        Ok(p)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Partition {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "se" => Ok(Partition::Se),
            "sslr" => Ok(Partition::Sslr),
            "asr" => Ok(Partition::Asr),
            other => Err(IrisError::InvalidArgument(format!(
                "unknown partition `{other}` (expected se, sslr or asr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
    frozen: BTreeMap<Partition, bool>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new parameter; names must be unique and carry a partition prefix.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        Partition::of(&name)?;
        if self.entries.contains_key(&name) {
            return Err(IrisError::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| IrisError::MissingParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(IrisError::ParameterShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| IrisError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| IrisError::MissingParameter(name.to_string()))
    }

    /// Looks up a parameter and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(IrisError::ParameterShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn partition_entries(&self, p: Partition) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries
            .iter()
            .filter(move |(n, _)| Partition::of(n).map(|q| q == p).unwrap_or(false))
    }

    pub fn has_partition(&self, p: Partition) -> bool {
        self.partition_entries(p).next().is_some()
    }

    pub fn set_frozen(&mut self, p: Partition, frozen: bool) {
        self.frozen.insert(p, frozen);
    }

    pub fn is_frozen(&self, p: Partition) -> bool {
        self.frozen.get(&p).copied().unwrap_or(false)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        Partition::of(name).map(|p| !self.is_frozen(p)).unwrap_or(false)
    }

    /// Copies every entry of partition `p` from `other`, replacing whatever
    /// this store held for that partition.
    pub fn replace_partition(&mut self, p: Partition, other: &ParameterStore) -> Result<()> {
        let incoming: Vec<(String, Tensor)> = other
            .partition_entries(p)
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        if incoming.is_empty() {
            return Err(IrisError::InvalidArgument(format!(
                "source holds no `{p}` parameters"
            )));
        }
        for (name, t) in &incoming {
            if let Some(existing) = self.entries.get(name) {
                if existing.shape() != t.shape() {
                    return Err(IrisError::ParameterShape {
                        name: name.clone(),
                        expected: existing.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        self.entries
            .retain(|n, _| Partition::of(n).map(|q| q != p).unwrap_or(true));
        self.entries.extend(incoming);
        Ok(())
    }

    /// Digest of one partition's names, shapes and exact bit patterns.
    pub fn partition_hash(&self, p: Partition) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.partition_entries(p) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Copy without the entries of partition `p`; freeze flags are kept.
    pub fn without(&self, p: Partition) -> ParameterStore {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| Partition::of(n).map(|q| q != p).unwrap_or(true))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Applies `f` to every value, in place.
    pub fn map_values(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (n, t) in self.entries.iter_mut() {
            f(n, t);
        }
    }
}

/// Per-parameter gradients keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    grads: BTreeMap<String, Vec<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<f64>) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.grads.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    /// Elementwise accumulation of `other` into `self`.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Clips each partition's gradients to `max_norm` on their own, so one
    /// module's loss scale cannot shrink another module's update. With a
    /// single partition this is [`GradientSet::clip_global_norm`].
    pub fn clip_partition_norms(&mut self, max_norm: f64) {
        for p in Partition::ALL {
            let prefix = p.prefix();
            let norm = self
                .grads
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .flat_map(|(_, g)| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let factor = max_norm / norm;
                for (_, g) in self.grads.iter_mut().filter(|(n, _)| n.starts_with(prefix)) {
                    g.iter_mut().for_each(|v| *v *= factor);
                }
            }
        }
    }

    pub fn partitions(&self) -> impl Iterator<Item = Result<Partition>> + '_ {
        self.grads.keys().map(|n| Partition::of(n))
    }
}
