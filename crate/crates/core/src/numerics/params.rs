use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::array::Array;
use crate::error::{Error, Result};

/// Named parameter arrays in deterministic (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamSet(BTreeMap<String, Array>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Contract(alloc::format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.0.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.0.values().map(|a| a.len()).sum()
    }

    /// Copies every entry of `other` under `prefix` + name.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for (k, v) in other.iter() {
            let mut name = prefix.to_string();
            name.push_str(k);
            self.0.insert(name, v.clone());
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet(
            self.0
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        )
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(other.0.iter()).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.values()
                        .iter()
                        .zip(b.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Array>);

impl Gradients {
    pub fn insert(&mut self, name: String, g: Array) {
        self.0.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
