use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor2;
use crate::error::{Error, Result};

/// Gradient (or any per-parameter tensor) keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor2>;

/// Named trainable tensors with a fixed, sorted iteration order.
///
/// Names are unique by construction and shapes can't change after insertion:
/// the only mutation paths are [`ParamSet::get_mut`] (which hands out the
/// tensor's data slice) and [`ParamSet::apply`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor2>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.tensors
            .get_mut(name)
            .map(Tensor2::data_mut)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor2::len).sum()
    }

    pub fn zeros_like(&self) -> GradMap {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor2::zeros(v.rows(), v.cols())))
            .collect()
    }

    /// Applies `f(param, update)` elementwise for every parameter present in `updates`.
    pub fn apply(&mut self, updates: &GradMap, f: impl Fn(&mut f64, f64)) -> Result<()> {
        for (name, upd) in updates {
            let t = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if t.shape() != upd.shape() {
                return Err(Error::shape(
                    "param update",
                    format!("{name}: {:?} vs {:?}", t.shape(), upd.shape()),
                ));
            }
            for (p, &u) in t.data_mut().iter_mut().zip(upd.data()) {
                f(p, u);
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::zeros(1, 1)).unwrap();
        assert!(p.insert("w", Tensor2::zeros(2, 1)).is_err());
    }

    #[test]
    fn iteration_is_sorted() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor2::zeros(1, 1)).unwrap();
        p.insert("a", Tensor2::zeros(1, 1)).unwrap();
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn apply_checks_shape_and_fingerprint_tracks_values() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::zeros(2, 1)).unwrap();
        let before = p.fingerprint();
        let mut upd = GradMap::new();
        upd.insert("w".into(), Tensor2::zeros(1, 2));
        assert!(p.apply(&upd, |a, b| *a -= b).is_err());
        upd.insert("w".into(), Tensor2::filled(2, 1, 1.0));
        p.apply(&upd, |a, b| *a -= b).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[-1.0, -1.0]);
        assert_ne!(before, p.fingerprint());
    }
}
