use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named flat `f64` arrays with fixed shapes.
///
/// Insertion order is the canonical order used for checkpoints, hashing and
/// optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::shape(format!("param `{name}`"), expected, data.len()));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    /// Mutable access to the values; the shape stays fixed.
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Overwrites every value with zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn content_hash(&self) -> String {
        self.hash_filtered(|_| true)
    }

    /// Same as [`content_hash`](Self::content_hash) but restricted to parameters
    /// whose name starts with `prefix`.
    pub fn prefix_hash(&self, prefix: &str) -> String {
        self.hash_filtered(|p| p.name.starts_with(prefix))
    }

    fn hash_filtered(&self, keep: impl Fn(&Param) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| keep(p)) {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for d in &p.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            data: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_slice()))
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// measured before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add_zeros("a", &[2, 3]).unwrap();
        assert!(matches!(
            s.add_zeros("a", &[1]),
            Err(NnError::DuplicateParam(_))
        ));
        assert_eq!(s.total_len(), 6);
    }

    #[test]
    fn shape_must_match_data() {
        let mut s = ParamStore::new();
        assert!(s.add("w", &[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn hash_changes_with_values() {
        let mut s = ParamStore::new();
        let id = s.add_zeros("w", &[4]).unwrap();
        let h0 = s.content_hash();
        s.value_mut(id)[2] = 1e-300;
        assert_ne!(h0, s.content_hash());
    }

    #[test]
    fn clip_scales_down_only() {
        let mut s = ParamStore::new();
        let id = s.add_zeros("w", &[2]).unwrap();
        let mut g = Grads::zeros_like(&s);
        g.get_mut(id).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(g.clip_global_norm(10.0), 5.0);
        assert_eq!(g.get(id), &[3.0, 4.0]);
        assert_eq!(g.clip_global_norm(0.5), 5.0);
        assert!((g.global_norm() - 0.5).abs() < 1e-15);
    }
}
