//! Named parameter tensors, their gradients, and content hashing.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors for one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Gaussian init with standard deviation `std`.
    pub fn normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let m = Matrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        });
        self.insert(name, m)
    }

    pub fn constant(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.insert(name, Matrix::filled(rows, cols, T::of(v)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// SHA-256 over every tensor in name order: name, shape as `u32` LE,
    /// then values widened to `f64` LE. Independent of insertion order.
    pub fn content_hash(&self) -> String {
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        let mut h = Sha256::new();
        h.update(T::DTYPE.as_bytes());
        for i in order {
            let t = &self.tensors[i];
            h.update((self.names[i].len() as u32).to_le_bytes());
            h.update(self.names[i].as_bytes());
            h.update((t.rows() as u32).to_le_bytes());
            h.update((t.cols() as u32).to_le_bytes());
            for v in t.as_slice() {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Matrix<T>>) -> Self {
        Self { names, tensors }
    }

    /// Copies every tensor of `other` into this store. Both stores must hold
    /// the same names with the same shapes in the same order.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Format("parameter names differ from the model layout".into()));
        }
        for (i, (mine, theirs)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if mine.shape() != theirs.shape() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    self.names[i],
                    theirs.shape(),
                    mine.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Sparse per-parameter gradients produced by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    slots: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new() }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix<T>) {
        if self.slots.len() <= id.0 {
            self.slots.resize_with(id.0 + 1, || None);
        }
        match &mut self.slots[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn scale(&mut self, k: T) {
        for g in self.slots.iter_mut().flatten() {
            *g = g.scale(k);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<T>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> T {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.as_slice().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Matrix::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Matrix::filled(2, 3, 0.25));
        s.insert("b", Matrix::filled(1, 3, -1.0));
        let h1 = s.content_hash();
        assert_eq!(h1, s.content_hash());
        s.get_mut(a)[(1, 2)] += 1e-6;
        assert_ne!(h1, s.content_hash());
    }

    #[test]
    fn hash_ignores_insertion_order() {
        let mut s1 = ParamStore::<f32>::new();
        s1.insert("x", Matrix::filled(1, 1, 1.0));
        s1.insert("y", Matrix::filled(1, 1, 2.0));
        let mut s2 = ParamStore::<f32>::new();
        s2.insert("y", Matrix::filled(1, 1, 2.0));
        s2.insert("x", Matrix::filled(1, 1, 1.0));
        assert_eq!(s1.content_hash(), s2.content_hash());
    }
}
