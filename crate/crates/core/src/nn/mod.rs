//! Minimal deterministic network substrate.
//!
//! Parameters live in a [`ParamStore`] (named, ordered, flat f64 tensors).
//! Computation runs on a small eager tape ([`graph::Graph`]) with
//! reverse-mode gradients, optimized by [`adam`]. Checkpoints serialize the
//! store bit-exactly ([`checkpoint`]).
//!
//! Everything is f64. The schedule and loss magnitudes at this scale make
//! single precision an optimization we do not need, and double precision
//! keeps gradient checks and determinism assertions simple.

pub mod adam;
pub mod checkpoint;
pub mod fourier;
pub mod graph;

pub use adam::{adam_step, AdamParams, AdamState};
pub use fourier::FourierEmbedding;
pub use graph::{Graph, NodeId};

use crate::error::{CdmError, Result};
use crate::mat::Mat;
use crate::rng::Rng;
use rand::RngExt;
use std::collections::HashMap;

/// Named, ordered parameter tensors. Iteration order is insertion order,
/// which fixes optimizer update order and checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, tensor: Mat) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CdmError::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.idx(name).map(|i| &self.tensors[i])
    }

    pub fn by_index(&self, i: usize) -> (&str, &Mat) {
        (&self.names[i], &self.tensors[i])
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.tensors[i]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Mat::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }
}

/// Gradients aligned with a [`ParamStore`] by index.
#[derive(Debug, Clone)]
pub struct Grads {
    pub by_index: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Grads {
        Grads {
            by_index: (0..store.len())
                .map(|i| {
                    let (_, t) = store.by_index(i);
                    Mat::zeros(t.rows(), t.cols())
                })
                .collect(),
        }
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Option<&Mat> {
        store.idx(name).map(|i| &self.by_index[i])
    }

    /// Accumulate another gradient set (same store layout).
    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.by_index.iter_mut().zip(&other.by_index) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_dense(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut Rng) {
    let bound = 1.0 / (inp as f64).sqrt();
    let mut w = Mat::zeros(out, inp);
    for v in w.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    store.add(&format!("{name}.w"), w).expect("unique name");
    store.add(&format!("{name}.b"), Mat::zeros(1, out)).expect("unique name");
}

/// Zero-initialized dense layer (used for output heads so the initial
/// prediction is exactly zero).
pub fn init_dense_zero(store: &mut ParamStore, name: &str, out: usize, inp: usize) {
    store.add(&format!("{name}.w"), Mat::zeros(out, inp)).expect("unique name");
    store.add(&format!("{name}.b"), Mat::zeros(1, out)).expect("unique name");
}

/// FiLM head producing a scale: zero weights, bias 1, so modulation starts
/// as the identity.
pub fn init_dense_const_bias(
    store: &mut ParamStore,
    name: &str,
    out: usize,
    inp: usize,
    bias: f64,
) {
    store.add(&format!("{name}.w"), Mat::zeros(out, inp)).expect("unique name");
    let mut b = Mat::zeros(1, out);
    for v in b.data_mut() {
        *v = bias;
    }
    store.add(&format!("{name}.b"), b).expect("unique name");
}
