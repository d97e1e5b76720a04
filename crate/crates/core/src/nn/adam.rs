//! Adam optimizer with bias correction.

use super::{Grads, ParamStore};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        let zeros: Vec<Mat> = (0..store.len())
            .map(|i| {
                let (_, p) = store.by_index(i);
                Mat::zeros(p.rows(), p.cols())
            })
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment tensors and step counter, for checkpointing.
    pub fn parts(&self) -> (&[Mat], &[Mat], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn from_parts(m: Vec<Mat>, v: Vec<Mat>, t: u64) -> AdamState {
        assert_eq!(m.len(), v.len());
        AdamState { m, v, t }
    }
}

/// One Adam update over every parameter, in store order.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState, p: &AdamParams) {
    state.t += 1;
    let bc1 = 1.0 - p.beta1.powi(state.t as i32);
    let bc2 = 1.0 - p.beta2.powi(state.t as i32);
    for i in 0..store.len() {
        let g = &grads.by_index[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let theta = store.by_index_mut(i);
        for k in 0..theta.numel() {
            let gk = g.data()[k];
            let mk = p.beta1 * m.data()[k] + (1.0 - p.beta1) * gk;
            let vk = p.beta2 * v.data()[k] + (1.0 - p.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            theta.data_mut()[k] -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
        }
    }
}
