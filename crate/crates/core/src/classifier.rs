//! Contact-state classifier: single vs dual contact from an observation
//! window. Gates the historical-state update during recursive inference.
//!
//! Labels: single = (1, 0), dual = (0, 1). Windows that straddle the second
//! contact onset count as dual, so the history stops updating as soon as
//! the second contact can influence the window.

use crate::diffusion::{encode_observation, DenoiserConfig, ObservationWindow};
use crate::error::Result;
use crate::mat::Mat;
use crate::nn::{adam_step, init_dense, AdamParams, AdamState, Graph, ParamStore};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub obs_dim: usize,
    pub width: usize,
}

impl ClassifierConfig {
    /// Reuses the global-conditioning encoder shape of the denoiser.
    pub fn from_denoiser(config: &DenoiserConfig) -> ClassifierConfig {
        ClassifierConfig { obs_dim: config.obs_dim(), width: config.global_width }
    }
}

/// Logits are clamped to this range before the softmax so cross-entropy
/// stays finite.
const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub params: ParamStore,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, rng: &mut Rng) -> ClassifierModel {
        let mut p = ParamStore::new();
        init_dense(&mut p, "enc1", config.width, config.obs_dim, rng);
        init_dense(&mut p, "enc2", config.width, config.width, rng);
        init_dense(&mut p, "head", 2, config.width, rng);
        ClassifierModel { config, params: p }
    }

    pub fn from_params(config: ClassifierConfig, params: ParamStore) -> Result<ClassifierModel> {
        let expect = [
            ("enc1.w", (config.width, config.obs_dim)),
            ("enc1.b", (1, config.width)),
            ("enc2.w", (config.width, config.width)),
            ("enc2.b", (1, config.width)),
            ("head.w", (2, config.width)),
            ("head.b", (1, 2)),
        ];
        for (name, shape) in expect {
            match params.get(name) {
                Some(t) if t.shape() == shape => {}
                _ => {
                    return Err(crate::error::CdmError::CheckpointFormat(format!(
                        "classifier tensor `{name}` missing or mis-shaped"
                    )))
                }
            }
        }
        Ok(ClassifierModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn logits_graph(&self, g: &mut Graph, obs: crate::nn::NodeId) -> crate::nn::NodeId {
        let e = g.linear(obs, "enc1");
        let e = g.silu(e);
        let e = g.linear(e, "enc2");
        let e = g.silu(e);
        let logits = g.linear(e, "head");
        g.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    }

    /// Probabilities (p_single, p_dual) for a batch of encoded rows.
    pub fn classify_rows(&self, rows: &Mat) -> Vec<(f64, f64)> {
        let mut g = Graph::new(&self.params);
        let obs = g.input(rows.clone());
        let logits = self.logits_graph(&mut g, obs);
        let lv = g.value(logits);
        (0..lv.rows())
            .map(|r| {
                let p = crate::nn::graph::softmax_row(lv.row(r));
                (p[0], p[1])
            })
            .collect()
    }

    /// Probabilities (p_single, p_dual) for one observation window.
    pub fn classify(&self, obs: &ObservationWindow, denoiser_config: &DenoiserConfig) -> (f64, f64) {
        let row = encode_observation(obs, denoiser_config);
        let m = Mat::from_vec(1, row.len(), row);
        self.classify_rows(&m)[0]
    }
}

/// Predicted label from a probability pair. Exact ties resolve to dual,
/// which keeps the history untouched.
pub fn is_single(p_single: f64, p_dual: f64) -> bool {
    p_single > p_dual
}

/// One cross-entropy optimizer step over encoded rows with one-hot labels
/// (single = (1,0), dual = (0,1)). Returns the loss.
pub fn classifier_train_step(
    model: &mut ClassifierModel,
    rows: &Mat,
    labels: &Mat,
    state: &mut AdamState,
    opt: &AdamParams,
) -> Result<f64> {
    let (loss_value, grads) = {
        let mut g = Graph::new(&model.params);
        let obs = g.input(rows.clone());
        let logits = model.logits_graph(&mut g, obs);
        let y = g.input(labels.clone());
        let loss = g.softmax_xent(logits, y);
        let v = g.value(loss).at(0, 0);
        (v, g.backward(loss)?)
    };
    adam_step(&mut model.params, &grads, state, opt);
    Ok(loss_value)
}

/// One-hot label row: single = (1, 0), dual = (0, 1).
pub fn label_row(dual: bool) -> [f64; 2] {
    if dual {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}
