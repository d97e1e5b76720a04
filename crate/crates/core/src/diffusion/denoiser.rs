//! The conditioned noise-prediction network.
//!
//! A U-Net-like stack of pointwise MLP blocks with skip connections. Every
//! block is modulated by two FiLM layers: a pointwise one fed by per-point
//! SDF features (distance and direction to every link surface) and a global
//! one fed by an encoding of the observation window, the pooled historical
//! point set, and the Fourier embedding of the diffusion step. Points never
//! interact except through the global conditioning, so the network is
//! permutation-equivariant over the point set.

use super::{CoordScale, ObservationWindow};
use crate::error::Result;
use crate::mat::Mat;
use crate::nn::{
    init_dense, init_dense_const_bias, init_dense_zero, FourierEmbedding, Graph, NodeId,
    ParamStore,
};
use crate::rng::Rng;
use crate::robot::{all_links_sdf, LinkPose, RobotModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub n_q: usize,
    /// Points per sample set.
    pub n_p: usize,
    /// Downsampled wrench rows per observation window.
    pub t_w: usize,
    /// Robot reach (meters), fixes the coordinate normalization.
    pub reach: f64,
    /// Width of the lift layer and the last block.
    pub width_outer: usize,
    /// Width of the inner blocks.
    pub width_inner: usize,
    /// Width of the global conditioning encoder.
    pub global_width: usize,
    /// Per-point embedding width for the historical point set.
    pub hist_embed: usize,
    /// Hidden width of the pointwise FiLM head.
    pub pf_hidden: usize,
    /// Fourier frequencies for the step embedding.
    pub n_freq: usize,
    /// When false the pointwise (SDF) FiLM path is absent entirely.
    pub use_sdf: bool,
    /// Multiplier applied to wrench channels before encoding.
    pub wrench_scale: f64,
}

impl DenoiserConfig {
    /// Desk-scale default for a given robot.
    pub fn desk_default(n_q: usize, reach: f64) -> DenoiserConfig {
        DenoiserConfig {
            n_q,
            n_p: 64,
            t_w: 12,
            reach,
            width_outer: 64,
            width_inner: 96,
            global_width: 128,
            hist_embed: 32,
            pf_hidden: 16,
            n_freq: 8,
            use_sdf: true,
            wrench_scale: 0.1,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.t_w * (self.n_q + 6) + self.n_q + 7 * self.n_q
    }

    pub fn sdf_dim(&self) -> usize {
        4 * self.n_q
    }

    pub fn coord_scale(&self) -> CoordScale {
        CoordScale::from_reach(self.reach)
    }

    fn block_widths(&self) -> [usize; 4] {
        [self.width_inner, self.width_inner, self.width_inner, self.width_outer]
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: ParamStore,
    fourier: FourierEmbedding,
}

impl DenoiserModel {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> DenoiserModel {
        let mut p = ParamStore::new();
        init_dense(&mut p, "hist", config.hist_embed, 3, rng);
        let gin = config.obs_dim() + config.hist_embed + 2 * config.n_freq;
        init_dense(&mut p, "enc1", config.global_width, gin, rng);
        init_dense(&mut p, "enc2", config.global_width, config.global_width, rng);
        init_dense(&mut p, "lift", config.width_outer, 3, rng);
        let mut w_in = config.width_outer;
        for (i, w_out) in config.block_widths().into_iter().enumerate() {
            init_dense(&mut p, &format!("blk{i}_main"), w_out, w_in, rng);
            if config.use_sdf {
                init_dense(&mut p, &format!("blk{i}_pf"), config.pf_hidden, config.sdf_dim(), rng);
                init_dense_const_bias(&mut p, &format!("blk{i}_pgam"), w_out, config.pf_hidden, 1.0);
                init_dense_const_bias(&mut p, &format!("blk{i}_pbet"), w_out, config.pf_hidden, 0.0);
            }
            init_dense_const_bias(&mut p, &format!("blk{i}_ggam"), w_out, config.global_width, 1.0);
            init_dense_const_bias(&mut p, &format!("blk{i}_gbet"), w_out, config.global_width, 0.0);
            w_in = w_out;
        }
        init_dense_zero(&mut p, "out", 3, config.width_outer);
        let fourier = FourierEmbedding::geometric(config.n_freq, 1.0, 1000.0);
        DenoiserModel { config, params: p, fourier }
    }

    /// Rebuild around loaded parameters (shapes must match the config).
    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<DenoiserModel> {
        let mut rng = crate::rng::stream_rng(0, 0);
        let reference = DenoiserModel::new(config.clone(), &mut rng);
        if reference.params.len() != params.len() {
            return Err(crate::error::CdmError::CheckpointFormat(format!(
                "parameter count mismatch: config wants {}, checkpoint has {}",
                reference.params.len(),
                params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in reference.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(crate::error::CdmError::CheckpointFormat(format!(
                    "tensor `{n2}` does not match config (expected `{n1}` {:?})",
                    t1.shape()
                )));
            }
        }
        let fourier = FourierEmbedding::geometric(config.n_freq, 1.0, 1000.0);
        Ok(DenoiserModel { config, params, fourier })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Fourier embedding row of a diffusion step, normalized to (0, 1).
    pub fn step_embedding(&self, k: usize, k_max: usize) -> Vec<f64> {
        self.fourier.embed(k as f64 / (k_max + 1) as f64)
    }

    /// Build the noise prediction on a graph.
    ///
    /// Shapes: `x` and `hist` are (B·n_p × 3), `sdf` is (B·n_p × 4 n_q)
    /// (ignored when the SDF path is off), `obs` is (B × obs_dim), `kemb`
    /// is (B × 2 n_freq). Returns a (B·n_p × 3) node.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: NodeId,
        sdf: Option<NodeId>,
        obs: NodeId,
        hist: NodeId,
        kemb: NodeId,
    ) -> NodeId {
        let n_p = self.config.n_p;
        // Global conditioning: obs ⊕ pooled history embedding ⊕ step.
        let he = g.linear(hist, "hist");
        let he = g.silu(he);
        let pooled = g.mean_pool_rows(he, n_p);
        let gin = g.concat_cols(&[obs, pooled, kemb]);
        let e = g.linear(gin, "enc1");
        let e = g.silu(e);
        let genc = g.linear(e, "enc2");
        let genc = g.silu(genc);

        let h = g.linear(x, "lift");
        let lift_out = g.silu(h);
        let mut h = lift_out;
        let mut skip_inner = None;
        for i in 0..4 {
            h = g.linear(h, &format!("blk{i}_main"));
            if self.config.use_sdf {
                let sdf = sdf.expect("SDF features required when use_sdf is on");
                let pf = g.linear(sdf, &format!("blk{i}_pf"));
                let pf = g.silu(pf);
                let gamma_p = g.linear(pf, &format!("blk{i}_pgam"));
                let beta_p = g.linear(pf, &format!("blk{i}_pbet"));
                h = g.film(h, gamma_p, beta_p);
            }
            let gamma_g = g.linear(genc, &format!("blk{i}_ggam"));
            let gamma_g = g.repeat_rows(gamma_g, n_p);
            let beta_g = g.linear(genc, &format!("blk{i}_gbet"));
            let beta_g = g.repeat_rows(beta_g, n_p);
            h = g.film(h, gamma_g, beta_g);
            h = g.silu(h);
            if i == 0 {
                skip_inner = Some(h);
            } else if i == 2 {
                h = g.add(h, skip_inner.expect("skip saved at block 0"));
            } else if i == 3 {
                h = g.add(h, lift_out);
            }
        }
        g.linear(h, "out")
    }

    /// Forward-only noise prediction.
    pub fn predict_eps(
        &self,
        x: &Mat,
        sdf: Option<&Mat>,
        obs: &Mat,
        hist: &Mat,
        kemb: &Mat,
    ) -> Mat {
        let mut g = Graph::new(&self.params);
        let x = g.input(x.clone());
        let sdf = sdf.map(|m| g.input(m.clone()));
        let obs = g.input(obs.clone());
        let hist = g.input(hist.clone());
        let kemb = g.input(kemb.clone());
        let out = self.forward_graph(&mut g, x, sdf, obs, hist, kemb);
        g.value(out).clone()
    }
}

/// Flatten an observation window into the encoder input row:
/// scaled wrench rows (oldest first), joint angles, link poses with
/// positions in normalized coordinates.
pub fn encode_observation(obs: &ObservationWindow, config: &DenoiserConfig) -> Vec<f64> {
    let scale = config.coord_scale();
    let mut out = Vec::with_capacity(config.obs_dim());
    for row in &obs.wrench_rows {
        out.extend(row.iter().map(|v| v * config.wrench_scale));
    }
    out.extend_from_slice(&obs.q_now);
    for (p, q) in &obs.poses_now {
        out.extend(p.iter().map(|v| scale.to_norm(*v)));
        out.extend_from_slice(q);
    }
    debug_assert_eq!(out.len(), config.obs_dim());
    out
}

/// Per-point SDF conditioning features: for each link, the normalized
/// distance and the unit direction toward the surface, evaluated at the
/// current (normalized-frame) point positions.
pub fn sdf_features(
    robot: &RobotModel,
    poses: &[LinkPose],
    x_norm: &Mat,
    config: &DenoiserConfig,
) -> Mat {
    let scale = config.coord_scale();
    let mut out = Mat::zeros(x_norm.rows(), config.sdf_dim());
    for r in 0..x_norm.rows() {
        let world = crate::geom::Vec3::new(
            scale.to_world(x_norm.at(r, 0)),
            scale.to_world(x_norm.at(r, 1)),
            scale.to_world(x_norm.at(r, 2)),
        );
        let sdfs = all_links_sdf(robot, poses, world);
        let row = out.row_mut(r);
        for (l, s) in sdfs.iter().enumerate() {
            row[4 * l] = scale.to_norm(s.d);
            row[4 * l + 1] = s.g.x;
            row[4 * l + 2] = s.g.y;
            row[4 * l + 3] = s.g.z;
        }
    }
    out
}
