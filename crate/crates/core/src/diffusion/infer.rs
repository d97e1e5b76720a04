//! Recursive inference: DDIM sampling conditioned on the observation and
//! the last confirmed single-contact result.
//!
//! The historical point set starts as standard-normal noise
//! (null-conditioning) and is replaced by the newest sample set only while
//! the classifier reports a single contact. Once a second contact is
//! detected the history freezes, which is what lets the model treat a
//! sequential dual contact as "known first contact + one unknown".

use super::denoiser::{encode_observation, sdf_features, DenoiserModel};
use super::{ddim_step_from_eps, gaussian_point_mat, DiffusionSchedule, ObservationWindow,
            SamplePointSet};
use crate::classifier::{is_single, ClassifierModel};
use crate::error::Result;
use crate::mat::Mat;
use crate::rng::Rng;
use crate::robot::RobotModel;
use std::time::Duration;

/// Samples are clipped to this bound (normalized frame) after every
/// denoising step. The workspace lies within |x| <= 2, so the bound only
/// stops runaway feedback between far-out points and their SDF
/// conditioning features; it never touches plausible contact locations.
pub const SAMPLE_CLIP: f64 = 4.0;

/// The recursive conditioning state X̂_{T_s} (normalized frame).
#[derive(Debug, Clone)]
pub struct HistoricalState {
    pub hist_norm: Mat,
    /// Set after each call: whether the history was updated.
    pub updated: bool,
}

impl HistoricalState {
    /// Null-conditioning: standard-normal point set.
    pub fn null_conditioned(n_p: usize, rng: &mut Rng) -> HistoricalState {
        HistoricalState { hist_norm: gaussian_point_mat(n_p, rng), updated: false }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// Generated candidate contact points, world meters.
    pub samples: SamplePointSet,
    pub state: HistoricalState,
    pub p_single: f64,
    pub p_dual: f64,
    /// Wall-clock time of the denoising loop plus classification.
    pub elapsed: Duration,
}

/// One inference pass per the recursive procedure: DDIM-sample a point set
/// conditioned on (observation, history), classify the contact state, and
/// update the history only on single-contact decisions.
pub fn infer(
    denoiser: &DenoiserModel,
    classifier: &ClassifierModel,
    obs: &ObservationWindow,
    state: &HistoricalState,
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<InferenceOutput> {
    let config = &denoiser.config;
    let started = std::time::Instant::now();
    let obs_row = encode_observation(obs, config);
    let obs_mat = Mat::from_vec(1, obs_row.len(), obs_row);
    let poses = obs.link_poses();

    let mut x = gaussian_point_mat(config.n_p, rng);
    let steps = schedule.ddim_steps.clone();
    for (i, &k) in steps.iter().enumerate() {
        let k_next = if i + 1 < steps.len() { steps[i + 1] } else { 0 };
        let sdf = config
            .use_sdf
            .then(|| sdf_features(robot, &poses, &x, config));
        let kemb = Mat::from_vec(
            1,
            2 * config.n_freq,
            denoiser.step_embedding(k, schedule.k_max()),
        );
        let eps = denoiser.predict_eps(&x, sdf.as_ref(), &obs_mat, &state.hist_norm, &kemb);
        x = ddim_step_from_eps(&x, &eps, k, k_next, schedule);
        for v in x.data_mut() {
            *v = v.clamp(-SAMPLE_CLIP, SAMPLE_CLIP);
        }
    }

    let (p_single, p_dual) = classifier.classify(obs, config);
    let elapsed = started.elapsed();

    let scale = config.coord_scale();
    let samples = SamplePointSet::from_mat(&scale.mat_to_world(&x));
    let state = if is_single(p_single, p_dual) {
        HistoricalState { hist_norm: x, updated: true }
    } else {
        HistoricalState { hist_norm: state.hist_norm.clone(), updated: false }
    };
    Ok(InferenceOutput { samples, state, p_single, p_dual, elapsed })
}
