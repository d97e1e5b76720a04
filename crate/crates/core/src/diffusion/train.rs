//! Denoiser training.
//!
//! Each step draws per-item diffusion steps and noise, forms the noisy
//! point set and the noised historical conditioning from the first contact
//! point, and minimizes the mean squared error between the injected and
//! predicted noise.

use super::denoiser::{sdf_features, DenoiserModel};
use super::{forward_diffuse, sample_step_index, DiffusionSchedule, SamplePointSet};
use crate::error::Result;
use crate::geom::Vec3;
use crate::mat::Mat;
use crate::nn::{adam_step, AdamParams, AdamState, Graph};
use crate::rng::{fill_normal, Rng};
use crate::robot::{LinkPose, RobotModel};

/// One training datum, already encoded for the denoiser.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    /// True contact point(s) at the window end, world meters.
    pub contacts_world: Vec<Vec3>,
    /// First contact location (the historical conditioning target).
    pub r_first_world: Vec3,
    /// Encoded observation row (see `encode_observation`).
    pub obs_encoded: Vec<f64>,
    /// Link poses for SDF conditioning queries.
    pub link_poses: Vec<LinkPose>,
    /// True when the window contains two contacts.
    pub label_dual: bool,
}

/// Optimizer state for a training run.
pub struct TrainState {
    pub adam: AdamState,
    pub opt: AdamParams,
}

impl TrainState {
    pub fn new(model: &DenoiserModel, opt: AdamParams) -> TrainState {
        TrainState { adam: AdamState::new(&model.params), opt }
    }
}

/// Stacked per-batch tensors for one denoiser evaluation.
pub(crate) struct BatchTensors {
    pub x_k: Mat,
    pub eps_true: Mat,
    pub hist: Mat,
    pub obs: Mat,
    pub kemb: Mat,
    pub sdf: Option<Mat>,
}

/// Assemble training tensors per the conditioning recipe: forward-diffuse
/// the duplicated truth at a random step k, and independently diffuse the
/// duplicated first contact at a random step k_h.
pub(crate) fn assemble_batch(
    batch: &[&DiffusionSample],
    model: &DenoiserModel,
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<BatchTensors> {
    let config = &model.config;
    let n_p = config.n_p;
    let b = batch.len();
    let scale = config.coord_scale();
    let mut x_k = Mat::zeros(b * n_p, 3);
    let mut eps_true = Mat::zeros(b * n_p, 3);
    let mut hist = Mat::zeros(b * n_p, 3);
    let mut obs = Mat::zeros(b, config.obs_dim());
    let mut kemb = Mat::zeros(b, 2 * config.n_freq);
    let mut sdf = config.use_sdf.then(|| Mat::zeros(b * n_p, config.sdf_dim()));

    for (i, item) in batch.iter().enumerate() {
        let contacts_norm: Vec<Vec3> =
            item.contacts_world.iter().map(|c| scale.vec_to_norm(*c)).collect();
        let x0 = SamplePointSet::duplicate(&contacts_norm, n_p).to_mat();
        let k = sample_step_index(rng, schedule.k_max());
        let mut eps = Mat::zeros(n_p, 3);
        fill_normal(rng, eps.data_mut());
        let xk_item = forward_diffuse(&x0, k, &eps, schedule)?;

        let k_h = sample_step_index(rng, schedule.k_max());
        let r1 = scale.vec_to_norm(item.r_first_world);
        let hist0 = SamplePointSet::duplicate(&[r1], n_p).to_mat();
        let mut eps_h = Mat::zeros(n_p, 3);
        fill_normal(rng, eps_h.data_mut());
        let hist_item = forward_diffuse(&hist0, k_h, &eps_h, schedule)?;

        for r in 0..n_p {
            x_k.row_mut(i * n_p + r).copy_from_slice(xk_item.row(r));
            eps_true.row_mut(i * n_p + r).copy_from_slice(eps.row(r));
            hist.row_mut(i * n_p + r).copy_from_slice(hist_item.row(r));
        }
        obs.row_mut(i).copy_from_slice(&item.obs_encoded);
        kemb.row_mut(i)
            .copy_from_slice(&model.step_embedding(k, schedule.k_max()));
        if let Some(sdf) = sdf.as_mut() {
            let feats = sdf_features(robot, &item.link_poses, &xk_item, config);
            for r in 0..n_p {
                sdf.row_mut(i * n_p + r).copy_from_slice(feats.row(r));
            }
        }
    }
    Ok(BatchTensors { x_k, eps_true, hist, obs, kemb, sdf })
}

/// One optimizer step over a batch. Returns the loss (mean squared error
/// per coordinate).
pub fn train_step(
    model: &mut DenoiserModel,
    state: &mut TrainState,
    batch: &[&DiffusionSample],
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    assert!(!batch.is_empty());
    let tensors = assemble_batch(batch, model, robot, schedule, rng)?;
    let (loss_value, grads) = {
        let mut g = Graph::new(&model.params);
        let x = g.input(tensors.x_k);
        let sdf = tensors.sdf.map(|m| g.input(m));
        let obs = g.input(tensors.obs);
        let hist = g.input(tensors.hist);
        let kemb = g.input(tensors.kemb);
        let pred = model.forward_graph(&mut g, x, sdf, obs, hist, kemb);
        let target = g.input(tensors.eps_true);
        let loss = g.mse_loss(pred, target);
        let v = g.value(loss).at(0, 0);
        (v, g.backward(loss)?)
    };
    adam_step(&mut model.params, &grads, &mut state.adam, &state.opt);
    Ok(loss_value)
}

/// Convenience for tests and tooling: a whole-dataset loss evaluation
/// without an optimizer step.
pub fn eval_loss(
    model: &DenoiserModel,
    batch: &[&DiffusionSample],
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let tensors = assemble_batch(batch, model, robot, schedule, rng)?;
    let mut g = Graph::new(&model.params);
    let x = g.input(tensors.x_k);
    let sdf = tensors.sdf.map(|m| g.input(m));
    let obs = g.input(tensors.obs);
    let hist = g.input(tensors.hist);
    let kemb = g.input(tensors.kemb);
    let pred = model.forward_graph(&mut g, x, sdf, obs, hist, kemb);
    let target = g.input(tensors.eps_true);
    let loss = g.mse_loss(pred, target);
    Ok(g.value(loss).at(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::forward_kinematics;
    use crate::rng::stream_rng;

    fn toy_sample(
        robot: &RobotModel,
        config: &super::super::DenoiserConfig,
        q: &[f64],
        dual: bool,
    ) -> DiffusionSample {
        let poses = forward_kinematics(robot, q).unwrap();
        let contact1 = poses[0].iso().apply(Vec3::new(0.15, 0.04, 0.0));
        let contact2 = poses[2].iso().apply(Vec3::new(0.1, -0.04, 0.0));
        let contacts =
            if dual { vec![contact1, contact2] } else { vec![contact1] };
        let obs = super::super::ObservationWindow {
            wrench_rows: (0..config.t_w).map(|i| vec![0.3 * i as f64; robot.n_q() + 6]).collect(),
            q_now: q.to_vec(),
            poses_now: poses.iter().map(|p| (p.p.to_array(), p.q.to_array())).collect(),
        };
        DiffusionSample {
            contacts_world: contacts,
            r_first_world: contact1,
            obs_encoded: super::super::encode_observation(&obs, config),
            link_poses: poses,
            label_dual: dual,
        }
    }

    fn small_config() -> super::super::DenoiserConfig {
        super::super::DenoiserConfig {
            n_q: 3,
            n_p: 16,
            t_w: 4,
            reach: 0.9,
            width_outer: 24,
            width_inner: 32,
            global_width: 48,
            hist_embed: 16,
            pf_hidden: 8,
            n_freq: 8,
            use_sdf: true,
            wrench_scale: 0.1,
        }
    }

    #[test]
    fn initial_loss_is_unit_noise_energy() {
        // Zero-initialized output head: loss = E[eps^2] = 1 per coordinate.
        let robot = RobotModel::planar3();
        let config = small_config();
        let mut rng = stream_rng(100, 0);
        let model = DenoiserModel::new(config.clone(), &mut rng);
        let schedule = DiffusionSchedule::linear(1000, 1e-6, 1e-3, 10).unwrap();
        let samples: Vec<DiffusionSample> = (0..32)
            .map(|i| toy_sample(&robot, &config, &[0.1 * i as f64 % 1.0, -0.3, 0.5], i % 2 == 0))
            .collect();
        let refs: Vec<&DiffusionSample> = samples.iter().collect();
        let loss = eval_loss(&model, &refs, &robot, &schedule, &mut rng).unwrap();
        assert!((0.5..=1.5).contains(&loss), "initial loss {loss}");
    }

    #[test]
    fn training_reduces_loss() {
        let robot = RobotModel::planar3();
        let config = small_config();
        let mut rng = stream_rng(101, 0);
        let mut model = DenoiserModel::new(config.clone(), &mut rng);
        let schedule = DiffusionSchedule::linear(1000, 1e-6, 1e-3, 10).unwrap();
        let samples: Vec<DiffusionSample> =
            (0..8).map(|i| toy_sample(&robot, &config, &[0.2, -0.4, 0.1 * i as f64], false)).collect();
        let refs: Vec<&DiffusionSample> = samples.iter().collect();
        let mut state = TrainState::new(&model, AdamParams { lr: 2e-3, ..Default::default() });
        let first = train_step(&mut model, &mut state, &refs, &robot, &schedule, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..150 {
            last = train_step(&mut model, &mut state, &refs, &robot, &schedule, &mut rng).unwrap();
        }
        assert!(last < 0.6 * first, "loss {first} -> {last}");
        assert!(model.params.all_finite());
    }

    #[test]
    fn training_is_deterministic_under_fixed_seed() {
        let robot = RobotModel::planar3();
        let config = small_config();
        let schedule = DiffusionSchedule::linear(500, 1e-6, 1e-3, 10).unwrap();
        let run = || -> Vec<u64> {
            let mut rng = stream_rng(102, 0);
            let mut model = DenoiserModel::new(config.clone(), &mut rng);
            let samples: Vec<DiffusionSample> =
                (0..4).map(|i| toy_sample(&robot, &config, &[0.1, 0.2 * i as f64, -0.3], i % 2 == 0)).collect();
            let refs: Vec<&DiffusionSample> = samples.iter().collect();
            let mut state = TrainState::new(&model, AdamParams::default());
            for _ in 0..10 {
                train_step(&mut model, &mut state, &refs, &robot, &schedule, &mut rng).unwrap();
            }
            model
                .params
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(run(), run());
    }
}
