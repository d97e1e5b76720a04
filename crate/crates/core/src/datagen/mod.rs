//! Labeled contact scenario generation.
//!
//! Each scenario holds a quasi-static robot configuration with one or two
//! sequential contacts (onsets 0 ms and 150 ms), observed through the
//! emulated disturbance observer at 1 kHz for 300 ms. Scenarios are sliced
//! into observation windows with random strides; windows are labeled
//! single, transition-dual, or steady-dual depending on how they overlap
//! the second contact onset.

mod io;

pub use io::{read_dataset, write_dataset, DatasetHeader};

use crate::diffusion::ObservationWindow;
use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use crate::physics::{
    build_cone, emulate_dob, sample_cone_force, total_wrench_with_poses, Contact, DobParams,
    ExtWrench,
};
use crate::rng::{stream_rng, Rng};
use crate::robot::{forward_kinematics, sample_surface_point, RobotModel};
use rand::RngExt;
use serde::{Deserialize, Serialize};

/// Contact-state label of an observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContactState {
    Single,
    TransitionDual,
    SteadyDual,
}

impl ContactState {
    pub fn is_dual(self) -> bool {
        !matches!(self, ContactState::Single)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContactState::Single => "single",
            ContactState::TransitionDual => "trans_dual",
            ContactState::SteadyDual => "steady_dual",
        }
    }

    pub fn all() -> [ContactState; 3] {
        [ContactState::Single, ContactState::TransitionDual, ContactState::SteadyDual]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub preset: String,
    pub scenarios: usize,
    /// Scenario length (ms at 1 kHz).
    pub duration_ms: u32,
    /// Onset of the second contact (ms).
    pub second_onset_ms: u32,
    /// Observation window length T (ms).
    pub window_ms: u32,
    /// Random window stride bounds (samples).
    pub stride_range: [u32; 2],
    /// Downsampling stride inside a window (5 -> 12 rows for T = 60).
    pub wrench_stride: u32,
    /// Contact force magnitude bounds (N).
    pub force_range: [f64; 2],
    /// Friction coefficient and polyhedral edge count.
    pub mu: f64,
    pub m_e: usize,
    pub dob: DobParams,
    /// When true every scenario has exactly one contact.
    pub single_only: bool,
    pub seed: u64,
}

impl DatagenConfig {
    pub fn desk_default(preset: &str, seed: u64) -> DatagenConfig {
        DatagenConfig {
            preset: preset.to_string(),
            scenarios: 20_000,
            duration_ms: 300,
            second_onset_ms: 150,
            window_ms: 60,
            stride_range: [15, 45],
            wrench_stride: 5,
            force_range: [10.0, 25.0],
            mu: 0.5,
            m_e: 8,
            dob: DobParams::default(),
            single_only: false,
            seed,
        }
    }

    pub fn t_w(&self) -> usize {
        (self.window_ms / self.wrench_stride) as usize
    }
}

/// Ground truth plus the simulated observation stream.
#[derive(Debug, Clone)]
pub struct ContactScenario {
    pub id: u64,
    pub q: Vec<f64>,
    pub contacts: Vec<Contact>,
    /// Observed wrench stream (post observer emulation), 1 kHz.
    pub observed: Vec<ExtWrench>,
}

/// One labeled training/evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub scenario_id: u64,
    /// Window end time (ms).
    pub t_ms: u32,
    pub label: ContactState,
    /// True contact locations at the window end (1 or 2).
    pub contacts_world: Vec<Vec3>,
    /// First contact location.
    pub r_first: Vec3,
    pub obs: ObservationWindow,
}

/// Simulate one scenario. Fully deterministic given (config.seed, id): each
/// scenario owns RNG stream `id`.
pub fn simulate_scenario(
    model: &RobotModel,
    config: &DatagenConfig,
    id: u64,
) -> Result<ContactScenario> {
    let mut rng = stream_rng(config.seed, id);
    let q: Vec<f64> = model
        .joints
        .iter()
        .map(|j| rng.random_range(j.limits[0]..j.limits[1]))
        .collect();
    let poses = forward_kinematics(model, &q)?;

    let n_links = model.n_q();
    let link1 = rng.random_range(0..n_links);
    let c1 = place_contact(model, &poses, link1, 0, config, &mut rng)?;
    let mut contacts = vec![c1];
    if !config.single_only {
        // Reject draws that land on the occupied link.
        let link2 = loop {
            let l = rng.random_range(0..n_links);
            if l != link1 {
                break l;
            }
        };
        contacts.push(place_contact(
            model,
            &poses,
            link2,
            config.second_onset_ms,
            config,
            &mut rng,
        )?);
    }

    // Piecewise-constant true wrench: contact i active from its onset.
    let w_first = total_wrench_with_poses(model, &poses, &contacts[..1])?;
    let w_all = total_wrench_with_poses(model, &poses, &contacts)?;
    let truth: Vec<ExtWrench> = (0..config.duration_ms)
        .map(|n| {
            if contacts.len() == 2 && n >= config.second_onset_ms {
                w_all.clone()
            } else {
                w_first.clone()
            }
        })
        .collect();
    let observed = emulate_dob(&truth, &config.dob, &mut rng)?;
    Ok(ContactScenario { id, q, contacts, observed })
}

fn place_contact(
    model: &RobotModel,
    poses: &[crate::robot::LinkPose],
    link: usize,
    onset_ms: u32,
    config: &DatagenConfig,
    rng: &mut Rng,
) -> Result<Contact> {
    let (point, normal) = sample_surface_point(model, poses, link, rng)?;
    let cone = build_cone(point, normal, config.mu, config.m_e)?;
    let force = sample_cone_force(&cone, config.force_range, rng)?;
    Ok(Contact { r: point, force, link_index: link, normal, onset_ms })
}

/// Slice a scenario into labeled windows at random strides. Windows end at
/// t = T, T + s_1, T + s_1 + s_2, ... with s_i uniform in the stride range.
pub fn slice_datapoints(
    model: &RobotModel,
    scenario: &ContactScenario,
    config: &DatagenConfig,
    rng: &mut Rng,
) -> Result<Vec<DataPoint>> {
    let duration = scenario.observed.len() as u32;
    if duration < config.window_ms {
        return Err(CdmError::InvalidArgument("scenario shorter than a window".into()));
    }
    let poses = forward_kinematics(model, &scenario.q)?;
    let poses_now: Vec<([f64; 3], [f64; 4])> =
        poses.iter().map(|p| (p.p.to_array(), p.q.to_array())).collect();
    let onset = config.second_onset_ms;
    let dual_scenario = scenario.contacts.len() == 2;

    let mut out = Vec::new();
    let mut t = config.window_ms;
    while t <= duration {
        let start = t - config.window_ms;
        // Downsampled wrench rows: start, start+stride, ..., t-stride.
        let wrench_rows: Vec<Vec<f64>> = (0..config.t_w())
            .map(|i| scenario.observed[(start + i as u32 * config.wrench_stride) as usize].stacked())
            .collect();
        // Window covers samples [start, t); the second contact influences it
        // from sample `onset` onward.
        let label = if !dual_scenario || t <= onset {
            ContactState::Single
        } else if start < onset {
            ContactState::TransitionDual
        } else {
            ContactState::SteadyDual
        };
        let contacts_world: Vec<Vec3> = match label {
            ContactState::Single => vec![scenario.contacts[0].r],
            _ => scenario.contacts.iter().map(|c| c.r).collect(),
        };
        out.push(DataPoint {
            scenario_id: scenario.id,
            t_ms: t,
            label,
            contacts_world,
            r_first: scenario.contacts[0].r,
            obs: ObservationWindow {
                wrench_rows,
                q_now: scenario.q.clone(),
                poses_now: poses_now.clone(),
            },
        });
        let stride = rng.random_range(config.stride_range[0]..=config.stride_range[1]);
        t += stride;
    }
    Ok(out)
}

/// Train/eval split disjoint by scenario id (last decile is eval).
pub fn split_by_scenario(points: Vec<DataPoint>) -> (Vec<DataPoint>, Vec<DataPoint>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for p in points {
        if p.scenario_id % 10 == 9 {
            eval.push(p);
        } else {
            train.push(p);
        }
    }
    (train, eval)
}

/// Convert a window into a training sample for the denoiser.
pub fn to_diffusion_sample(
    point: &DataPoint,
    config: &crate::diffusion::DenoiserConfig,
) -> crate::diffusion::DiffusionSample {
    crate::diffusion::DiffusionSample {
        contacts_world: point.contacts_world.clone(),
        r_first_world: point.r_first,
        obs_encoded: crate::diffusion::encode_observation(&point.obs, config),
        link_poses: point.obs.link_poses(),
        label_dual: point.label.is_dual(),
    }
}
