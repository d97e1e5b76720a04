//! Contact wrench synthesis, friction cones, and emulation of the
//! disturbance-observer measurement channel.
//!
//! A point contact (no moment) at `r` with force `F` on link `l` induces
//! joint torques through the contact-point Jacobian and a wrench at the
//! base: `W = [Jᵀ F; F; r × F]`. The observer that would estimate this
//! wrench on a real robot is emulated as a first-order low-pass filter plus
//! per-channel Gaussian noise.

use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use crate::mat::Mat;
use crate::rng::{normal, Rng};
use crate::robot::{point_jacobian_with_poses, LinkPose, RobotModel};
use rand::RngExt;
use serde::{Deserialize, Serialize};

/// One point contact.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Contact {
    /// World contact point (meters); lies on the surface of `link_index`.
    pub r: Vec3,
    /// World contact force (newtons); pushes into the surface.
    pub force: Vec3,
    pub link_index: usize,
    /// Outward unit surface normal at `r`.
    pub normal: Vec3,
    /// Contact onset time (milliseconds).
    pub onset_ms: u32,
}

/// External wrench: joint torques plus the base force/torque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtWrench {
    /// External joint torques (N·m), length n_q.
    pub tau: Vec<f64>,
    /// Force at the base (N).
    pub f_base: Vec3,
    /// Torque at the base (N·m).
    pub t_base: Vec3,
}

impl ExtWrench {
    pub fn zeros(n_q: usize) -> ExtWrench {
        ExtWrench { tau: vec![0.0; n_q], f_base: Vec3::ZERO, t_base: Vec3::ZERO }
    }

    pub fn dim(&self) -> usize {
        self.tau.len() + 6
    }

    /// Stack into a single (n_q + 6)-vector: [τ; f; t].
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.tau);
        out.extend_from_slice(&self.f_base.to_array());
        out.extend_from_slice(&self.t_base.to_array());
        out
    }

    pub fn from_stacked(v: &[f64]) -> ExtWrench {
        let n_q = v.len() - 6;
        ExtWrench {
            tau: v[..n_q].to_vec(),
            f_base: Vec3::new(v[n_q], v[n_q + 1], v[n_q + 2]),
            t_base: Vec3::new(v[n_q + 3], v[n_q + 4], v[n_q + 5]),
        }
    }

    pub fn add(&self, other: &ExtWrench) -> ExtWrench {
        ExtWrench {
            tau: self.tau.iter().zip(&other.tau).map(|(a, b)| a + b).collect(),
            f_base: self.f_base + other.f_base,
            t_base: self.t_base + other.t_base,
        }
    }

    pub fn norm(&self) -> f64 {
        self.stacked().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Polyhedral friction cone at a contact point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrictionCone {
    /// Contact point (cone apex).
    pub apex: Vec3,
    /// Inward unit normal (the pushing direction), i.e. minus the surface
    /// normal.
    pub axis: Vec3,
    pub mu: f64,
    /// Unit edge directions, evenly spaced around `axis` at half-angle
    /// atan(mu).
    pub edges: Vec<Vec3>,
}

impl FrictionCone {
    /// Second-order cone membership: the tangential component of `f` is at
    /// most `mu` times the normal component.
    pub fn contains(&self, f: Vec3, tol: f64) -> bool {
        let fn_ = f.dot(self.axis);
        if fn_ < -tol {
            return false;
        }
        let tangential = f - self.axis * fn_;
        tangential.norm() <= self.mu * fn_ + tol
    }
}

/// Contact matrix A(q, r): maps a world contact force to the stacked wrench.
/// Rows 0..n_q are Jᵀ, the next three are the identity, the last three are
/// skew(r).
pub fn contact_matrix(
    model: &RobotModel,
    poses: &[LinkPose],
    r: Vec3,
    link_index: usize,
) -> Result<Mat> {
    model.check_link_index(link_index, "contact_matrix")?;
    let n_q = model.n_q();
    let jac = point_jacobian_with_poses(model, poses, r, link_index);
    let mut a = Mat::zeros(n_q + 6, 3);
    for j in 0..n_q {
        for i in 0..3 {
            a.set(j, i, jac.at(i, j));
        }
    }
    for i in 0..3 {
        a.set(n_q + i, i, 1.0);
    }
    // skew(r): skew(r)·F = r × F.
    a.set(n_q + 3, 1, -r.z);
    a.set(n_q + 3, 2, r.y);
    a.set(n_q + 4, 0, r.z);
    a.set(n_q + 4, 2, -r.x);
    a.set(n_q + 5, 0, -r.y);
    a.set(n_q + 5, 1, r.x);
    Ok(a)
}

/// Total wrench from a set of contacts (at most one per link).
pub fn total_wrench(model: &RobotModel, q: &[f64], contacts: &[Contact]) -> Result<ExtWrench> {
    let poses = crate::robot::forward_kinematics(model, q)?;
    total_wrench_with_poses(model, &poses, contacts)
}

pub fn total_wrench_with_poses(
    model: &RobotModel,
    poses: &[LinkPose],
    contacts: &[Contact],
) -> Result<ExtWrench> {
    for (i, a) in contacts.iter().enumerate() {
        for b in &contacts[i + 1..] {
            if a.link_index == b.link_index {
                return Err(CdmError::InvalidArgument(format!(
                    "two contacts on link {}; at most one contact per link",
                    a.link_index
                )));
            }
        }
    }
    let mut w = ExtWrench::zeros(model.n_q());
    for c in contacts {
        let a = contact_matrix(model, poses, c.r, c.link_index)?;
        let wf = a.matvec(&c.force.to_array());
        w = w.add(&ExtWrench::from_stacked(&wf));
    }
    Ok(w)
}

/// Polyhedral friction cone with `m_e` edges at half-angle atan(mu) around
/// the inward normal. With mu = 0 every edge degenerates to the inward
/// normal ray.
pub fn build_cone(apex: Vec3, surface_normal: Vec3, mu: f64, m_e: usize) -> Result<FrictionCone> {
    if (surface_normal.norm() - 1.0).abs() > 1e-9 {
        return Err(CdmError::InvalidArgument("cone normal must be unit length".into()));
    }
    if mu < 0.0 {
        return Err(CdmError::InvalidArgument("mu must be non-negative".into()));
    }
    if mu > 0.0 && m_e < 4 {
        return Err(CdmError::InvalidArgument(format!(
            "polyhedral cone needs at least 4 edges for mu > 0, got {m_e}"
        )));
    }
    let axis = -surface_normal;
    let half_angle = mu.atan();
    let (c, s) = (half_angle.cos(), half_angle.sin());
    let u = axis.any_orthonormal();
    let v = axis.cross(u);
    let edges = (0..m_e.max(1))
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / m_e.max(1) as f64;
            axis * c + (u * phi.cos() + v * phi.sin()) * s
        })
        .collect();
    Ok(FrictionCone { apex, axis, mu, edges })
}

/// Random force inside the cone: direction uniform over the spherical cap
/// of the largest Lorentz cone inscribed in the polyhedral edge model, and
/// magnitude uniform in `[lo, hi]`. Inscribing guarantees every sampled
/// force is exactly representable as a non-negative edge combination.
pub fn sample_cone_force(cone: &FrictionCone, magnitude: [f64; 2], rng: &mut Rng) -> Result<Vec3> {
    let [lo, hi] = magnitude;
    if !(lo <= hi) || lo < 0.0 {
        return Err(CdmError::InvalidArgument(format!("bad magnitude range [{lo}, {hi}]")));
    }
    let m_e = cone.edges.len().max(1);
    let inscribed_half_angle = if cone.mu == 0.0 {
        0.0
    } else {
        (cone.mu * (std::f64::consts::PI / m_e as f64).cos()).atan()
    };
    let cos_min = inscribed_half_angle.cos();
    // Uniform over the cap: cos(theta) ~ U[cos_min, 1].
    let cos_t = rng.random_range(cos_min..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let u = cone.axis.any_orthonormal();
    let v = cone.axis.cross(u);
    let dir = cone.axis * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t;
    let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
    Ok(dir * mag)
}

/// Observer emulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DobParams {
    /// First-order bandwidth (Hz).
    pub bandwidth_hz: f64,
    /// Per-sample noise std on joint torque channels (N·m).
    pub noise_tau: f64,
    /// Per-sample noise std on base force channels (N).
    pub noise_f: f64,
    /// Per-sample noise std on base torque channels (N·m).
    pub noise_t: f64,
}

impl Default for DobParams {
    fn default() -> Self {
        DobParams { bandwidth_hz: 20.0, noise_tau: 0.05, noise_f: 0.1, noise_t: 0.02 }
    }
}

/// Sample rate of the simulated wrench streams (Hz).
pub const STREAM_HZ: f64 = 1000.0;

/// First-order low-pass filter plus i.i.d. Gaussian noise per channel,
/// discretized at 1 kHz with a zero-order hold (exact exponential step
/// response). Output sample n is the filter state after consuming input n.
pub fn emulate_dob(
    truth: &[ExtWrench],
    params: &DobParams,
    rng: &mut Rng,
) -> Result<Vec<ExtWrench>> {
    if params.bandwidth_hz <= 0.0 {
        return Err(CdmError::InvalidArgument("bandwidth must be positive".into()));
    }
    let Some(first) = truth.first() else {
        return Ok(Vec::new());
    };
    let n_q = first.tau.len();
    let dim = n_q + 6;
    let dt = 1.0 / STREAM_HZ;
    let a = (-2.0 * std::f64::consts::PI * params.bandwidth_hz * dt).exp();
    let mut state = vec![0.0; dim];
    let mut out = Vec::with_capacity(truth.len());
    for w in truth {
        let u = w.stacked();
        for (s, ui) in state.iter_mut().zip(&u) {
            *s = a * *s + (1.0 - a) * ui;
        }
        let mut sample = state.clone();
        for (i, v) in sample.iter_mut().enumerate() {
            let sigma = if i < n_q {
                params.noise_tau
            } else if i < n_q + 3 {
                params.noise_f
            } else {
                params.noise_t
            };
            if sigma > 0.0 {
                *v += sigma * normal(rng);
            }
        }
        out.push(ExtWrench::from_stacked(&sample));
    }
    Ok(out)
}
