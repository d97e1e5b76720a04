//! Particle-filter baseline for single-contact localization.
//!
//! Particles live on the robot surface. Each step weights them with the
//! constrained least-squares likelihood exp(-lambda * QP(W | r)), resamples
//! systematically when the effective sample size collapses, and roughens
//! the survivors with surface-tangent jitter. The filter converges to one
//! solution by construction, which is exactly the limitation the diffusion
//! sampler removes; this baseline exists for the comparison.

use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use crate::parallel::par_map;
use crate::physics::{build_cone, ExtWrench};
use crate::qp::{solve_qp, QpCandidate, QpProblem};
use crate::rng::{normal, Rng};
use crate::robot::{
    project_to_surface, sample_surface_point, surface_normal, LinkPose, RobotModel,
};
use rand::RngExt;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PfConfig {
    pub n_particles: usize,
    /// Likelihood temperature: weight = exp(-lambda * squared residual).
    pub lambda_temp: f64,
    /// Surface-tangent roughening std (meters) applied after resampling.
    pub jitter_std: f64,
    pub mu: f64,
    pub m_e: usize,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_fraction: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            n_particles: 400,
            lambda_temp: 50.0,
            jitter_std: 0.01,
            mu: 0.5,
            m_e: 8,
            resample_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub points: Vec<Vec3>,
    pub links: Vec<usize>,
    pub weights: Vec<f64>,
    /// Number of degenerate reinitializations so far.
    pub reinit_count: usize,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Area-uniform particles over the whole arm surface, uniform weights.
pub fn pf_init(
    model: &RobotModel,
    poses: &[LinkPose],
    n_particles: usize,
    rng: &mut Rng,
) -> Result<ParticleSet> {
    if n_particles == 0 {
        return Err(CdmError::InvalidArgument("need at least one particle".into()));
    }
    let areas: Vec<f64> = (0..model.n_q()).map(|l| model.link_area(l)).collect();
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(n_particles);
    let mut links = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let mut pick = rng.random_range(0.0..total);
        let mut link = model.n_q() - 1;
        for (l, a) in areas.iter().enumerate() {
            if pick < *a {
                link = l;
                break;
            }
            pick -= a;
        }
        let (p, _) = sample_surface_point(model, poses, link, rng)?;
        points.push(p);
        links.push(link);
    }
    Ok(ParticleSet {
        weights: vec![1.0 / n_particles as f64; n_particles],
        points,
        links,
        reinit_count: 0,
    })
}

/// Likelihood of one particle: the optimal constrained residual (squared)
/// for a single contact at the particle.
fn particle_qp_sq(
    model: &RobotModel,
    poses: &[LinkPose],
    measurement: &ExtWrench,
    point: Vec3,
    link: usize,
    config: &PfConfig,
) -> Result<f64> {
    let normal = surface_normal(model, poses, point, link);
    let cone = build_cone(point, normal, config.mu, config.m_e)?;
    let problem = QpProblem::new(
        model,
        poses,
        measurement.clone(),
        vec![QpCandidate { point, link_index: link, cone }],
    )?;
    let sol = solve_qp(&problem)?;
    Ok(sol.residual * sol.residual)
}

/// One filter step: weight, resample if degenerate, roughen.
pub fn pf_step(
    set: &ParticleSet,
    measurement: &ExtWrench,
    model: &RobotModel,
    poses: &[LinkPose],
    config: &PfConfig,
    rng: &mut Rng,
) -> Result<ParticleSet> {
    let n = set.len();
    let residuals: Vec<Result<f64>> = par_map(n, |i| {
        particle_qp_sq(model, poses, measurement, set.points[i], set.links[i], config)
    });
    let mut weights = Vec::with_capacity(n);
    for r in residuals {
        weights.push((-config.lambda_temp * r?).exp());
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // Degenerate: every particle is implausible. Reinitialize.
        let mut fresh = pf_init(model, poses, n, rng)?;
        fresh.reinit_count = set.reinit_count + 1;
        return Ok(fresh);
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    let mut next = ParticleSet {
        points: set.points.clone(),
        links: set.links.clone(),
        weights,
        reinit_count: set.reinit_count,
    };
    if next.effective_sample_size() < config.resample_fraction * n as f64 {
        next = systematic_resample(&next, rng);
        // Roughen: tangent jitter, then back onto the surface.
        for i in 0..n {
            let link = next.links[i];
            let n_hat = surface_normal(model, poses, next.points[i], link);
            let noise = Vec3::new(normal(rng), normal(rng), normal(rng)) * config.jitter_std;
            let tangent = noise - n_hat * noise.dot(n_hat);
            let moved = next.points[i] + tangent;
            next.points[i] = project_to_surface(model, poses, moved, link);
        }
    }
    Ok(next)
}

/// Systematic (low-variance) resampling; uniform weights afterwards.
pub fn systematic_resample(set: &ParticleSet, rng: &mut Rng) -> ParticleSet {
    let n = set.len();
    let step = 1.0 / n as f64;
    let start: f64 = rng.random_range(0.0..step);
    let mut points = Vec::with_capacity(n);
    let mut links = Vec::with_capacity(n);
    let mut cumulative = set.weights[0];
    let mut idx = 0;
    for m in 0..n {
        let u = start + m as f64 * step;
        while u > cumulative && idx + 1 < n {
            idx += 1;
            cumulative += set.weights[idx];
        }
        points.push(set.points[idx]);
        links.push(set.links[idx]);
    }
    ParticleSet {
        points,
        links,
        weights: vec![step; n],
        reinit_count: set.reinit_count,
    }
}

/// Point estimate: weighted mean projected back to the nearest surface.
pub fn pf_estimate(set: &ParticleSet, model: &RobotModel, poses: &[LinkPose]) -> Vec3 {
    let mut mean = Vec3::ZERO;
    for (p, w) in set.points.iter().zip(&set.weights) {
        mean = mean + *p * *w;
    }
    let link = crate::robot::nearest_link(model, poses, mean);
    project_to_surface(model, poses, mean, link)
}
