//! Evaluation metrics over generated sample sets.
//!
//! Distances are reported in centimeters. M-RMSE is the mean over true
//! contacts of the distance to the nearest generated sample; C-RMSE-j is
//! the distance from contact j to its matched k-means cluster center.

use crate::classifier::{is_single, ClassifierModel};
use crate::datagen::{ContactState, DataPoint};
use crate::diffusion::{
    infer, DenoiserModel, DiffusionSchedule, HistoricalState, SamplePointSet,
};
use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use crate::kmeans::kmeans;
use crate::parallel::par_map;
use crate::qp::qp_error;
use crate::robot::{all_links_sdf, LinkPose, RobotModel};
use crate::rng::stream_rng;

pub const M_TO_CM: f64 = 100.0;

/// Mean over true contacts of the distance to the nearest sample (cm).
pub fn m_rmse_cm(samples: &SamplePointSet, truths: &[Vec3]) -> Result<f64> {
    if samples.n_p() == 0 {
        return Err(CdmError::InvalidArgument("empty sample set".into()));
    }
    if truths.is_empty() {
        return Err(CdmError::InvalidArgument("need at least one true contact".into()));
    }
    let mut total = 0.0;
    for t in truths {
        let nearest = (0..samples.n_p())
            .map(|i| (samples.point(i) - *t).norm())
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    Ok(total / truths.len() as f64 * M_TO_CM)
}

/// Per-contact distance to the matched k-means cluster center (cm).
/// Cluster count equals the contact count; centers are matched to truths by
/// the assignment with minimal total distance.
pub fn c_rmse_cm(samples: &SamplePointSet, truths: &[Vec3], seed: u64) -> Result<Vec<f64>> {
    let n_c = truths.len();
    if samples.n_p() < n_c {
        return Err(CdmError::InvalidArgument("fewer samples than contacts".into()));
    }
    let points: Vec<Vec3> = (0..samples.n_p()).map(|i| samples.point(i)).collect();
    let centers = kmeans(&points, n_c, seed);
    let assigned = match_centers(truths, &centers);
    Ok(assigned
        .iter()
        .zip(truths)
        .map(|(c, t)| (*c - *t).norm() * M_TO_CM)
        .collect())
}

/// Best assignment of centers to truths (n_c <= 2, so both orders are
/// simply compared).
fn match_centers(truths: &[Vec3], centers: &[Vec3]) -> Vec<Vec3> {
    if truths.len() == 2 && centers.len() == 2 {
        let direct = (centers[0] - truths[0]).norm() + (centers[1] - truths[1]).norm();
        let swapped = (centers[1] - truths[0]).norm() + (centers[0] - truths[1]).norm();
        if swapped < direct {
            return vec![centers[1], centers[0]];
        }
    }
    centers.to_vec()
}

/// Fraction of wrong contact-state decisions.
pub fn failure_rate(predictions_dual: &[bool], labels_dual: &[bool]) -> Result<f64> {
    if predictions_dual.is_empty() || predictions_dual.len() != labels_dual.len() {
        return Err(CdmError::InvalidArgument("bad prediction/label lengths".into()));
    }
    let wrong = predictions_dual
        .iter()
        .zip(labels_dual)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / predictions_dual.len() as f64)
}

/// Mean distance from samples to the closest robot surface (cm).
pub fn surface_distance_cm(
    samples: &SamplePointSet,
    model: &RobotModel,
    poses: &[LinkPose],
) -> f64 {
    let mut total = 0.0;
    for i in 0..samples.n_p() {
        let d = all_links_sdf(model, poses, samples.point(i))
            .iter()
            .map(|r| r.d.abs())
            .fold(f64::INFINITY, f64::min);
        total += d;
    }
    total / samples.n_p() as f64 * M_TO_CM
}

/// Aggregated metrics for one contact state.
#[derive(Debug, Clone)]
pub struct StateMetrics {
    pub state: ContactState,
    pub n: usize,
    pub m_rmse_cm: f64,
    pub failure_rate: f64,
    pub qp_error: f64,
    pub jts_err_nm: f64,
    pub base_f_err_n: f64,
    pub base_t_err_nm: f64,
    pub surface_dist_cm: f64,
    /// Mean C-RMSE per contact (length = contact count of the state).
    pub c_rmse_cm: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub rows: Vec<StateMetrics>,
    /// Mean inference wall time per window (ms).
    pub mean_inference_ms: f64,
}

pub const REPORT_HEADER: &str =
    "state,n,m_rmse_cm,failure_rate,qp_error,jts_err_nm,base_f_err_n,base_t_err_nm,surface_dist_cm";

impl MetricsReport {
    /// CSV with one row per contact state, matching [`REPORT_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                row.state.as_str(),
                row.n,
                row.m_rmse_cm,
                row.failure_rate,
                row.qp_error,
                row.jts_err_nm,
                row.base_f_err_n,
                row.base_t_err_nm,
                row.surface_dist_cm
            ));
        }
        out
    }
}

/// Per-window evaluation record (kept so callers can make plots or dumps).
#[derive(Debug, Clone)]
pub struct WindowEval {
    pub label: ContactState,
    pub samples: SamplePointSet,
    pub truths: Vec<Vec3>,
    pub m_rmse_cm: f64,
    pub c_rmse_cm: Vec<f64>,
    pub qp_residual: f64,
    pub jts_err: f64,
    pub base_f_err: f64,
    pub base_t_err: f64,
    pub surface_dist_cm: f64,
    pub predicted_dual: bool,
    pub inference_ms: f64,
}

pub struct EvalOptions {
    pub mu: f64,
    pub m_e: usize,
    pub seed: u64,
    /// Cap on evaluated windows (keeps desk-scale runs bounded); 0 = all.
    pub max_windows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { mu: 0.5, m_e: 8, seed: 7, max_windows: 0 }
    }
}

/// Run null-conditioned inference over every window and compute all
/// metrics. Evaluation is parallel across windows with one RNG stream per
/// window, so results do not depend on thread count.
pub fn evaluate(
    points: &[DataPoint],
    denoiser: &DenoiserModel,
    classifier: &ClassifierModel,
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    options: &EvalOptions,
) -> Result<(MetricsReport, Vec<WindowEval>)> {
    if points.is_empty() {
        return Err(CdmError::InvalidArgument("no evaluation windows".into()));
    }
    let limit = if options.max_windows == 0 {
        points.len()
    } else {
        options.max_windows.min(points.len())
    };
    let evals: Vec<Result<WindowEval>> = par_map(limit, |i| {
        evaluate_window(&points[i], denoiser, classifier, robot, schedule, options, i as u64)
    });
    let mut ok = Vec::with_capacity(limit);
    for e in evals {
        ok.push(e?);
    }
    let report = aggregate(&ok)?;
    Ok((report, ok))
}

pub fn evaluate_window(
    point: &DataPoint,
    denoiser: &DenoiserModel,
    classifier: &ClassifierModel,
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    options: &EvalOptions,
    stream: u64,
) -> Result<WindowEval> {
    let mut rng = stream_rng(options.seed, stream);
    // Null conditioning: no history is available in batch evaluation.
    let state = HistoricalState::null_conditioned(denoiser.config.n_p, &mut rng);
    let out = infer(denoiser, classifier, &point.obs, &state, robot, schedule, &mut rng)?;
    let poses = point.obs.link_poses();
    let qp = qp_error(
        robot,
        &poses,
        &point.obs.latest_wrench(),
        &(0..out.samples.n_p()).map(|i| out.samples.point(i)).collect::<Vec<_>>(),
        options.mu,
        options.m_e,
    )?;
    Ok(WindowEval {
        label: point.label,
        m_rmse_cm: m_rmse_cm(&out.samples, &point.contacts_world)?,
        c_rmse_cm: c_rmse_cm(&out.samples, &point.contacts_world, options.seed ^ stream)?,
        qp_residual: qp.residual,
        jts_err: qp.jts_err,
        base_f_err: qp.base_f_err,
        base_t_err: qp.base_t_err,
        surface_dist_cm: surface_distance_cm(&out.samples, robot, &poses),
        predicted_dual: !is_single(out.p_single, out.p_dual),
        inference_ms: out.elapsed.as_secs_f64() * 1e3,
        samples: out.samples,
        truths: point.contacts_world.clone(),
    })
}

/// Aggregate per-window metrics into one row per contact state, in the
/// fixed state order (associative order-stable reduction).
pub fn aggregate(evals: &[WindowEval]) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    for state in ContactState::all() {
        let group: Vec<&WindowEval> = evals.iter().filter(|e| e.label == state).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let n_c = group[0].c_rmse_cm.len();
        let mut c_rmse = vec![0.0; n_c];
        for e in &group {
            for (acc, v) in c_rmse.iter_mut().zip(&e.c_rmse_cm) {
                *acc += v / n;
            }
        }
        let preds: Vec<bool> = group.iter().map(|e| e.predicted_dual).collect();
        let labels: Vec<bool> = group.iter().map(|e| e.label.is_dual()).collect();
        rows.push(StateMetrics {
            state,
            n: group.len(),
            m_rmse_cm: group.iter().map(|e| e.m_rmse_cm).sum::<f64>() / n,
            failure_rate: failure_rate(&preds, &labels)?,
            qp_error: group.iter().map(|e| e.qp_residual).sum::<f64>() / n,
            jts_err_nm: group.iter().map(|e| e.jts_err).sum::<f64>() / n,
            base_f_err_n: group.iter().map(|e| e.base_f_err).sum::<f64>() / n,
            base_t_err_nm: group.iter().map(|e| e.base_t_err).sum::<f64>() / n,
            surface_dist_cm: group.iter().map(|e| e.surface_dist_cm).sum::<f64>() / n,
            c_rmse_cm: c_rmse,
        });
    }
    let mean_inference_ms =
        evals.iter().map(|e| e.inference_ms).sum::<f64>() / evals.len().max(1) as f64;
    Ok(MetricsReport { rows, mean_inference_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::forward_kinematics;

    #[test]
    fn m_rmse_examples() {
        let truths = vec![Vec3::ZERO];
        let samples = SamplePointSet {
            points: vec![[0.01, 0.0, 0.0], [0.5, 0.5, 0.5]],
        };
        assert!((m_rmse_cm(&samples, &truths).unwrap() - 1.0).abs() < 1e-12);
        // Samples containing both truths exactly -> 0.
        let truths2 = vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0)];
        let samples2 = SamplePointSet {
            points: vec![[0.1, 0.0, 0.0], [0.0, 0.2, 0.0], [1.0, 1.0, 1.0]],
        };
        assert_eq!(m_rmse_cm(&samples2, &truths2).unwrap(), 0.0);
        assert!(m_rmse_cm(&SamplePointSet { points: vec![] }, &truths).is_err());
    }

    #[test]
    fn m_rmse_matches_double_loop_oracle() {
        let mut rng = stream_rng(130, 0);
        let truths: Vec<Vec3> = (0..2)
            .map(|_| Vec3::new(crate::rng::normal(&mut rng), crate::rng::normal(&mut rng), 0.0))
            .collect();
        let samples = SamplePointSet {
            points: (0..32)
                .map(|_| {
                    [
                        crate::rng::normal(&mut rng),
                        crate::rng::normal(&mut rng),
                        crate::rng::normal(&mut rng),
                    ]
                })
                .collect(),
        };
        // Independent double loop.
        let mut oracle = 0.0;
        for t in &truths {
            let mut best = f64::INFINITY;
            for p in &samples.points {
                let d = (Vec3::from(*p) - *t).norm();
                if d < best {
                    best = d;
                }
            }
            oracle += best;
        }
        oracle = oracle / truths.len() as f64 * 100.0;
        assert!((m_rmse_cm(&samples, &truths).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn c_rmse_tight_clusters_at_truths() {
        let t1 = Vec3::new(0.3, 0.0, 0.0);
        let t2 = Vec3::new(-0.2, 0.4, 0.0);
        let mut points = Vec::new();
        for i in 0..32 {
            let c = if i < 16 { t1 } else { t2 };
            points.push([c.x, c.y, c.z]);
        }
        let samples = SamplePointSet { points };
        let r = c_rmse_cm(&samples, &[t1, t2], 5).unwrap();
        assert!(r[0] < 1e-9 && r[1] < 1e-9, "{r:?}");
        // Single truth: center = mean of all points.
        let r1 = c_rmse_cm(&samples, &[t1], 5).unwrap();
        assert_eq!(r1.len(), 1);
    }

    #[test]
    fn c_rmse_gaussian_clusters_concentrate() {
        let t1 = Vec3::new(0.5, 0.0, 0.0);
        let t2 = Vec3::new(-0.5, 0.0, 0.0);
        let mut rng = stream_rng(131, 0);
        let mut points = Vec::new();
        for i in 0..1000 {
            let c = if i % 2 == 0 { t1 } else { t2 };
            points.push([
                c.x + 0.01 * crate::rng::normal(&mut rng),
                c.y + 0.01 * crate::rng::normal(&mut rng),
                c.z + 0.01 * crate::rng::normal(&mut rng),
            ]);
        }
        let samples = SamplePointSet { points };
        let r = c_rmse_cm(&samples, &[t1, t2], 9).unwrap();
        assert!(r[0] < 0.5 && r[1] < 0.5, "{r:?}");
    }

    #[test]
    fn failure_rate_basics() {
        assert_eq!(failure_rate(&[true, false], &[true, false]).unwrap(), 0.0);
        assert_eq!(failure_rate(&[true, true], &[false, false]).unwrap(), 1.0);
        assert_eq!(failure_rate(&[true, false], &[false, false]).unwrap(), 0.5);
        assert!(failure_rate(&[], &[]).is_err());
    }

    #[test]
    fn surface_distance_examples() {
        let model = RobotModel::planar3();
        let poses = forward_kinematics(&model, &[0.0; 3]).unwrap();
        // One point exactly on link 0's surface, one 1 cm off.
        let on = [0.15, 0.04, 0.0];
        let off = [0.15, 0.05, 0.0];
        let samples = SamplePointSet { points: vec![on] };
        assert!(surface_distance_cm(&samples, &model, &poses) < 1e-9);
        let samples = SamplePointSet { points: vec![off] };
        assert!((surface_distance_cm(&samples, &model, &poses) - 1.0).abs() < 1e-9);
        let both = SamplePointSet { points: vec![on, off] };
        assert!((surface_distance_cm(&both, &model, &poses) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn m_rmse_not_above_c_rmse_for_tight_offset_cluster() {
        // A tight cluster near (not exactly on) the truth: the nearest
        // sample is closer than the cluster mean.
        let t = Vec3::new(0.2, 0.1, 0.0);
        let center = t + Vec3::new(0.02, 0.0, 0.0);
        let mut rng = stream_rng(132, 0);
        let samples = SamplePointSet {
            points: (0..64)
                .map(|_| {
                    [
                        center.x + 0.005 * crate::rng::normal(&mut rng),
                        center.y + 0.005 * crate::rng::normal(&mut rng),
                        center.z + 0.005 * crate::rng::normal(&mut rng),
                    ]
                })
                .collect(),
        };
        let m = m_rmse_cm(&samples, &[t]).unwrap();
        let c = c_rmse_cm(&samples, &[t], 3).unwrap()[0];
        assert!(m <= c + 1e-9, "min distance {m} should not exceed center distance {c}");
    }

    #[test]
    fn csv_shape_is_stable() {
        let report = MetricsReport {
            rows: vec![StateMetrics {
                state: ContactState::Single,
                n: 3,
                m_rmse_cm: 1.0,
                failure_rate: 0.0,
                qp_error: 0.5,
                jts_err_nm: 0.3,
                base_f_err_n: 0.2,
                base_t_err_nm: 0.1,
                surface_dist_cm: 0.4,
                c_rmse_cm: vec![1.2],
            }],
            mean_inference_ms: 2.0,
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("single,3,1.000000,0.000000,"));
    }
}
