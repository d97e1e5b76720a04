//! Friction-cone-constrained least squares for contact verification.
//!
//! Candidate contact points explain a measured wrench by solving
//!
//!   min_F ‖Ŵ − Σᵢ Aᵢ(q, rᵢ) Fᵢ‖²   s.t.  Fᵢ in the friction cone at rᵢ.
//!
//! Each cone is polyhedral (Fᵢ = Σⱼ λᵢⱼ eᵢⱼ, λ ≥ 0), which turns the
//! program into a non-negative least squares over the stacked edge weights.
//! We solve it with the Lawson–Hanson active-set method: deterministic and
//! exact to solver tolerance on these small dense problems.

use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use crate::mat::{dot, Mat};
use crate::physics::{build_cone, contact_matrix, ExtWrench, FrictionCone};
use crate::robot::{all_links_sdf, project_to_surface, surface_normal, LinkPose, RobotModel};

/// One candidate contact location with its cone.
#[derive(Debug, Clone)]
pub struct QpCandidate {
    pub point: Vec3,
    pub link_index: usize,
    pub cone: FrictionCone,
}

/// Assembled problem: measurement plus per-candidate contact matrices.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub measurement: ExtWrench,
    pub candidates: Vec<QpCandidate>,
    /// Contact matrix Aᵢ for each candidate, shape (n_q + 6) × 3.
    pub matrices: Vec<Mat>,
}

impl QpProblem {
    pub fn new(
        model: &RobotModel,
        poses: &[LinkPose],
        measurement: ExtWrench,
        candidates: Vec<QpCandidate>,
    ) -> Result<QpProblem> {
        if candidates.is_empty() {
            return Err(CdmError::InvalidArgument("QP needs at least one candidate".into()));
        }
        if measurement.dim() != model.n_q() + 6 {
            return Err(CdmError::DimensionMismatch {
                expected: model.n_q() + 6,
                got: measurement.dim(),
                context: "QP measurement",
            });
        }
        let matrices = candidates
            .iter()
            .map(|c| contact_matrix(model, poses, c.point, c.link_index))
            .collect::<Result<Vec<_>>>()?;
        Ok(QpProblem { measurement, candidates, matrices })
    }
}

/// Solution of the constrained least squares.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Optimal force per candidate (many are zero).
    pub forces: Vec<Vec3>,
    /// The explained wrench Σ Aᵢ Fᵢ.
    pub w_star: ExtWrench,
    /// ‖Ŵ − W*‖ over the stacked (n_q + 6)-vector.
    pub residual: f64,
    /// Joint-torque block of the residual (N·m).
    pub jts_err: f64,
    /// Base-force block (N).
    pub base_f_err: f64,
    /// Base-torque block (N·m).
    pub base_t_err: f64,
    /// KKT residual at exit (max dual infeasibility).
    pub kkt: f64,
    /// False when the iteration limit was hit; the best iterate is returned.
    pub converged: bool,
    pub iterations: usize,
}

/// Solve the cone-constrained least squares to global optimality.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    let m = problem.measurement.dim();
    // Column j of C is A_i · e_ij for candidate i, edge j.
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut col_owner: Vec<(usize, usize)> = Vec::new();
    for (i, (cand, a)) in problem.candidates.iter().zip(&problem.matrices).enumerate() {
        for (j, e) in cand.cone.edges.iter().enumerate() {
            cols.push(a.matvec(&e.to_array()));
            col_owner.push((i, j));
        }
    }
    let b = problem.measurement.stacked();
    let nnls = nnls_lawson_hanson(&cols, &b, 10 * (cols.len() + m));

    let mut forces = vec![Vec3::ZERO; problem.candidates.len()];
    for (k, &(i, j)) in col_owner.iter().enumerate() {
        forces[i] = forces[i] + problem.candidates[i].cone.edges[j] * nnls.x[k];
    }
    let mut w_star = vec![0.0; m];
    for (k, col) in cols.iter().enumerate() {
        if nnls.x[k] != 0.0 {
            crate::mat::axpy(nnls.x[k], col, &mut w_star);
        }
    }
    let w_star = ExtWrench::from_stacked(&w_star);
    let n_q = m - 6;
    let diff: Vec<f64> =
        b.iter().zip(w_star.stacked()).map(|(a, c)| a - c).collect();
    let jts_err = diff[..n_q].iter().map(|v| v * v).sum::<f64>().sqrt();
    let base_f_err = diff[n_q..n_q + 3].iter().map(|v| v * v).sum::<f64>().sqrt();
    let base_t_err = diff[n_q + 3..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(QpSolution {
        forces,
        w_star,
        residual,
        jts_err,
        base_f_err,
        base_t_err,
        kkt: nnls.kkt,
        converged: nnls.converged,
        iterations: nnls.iterations,
    })
}

/// Evaluate how well a set of candidate points explains a measurement:
/// every point is snapped to its nearest link surface, given the default
/// cone, and all candidates may carry force simultaneously.
pub fn qp_error(
    model: &RobotModel,
    poses: &[LinkPose],
    measurement: &ExtWrench,
    points: &[Vec3],
    mu: f64,
    m_e: usize,
) -> Result<QpSolution> {
    let mut candidates = Vec::with_capacity(points.len());
    for &p in points {
        let sdfs = all_links_sdf(model, poses, p);
        let link = sdfs
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.d.abs().total_cmp(&b.d.abs()))
            .map(|(l, _)| l)
            .unwrap_or(0);
        let on_surface = project_to_surface(model, poses, p, link);
        let normal = surface_normal(model, poses, on_surface, link);
        let cone = build_cone(on_surface, normal, mu, m_e)?;
        candidates.push(QpCandidate { point: on_surface, link_index: link, cone });
    }
    let problem = QpProblem::new(model, poses, measurement.clone(), candidates)?;
    solve_qp(&problem)
}

pub struct NnlsResult {
    pub x: Vec<f64>,
    pub kkt: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Lawson–Hanson non-negative least squares over the given columns.
///
/// Deterministic: ties in the dual pick the lowest column index. The
/// passive-set subproblem is solved with a fresh Householder QR (the
/// passive set never exceeds the row count).
pub fn nnls_lawson_hanson(cols: &[Vec<f64>], b: &[f64], max_iter: usize) -> NnlsResult {
    let n = cols.len();
    let mut x = vec![0.0; n];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; n];
    // Columns rejected as linearly dependent since the last change to x.
    let mut banned = vec![false; n];

    let scale = cols
        .iter()
        .map(|c| dot(c, b).abs())
        .fold(1.0_f64, f64::max);
    let tol = 1e-12 * scale;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // Dual w = Cᵀ (b − C x).
        let r = residual_vec(cols, &x, b);
        let mut best_j = None;
        let mut best_w = tol;
        for j in 0..n {
            if in_passive[j] || banned[j] {
                continue;
            }
            let w = dot(&cols[j], &r);
            if w > best_w {
                best_w = w;
                best_j = Some(j);
            }
        }
        let Some(j_new) = best_j else {
            converged = true;
            break;
        };
        passive.push(j_new);
        in_passive[j_new] = true;

        // Inner loop: restrict to the passive set, clip negative entries.
        loop {
            let sub: Vec<&[f64]> = passive.iter().map(|&j| cols[j].as_slice()).collect();
            match lstsq_qr(&sub, b) {
                None => {
                    // Dependent column: drop the newest, ban it until x moves.
                    let dropped = passive.pop().expect("passive set nonempty");
                    in_passive[dropped] = false;
                    banned[dropped] = true;
                    break;
                }
                Some(z) => {
                    if z.iter().all(|&v| v > 0.0) {
                        for (idx, &j) in passive.iter().enumerate() {
                            x[j] = z[idx];
                        }
                        banned.fill(false);
                        break;
                    }
                    // Step toward z until the first variable hits zero.
                    let mut alpha = f64::INFINITY;
                    for (idx, &j) in passive.iter().enumerate() {
                        if z[idx] <= 0.0 {
                            let denom = x[j] - z[idx];
                            if denom > 0.0 {
                                alpha = alpha.min(x[j] / denom);
                            }
                        }
                    }
                    if !alpha.is_finite() {
                        alpha = 0.0;
                    }
                    for (idx, &j) in passive.iter().enumerate() {
                        x[j] += alpha * (z[idx] - x[j]);
                    }
                    banned.fill(false);
                    // Remove zeroed variables.
                    let mut kept = Vec::with_capacity(passive.len());
                    for &j in &passive {
                        if x[j] > tol.max(1e-300) && x[j] > 0.0 {
                            kept.push(j);
                        } else {
                            x[j] = 0.0;
                            in_passive[j] = false;
                        }
                    }
                    if kept.len() == passive.len() {
                        // Numerical stall guard: force the smallest out.
                        if let Some(&j_min) = passive
                            .iter()
                            .min_by(|&&a, &&b| x[a].total_cmp(&x[b]))
                        {
                            x[j_min] = 0.0;
                            in_passive[j_min] = false;
                            kept.retain(|&j| j != j_min);
                        }
                    }
                    passive = kept;
                }
            }
        }
    }

    // KKT residual: passive gradients should vanish, active duals be <= 0.
    let r = residual_vec(cols, &x, b);
    let mut kkt = 0.0_f64;
    for j in 0..n {
        let w = dot(&cols[j], &r);
        if in_passive[j] {
            kkt = kkt.max(w.abs());
        } else {
            kkt = kkt.max(w.max(0.0));
        }
    }
    NnlsResult { x, kkt, converged, iterations }
}

fn residual_vec(cols: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    for (j, col) in cols.iter().enumerate() {
        if x[j] != 0.0 {
            crate::mat::axpy(-x[j], col, &mut r);
        }
    }
    r
}

/// Dense least squares via Householder QR. Returns `None` when the columns
/// are (numerically) linearly dependent.
fn lstsq_qr(cols: &[&[f64]], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let p = cols.len();
    if p == 0 || p > m {
        return None;
    }
    // Column-major working copy.
    let mut a: Vec<f64> = Vec::with_capacity(m * p);
    for c in cols {
        a.extend_from_slice(c);
    }
    let mut rhs = b.to_vec();
    let mut diag_max = 0.0_f64;
    for k in 0..p {
        // Householder vector for column k below row k.
        let col = &a[k * m..(k + 1) * m];
        let norm_x = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_x == 0.0 {
            return None;
        }
        let alpha = if col[k] >= 0.0 { -norm_x } else { norm_x };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= alpha;
        let v_norm_sq = v.iter().map(|x| x * x).sum::<f64>();
        if v_norm_sq > 0.0 {
            // Apply H = I − 2 v vᵀ / (vᵀ v) to remaining columns and rhs.
            for c in k..p {
                let colc = &mut a[c * m..(c + 1) * m];
                let s = 2.0 * dot(&v, &colc[k..]) / v_norm_sq;
                for (vi, x) in v.iter().zip(&mut colc[k..]) {
                    *x -= s * vi;
                }
            }
            let s = 2.0 * dot(&v, &rhs[k..]) / v_norm_sq;
            for (vi, x) in v.iter().zip(&mut rhs[k..]) {
                *x -= s * vi;
            }
        }
        let rkk = a[k * m + k].abs();
        diag_max = diag_max.max(rkk);
        if rkk < 1e-12 * diag_max.max(1e-300) {
            return None;
        }
    }
    // Back substitution on the p x p upper triangle.
    let mut z = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = rhs[k];
        for c in k + 1..p {
            s -= a[c * m + k] * z[c];
        }
        z[k] = s / a[k * m + k];
    }
    Some(z)
}
