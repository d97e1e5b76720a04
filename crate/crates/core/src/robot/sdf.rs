//! Analytic capsule signed distance fields with gradients, surface
//! projection, and area-uniform surface sampling.

use super::{Capsule, LinkPose, RobotModel, SdfResult};
use crate::error::Result;
use crate::geom::Vec3;
use crate::rng::Rng;
use rand::RngExt;

/// Distance from `x_local` to the capsule axis segment's closest point.
fn closest_axis_point(cap: &Capsule, x_local: Vec3) -> Vec3 {
    let ab = cap.b - cap.a;
    let len_sq = ab.norm_sq();
    if len_sq < 1e-24 {
        return cap.a;
    }
    let t = ((x_local - cap.a).dot(ab) / len_sq).clamp(0.0, 1.0);
    cap.a + ab * t
}

/// Signed distance and gradient direction for one capsule, in the link frame.
/// Returns (d, u) where u is the unit outward radial direction; on the
/// medial axis u falls back to the link-frame +x axis.
fn capsule_sdf_local(cap: &Capsule, x_local: Vec3) -> (f64, Vec3) {
    let c = closest_axis_point(cap, x_local);
    let radial = x_local - c;
    let dist = radial.norm();
    // Medial-axis tie-break: g = -u must come out as the link-frame +x axis.
    let u = match radial.try_normalized(1e-12) {
        Some(u) => u,
        None => -Vec3::X,
    };
    (dist - cap.radius, u)
}

/// Signed distance from world point `x` to the surface of link `link_index`.
///
/// For several capsules the link surface is their union: the capsule with
/// the smallest signed distance wins.
pub fn link_sdf(
    model: &RobotModel,
    link_poses: &[LinkPose],
    x: Vec3,
    link_index: usize,
) -> SdfResult {
    let pose = link_poses[link_index].iso();
    let x_local = pose.inverse().apply(x);
    let mut best_d = f64::INFINITY;
    let mut best_u = Vec3::X;
    for cap in &model.links[link_index].capsules {
        let (d, u) = capsule_sdf_local(cap, x_local);
        if d < best_d {
            best_d = d;
            best_u = u;
        }
    }
    SdfResult { d: best_d, g: pose.apply_vec(-best_u) }
}

/// SDF results for every link (length n_q).
pub fn all_links_sdf(model: &RobotModel, link_poses: &[LinkPose], x: Vec3) -> Vec<SdfResult> {
    (0..model.n_q()).map(|l| link_sdf(model, link_poses, x, l)).collect()
}

/// Index of the link whose surface is nearest to `x` (by |d|).
pub fn nearest_link(model: &RobotModel, link_poses: &[LinkPose], x: Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for l in 0..model.n_q() {
        let d = link_sdf(model, link_poses, x, l).d.abs();
        if d < best_d {
            best_d = d;
            best = l;
        }
    }
    best
}

/// Nearest point on the surface of link `link_index`.
pub fn project_to_surface(
    model: &RobotModel,
    link_poses: &[LinkPose],
    x: Vec3,
    link_index: usize,
) -> Vec3 {
    let sdf = link_sdf(model, link_poses, x, link_index);
    x + sdf.g * sdf.d
}

/// Outward unit surface normal of link `link_index` at (or radially aligned
/// with) `x`. Equal to `-g` of [`link_sdf`].
pub fn surface_normal(
    model: &RobotModel,
    link_poses: &[LinkPose],
    x: Vec3,
    link_index: usize,
) -> Vec3 {
    -link_sdf(model, link_poses, x, link_index).g
}

/// Area-uniform sample on the surface of link `link_index`.
/// Returns the world point and the outward unit normal.
pub fn sample_surface_point(
    model: &RobotModel,
    link_poses: &[LinkPose],
    link_index: usize,
    rng: &mut Rng,
) -> Result<(Vec3, Vec3)> {
    model.check_link_index(link_index, "sample_surface_point")?;
    let link = &model.links[link_index];
    // Pick a capsule proportional to its surface area.
    let total: f64 = link.surface_area();
    let mut pick = rng.random_range(0.0..total);
    let mut cap = &link.capsules[0];
    for c in &link.capsules {
        let a = c.surface_area();
        if pick < a {
            cap = c;
            break;
        }
        pick -= a;
    }
    let (p_local, n_local) = sample_capsule_surface(cap, rng);
    let pose = link_poses[link_index].iso();
    Ok((pose.apply(p_local), pose.apply_vec(n_local)))
}

/// Area-uniform sample on one capsule, in the link frame.
fn sample_capsule_surface(cap: &Capsule, rng: &mut Rng) -> (Vec3, Vec3) {
    use std::f64::consts::PI;
    let r = cap.radius;
    let seg_len = cap.segment_length();
    let side_area = 2.0 * PI * r * seg_len;
    let cap_area = 4.0 * PI * r * r;
    let axis = if seg_len > 1e-12 { (cap.b - cap.a).normalized() } else { Vec3::X };
    let u = axis.any_orthonormal();
    let v = axis.cross(u);

    let pick = rng.random_range(0.0..side_area + cap_area);
    if pick < side_area {
        // Cylinder side.
        let t = rng.random_range(0.0..1.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        let n = u * phi.cos() + v * phi.sin();
        let p = cap.a + axis * (t * seg_len) + n * r;
        (p, n)
    } else {
        // Spherical caps: sample the full sphere uniformly, glue each
        // hemisphere to the matching segment end.
        let z = rng.random_range(-1.0..1.0f64);
        let phi = rng.random_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).max(0.0).sqrt();
        let n = axis * z + (u * phi.cos() + v * phi.sin()) * s;
        let center = if z >= 0.0 { cap.b } else { cap.a };
        (center + n * r, n)
    }
}
