//! Forward kinematics and contact-point Jacobians.

use super::{LinkPose, RobotModel};
use crate::error::{CdmError, Result};
use crate::geom::{Iso, Quat, Vec3};
use crate::mat::Mat;

/// Pose of every link frame for a joint configuration.
///
/// Link frame `i` is the frame after joint `i`'s rotation, so its origin is
/// the joint-`i` axis point.
pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<Vec<LinkPose>> {
    if q.len() != model.n_q() {
        return Err(CdmError::DimensionMismatch {
            expected: model.n_q(),
            got: q.len(),
            context: "forward_kinematics joint vector",
        });
    }
    let mut poses = Vec::with_capacity(model.n_q());
    let mut cur = Iso::IDENTITY;
    for (joint, &qi) in model.joints.iter().zip(q) {
        cur = cur
            .compose(joint.fixed_transform())
            .compose(Iso::new(Quat::from_axis_angle(joint.axis, qi), Vec3::ZERO));
        poses.push(LinkPose { p: cur.trans, q: cur.rot });
    }
    Ok(poses)
}

/// Positional Jacobian of a world point `r` rigidly attached to link
/// `link_index`: the 3×n_q matrix J with ṙ = J q̇. Columns for joints distal
/// to the link are zero.
pub fn point_jacobian(
    model: &RobotModel,
    q: &[f64],
    r: Vec3,
    link_index: usize,
) -> Result<Mat> {
    model.check_link_index(link_index, "point_jacobian")?;
    let poses = forward_kinematics(model, q)?;
    Ok(point_jacobian_with_poses(model, &poses, r, link_index))
}

/// Same as [`point_jacobian`] but reuses precomputed link poses.
pub fn point_jacobian_with_poses(
    model: &RobotModel,
    poses: &[LinkPose],
    r: Vec3,
    link_index: usize,
) -> Mat {
    let n_q = model.n_q();
    let mut jac = Mat::zeros(3, n_q);
    for j in 0..=link_index {
        // The joint origin and world axis: rotation about the axis fixes
        // both, so the post-rotation link frame gives them directly.
        let origin = poses[j].p;
        let axis_world = poses[j].q.rotate(model.joints[j].axis);
        let col = axis_world.cross(r - origin);
        jac.set(0, j, col.x);
        jac.set(1, j, col.y);
        jac.set(2, j, col.z);
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Rng};
    use rand::RngExt;
    use std::f64::consts::FRAC_PI_2;

    fn random_q(model: &RobotModel, rng: &mut Rng) -> Vec<f64> {
        model.joints.iter().map(|j| rng.random_range(j.limits[0]..j.limits[1])).collect()
    }

    #[test]
    fn planar3_zero_angles_is_straight_chain() {
        let model = RobotModel::planar3();
        let poses = forward_kinematics(&model, &[0.0, 0.0, 0.0]).unwrap();
        // Link frames sit at the joint origins; tips are 0.3 m further out.
        let expect = [0.0, 0.3, 0.6];
        for (pose, x) in poses.iter().zip(expect) {
            assert!((pose.p - Vec3::new(x, 0.0, 0.0)).norm() < 1e-12);
        }
        for (i, pose) in poses.iter().enumerate() {
            let tip = pose.iso().apply(model.links[i].capsules[0].b);
            assert!((tip - Vec3::new(0.3 * (i + 1) as f64, 0.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn planar3_base_rotation_moves_link1_tip() {
        let model = RobotModel::planar3();
        let poses = forward_kinematics(&model, &[FRAC_PI_2, 0.0, 0.0]).unwrap();
        let tip = poses[0].iso().apply(model.links[0].capsules[0].b);
        assert!((tip - Vec3::new(0.0, 0.3, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn link0_pose_depends_only_on_q0() {
        let model = RobotModel::planar3();
        let a = forward_kinematics(&model, &[0.4, 0.0, 0.0]).unwrap();
        let b = forward_kinematics(&model, &[0.4, 1.0, -2.0]).unwrap();
        assert!((a[0].p - b[0].p).norm() < 1e-15);
        assert_eq!(a[0].q, b[0].q);
    }

    #[test]
    fn fk_rejects_wrong_dimension() {
        let model = RobotModel::planar3();
        assert!(forward_kinematics(&model, &[0.0, 0.0]).is_err());
    }

    // Independent oracle: compose 4x4 homogeneous transforms step by step.
    fn fk_homogeneous_oracle(model: &RobotModel, q: &[f64]) -> Vec<[f64; 16]> {
        fn mat_mul(a: &[f64; 16], b: &[f64; 16]) -> [f64; 16] {
            let mut out = [0.0; 16];
            for r in 0..4 {
                for c in 0..4 {
                    for k in 0..4 {
                        out[r * 4 + c] += a[r * 4 + k] * b[k * 4 + c];
                    }
                }
            }
            out
        }
        fn rot_about(axis: Vec3, t: f64) -> [f64; 16] {
            // Rodrigues' formula, written out.
            let (x, y, z) = (axis.x, axis.y, axis.z);
            let c = t.cos();
            let s = t.sin();
            let v = 1.0 - c;
            [
                x * x * v + c,
                x * y * v - z * s,
                x * z * v + y * s,
                0.0,
                x * y * v + z * s,
                y * y * v + c,
                y * z * v - x * s,
                0.0,
                x * z * v - y * s,
                y * z * v + x * s,
                z * z * v + c,
                0.0,
                0.0,
                0.0,
                0.0,
                1.0,
            ]
        }
        fn translation(v: Vec3) -> [f64; 16] {
            let mut m = [0.0; 16];
            m[0] = 1.0;
            m[5] = 1.0;
            m[10] = 1.0;
            m[15] = 1.0;
            m[3] = v.x;
            m[7] = v.y;
            m[11] = v.z;
            m
        }
        let mut cur = translation(Vec3::ZERO);
        let mut out = Vec::new();
        for (joint, &qi) in model.joints.iter().zip(q) {
            cur = mat_mul(&cur, &translation(joint.offset));
            let rpy = joint.rpy;
            cur = mat_mul(&cur, &rot_about(Vec3::Z, rpy.z));
            cur = mat_mul(&cur, &rot_about(Vec3::Y, rpy.y));
            cur = mat_mul(&cur, &rot_about(Vec3::X, rpy.x));
            cur = mat_mul(&cur, &rot_about(joint.axis, qi));
            out.push(cur);
        }
        out
    }

    #[test]
    fn spatial7_matches_homogeneous_transform_oracle() {
        let model = RobotModel::spatial7();
        let mut rng = stream_rng(11, 0);
        for _ in 0..20 {
            let q = random_q(&model, &mut rng);
            let poses = forward_kinematics(&model, &q).unwrap();
            let oracle = fk_homogeneous_oracle(&model, &q);
            for (pose, m) in poses.iter().zip(&oracle) {
                let p = Vec3::new(m[3], m[7], m[11]);
                assert!((pose.p - p).norm() < 1e-10, "origin mismatch");
                // Compare rotations by their action on the basis vectors.
                for (k, e) in [Vec3::X, Vec3::Y, Vec3::Z].into_iter().enumerate() {
                    let col = Vec3::new(m[k], m[4 + k], m[8 + k]);
                    assert!((pose.q.rotate(e) - col).norm() < 1e-10, "rotation mismatch");
                }
            }
        }
    }

    // Central finite difference of the FK-transported point.
    fn jacobian_fd_oracle(model: &RobotModel, q: &[f64], r: Vec3, link: usize) -> Mat {
        let h = 1e-6;
        let poses = forward_kinematics(model, q).unwrap();
        let r_local = poses[link].iso().inverse().apply(r);
        let mut jac = Mat::zeros(3, model.n_q());
        for j in 0..model.n_q() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[j] += h;
            qm[j] -= h;
            let rp = forward_kinematics(model, &qp).unwrap()[link].iso().apply(r_local);
            let rm = forward_kinematics(model, &qm).unwrap()[link].iso().apply(r_local);
            let d = (rp - rm) / (2.0 * h);
            jac.set(0, j, d.x);
            jac.set(1, j, d.y);
            jac.set(2, j, d.z);
        }
        jac
    }

    #[test]
    fn planar3_link0_jacobian_column() {
        let model = RobotModel::planar3();
        let jac = point_jacobian(&model, &[0.0; 3], Vec3::new(0.3, 0.0, 0.0), 0).unwrap();
        // Column 0 = z × r; columns 1, 2 exactly zero.
        assert!((jac.at(0, 0) - 0.0).abs() < 1e-15);
        assert!((jac.at(1, 0) - 0.3).abs() < 1e-15);
        assert!((jac.at(2, 0) - 0.0).abs() < 1e-15);
        for j in 1..3 {
            for i in 0..3 {
                assert_eq!(jac.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_on_presets() {
        for model in [RobotModel::planar3(), RobotModel::spatial7()] {
            let mut rng = stream_rng(12, 0);
            for trial in 0..50 {
                let q = random_q(&model, &mut rng);
                let link = trial % model.n_q();
                let poses = forward_kinematics(&model, &q).unwrap();
                // A point rigidly attached near the link: capsule tip pushed
                // out radially.
                let cap = model.links[link].capsules[0];
                let local = cap.b + Vec3::new(0.0, cap.radius, 0.0);
                let r = poses[link].iso().apply(local);
                let jac = point_jacobian(&model, &q, r, link).unwrap();
                let fd = jacobian_fd_oracle(&model, &q, r, link);
                for i in 0..3 {
                    for j in 0..model.n_q() {
                        assert!(
                            (jac.at(i, j) - fd.at(i, j)).abs() < 1e-5,
                            "{}: J[{i},{j}]={} vs fd {}",
                            model.name,
                            jac.at(i, j),
                            fd.at(i, j)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_rejects_bad_link_index() {
        let model = RobotModel::planar3();
        assert!(point_jacobian(&model, &[0.0; 3], Vec3::ZERO, 3).is_err());
    }
}
