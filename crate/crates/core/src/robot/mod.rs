//! Serial-chain robot model: kinematics, capsule geometry, and analytic
//! signed distance fields.
//!
//! A robot is a chain of revolute joints. Joint `i` sits at a fixed offset
//! from link frame `i-1`; link frame `i` is the frame after the joint `i`
//! rotation. Each link carries one or more capsules expressed in its frame.
//!
//! Two presets are built in: `planar3` (3-DOF planar chain, 0.9 m reach) and
//! `spatial7` (7-DOF arm, ~1.0 m reach). Both are checked in as TOML files
//! under `presets/` and any robot with the same schema can be loaded from
//! disk.

mod kinematics;
mod sdf;

pub use kinematics::{forward_kinematics, point_jacobian, point_jacobian_with_poses};
pub use sdf::{
    all_links_sdf, link_sdf, nearest_link, project_to_surface, sample_surface_point,
    surface_normal,
};

use crate::error::{CdmError, Result};
use crate::geom::{Iso, Quat, Vec3};
use serde::{Deserialize, Serialize};

/// Capsule: segment from `a` to `b` (link frame, meters) swept by `radius`.
/// A zero-length segment is a sphere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn segment_length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Total surface area: cylinder side plus the two hemispherical caps.
    pub fn surface_area(&self) -> f64 {
        let r = self.radius;
        2.0 * std::f64::consts::PI * r * self.segment_length()
            + 4.0 * std::f64::consts::PI * r * r
    }
}

/// Geometry of one link: a primary capsule plus optional extras.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub capsules: Vec<Capsule>,
}

impl LinkGeometry {
    pub fn surface_area(&self) -> f64 {
        self.capsules.iter().map(Capsule::surface_area).sum()
    }
}

/// One revolute joint: fixed offset from the parent link frame, then a
/// rotation of `q` about `axis`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSpec {
    /// Unit rotation axis in the joint frame.
    pub axis: Vec3,
    /// Fixed translation from the parent link frame (meters).
    pub offset: Vec3,
    /// Fixed roll-pitch-yaw rotation applied before the joint rotation (radians).
    #[serde(default)]
    pub rpy: Vec3,
    /// Joint limits [lo, hi] (radians) for configuration sampling.
    pub limits: [f64; 2],
}

impl JointSpec {
    pub fn fixed_transform(&self) -> Iso {
        Iso::new(Quat::from_rpy(self.rpy.x, self.rpy.y, self.rpy.z), self.offset)
    }
}

/// Pose of one link frame in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose {
    /// Frame origin (meters).
    pub p: Vec3,
    /// Frame orientation, unit quaternion (w, x, y, z).
    pub q: Quat,
}

impl LinkPose {
    pub fn iso(&self) -> Iso {
        Iso::new(self.q, self.p)
    }
}

/// Signed distance query result for one link.
///
/// `d` is the distance from the query point to the link surface, negative
/// inside. `g` is the unit direction `-∇d`: for exterior points it points
/// from the query point toward the nearest surface point; the interior
/// extension keeps `x + d·g` equal to the nearest surface point everywhere.
#[derive(Debug, Clone, Copy)]
pub struct SdfResult {
    pub d: f64,
    pub g: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    /// Workspace scale (meters); used for coordinate normalization.
    pub reach: f64,
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkGeometry>,
}

pub const PLANAR3_TOML: &str = include_str!("../../presets/planar3.toml");
pub const SPATIAL7_TOML: &str = include_str!("../../presets/spatial7.toml");

impl RobotModel {
    pub fn n_q(&self) -> usize {
        self.joints.len()
    }

    /// Built-in 3-DOF planar chain, 0.9 m reach.
    pub fn planar3() -> RobotModel {
        RobotModel::from_toml_str(PLANAR3_TOML).expect("built-in planar3 preset is valid")
    }

    /// Built-in 7-DOF arm, ~1.0 m reach.
    pub fn spatial7() -> RobotModel {
        RobotModel::from_toml_str(SPATIAL7_TOML).expect("built-in spatial7 preset is valid")
    }

    pub fn preset(name: &str) -> Result<RobotModel> {
        match name {
            "planar3" => Ok(RobotModel::planar3()),
            "spatial7" => Ok(RobotModel::spatial7()),
            other => Err(CdmError::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<RobotModel> {
        let model: RobotModel =
            toml::from_str(s).map_err(|e| CdmError::InvalidConfig(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RobotModel> {
        let s = std::fs::read_to_string(path)?;
        RobotModel::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() < 2 {
            return Err(CdmError::InvalidConfig("need at least 2 joints".into()));
        }
        if self.links.len() != self.joints.len() {
            return Err(CdmError::InvalidConfig(format!(
                "links ({}) must match joints ({})",
                self.links.len(),
                self.joints.len()
            )));
        }
        if !(self.reach > 0.0) {
            return Err(CdmError::InvalidConfig("reach must be positive".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(CdmError::InvalidConfig(format!("joint {i} axis must be unit length")));
            }
            if j.limits[0] >= j.limits[1] {
                return Err(CdmError::InvalidConfig(format!("joint {i} limits must satisfy lo < hi")));
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            if link.capsules.is_empty() {
                return Err(CdmError::InvalidConfig(format!("link {i} has no capsules")));
            }
            for c in &link.capsules {
                if !(c.radius > 0.0 && c.radius <= 0.2) {
                    return Err(CdmError::InvalidConfig(format!(
                        "link {i} capsule radius {} outside (0, 0.2]",
                        c.radius
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_link_index(&self, link_index: usize, context: &'static str) -> Result<()> {
        if link_index < self.links.len() {
            Ok(())
        } else {
            Err(CdmError::IndexOutOfRange { index: link_index, len: self.links.len(), context })
        }
    }

    /// Surface area of one link (all capsules).
    pub fn link_area(&self, link_index: usize) -> f64 {
        self.links[link_index].surface_area()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_validate() {
        let p = RobotModel::planar3();
        assert_eq!(p.n_q(), 3);
        assert!((p.reach - 0.9).abs() < 1e-12);
        let s = RobotModel::spatial7();
        assert_eq!(s.n_q(), 7);
        let total: f64 = s.links.iter().map(|l| l.capsules[0].segment_length()).sum();
        assert!((total - 1.0).abs() < 0.05, "spatial7 reach ~1.0 m, got {total}");
    }

    #[test]
    fn preset_lookup_rejects_unknown() {
        assert!(RobotModel::preset("hexapod").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        // Radius out of range.
        let bad = r#"
name = "bad"
reach = 1.0
[[joints]]
axis = [0.0, 0.0, 1.0]
offset = [0.0, 0.0, 0.0]
limits = [-1.0, 1.0]
[[joints]]
axis = [0.0, 0.0, 1.0]
offset = [0.1, 0.0, 0.0]
limits = [-1.0, 1.0]
[[links]]
capsules = [{ a = [0.0, 0.0, 0.0], b = [0.1, 0.0, 0.0], radius = 0.5 }]
[[links]]
capsules = [{ a = [0.0, 0.0, 0.0], b = [0.1, 0.0, 0.0], radius = 0.05 }]
"#;
        assert!(RobotModel::from_toml_str(bad).is_err());
    }
}
