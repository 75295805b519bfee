//! Procedural articulated objects and a rule-based flying-gripper simulator.

mod object;
mod rules;
mod surface;

pub use object::{
    generate_specs, sample_object, specs_from_toml, specs_to_toml, HandleSpec, JointKind, ObjectFamily, ObjectSpec,
    ObjectState, DOOR_THICKNESS, GRIPPER_APERTURE,
};
pub use rules::{execute_primitive, ground_truth_success_grid, GripperAction, CONTACT_EPS, STROKE, SUCCESS_FRACTION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, random_z_rotation, PartLabel, PointCloud, RigidTransform, Vec3};

pub const MIN_RENDER_POINTS: usize = 64;

/// How object poses are randomized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSetting {
    Identity,
    /// Rotation about the vertical axis only.
    Z,
    /// Haar-uniform rotation.
    So3,
}

impl PoseSetting {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> RigidTransform {
        match self {
            PoseSetting::Identity => RigidTransform::identity(),
            PoseSetting::Z => RigidTransform::from_rotation(random_z_rotation(rng)),
            PoseSetting::So3 => RigidTransform::from_rotation(random_rotation(rng)),
        }
    }
}

impl std::str::FromStr for PoseSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(PoseSetting::Identity),
            "z" => Ok(PoseSetting::Z),
            "so3" => Ok(PoseSetting::So3),
            other => Err(format!("unknown pose setting `{other}` (expected z or so3)")),
        }
    }
}

impl std::fmt::Display for PoseSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoseSetting::Identity => "identity",
            PoseSetting::Z => "z",
            PoseSetting::So3 => "so3",
        })
    }
}

/// Samples `n_points` uniformly by area over all exterior surfaces and
/// returns them in the world frame with part labels.
pub fn render_cloud<R: Rng + ?Sized>(s: &ObjectState, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    if n_points < MIN_RENDER_POINTS {
        return Err(Error::InvalidInput(format!(
            "render needs at least {MIN_RENDER_POINTS} points, got {n_points}"
        )));
    }
    let surfs = surface::surfaces(s);
    let base = &s.spec.base_pose;
    let (points, labels): (Vec<Vec3>, Vec<PartLabel>) = surface::sample_surfaces(&surfs, n_points, rng)
        .into_iter()
        .map(|(p, l)| (base.apply_point(&p), l))
        .unzip();
    PointCloud::new(points, Some(labels))
}

/// Distance from a world-frame point to the nearest object surface.
pub fn surface_distance(s: &ObjectState, p: &Vec3) -> f64 {
    let local = s.spec.base_pose.inverse().apply_point(p);
    surface::surfaces(s)
        .iter()
        .map(|f| f.distance(&local))
        .fold(f64::INFINITY, f64::min)
}

/// Fraction of the total surface area that belongs to the handle.
pub fn handle_area_share(s: &ObjectState) -> f64 {
    let surfs = surface::surfaces(s);
    let total: f64 = surfs.iter().map(|f| f.area()).sum();
    let handle: f64 = surfs.iter().filter(|f| f.label == PartLabel::Handle).map(|f| f.area()).sum();
    handle / total
}

#[cfg(test)]
mod tests;
