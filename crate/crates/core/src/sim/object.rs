//! Procedural single-joint cabinets.
//!
//! Object frame: the body is an axis-aligned box centred at the origin with
//! its front face at `+x`; `+z` is up and `+y` is left. Moving-part and handle
//! geometry is stored at the rest pose (joint value 0) and moved by the joint
//! transform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vec3_serde, Mat3, RigidTransform, Rotation, Vec3};

/// Parallel-jaw opening of the flying gripper, meters.
pub const GRIPPER_APERTURE: f64 = 0.08;

/// Thickness of door panels, meters.
pub const DOOR_THICKNESS: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFamily {
    Drawer,
    Door,
}

impl std::str::FromStr for ObjectFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "drawer" => Ok(ObjectFamily::Drawer),
            "door" => Ok(ObjectFamily::Door),
            other => Err(format!("unknown object family `{other}`")),
        }
    }
}

impl std::fmt::Display for ObjectFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectFamily::Drawer => "drawer",
            ObjectFamily::Door => "door",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

/// Cylindrical bar handle, rest pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleSpec {
    /// From the centre of the moving part's front face to the handle centre.
    #[serde(rename = "center_offset_m", with = "vec3_serde")]
    pub center_offset: Vec3,
    #[serde(with = "vec3_serde")]
    pub axis: Vec3,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "radius_m")]
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub family: ObjectFamily,
    #[serde(rename = "body_size_m", with = "vec3_serde")]
    pub body_size: Vec3,
    pub joint_kind: JointKind,
    #[serde(with = "vec3_serde")]
    pub joint_axis: Vec3,
    /// A point on the hinge line (revolute) or the front-face centre (prismatic).
    #[serde(rename = "joint_origin_m", with = "vec3_serde")]
    pub joint_origin: Vec3,
    /// Meters for prismatic joints, radians for revolute joints.
    pub joint_range: [f64; 2],
    #[serde(rename = "moving_part_size_m", with = "vec3_serde")]
    pub moving_part_size: Vec3,
    #[serde(rename = "moving_part_center_m", with = "vec3_serde")]
    pub moving_part_center: Vec3,
    pub handle: HandleSpec,
    pub base_pose: RigidTransform,
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        let [lo, hi] = self.joint_range;
        if !(lo < hi) {
            return bad(format!("joint range [{lo}, {hi}] is empty"));
        }
        if self.body_size.iter().chain(self.moving_part_size.iter()).any(|&x| !(x > 0.0)) {
            return bad("non-positive size".into());
        }
        if !(self.handle.length > 0.0 && self.handle.radius > 0.0) {
            return bad("non-positive handle dimensions".into());
        }
        if !(self.handle.radius < GRIPPER_APERTURE / 2.0) {
            return bad(format!("handle radius {} does not fit the gripper", self.handle.radius));
        }
        for (name, v) in [("joint_axis", self.joint_axis), ("handle.axis", self.handle.axis)] {
            if (v.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("{name} is not a unit vector"));
            }
        }
        if !self.base_pose.rotation.is_valid() {
            return bad("base pose rotation invalid".into());
        }
        Ok(())
    }

    /// Centre of the moving part's front face at the rest pose.
    pub fn front_center(&self) -> Vec3 {
        self.moving_part_center + Vec3::new(self.moving_part_size.x / 2.0, 0.0, 0.0)
    }

    pub fn handle_center(&self) -> Vec3 {
        self.front_center() + self.handle.center_offset
    }

    /// Rigid motion of the moving part (and handle) at joint value `q`.
    pub fn joint_transform(&self, q: f64) -> RigidTransform {
        match self.joint_kind {
            JointKind::Prismatic => RigidTransform::from_translation(self.joint_axis * q),
            JointKind::Revolute => {
                let rot = axis_angle(&self.joint_axis, q);
                let o = self.joint_origin;
                RigidTransform::new(rot, o - rot.apply(&o))
            }
        }
    }

    pub fn with_base_pose(mut self, pose: RigidTransform) -> Self {
        self.base_pose = pose;
        self
    }

    /// The state the collectors start from: closed for pulling, half open
    /// for pushing.
    pub fn initial_state(&self, pull: bool) -> ObjectState {
        let [lo, hi] = self.joint_range;
        let q = if pull { lo } else { lo + 0.5 * (hi - lo) };
        ObjectState::new(*self, q)
    }
}

pub(crate) fn axis_angle(axis: &Vec3, angle: f64) -> Rotation {
    let (s, c) = angle.sin_cos();
    let k = axis.normalize();
    let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Rotation::from_matrix_unchecked(Mat3::identity() + kx * s + kx * kx * (1.0 - c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub spec: ObjectSpec,
    pub joint_value: f64,
}

impl ObjectState {
    /// Clamps `joint_value` into the joint range.
    pub fn new(spec: ObjectSpec, joint_value: f64) -> Self {
        let [lo, hi] = spec.joint_range;
        ObjectState {
            spec,
            joint_value: joint_value.clamp(lo, hi),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Samples a cabinet of the given family with an identity base pose.
///
/// Ranges: body edges 0.3–1.0 m, handle length 0.05–0.2 m (shortened to fit
/// the moving part), handle radius 5–20 mm, handle standoff 20–40 mm.
/// Drawers open up to 60–90 % of their depth, doors up to 1.2–1.9 rad.
pub fn sample_object<R: Rng + ?Sized>(family: ObjectFamily, rng: &mut R) -> ObjectSpec {
    let body = Vec3::new(uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0));
    let half = body / 2.0;
    let radius = uniform(rng, 0.005, 0.02);
    let length = uniform(rng, 0.05, 0.2);
    let standoff = uniform(rng, 0.02, 0.04);
    let horizontal = rng.random::<f64>() < 0.5;

    match family {
        ObjectFamily::Drawer => {
            let mx = body.x * uniform(rng, 0.6, 0.9);
            let my = body.y * uniform(rng, 0.5, 0.9);
            let mz = body.z * uniform(rng, 0.2, 0.45);
            let cy = uniform(rng, -1.0, 1.0) * (half.y - my / 2.0) * 0.9;
            let cz = uniform(rng, -1.0, 1.0) * (half.z - mz / 2.0) * 0.9;
            let travel = mx * uniform(rng, 0.6, 0.9);
            let (axis, extent) = if horizontal { (Vec3::y(), my) } else { (Vec3::z(), mz) };
            let center = Vec3::new(half.x - mx / 2.0, cy, cz);
            ObjectSpec {
                family,
                body_size: body,
                joint_kind: JointKind::Prismatic,
                joint_axis: Vec3::x(),
                joint_origin: center + Vec3::new(mx / 2.0, 0.0, 0.0),
                joint_range: [0.0, travel],
                moving_part_size: Vec3::new(mx, my, mz),
                moving_part_center: center,
                handle: HandleSpec {
                    center_offset: Vec3::new(standoff + radius, 0.0, 0.0),
                    axis,
                    length: length.min(0.8 * extent),
                    radius,
                },
                base_pose: RigidTransform::identity(),
            }
        }
        ObjectFamily::Door => {
            let t = DOOR_THICKNESS;
            let my = body.y * uniform(rng, 0.8, 0.95);
            let mz = body.z * uniform(rng, 0.8, 0.95);
            let center = Vec3::new(half.x + t / 2.0, 0.0, 0.0);
            // hinge on the -y or +y edge; the handle sits near the opposite edge
            let hinge_side = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let hinge = Vec3::new(half.x, hinge_side * my / 2.0, 0.0);
            // positive rotation must swing the free edge outward (+x)
            let axis = Vec3::new(0.0, 0.0, hinge_side);
            let max_angle = uniform(rng, 1.2, 1.9);
            let vertical = rng.random::<f64>() < 0.7;
            let (h_axis, extent) = if vertical { (Vec3::z(), mz) } else { (Vec3::y(), my * 0.3) };
            let edge_offset = -hinge_side * my * uniform(rng, 0.3, 0.4);
            ObjectSpec {
                family,
                body_size: body,
                joint_kind: JointKind::Revolute,
                joint_axis: axis,
                joint_origin: hinge,
                joint_range: [0.0, max_angle],
                moving_part_size: Vec3::new(t, my, mz),
                moving_part_center: center,
                handle: HandleSpec {
                    center_offset: Vec3::new(standoff + radius, edge_offset, 0.0),
                    axis: h_axis,
                    length: length.min(0.8 * extent),
                    radius,
                },
                base_pose: RigidTransform::identity(),
            }
        }
    }
}

/// `n` specs of one family from a seed.
pub fn generate_specs(family: ObjectFamily, n: usize, seed: u64) -> Vec<ObjectSpec> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_object(family, &mut rng)).collect()
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    object: Vec<ObjectSpec>,
}

/// TOML document with one `[[object]]` table per spec.
pub fn specs_to_toml(specs: &[ObjectSpec]) -> String {
    toml::to_string(&SpecFile { object: specs.to_vec() }).expect("specs serialize")
}

pub fn specs_from_toml(text: &str) -> Result<Vec<ObjectSpec>> {
    let file: SpecFile = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("object spec document: {e}")))?;
    for s in &file.object {
        s.validate()?;
    }
    Ok(file.object)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampling_is_deterministic() {
        for fam in [ObjectFamily::Drawer, ObjectFamily::Door] {
            let a = sample_object(fam, &mut ChaCha8Rng::seed_from_u64(3));
            let b = sample_object(fam, &mut ChaCha8Rng::seed_from_u64(3));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn drawer_family_contract() {
        let s = sample_object(ObjectFamily::Drawer, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.joint_kind, JointKind::Prismatic);
        // out of the front face
        assert_eq!(s.joint_axis, Vec3::x());
        let d = sample_object(ObjectFamily::Door, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(d.joint_kind, JointKind::Revolute);
    }

    #[test]
    fn thousand_samples_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..1000 {
            let fam = if i % 2 == 0 { ObjectFamily::Drawer } else { ObjectFamily::Door };
            let s = sample_object(fam, &mut rng);
            s.validate().unwrap();
            assert!(s.body_size.iter().all(|&x| (0.3..=1.0).contains(&x)));
            assert!((0.005..=0.02).contains(&s.handle.radius));
            assert!(s.handle.length <= 0.2);
        }
    }

    #[test]
    fn revolute_opening_moves_free_edge_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = sample_object(ObjectFamily::Door, &mut rng);
            let handle = s.handle_center();
            let moved = s.joint_transform(0.3).apply_point(&handle);
            assert!(moved.x > handle.x);
        }
    }

    #[test]
    fn state_clamps_joint_value() {
        let s = sample_object(ObjectFamily::Drawer, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(ObjectState::new(s, -1.0).joint_value, s.joint_range[0]);
        assert_eq!(ObjectState::new(s, 99.0).joint_value, s.joint_range[1]);
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let mut specs = generate_specs(ObjectFamily::Drawer, 3, 5);
        specs.extend(generate_specs(ObjectFamily::Door, 3, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        specs[1].base_pose = RigidTransform::new(crate::geometry::random_rotation(&mut rng), Vec3::new(0.1, 0.2, 0.3));
        let text = specs_to_toml(&specs);
        assert!(text.contains("body_size_m"));
        assert_eq!(specs_from_toml(&text).unwrap(), specs);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = sample_object(ObjectFamily::Drawer, &mut ChaCha8Rng::seed_from_u64(4));
        s.joint_range = [0.2, 0.1];
        assert!(s.validate().is_err());
        let text = specs_to_toml(&[s]);
        assert!(specs_from_toml(&text).is_err());
    }
}
