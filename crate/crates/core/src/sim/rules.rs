//! Rule-based execution of the six primitives.

use serde::{Deserialize, Serialize};

use crate::geometry::{vec3_serde, PartLabel, Rotation, Vec3};
use crate::primitive::PrimitiveType;

use super::object::{JointKind, ObjectState, GRIPPER_APERTURE};
use super::surface::{surfaces, Shape};

/// Contact tolerance, meters.
pub const CONTACT_EPS: f64 = 0.005;
/// Length of the scripted gripper motion, meters.
pub const STROKE: f64 = 0.1;
/// Fraction of the joint range that counts as "it moved".
pub const SUCCESS_FRACTION: f64 = 0.01;

const COS_60: f64 = 0.5;
const COS_45: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// A gripper pose at a contact point. Column z of `orientation` is the
/// approach direction, column x the finger-closing direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperAction {
    pub primitive: PrimitiveType,
    #[serde(with = "vec3_serde")]
    pub contact_point: Vec3,
    pub orientation: Rotation,
}

/// Runs one primitive. Failures return `false` and the unchanged state.
pub fn execute_primitive(s: &ObjectState, a: &GripperAction) -> (bool, ObjectState) {
    let fail = (false, *s);
    let spec = &s.spec;
    let base = &spec.base_pose;
    let to_local = base.inverse();
    let p = to_local.apply_point(&a.contact_point);
    let rot = to_local.rotation.compose(&a.orientation);
    let approach = rot.column(2);
    let closing = rot.column(0);

    let surfs = surfaces(s);
    if !surfs.iter().any(|f| f.distance(&p) <= CONTACT_EPS) {
        return fail;
    }

    // attachment; for pushes also the face normal that decides the sign
    let push_normal = if a.primitive.is_pull() {
        let handle = surfs.iter().find(|f| f.label == PartLabel::Handle).expect("handle surface");
        let Shape::Cylinder { axis, radius, .. } = handle.shape else {
            unreachable!("handle is a cylinder")
        };
        let grasped = handle.distance(&p) <= CONTACT_EPS
            && 2.0 * radius <= GRIPPER_APERTURE
            && closing.dot(&axis).abs() <= COS_60;
        if !grasped {
            return fail;
        }
        None
    } else {
        let best = surfs
            .iter()
            .filter(|f| f.label == PartLabel::Moving && f.distance(&p) <= CONTACT_EPS)
            .filter_map(|f| match f.shape {
                Shape::Rect { normal, .. } => Some(normal),
                Shape::Cylinder { .. } => None,
            })
            .map(|n| (n.dot(&-approach), n))
            .filter(|(c, _)| *c > COS_60)
            .max_by(|x, y| x.0.total_cmp(&y.0));
        match best {
            Some((_, n)) => Some(n),
            None => return fail,
        }
    };

    let motion = match a.primitive {
        PrimitiveType::Push => approach,
        PrimitiveType::Pull => -approach,
        PrimitiveType::PushUp | PrimitiveType::PullUp => Vec3::z(),
        PrimitiveType::PushLeft | PrimitiveType::PullLeft => Vec3::y(),
    };

    let (free, lever) = match spec.joint_kind {
        JointKind::Prismatic => (spec.joint_axis, 1.0),
        JointKind::Revolute => {
            let t = spec.joint_axis.cross(&(p - spec.joint_origin));
            let rho = t.norm();
            if rho < 1e-6 {
                return fail;
            }
            (t / rho, rho)
        }
    };
    let proj = motion.dot(&free);
    match push_normal {
        None if proj < COS_45 => return fail,
        Some(n) => {
            // pressing on a face drives the part along -n
            let drive = -n.dot(&free);
            if proj.abs() < COS_45 || drive.abs() < 1e-9 || proj.signum() != drive.signum() {
                return fail;
            }
        }
        None => {}
    }

    let [lo, hi] = spec.joint_range;
    let next = (s.joint_value + proj * STROKE / lever).clamp(lo, hi);
    if (next - s.joint_value).abs() > SUCCESS_FRACTION * (hi - lo) {
        (true, ObjectState { spec: *spec, joint_value: next })
    } else {
        fail
    }
}

/// `result[m][l]` is the outcome of `primitive` at `points[m]` with `orientations[l]`.
pub fn ground_truth_success_grid(
    s: &ObjectState,
    primitive: PrimitiveType,
    points: &[Vec3],
    orientations: &[Rotation],
) -> Vec<Vec<bool>> {
    points
        .iter()
        .map(|&contact_point| {
            orientations
                .iter()
                .map(|&orientation| {
                    execute_primitive(
                        s,
                        &GripperAction {
                            primitive,
                            contact_point,
                            orientation,
                        },
                    )
                    .0
                })
                .collect()
        })
        .collect()
}
