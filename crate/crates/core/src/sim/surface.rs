//! Exterior surfaces of a posed cabinet, expressed in the object frame.

use rand::Rng;

use crate::geometry::{PartLabel, RigidTransform, Vec3};

use super::object::{JointKind, ObjectState};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Shape {
    /// Rectangle `center + s·u + t·v`, `s, t ∈ [-1, 1]`; `u`, `v` are half-edge vectors.
    Rect { center: Vec3, u: Vec3, v: Vec3, normal: Vec3 },
    /// Lateral surface of a cylinder, no caps.
    Cylinder { center: Vec3, axis: Vec3, half_len: f64, radius: f64 },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Surface {
    pub shape: Shape,
    pub label: PartLabel,
}

impl Surface {
    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Rect { u, v, .. } => 4.0 * u.norm() * v.norm(),
            Shape::Cylinder { half_len, radius, .. } => 2.0 * std::f64::consts::PI * radius * 2.0 * half_len,
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Rect { center, u, v, .. } => {
                let d = p - center;
                let (lu, lv) = (u.norm(), v.norm());
                let (eu, ev) = (u / lu, v / lv);
                let s = d.dot(&eu).clamp(-lu, lu);
                let t = d.dot(&ev).clamp(-lv, lv);
                (d - eu * s - ev * t).norm()
            }
            Shape::Cylinder { center, axis, half_len, radius } => {
                let d = p - center;
                let a = d.dot(&axis);
                let rho = (d - axis * a).norm();
                let over = (a.abs() - half_len).max(0.0);
                (over * over + (rho - radius) * (rho - radius)).sqrt()
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self.shape {
            Shape::Rect { center, u, v, .. } => {
                let s = 2.0 * rng.random::<f64>() - 1.0;
                let t = 2.0 * rng.random::<f64>() - 1.0;
                center + u * s + v * t
            }
            Shape::Cylinder { center, axis, half_len, radius } => {
                let (e1, e2) = perpendicular_basis(&axis);
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                let t = half_len * (2.0 * rng.random::<f64>() - 1.0);
                center + axis * t + (e1 * phi.cos() + e2 * phi.sin()) * radius
            }
        }
    }

    fn transformed(&self, t: &RigidTransform) -> Surface {
        let shape = match self.shape {
            Shape::Rect { center, u, v, normal } => Shape::Rect {
                center: t.apply_point(&center),
                u: t.apply_vector(&u),
                v: t.apply_vector(&v),
                normal: t.apply_vector(&normal),
            },
            Shape::Cylinder { center, axis, half_len, radius } => Shape::Cylinder {
                center: t.apply_point(&center),
                axis: t.apply_vector(&axis),
                half_len,
                radius,
            },
        };
        Surface { shape, label: self.label }
    }
}

pub(crate) fn perpendicular_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

fn rect(center: Vec3, u: Vec3, v: Vec3, normal: Vec3, label: PartLabel) -> Surface {
    Surface {
        shape: Shape::Rect { center, u, v, normal },
        label,
    }
}

/// The six faces of an axis-aligned box.
fn box_faces(center: Vec3, half: Vec3, label: PartLabel) -> Vec<Surface> {
    let ex = Vec3::x() * half.x;
    let ey = Vec3::y() * half.y;
    let ez = Vec3::z() * half.z;
    vec![
        rect(center + ex, ey, ez, Vec3::x(), label),
        rect(center - ex, ey, ez, -Vec3::x(), label),
        rect(center + ey, ex, ez, Vec3::y(), label),
        rect(center - ey, ex, ez, -Vec3::y(), label),
        rect(center + ez, ex, ey, Vec3::z(), label),
        rect(center - ez, ex, ey, -Vec3::z(), label),
    ]
}

/// Axis-aligned rectangle on the plane `x = x0` spanning `[y0, y1] × [z0, z1]`.
fn front_rect(x0: f64, y0: f64, y1: f64, z0: f64, z1: f64, label: PartLabel) -> Option<Surface> {
    if y1 - y0 <= 1e-12 || z1 - z0 <= 1e-12 {
        return None;
    }
    let c = Vec3::new(x0, 0.5 * (y0 + y1), 0.5 * (z0 + z1));
    Some(rect(
        c,
        Vec3::y() * 0.5 * (y1 - y0),
        Vec3::z() * 0.5 * (z1 - z0),
        Vec3::x(),
        label,
    ))
}

/// All exterior surfaces of the object at its current joint value.
pub(crate) fn surfaces(state: &ObjectState) -> Vec<Surface> {
    let spec = &state.spec;
    let half = spec.body_size / 2.0;
    let mhalf = spec.moving_part_size / 2.0;
    let mc = spec.moving_part_center;
    let q = state.joint_value;

    // body without its front face, then the front face around the opening
    let mut out: Vec<Surface> = box_faces(Vec3::zeros(), half, PartLabel::Base).into_iter().skip(1).collect();
    let (oy0, oy1) = (mc.y - mhalf.y, mc.y + mhalf.y);
    let (oz0, oz1) = (mc.z - mhalf.z, mc.z + mhalf.z);
    let strips = [
        front_rect(half.x, -half.y, half.y, -half.z, oz0, PartLabel::Base),
        front_rect(half.x, -half.y, half.y, oz1, half.z, PartLabel::Base),
        front_rect(half.x, -half.y, oy0, oz0, oz1, PartLabel::Base),
        front_rect(half.x, oy1, half.y, oz0, oz1, PartLabel::Base),
    ];
    out.extend(strips.into_iter().flatten());

    let joint = spec.joint_transform(q);
    match spec.joint_kind {
        JointKind::Prismatic => {
            // front panel plus the parts of the drawer that stick out of the body
            let fc = spec.front_center();
            out.push(rect(fc, Vec3::y() * mhalf.y, Vec3::z() * mhalf.z, Vec3::x(), PartLabel::Moving).transformed(&joint));
            if q > 1e-12 {
                let c = Vec3::new(half.x + q / 2.0, mc.y, mc.z);
                let ex = Vec3::x() * (q / 2.0);
                let sides = [
                    rect(c + Vec3::z() * mhalf.z, ex, Vec3::y() * mhalf.y, Vec3::z(), PartLabel::Moving),
                    rect(c - Vec3::z() * mhalf.z, ex, Vec3::y() * mhalf.y, -Vec3::z(), PartLabel::Moving),
                    rect(c + Vec3::y() * mhalf.y, ex, Vec3::z() * mhalf.z, Vec3::y(), PartLabel::Moving),
                    rect(c - Vec3::y() * mhalf.y, ex, Vec3::z() * mhalf.z, -Vec3::y(), PartLabel::Moving),
                ];
                out.extend(sides);
            }
        }
        JointKind::Revolute => {
            out.extend(box_faces(mc, mhalf, PartLabel::Moving).iter().map(|s| s.transformed(&joint)));
        }
    }

    let h = &spec.handle;
    let handle = Surface {
        shape: Shape::Cylinder {
            center: spec.handle_center(),
            axis: h.axis,
            half_len: h.length / 2.0,
            radius: h.radius,
        },
        label: PartLabel::Handle,
    };
    out.push(handle.transformed(&joint));
    out
}

/// Area-weighted surface sampling in the object frame.
pub(crate) fn sample_surfaces<R: Rng + ?Sized>(surfs: &[Surface], n: usize, rng: &mut R) -> Vec<(Vec3, PartLabel)> {
    let mut cum = Vec::with_capacity(surfs.len());
    let mut total = 0.0;
    for s in surfs {
        total += s.area();
        cum.push(total);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let i = cum.partition_point(|&c| c <= u).min(surfs.len() - 1);
            (surfs[i].sample(rng), surfs[i].label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_distance_matches_hand_values() {
        let s = rect(Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), PartLabel::Base);
        assert_eq!(s.distance(&Vec3::new(0.5, 0.5, 0.2)), 0.2);
        assert!((s.distance(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(s.area(), 4.0);
    }

    #[test]
    fn cylinder_distance_matches_hand_values() {
        let s = Surface {
            shape: Shape::Cylinder {
                center: Vec3::zeros(),
                axis: Vec3::z(),
                half_len: 1.0,
                radius: 0.5,
            },
            label: PartLabel::Handle,
        };
        assert!((s.distance(&Vec3::new(1.0, 0.0, 0.3)) - 0.5).abs() < 1e-12);
        assert!((s.distance(&Vec3::new(0.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((s.distance(&Vec3::new(0.5, 0.0, 2.0)) - 1.0).abs() < 1e-12);
    }
}
