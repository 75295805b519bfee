//! Rotation and rigid-transform algebra, rotation sampling, and the
//! point-cloud primitives (transform, k-nearest-neighbour graph) shared by the
//! networks and the simulator.
//!
//! Geometry is carried in `f64`; networks convert to their own precision at
//! the input boundary.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Entry-wise tolerance for orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-5;

/// Minimum norm accepted by the two-vector frame construction.
pub const GS_EPS: f64 = 1e-6;

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `mᵀm = I` and `det m = 1` within [`ROTATION_TOL`].
    pub fn new(m: Mat3) -> Result<Self> {
        check_rotation(&m)?;
        Ok(Rotation(m))
    }

    /// Skips validation; callers guarantee orthonormality by construction.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Mat3::from_fn(|i, j| rows[i][j]))
    }

    pub fn from_columns(x: Vec3, y: Vec3, z: Vec3) -> Result<Self> {
        Self::new(Mat3::from_columns(&[x, y, z]))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation from a (not necessarily normalized) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self · other`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn is_valid(&self) -> bool {
        check_rotation(&self.0).is_ok()
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation::from_rows(rows)
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        r.rows()
    }
}

fn check_rotation(m: &Mat3) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let gram = m.transpose() * m;
    let dev = (gram - Mat3::identity()).abs().max();
    if dev > ROTATION_TOL {
        return Err(Error::InvalidRotation(format!(
            "mᵀm deviates from identity by {dev:.3e}"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::InvalidRotation(format!("determinant {det}")));
    }
    Ok(())
}

/// Element of SE(3): `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    #[serde(with = "vec3_serde")]
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        RigidTransform {
            rotation: r_inv,
            translation: -(r_inv.apply(&self.translation)),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.apply(v)
    }
}

pub(crate) mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

/// Angle of `aᵀb`, in `[0, π]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> Result<f64> {
    check_rotation(a.matrix())?;
    check_rotation(b.matrix())?;
    Ok(geodesic_unchecked(a, b))
}

pub(crate) fn geodesic_unchecked(a: &Rotation, b: &Rotation) -> f64 {
    let trace = (a.matrix().transpose() * b.matrix()).trace();
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    if cos > 0.0 {
        // the chord form is exact at zero, where arccos loses half the digits
        let chord = (a.matrix() - b.matrix()).norm();
        2.0 * (chord / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
    } else {
        cos.acos()
    }
}

/// Haar-uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-12 {
            return Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
        }
    }
}

/// Rotation about world z by an angle uniform in `[0, 2π)`.
pub fn random_z_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    Rotation::about_z(angle)
}

#[inline]
pub(crate) fn dot3<S: Real>(a: &[S; 3], b: &[S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross3<S: Real>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orthonormal frame from two vectors: columns `(û, v̂⊥, û × v̂⊥)`.
///
/// Generic so the proposal head can differentiate through it in either
/// precision; [`gram_schmidt_rotation`] is the `f64` entry point.
pub fn gram_schmidt_frame<S: Real>(u: &[S; 3], v: &[S; 3]) -> Result<[[S; 3]; 3]> {
    let eps = S::of(GS_EPS);
    let nu = dot3(u, u).sqrt();
    if !(nu > eps) {
        return Err(Error::DegenerateFrame(format!("‖u‖ = {nu}")));
    }
    let a = u.map(|x| x / nu);
    let va = dot3(v, &a);
    let w = [v[0] - va * a[0], v[1] - va * a[1], v[2] - va * a[2]];
    let nw = dot3(&w, &w).sqrt();
    if !(nw > eps) {
        return Err(Error::DegenerateFrame(format!("‖v⊥‖ = {nw}")));
    }
    let b = w.map(|x| x / nw);
    let c = cross3(&a, &b);
    Ok([a, b, c])
}

/// Reverse-mode derivative of [`gram_schmidt_frame`]: given gradients with
/// respect to the three output columns, returns gradients for `(u, v)`.
pub fn gram_schmidt_frame_backward<S: Real>(
    u: &[S; 3],
    v: &[S; 3],
    grad_cols: &[[S; 3]; 3],
) -> ([S; 3], [S; 3]) {
    let nu = dot3(u, u).sqrt();
    let a = u.map(|x| x / nu);
    let va = dot3(v, &a);
    let w = [v[0] - va * a[0], v[1] - va * a[1], v[2] - va * a[2]];
    let nw = dot3(&w, &w).sqrt();
    let b = w.map(|x| x / nw);
    let [ga, gb, gc] = grad_cols;

    // c = a × b
    let bxgc = cross3(&b, gc);
    let gcxa = cross3(gc, &a);
    let ga1: [S; 3] = std::array::from_fn(|i| ga[i] + bxgc[i]);
    let gb1: [S; 3] = std::array::from_fn(|i| gb[i] + gcxa[i]);

    // b = w / ‖w‖
    let bg = dot3(&b, &gb1);
    let gw: [S; 3] = std::array::from_fn(|i| (gb1[i] - b[i] * bg) / nw);

    // w = v − (v·a) a
    let agw = dot3(&a, &gw);
    let gv: [S; 3] = std::array::from_fn(|i| gw[i] - a[i] * agw);
    let ga2: [S; 3] = std::array::from_fn(|i| ga1[i] - va * gw[i] - v[i] * agw);

    // a = u / ‖u‖
    let ag = dot3(&a, &ga2);
    let gu: [S; 3] = std::array::from_fn(|i| (ga2[i] - a[i] * ag) / nu);
    (gu, gv)
}

/// Rotation whose first column is `û` and whose second column is the part of
/// `v` orthogonal to `û`, normalized. Fails when either norm is below
/// [`GS_EPS`].
pub fn gram_schmidt_rotation(u: &Vec3, v: &Vec3) -> Result<Rotation> {
    let [a, b, c] = gram_schmidt_frame(&[u.x, u.y, u.z], &[v.x, v.y, v.z])?;
    Ok(Rotation::from_matrix_unchecked(Mat3::from_columns(&[
        Vec3::from(a),
        Vec3::from(b),
        Vec3::from(c),
    ])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum PartLabel {
    Base = 0,
    Moving = 1,
    Handle = 2,
}

impl From<PartLabel> for u8 {
    fn from(l: PartLabel) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for PartLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(PartLabel::Base),
            1 => Ok(PartLabel::Moving),
            2 => Ok(PartLabel::Handle),
            other => Err(format!("unknown part label {other}")),
        }
    }
}

/// N points in meters with optional per-point part labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    #[serde(with = "points_serde")]
    points: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<PartLabel>>,
}

mod points_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec3], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 3]> = v.iter().map(|p| [p.x, p.y, p.z]).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec3>, D::Error> {
        let rows = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(rows.into_iter().map(Vec3::from).collect())
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, labels: Option<Vec<PartLabel>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("non-finite point coordinate".into()));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn labels(&self) -> Option<&[PartLabel]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<PartLabel> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Indices of points carrying `label`, in ascending order.
    pub fn indices_with_label(&self, label: PartLabel) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// Reorders points (and labels) so that output `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Maps every point through `t`, preserving order and labels.
pub fn apply_transform(t: &RigidTransform, c: &PointCloud) -> PointCloud {
    PointCloud {
        points: c.points.iter().map(|p| t.apply_point(p)).collect(),
        labels: c.labels.clone(),
    }
}

/// Per-point neighbour lists, `k` entries each, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.neighbors
    }

    /// Builds a graph from explicit lists; every entry must be `< n`.
    pub fn from_lists(n: usize, k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if neighbors.len() != n * k || neighbors.iter().any(|&j| j >= n) {
            return Err(Error::ShapeMismatch(format!(
                "neighbour table of {} entries invalid for n={n}, k={k}",
                neighbors.len()
            )));
        }
        Ok(KnnGraph { n, k, neighbors })
    }
}

/// The `k` nearest Euclidean neighbours of every point, excluding the point
/// itself; equal distances are ordered by lower index.
pub fn knn_graph(c: &PointCloud, k: usize) -> Result<KnnGraph> {
    let n = c.len();
    if n <= k {
        return Err(Error::InsufficientPoints { n, k });
    }
    let pts = c.points();
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, p) in pts.iter().enumerate() {
        cand.clear();
        cand.extend(
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| ((q - p).norm_squared(), j)),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(by_dist);
        neighbors.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(KnnGraph { n, k, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_cloud(n: usize, r: &mut ChaCha8Rng) -> PointCloud {
        let pts = (0..n)
            .map(|_| Vec3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>()))
            .collect();
        PointCloud::new(pts, None).unwrap()
    }

    fn random_transform(r: &mut ChaCha8Rng) -> RigidTransform {
        let t = Vec3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>()) * 4.0
            - Vec3::repeat(2.0);
        RigidTransform::new(random_rotation(r), t)
    }

    #[test]
    fn geodesic_identity_and_antipodal() {
        let i = Rotation::identity();
        assert_eq!(geodesic_distance(&i, &i).unwrap(), 0.0);
        let d = geodesic_distance(&i, &Rotation::about_z(PI)).unwrap();
        assert!((d - PI).abs() < 1e-7);
    }

    #[test]
    fn geodesic_rejects_non_orthonormal() {
        let bad = Rotation::from_matrix_unchecked(Mat3::identity() * 1.1);
        assert!(matches!(
            geodesic_distance(&bad, &Rotation::identity()),
            Err(Error::InvalidRotation(_))
        ));
        assert!(Rotation::new(Mat3::identity() * 1.1).is_err());
        // reflection
        assert!(Rotation::new(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))).is_err());
    }

    #[test]
    fn geodesic_is_a_metric_on_samples() {
        let mut r = rng(11);
        for _ in 0..1000 {
            let (a, b, c) = (random_rotation(&mut r), random_rotation(&mut r), random_rotation(&mut r));
            let ab = geodesic_distance(&a, &b).unwrap();
            let ba = geodesic_distance(&b, &a).unwrap();
            let bc = geodesic_distance(&b, &c).unwrap();
            let ac = geodesic_distance(&a, &c).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-6);
            assert!(ac <= ab + bc + 1e-5);
            assert!(geodesic_distance(&a, &a).unwrap() < 1e-6);
        }
    }

    #[test]
    fn random_rotation_is_deterministic_and_valid() {
        let a = random_rotation(&mut rng(5));
        let b = random_rotation(&mut rng(5));
        assert_eq!(a.matrix(), b.matrix());
        assert!(a.is_valid());
    }

    #[test]
    fn z_rotation_fixes_the_axis() {
        let mut r = rng(3);
        for _ in 0..100 {
            let rot = random_z_rotation(&mut r);
            let z = rot.apply(&Vec3::z());
            assert!((z - Vec3::z()).norm() < 1e-15);
        }
        assert_eq!(Rotation::about_z(0.0).matrix(), &Mat3::identity());
        let a = random_z_rotation(&mut rng(8));
        let b = random_z_rotation(&mut rng(8));
        assert_eq!(a, b);
    }

    #[test]
    fn gram_schmidt_examples() {
        let r = gram_schmidt_rotation(&Vec3::x(), &Vec3::y()).unwrap();
        assert!((r.matrix() - Mat3::identity()).abs().max() < 1e-15);
        let r = gram_schmidt_rotation(&(Vec3::x() * 2.0), &(Vec3::x() + Vec3::y())).unwrap();
        assert!((r.matrix() - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn gram_schmidt_rejects_degenerate_inputs() {
        assert!(matches!(
            gram_schmidt_rotation(&Vec3::zeros(), &Vec3::y()),
            Err(Error::DegenerateFrame(_))
        ));
        assert!(matches!(
            gram_schmidt_rotation(&Vec3::x(), &(Vec3::x() * 3.0)),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn gram_schmidt_commutes_with_rotation() {
        let mut r = rng(21);
        for _ in 0..1000 {
            let u = Vec3::new(r.random(), r.random(), r.random()) - Vec3::repeat(0.5);
            let v = Vec3::new(r.random(), r.random(), r.random()) - Vec3::repeat(0.5);
            let rot = random_rotation(&mut r);
            let Ok(base) = gram_schmidt_rotation(&u, &v) else { continue };
            let moved = gram_schmidt_rotation(&rot.apply(&u), &rot.apply(&v)).unwrap();
            let expect = rot.compose(&base);
            assert!((moved.matrix() - expect.matrix()).abs().max() < 1e-5);
        }
    }

    #[test]
    fn gram_schmidt_backward_matches_finite_differences() {
        let mut r = rng(99);
        for _ in 0..20 {
            let u: [f64; 3] = std::array::from_fn(|_| r.random::<f64>() - 0.5);
            let v: [f64; 3] = std::array::from_fn(|_| r.random::<f64>() - 0.5);
            let g: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| r.random::<f64>() - 0.5));
            let loss = |u: &[f64; 3], v: &[f64; 3]| {
                let f = gram_schmidt_frame(u, v).unwrap();
                (0..3).map(|c| dot3(&f[c], &g[c])).sum::<f64>()
            };
            let (gu, gv) = gram_schmidt_frame_backward(&u, &v, &g);
            let h = 1e-6;
            for i in 0..3 {
                let (mut up, mut um) = (u, u);
                up[i] += h;
                um[i] -= h;
                let fd = (loss(&up, &v) - loss(&um, &v)) / (2.0 * h);
                assert!((fd - gu[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {}", gu[i]);
                let (mut vp, mut vm) = (v, v);
                vp[i] += h;
                vm[i] -= h;
                let fd = (loss(&u, &vp) - loss(&u, &vm)) / (2.0 * h);
                assert!((fd - gv[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {}", gv[i]);
            }
        }
    }

    #[test]
    fn transform_examples() {
        let mut r = rng(4);
        let c = random_cloud(50, &mut r);
        assert_eq!(apply_transform(&RigidTransform::identity(), &c), c);

        let shifted = apply_transform(&RigidTransform::from_translation(Vec3::new(1.0, -2.0, 3.0)), &c);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let d0 = (c.point(i) - c.point(j)).norm();
                let d1 = (shifted.point(i) - shifted.point(j)).norm();
                assert!((d0 - d1).abs() < 1e-6);
            }
        }

        let t = random_transform(&mut r);
        let back = apply_transform(&t.compose(&t.inverse()), &c);
        for (p, q) in back.points().iter().zip(c.points()) {
            assert!((p - q).norm() < 1e-5);
        }
    }

    #[test]
    fn transform_inverse_composes_to_identity() {
        let mut r = rng(6);
        for _ in 0..100 {
            let t = random_transform(&mut r);
            let id = t.compose(&t.inverse());
            assert!((id.rotation.matrix() - Mat3::identity()).abs().max() < 1e-6);
            assert!(id.translation.norm() < 1e-6);
            let (a, b, c) = (random_transform(&mut r), random_transform(&mut r), random_transform(&mut r));
            let l = a.compose(&b).compose(&c);
            let rr = a.compose(&b.compose(&c));
            assert!((l.rotation.matrix() - rr.rotation.matrix()).abs().max() < 1e-9);
            assert!((l.translation - rr.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn knn_collinear_middle_point() {
        let c = PointCloud::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        let g = knn_graph(&c, 1).unwrap();
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let c = PointCloud::new(
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), Vec3::new(-1.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        let g = knn_graph(&c, 1).unwrap();
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn knn_requires_more_points_than_k() {
        let mut r = rng(1);
        let c = random_cloud(8, &mut r);
        assert!(matches!(knn_graph(&c, 8), Err(Error::InsufficientPoints { n: 8, k: 8 })));
    }

    #[test]
    fn knn_invariant_under_rigid_transform() {
        let mut r = rng(12);
        for _ in 0..20 {
            let c = random_cloud(128, &mut r);
            let t = random_transform(&mut r);
            assert_eq!(knn_graph(&c, 8).unwrap(), knn_graph(&apply_transform(&t, &c), 8).unwrap());
        }
    }

    #[test]
    fn point_cloud_rejects_non_finite() {
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], None).is_err());
        assert!(PointCloud::new(vec![Vec3::zeros()], Some(vec![])).is_err());
    }

    #[test]
    fn rotation_serde_is_row_major() {
        let r = Rotation::about_z(0.3);
        let json = serde_json::to_string(&r).unwrap();
        let back: Rotation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(json.starts_with(&format!("[[{}", r.matrix()[(0, 0)])));
        assert!(serde_json::from_str::<Rotation>("[[1,0,0],[0,1,0],[0,0,2]]").is_err());
    }
}
