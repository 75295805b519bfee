use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{random_rotation, RigidTransform, Rotation};
use crate::primitive::PrimitiveType;

fn drawer(seed: u64) -> ObjectSpec {
    sample_object(ObjectFamily::Drawer, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn door(seed: u64) -> ObjectSpec {
    sample_object(ObjectFamily::Door, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Orientation with the given approach (column z) and closing (column x) axes.
fn gripper(approach: Vec3, closing: Vec3) -> Rotation {
    let z = approach.normalize();
    let x = (closing - z * closing.dot(&z)).normalize();
    Rotation::from_columns(x, z.cross(&x), z).unwrap()
}

/// Pull on the outermost point of the handle, straight out of the front face.
fn handle_pull(spec: &ObjectSpec, primitive: PrimitiveType) -> GripperAction {
    let closing = if spec.handle.axis.y.abs() > 0.5 { Vec3::z() } else { Vec3::y() };
    GripperAction {
        primitive,
        contact_point: spec.handle_center() + Vec3::x() * spec.handle.radius,
        orientation: gripper(-Vec3::x(), closing),
    }
}

#[test]
fn render_is_deterministic() {
    let s = drawer(1).initial_state(true);
    let a = render_cloud(&s, 512, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = render_cloud(&s, 512, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rendered_points_lie_on_surfaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..10 {
        let spec = if seed % 2 == 0 { drawer(seed) } else { door(seed) };
        let pose = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.3, -0.2, 1.0));
        let s = ObjectState::new(spec.with_base_pose(pose), spec.joint_range[1] * rng.random::<f64>());
        let c = render_cloud(&s, 1024, &mut rng).unwrap();
        for p in c.points() {
            assert!(surface_distance(&s, p) < 1e-6);
        }
    }
}

#[test]
fn handle_fraction_matches_area_share() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let spec = if seed % 2 == 0 { drawer(100 + seed) } else { door(100 + seed) };
        let s = spec.initial_state(true);
        let n = 20_000;
        let c = render_cloud(&s, n, &mut rng).unwrap();
        let got = c.indices_with_label(PartLabel::Handle).len() as f64 / n as f64;
        let want = handle_area_share(&s);
        assert!((got - want).abs() <= 0.2 * want, "{got} vs {want}");
    }
}

#[test]
fn too_few_render_points_rejected() {
    let s = drawer(1).initial_state(true);
    assert!(render_cloud(&s, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn pull_on_handle_opens_closed_drawer() {
    for seed in 0..20 {
        let spec = drawer(seed);
        let s = spec.initial_state(true);
        assert_eq!(s.joint_value, spec.joint_range[0]);
        let (ok, next) = execute_primitive(&s, &handle_pull(&spec, PrimitiveType::Pull));
        assert!(ok, "seed {seed}");
        assert!((next.joint_value - STROKE.min(spec.joint_range[1])).abs() < 1e-12);
    }
}

#[test]
fn pull_on_handle_opens_closed_door() {
    for seed in 0..20 {
        let spec = door(seed);
        let s = spec.initial_state(true);
        let (ok, next) = execute_primitive(&s, &handle_pull(&spec, PrimitiveType::Pull));
        assert!(ok, "seed {seed}");
        assert!(next.joint_value > s.joint_value);
    }
}

#[test]
fn pull_with_closing_along_handle_fails() {
    let spec = drawer(3);
    let mut a = handle_pull(&spec, PrimitiveType::Pull);
    a.orientation = gripper(-Vec3::x(), spec.handle.axis);
    assert!(!execute_primitive(&spec.initial_state(true), &a).0);
}

#[test]
fn pull_on_base_body_fails() {
    let spec = drawer(5);
    let s = spec.initial_state(true);
    let half = spec.body_size / 2.0;
    let a = GripperAction {
        primitive: PrimitiveType::Pull,
        contact_point: Vec3::new(-half.x, 0.0, 0.0),
        orientation: gripper(Vec3::x(), Vec3::z()),
    };
    let (ok, next) = execute_primitive(&s, &a);
    assert!(!ok);
    assert_eq!(next, s);
}

#[test]
fn contact_off_surface_fails() {
    let spec = drawer(5);
    let mut a = handle_pull(&spec, PrimitiveType::Pull);
    a.contact_point += Vec3::x() * 0.05;
    assert!(!execute_primitive(&spec.initial_state(true), &a).0);
}

#[test]
fn push_closed_drawer_toward_closing_fails() {
    let spec = drawer(6);
    let s = ObjectState::new(spec, spec.joint_range[0]);
    let a = GripperAction {
        primitive: PrimitiveType::Push,
        contact_point: spec.front_center(),
        orientation: gripper(-Vec3::x(), Vec3::z()),
    };
    let (ok, next) = execute_primitive(&s, &a);
    assert!(!ok);
    assert_eq!(next.joint_value, spec.joint_range[0]);
}

#[test]
fn push_half_open_drawer_closes_it() {
    let spec = drawer(6);
    let s = spec.initial_state(false);
    let a = GripperAction {
        primitive: PrimitiveType::Push,
        contact_point: spec.joint_transform(s.joint_value).apply_point(&spec.front_center()),
        orientation: gripper(-Vec3::x(), Vec3::z()),
    };
    let (ok, next) = execute_primitive(&s, &a);
    assert!(ok);
    assert!(next.joint_value < s.joint_value);
}

#[test]
fn pull_up_never_moves_a_drawer() {
    let spec = drawer(7);
    let a = handle_pull(&spec, PrimitiveType::PullUp);
    assert!(!execute_primitive(&spec.initial_state(true), &a).0);
}

#[test]
fn grid_on_base_is_all_zero_for_pull() {
    let spec = drawer(9);
    let s = spec.initial_state(true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = render_cloud(&s, 512, &mut rng).unwrap();
    let pts: Vec<Vec3> = c.indices_with_label(PartLabel::Base).into_iter().map(|i| c.point(i)).take(40).collect();
    let rots: Vec<Rotation> = (0..30).map(|_| random_rotation(&mut rng)).collect();
    let g = ground_truth_success_grid(&s, PrimitiveType::Pull, &pts, &rots);
    assert!(g.iter().flatten().all(|&b| !b));
}

#[test]
fn grid_matches_pointwise_execution() {
    let spec = door(2);
    let s = spec.initial_state(false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = render_cloud(&s, 256, &mut rng).unwrap();
    let pts: Vec<Vec3> = c.points().iter().take(30).copied().collect();
    let rots: Vec<Rotation> = (0..20).map(|_| random_rotation(&mut rng)).collect();
    let g = ground_truth_success_grid(&s, PrimitiveType::Push, &pts, &rots);
    for (m, p) in pts.iter().enumerate() {
        for (l, r) in rots.iter().enumerate() {
            let a = GripperAction {
                primitive: PrimitiveType::Push,
                contact_point: *p,
                orientation: *r,
            };
            assert_eq!(g[m][l], execute_primitive(&s, &a).0);
        }
    }
}

/// A random action that is positive often enough to exercise every rule.
fn random_action<R: Rng>(s: &ObjectState, rng: &mut R) -> GripperAction {
    let primitive = PrimitiveType::ALL[rng.random_range(0..6)];
    let spec = &s.spec;
    if primitive.is_pull() && rng.random::<f64>() < 0.5 {
        let mut a = handle_pull(spec, primitive);
        let j = spec.joint_transform(s.joint_value);
        a.contact_point = spec.base_pose.apply_point(&j.apply_point(&a.contact_point));
        let jitter = Rotation::from_quaternion(1.0, 0.3 * rng.random::<f64>(), 0.3 * rng.random::<f64>(), 0.0);
        a.orientation = spec.base_pose.rotation.compose(&j.rotation).compose(&a.orientation).compose(&jitter);
        return a;
    }
    let c = render_cloud(s, 128, rng).unwrap();
    let movers: Vec<usize> = (0..c.len()).filter(|&i| c.label(i) != Some(PartLabel::Base)).collect();
    let i = if movers.is_empty() { 0 } else { movers[rng.random_range(0..movers.len())] };
    GripperAction {
        primitive,
        contact_point: c.point(i),
        orientation: random_rotation(rng),
    }
}

#[test]
fn simulator_is_equivariant_under_joint_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut positives = 0;
    for trial in 0..500 {
        let fam = if trial % 2 == 0 { ObjectFamily::Drawer } else { ObjectFamily::Door };
        let spec = sample_object(fam, &mut rng);
        let q = spec.joint_range[0] + (spec.joint_range[1] - spec.joint_range[0]) * rng.random::<f64>();
        let s = ObjectState::new(spec, q);
        let a = random_action(&s, &mut rng);
        let t = RigidTransform::new(random_rotation(&mut rng), Vec3::new(rng.random(), rng.random(), rng.random()));
        let moved = ObjectState::new(spec.with_base_pose(t.compose(&spec.base_pose)), q);
        let b = GripperAction {
            primitive: a.primitive,
            contact_point: t.apply_point(&a.contact_point),
            orientation: t.rotation.compose(&a.orientation),
        };
        let (r0, n0) = execute_primitive(&s, &a);
        let (r1, n1) = execute_primitive(&moved, &b);
        assert_eq!(r0, r1, "trial {trial}");
        assert!((n0.joint_value - n1.joint_value).abs() < 1e-9);
        assert_eq!(n1.spec, moved.spec);
        positives += r0 as usize;
    }
    assert!(positives > 50, "only {positives} positives");
}

#[test]
fn execution_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let s = door(rng.random()).initial_state(false);
        let a = random_action(&s, &mut rng);
        assert_eq!(execute_primitive(&s, &a), execute_primitive(&s, &a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_value_stays_in_range(seed in any::<u64>(), q in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fam = if seed % 2 == 0 { ObjectFamily::Drawer } else { ObjectFamily::Door };
        let spec = sample_object(fam, &mut rng);
        let mut s = ObjectState::new(spec, spec.joint_range[1] * q);
        for _ in 0..5 {
            let a = random_action(&s, &mut rng);
            s = execute_primitive(&s, &a).1;
            prop_assert!(s.joint_value >= spec.joint_range[0] && s.joint_value <= spec.joint_range[1]);
        }
    }
}
