use rand::{Rng, SeedableRng};

use super::*;
use crate::geometry::Rotation;
use crate::heads::ModelConfig;
use crate::sim::ground_truth_success_grid;
use crate::vn::EncoderConfig;

fn tiny_model(kind: EncoderKind, primitive: PrimitiveType) -> Model<f32> {
    let mut c = ModelConfig::new(kind, primitive);
    c.encoder = EncoderConfig {
        k_nn: 8,
        d: 8,
        d_i: 8,
        depth: 2,
    };
    c.hidden = 16;
    Model::new(c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn episodes(setting: PoseSetting, n: usize) -> EpisodeConfig {
    EpisodeConfig {
        setting,
        n_episodes: n,
        seed: 4,
        n_points: 256,
        workers: 1,
    }
}

/// Counts the confusion matrix entry by entry and returns 2tp / (2tp + fp + fn)
/// together with the textbook 2PR / (P + R).
fn oracle_f1(pred: &[bool], truth: &[bool]) -> (f64, f64) {
    let mut m = [[0usize; 2]; 2];
    for i in 0..pred.len() {
        m[pred[i] as usize][truth[i] as usize] += 1;
    }
    let (tp, fp, fn_) = (m[1][1], m[1][0], m[0][1]);
    let ratio = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = tp as f64 / (tp + fn_) as f64;
    let textbook = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (ratio, textbook)
}

#[test]
fn f1_examples() {
    let truth = [true, false, true, false];
    assert_eq!(f1_score(&truth, &truth).unwrap(), 1.0);
    assert_eq!(f1_score(&[false; 4], &truth).unwrap(), 0.0);
    assert!(matches!(f1_score(&[true, false], &[true, true]), Err(Error::UndefinedF1(_))));
    assert!(f1_score(&[true], &truth).is_err());
}

#[test]
fn f1_matches_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 200 {
        let truth: Vec<bool> = (0..20).map(|_| rng.random()).collect();
        let pred: Vec<bool> = (0..20).map(|_| rng.random()).collect();
        if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
            continue;
        }
        let f1 = f1_score(&pred, &truth).unwrap();
        let (ratio, textbook) = oracle_f1(&pred, &truth);
        assert_eq!(f1, ratio);
        assert!((f1 - textbook).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn color_map_endpoints_and_midpoint() {
    assert_eq!(score_color(0.0), [0, 0, 255]);
    assert_eq!(score_color(1.0), [255, 0, 0]);
    assert_eq!(score_color(0.5), [127, 0, 127]);
    assert_eq!(score_color(-3.0), [0, 0, 255]);
}

#[test]
fn heatmap_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vec3> = (0..50)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let cloud = PointCloud::new(pts, None).unwrap();
    let scores = AffordanceMap {
        scores: (0..50).map(|_| rng.random()).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heatmap.ply");
    export_heatmap(&cloud, &scores, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 50\n"));
    let (p, c) = parse_heatmap(&text).unwrap();
    for (i, q) in p.iter().enumerate() {
        let o = cloud.point(i);
        for (a, b) in q.iter().zip([o.x, o.y, o.z]) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-30));
        }
        assert_eq!(c[i], score_color(scores.scores[i]));
    }
    let zeros = AffordanceMap { scores: vec![0.0; 50] };
    let (_, c) = parse_heatmap(&heatmap_ply(&cloud, &zeros).unwrap()).unwrap();
    assert!(c.iter().all(|&x| x == [0, 0, 255]));
    assert!(heatmap_ply(&cloud, &AffordanceMap { scores: vec![0.0; 3] }).is_err());
    assert!(export_heatmap(&cloud, &zeros, &dir.path().join("missing/heatmap.ply")).is_err());
}

#[test]
fn oracle_policy_succeeds_wherever_a_positive_exists() {
    let specs = held_out_specs(ObjectFamily::Drawer, 6, 1);
    let rots: Vec<Rotation> = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..200).map(|_| random_rotation(&mut rng)).collect()
    };
    let solvable = std::sync::atomic::AtomicUsize::new(0);
    let n = 10;
    let rate = success_rate_with(&specs, PrimitiveType::Pull, &episodes(PoseSetting::So3, n), |cloud, state, _| {
        let handle = cloud.indices_with_label(crate::geometry::PartLabel::Handle);
        let pts: Vec<Vec3> = handle.iter().map(|&i| cloud.point(i)).collect();
        let grid = ground_truth_success_grid(state, PrimitiveType::Pull, &pts, &rots);
        let action = grid.iter().enumerate().find_map(|(i, row)| {
            row.iter().position(|&ok| ok).map(|j| GripperAction {
                primitive: PrimitiveType::Pull,
                contact_point: pts[i],
                orientation: rots[j],
            })
        });
        if action.is_some() {
            solvable.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(action)
    })
    .unwrap();
    let solvable = solvable.into_inner();
    assert!(solvable >= n / 2);
    assert_eq!(rate, solvable as f64 / n as f64);
}

#[test]
fn random_policy_matches_offline_rate() {
    let specs = held_out_specs(ObjectFamily::Door, 20, 2);
    let cfg = EpisodeConfig {
        n_points: 512,
        ..episodes(PoseSetting::Z, 3000)
    };
    let rate = success_rate_with(&specs, PrimitiveType::Push, &cfg, |cloud, _, rng| {
        let p = rng.random_range(0..cloud.len());
        Ok(Some(GripperAction {
            primitive: PrimitiveType::Push,
            contact_point: cloud.point(p),
            orientation: random_rotation(rng),
        }))
    })
    .unwrap();
    let collect = CollectConfig {
        seed: 2,
        beta: 0.0,
        n_points: 512,
        workers: 1,
    };
    let offline = f1_test_set(&specs, PrimitiveType::Push, PoseSetting::Z, 3000, &collect).unwrap();
    // two binomial estimates of the same rate
    let sd = (rate * (1.0 - rate) / 3000.0).sqrt().max(1e-3);
    assert!((rate - offline.positive_rate()).abs() < 4.0 * 2f64.sqrt() * sd, "{rate} vs {}", offline.positive_rate());
}

#[test]
fn success_rate_is_deterministic() {
    let m = tiny_model(EncoderKind::VectorNeuron, PrimitiveType::Pull);
    let specs = held_out_specs(ObjectFamily::Drawer, 3, 0);
    let a = eval_success_rate(&m, &specs, PrimitiveType::Pull, &episodes(PoseSetting::Z, 6), 5).unwrap();
    let cfg = EpisodeConfig {
        workers: 3,
        ..episodes(PoseSetting::Z, 6)
    };
    let b = eval_success_rate(&m, &specs, PrimitiveType::Pull, &cfg, 5).unwrap();
    assert_eq!(a, b);
    assert!(eval_success_rate(&m, &specs, PrimitiveType::Pull, &episodes(PoseSetting::Z, 0), 5).is_err());
}

#[test]
fn matched_settings_give_identical_f1_labels() {
    let specs = held_out_specs(ObjectFamily::Drawer, 5, 0);
    let collect = CollectConfig {
        seed: 9,
        beta: 1.0,
        n_points: 256,
        workers: 1,
    };
    let z = f1_test_set(&specs, PrimitiveType::Pull, PoseSetting::Z, 300, &collect).unwrap();
    let so3 = f1_test_set(&specs, PrimitiveType::Pull, PoseSetting::So3, 300, &collect).unwrap();
    let lz: Vec<(usize, bool)> = z.records.iter().map(|r| (r.point_index, r.result)).collect();
    let ls: Vec<(usize, bool)> = so3.records.iter().map(|r| (r.point_index, r.result)).collect();
    assert_eq!(lz, ls);
}

#[test]
fn equivariance_consistency_of_the_vn_model() {
    let m = tiny_model(EncoderKind::VectorNeuron, PrimitiveType::Pull);
    let specs = held_out_specs(ObjectFamily::Drawer, 1, 0);
    let cloud = render_cloud(&specs[0].initial_state(true), 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let rep = eval_equivariance_consistency(&m, &cloud, 4, 3).unwrap();
    assert!(rep.affordance_dev < 1e-4, "{rep:?}");
    assert!(rep.proposal_geodesic_dev < 1e-3, "{rep:?}");

    let same = [RigidTransform::identity(), RigidTransform::identity()];
    let rep = equivariance_under(&m, &cloud, &same, 3).unwrap();
    assert_eq!((rep.affordance_dev, rep.proposal_geodesic_dev), (0.0, 0.0));
    assert!(eval_equivariance_consistency(&m, &cloud, 1, 3).is_err());
}

#[test]
fn baseline_is_not_consistent() {
    let m = tiny_model(EncoderKind::Baseline, PrimitiveType::Pull);
    let specs = held_out_specs(ObjectFamily::Drawer, 1, 0);
    let cloud = render_cloud(&specs[0].initial_state(true), 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let rep = eval_equivariance_consistency(&m, &cloud, 4, 3).unwrap();
    assert!(rep.proposal_geodesic_dev > 1e-2, "{rep:?}");
}

#[test]
fn evaluate_produces_a_bounded_report() {
    let m = tiny_model(EncoderKind::VectorNeuron, PrimitiveType::Pull);
    let cfg = EvalConfig {
        n_episodes: 3,
        n_objects: 4,
        n_f1_records: 400,
        k_proposals: 4,
        beta: 1.0,
        n_points: 256,
        ..EvalConfig::default()
    };
    let r = evaluate(&m, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&r.f1) && (0.0..=1.0).contains(&r.success_rate));
    assert_eq!(r.n_episodes, 3);
    assert_eq!(r.n_f1_records, 400);
}
