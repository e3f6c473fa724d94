use proptest::prelude::*;
use rand::SeedableRng;

use super::*;
use crate::attacks::FlipCount;
use crate::rng::Rng;
use crate::testutil::{linear_model, random_input, random_mlp};

fn constant_model() -> Model {
    linear_model(vec![0.0; 8], vec![0.3, -0.2])
}

fn quick_config() -> DetectorConfig {
    let mut c = DetectorConfig::default();
    c.c2t_attack.steps = 50;
    c.c2t_attack.lr = 0.05;
    c.c2u_attack.steps = 50;
    c.c2u_attack.lr = 0.05;
    c.c2t_attack.tau = 0.5;
    c.c2u_attack.tau = 0.5;
    c
}

fn stats(delta: f64, kt: f64, ku: f64) -> DetectionStats {
    let fc = |s: f64| FlipCount {
        steps: s.ceil() as usize,
        flipped: true,
        score: s,
    };
    DetectionStats {
        delta,
        k_t: fc(kt),
        k_u: fc(ku),
        target: 0,
        seconds: [0.0; 3],
    }
}

fn thresholds(model: &Model, config: &DetectorConfig, t: [Option<f64>; 3]) -> Thresholds {
    Thresholds {
        t_c1: t[0],
        t_c2t: t[1],
        t_c2u: t[2],
        target_fpr: 0.1,
        achieved_fpr: 0.1,
        calibration_set_id: "test".into(),
        calibration_size: 10,
        model_checksum: model.checksum(),
        config_hash: config.fingerprint(),
    }
}

#[test]
fn constant_model_has_zero_delta() {
    let model = constant_model();
    let mut rng = Rng::seed_from_u64(1);
    let x = random_input(4, &mut rng);
    assert_eq!(stat_c1(&model, &x, 0.3, 4, &mut rng).unwrap(), 0.0);
}

#[test]
fn zero_sigma_has_zero_delta() {
    let model = random_mlp(&[6, 8, 3], None, 2);
    let mut rng = Rng::seed_from_u64(2);
    let x = random_input(6, &mut rng);
    assert_eq!(stat_c1(&model, &x, 0.0, 3, &mut rng).unwrap(), 0.0);
}

#[test]
fn delta_lies_in_l1_range() {
    let model = random_mlp(&[6, 8, 3], None, 3);
    let mut rng = Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = random_input(6, &mut rng);
        let d = stat_c1(&model, &x, 0.5, 2, &mut rng).unwrap();
        assert!((0.0..=2.0).contains(&d));
    }
}

#[test]
fn target_equal_to_prediction_takes_zero_steps() {
    let model = random_mlp(&[6, 8, 3], None, 4);
    let x = random_input(6, &mut Rng::seed_from_u64(4));
    let p = model.predict(&x).unwrap();
    let k = stat_c2t(&model, &x, p, &quick_config().c2t_attack).unwrap();
    assert_eq!(k.steps, 0);
    assert_eq!(k.score, 0.0);
}

#[test]
fn uniform_target_never_picks_prediction() {
    let mut rng = Rng::seed_from_u64(5);
    let mut seen = [0usize; 4];
    for _ in 0..4000 {
        let t = stats::choose_target(TargetChoice::Uniform, 2, 4, &mut rng).unwrap();
        seen[t] += 1;
    }
    assert_eq!(seen[2], 0);
    for c in [0, 1, 3] {
        assert!((seen[c] as f64 - 4000.0 / 3.0).abs() < 150.0, "{seen:?}");
    }
}

#[test]
fn constant_model_never_flips() {
    let model = constant_model();
    let x = random_input(4, &mut Rng::seed_from_u64(6));
    let config = quick_config();
    let ku = stat_c2u(&model, &x, &config.c2u_attack).unwrap();
    assert_eq!(ku, FlipCount::never(50));
    let kt = stat_c2t(&model, &x, 1, &config.c2t_attack).unwrap();
    assert!(!kt.flipped);
    assert_eq!(kt.steps, 50);
    assert_eq!(kt.score, 51.0);
}

#[test]
fn two_class_untargeted_matches_targeted() {
    let mut rng = Rng::seed_from_u64(7);
    for seed in 0..20 {
        let model = random_mlp(&[5, 6, 2], None, seed);
        let x = random_input(5, &mut rng);
        let mut config = quick_config();
        config.c2t_attack.optimizer = Optimizer::SignGd;
        config.c2u_attack.optimizer = Optimizer::SignGd;
        let p = model.predict(&x).unwrap();
        let kt = stat_c2t(&model, &x, 1 - p, &config.c2t_attack).unwrap();
        let ku = stat_c2u(&model, &x, &config.c2u_attack).unwrap();
        assert!(ku.steps <= kt.steps);
        assert_eq!(ku.steps, kt.steps);
    }
}

#[test]
fn stats_are_reproducible_and_order_free() {
    let model = random_mlp(&[6, 10, 3], None, 8);
    let mut rng = Rng::seed_from_u64(8);
    let xs: Vec<Tensor> = (0..12).map(|_| random_input(6, &mut rng)).collect();
    let config = quick_config();
    let forward: Vec<_> = xs.iter().enumerate().map(|(i, x)| compute_stats(&model, x, &config, i as u64).unwrap()).collect();
    let backward: Vec<_> = xs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, x)| compute_stats(&model, x, &config, i as u64).unwrap())
        .collect();
    let parallel = crate::par::try_map(xs.len(), |i| compute_stats(&model, &xs[i], &config, i as u64)).unwrap();
    for i in 0..xs.len() {
        assert_eq!(forward[i], backward[xs.len() - 1 - i]);
        assert_eq!(forward[i], parallel[i]);
    }
}

#[test]
fn verdict_rules() {
    let model = constant_model();
    let config = quick_config();
    let t = thresholds(&model, &config, [Some(0.5), Some(10.0), Some(20.0)]);
    let benign = Verdict::from_stats(stats(0.1, 3.0, 4.0), &t);
    assert!(!benign.is_adversarial);
    assert!(benign.failed_criteria.is_empty());
    let c1 = Verdict::from_stats(stats(0.9, 3.0, 4.0), &t);
    assert!(c1.is_adversarial);
    assert_eq!(c1.failed_criteria, vec![Criterion::C1]);
    let at_threshold = Verdict::from_stats(stats(0.5, 10.0, 20.0), &t);
    assert!(!at_threshold.is_adversarial);
    let mut capped = stats(0.1, 0.0, 4.0);
    capped.k_t = FlipCount::never(50);
    let v = Verdict::from_stats(capped, &thresholds(&model, &config, [Some(0.5), Some(49.0), Some(20.0)]));
    assert_eq!(v.failed_criteria, vec![Criterion::C2t]);
    let disabled = thresholds(&model, &config, [None, Some(10.0), None]);
    assert!(!Verdict::from_stats(stats(1.9, 3.0, 40.0), &disabled).is_adversarial);
}

#[test]
fn stale_thresholds_are_rejected() {
    let model = random_mlp(&[6, 8, 3], None, 9);
    let config = quick_config();
    let t = thresholds(&model, &config, [Some(0.5), Some(10.0), Some(20.0)]);
    let x = random_input(6, &mut Rng::seed_from_u64(9));
    assert!(detect(&model, &x, &t, &config, 0).is_ok());
    let other = random_mlp(&[6, 8, 3], None, 10);
    assert!(matches!(detect(&other, &x, &t, &config, 0), Err(Error::StaleCalibration(_))));
    let mut changed = config.clone();
    changed.sigma = 0.2;
    assert!(matches!(detect(&model, &x, &t, &changed, 0), Err(Error::StaleCalibration(_))));
}

#[test]
fn thresholds_json_round_trip() {
    let model = constant_model();
    let config = quick_config();
    let t = thresholds(&model, &config, [Some(0.123456789), None, Some(20.0)]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    t.save(&path).unwrap();
    assert_eq!(Thresholds::load(&path).unwrap(), t);
}

#[test]
fn full_target_flags_everything() {
    let cols = vec![vec![0.3, 0.1, 0.1, 0.7], vec![5.0, 2.0, 9.0, 2.0]];
    let cal = calibrate_scores(&cols, 1.0).unwrap();
    assert_eq!(cal.flagged, 4);
    assert_eq!(cal.thresholds, vec![0.1f64.next_down(), 2.0f64.next_down()]);
}

#[test]
fn small_set_is_unidentifiable() {
    let cols = vec![vec![0.0; 9]];
    assert!(matches!(calibrate_scores(&cols, 0.1), Err(Error::Unidentifiable { required: 10, .. })));
    assert!(calibrate_scores(&vec![vec![0.0; 10]], 0.1).is_ok());
    let model = constant_model();
    let xs = vec![Tensor::vector(vec![0.5; 4]); 4];
    let ids: Vec<u64> = (0..4).collect();
    assert!(matches!(
        calibrate(&model, &xs, &ids, &quick_config(), 0.2, "tiny"),
        Err(Error::Unidentifiable { .. })
    ));
}

#[test]
fn calibrate_end_to_end() {
    let model = random_mlp(&[6, 10, 3], None, 11);
    let mut rng = Rng::seed_from_u64(11);
    let xs: Vec<Tensor> = (0..40).map(|_| random_input(6, &mut rng)).collect();
    let ids: Vec<u64> = (0..40).collect();
    let config = quick_config();
    let (t, stats) = calibrate(&model, &xs, &ids, &config, 0.1, "set").unwrap();
    let flagged = stats.iter().filter(|s| Verdict::from_stats((*s).clone(), &t).is_adversarial).count();
    assert_eq!(flagged as f64 / 40.0, t.achieved_fpr);
    assert!(t.achieved_fpr <= 0.1 && t.achieved_fpr >= 0.1 - 1.0 / 40.0);
    for (i, x) in xs.iter().enumerate() {
        let v = detect(&model, x, &t, &config, i as u64).unwrap();
        assert_eq!(v.stats, stats[i]);
    }
}

fn scores(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Small integer grid so ties are common.
    prop::collection::vec(prop::collection::vec(0u8..12, n), 1..=3)
        .prop_map(|cols| cols.into_iter().map(|c| c.into_iter().map(f64::from).collect()).collect())
}

fn union_count(cols: &[Vec<f64>], t: &[f64]) -> usize {
    (0..cols[0].len()).filter(|&i| cols.iter().zip(t).any(|(c, &t)| c[i] > t)).count()
}

proptest! {
    #[test]
    fn achieved_rate_is_within_one_input(cols in (10usize..60).prop_flat_map(scores), fpr in 0.1f64..1.0) {
        let n = cols[0].len();
        let cal = calibrate_scores(&cols, fpr).unwrap();
        let flagged = union_count(&cols, &cal.thresholds);
        prop_assert_eq!(flagged, cal.flagged);
        prop_assert!(cal.achieved_fpr <= fpr + 1e-12);
        prop_assert!(cal.thresholds.iter().all(|t| t.is_finite()));
        if cols.len() == 1 {
            let exact = (fpr * n as f64 + 1e-9).floor() as usize;
            let distinct = { let mut s = cols[0].clone(); s.sort_by(f64::total_cmp); s.dedup(); s.len() };
            if distinct == n {
                prop_assert_eq!(flagged, exact);
            }
        }
    }

    #[test]
    fn continuous_scores_hit_the_floor(seed in 0u64..1000, n in 10usize..80, k in 1usize..=3, fpr in 0.1f64..1.0) {
        use rand::Rng as _;
        let mut rng = Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let cal = calibrate_scores(&cols, fpr).unwrap();
        prop_assert_eq!(cal.flagged, (fpr * n as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn higher_target_never_raises_thresholds(cols in (10usize..40).prop_flat_map(scores), a in 0.1f64..1.0, b in 0.1f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t_lo = calibrate_scores(&cols, lo).unwrap().thresholds;
        let t_hi = calibrate_scores(&cols, hi).unwrap().thresholds;
        for (x, y) in t_lo.iter().zip(&t_hi) {
            prop_assert!(y <= x);
        }
    }
}
