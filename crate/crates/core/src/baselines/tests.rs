use proptest::prelude::*;
use rand::SeedableRng;

use super::uncertainty::uncertainty_with_masks;
use super::*;
use crate::error::Error;
use crate::rng::Rng;
use crate::testutil::{fd_gradient, random_input, random_mlp, rel_error};

fn image(values: Vec<f64>, h: usize, w: usize) -> Tensor {
    Tensor::new(vec![1, h, w], values).unwrap()
}

#[test]
fn bit_depth_rounds_to_the_grid() {
    let x = image(vec![0.6, 0.4, 0.0, 1.0], 2, 2);
    assert_eq!(Squeeze::BitDepth(1).apply(&x).data(), &[1.0, 0.0, 0.0, 1.0]);
    let q = Squeeze::BitDepth(5).apply(&x);
    for v in q.data() {
        assert!(((v * 31.0).round() - v * 31.0).abs() < 1e-12);
    }
    assert_eq!(Squeeze::BitDepth(5).apply(&q), q);
}

#[test]
fn median_filter_oracle() {
    let x = image((0..25).map(|i| ((i * 7) % 11) as f64 / 10.0).collect(), 5, 5);
    let out = Squeeze::Median(3).apply(&x);
    let at = |r: isize, c: isize| {
        let reflect = |i: isize| if i < 0 { -i } else if i > 4 { 8 - i } else { i } as usize;
        x.data()[reflect(r) * 5 + reflect(c)]
    };
    for r in 0..5isize {
        for c in 0..5isize {
            let mut window: Vec<f64> = (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| (dr, dc))).map(|(dr, dc)| at(r + dr, c + dc)).collect();
            window.sort_by(f64::total_cmp);
            assert_eq!(out.data()[(r * 5 + c) as usize], window[4]);
        }
    }
    let flat = image(vec![0.3; 16], 4, 4);
    assert_eq!(Squeeze::Median(3).apply(&flat), flat);
}

#[test]
fn median_backward_routes_to_selected_pixels() {
    let x = image((0..16).map(|i| ((i * 5) % 16) as f64 / 16.0).collect(), 4, 4);
    let grad_out: Vec<f64> = (0..16).map(|i| i as f64).collect();
    let g = Squeeze::Median(3).backward(&x, &grad_out);
    assert!((g.iter().sum::<f64>() - grad_out.iter().sum::<f64>()).abs() < 1e-12);
    let f = |v: &[f64]| {
        let y = Squeeze::Median(3).apply(&x.with_data(v.to_vec()));
        y.data().iter().zip(&grad_out).map(|(a, b)| a * b).sum::<f64>()
    };
    assert!(rel_error(&g, &fd_gradient(f, x.data(), 1e-7)) < 1e-8);
}

#[test]
fn nlm_preserves_constant_images() {
    let flat = image(vec![0.42; 36], 6, 6);
    let out = Squeeze::NonLocalMeans(NlmParams::default()).apply(&flat);
    for v in out.data() {
        assert!((v - 0.42).abs() < 1e-12);
    }
}

#[test]
fn squeeze_config_requires_a_transform() {
    let none = SqueezeConfig {
        median_window: None,
        bit_depth: None,
        nlm: None,
    };
    assert!(none.validate().is_err());
    assert!(SqueezeConfig { median_window: Some(4), ..SqueezeConfig::default() }.validate().is_err());
    assert!(SqueezeConfig { bit_depth: Some(9), ..SqueezeConfig::default() }.validate().is_err());
    assert!(SqueezeConfig::default().validate().is_ok());
}

#[test]
fn kde_matches_brute_force_density() {
    let mut rng = Rng::seed_from_u64(1);
    let feats: Vec<Vec<f64>> = (0..12).map(|_| random_input(3, &mut rng).into_data()).collect();
    let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
    let kde = kde_fit(&feats, &labels, 2, Some(0.3)).unwrap();
    let b: f64 = 0.3;
    for _ in 0..10 {
        let f = random_input(3, &mut rng).into_data();
        let members: Vec<&Vec<f64>> = feats.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(v, _)| v).collect();
        let norm = (2.0 * std::f64::consts::PI * b * b).powf(1.5);
        let dens: f64 = members
            .iter()
            .map(|m| (-m.iter().zip(&f).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / (2.0 * b * b)).exp())
            .sum::<f64>()
            / (members.len() as f64 * norm);
        assert!((kde.log_density(1, &f).unwrap() - dens.ln()).abs() < 1e-10);
        assert!((kde_density(&kde, 1, &f).unwrap() - dens).abs() < 1e-10 * dens.max(1.0));
    }
}

#[test]
fn single_point_kde_peaks_at_the_point() {
    let kde = kde_fit(&[vec![0.5, 0.5]], &[0], 1, Some(0.2)).unwrap();
    let peak = kde.log_density(0, &[0.5, 0.5]).unwrap();
    let mut last = peak;
    for k in 1..10 {
        let d = kde.log_density(0, &[0.5 + 0.05 * k as f64, 0.5]).unwrap();
        assert!(d < last);
        last = d;
    }
}

#[test]
fn kde_gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(2);
    let feats: Vec<Vec<f64>> = (0..20).map(|_| random_input(4, &mut rng).into_data()).collect();
    let labels = vec![0; 20];
    let kde = kde_fit(&feats, &labels, 1, None).unwrap();
    assert!(kde.bandwidth > 0.0);
    for _ in 0..20 {
        let f = random_input(4, &mut rng).into_data();
        let (_, g) = kde.log_density_grad(0, &f).unwrap();
        assert!(rel_error(&g, &fd_gradient(|v| kde.log_density(0, v).unwrap(), &f, 1e-6)) < 1e-6);
    }
}

#[test]
fn empty_class_is_an_error() {
    let err = kde_fit(&[vec![0.0], vec![1.0]], &[0, 0], 2, Some(1.0)).unwrap_err();
    assert!(matches!(err, Error::EmptyBucket(1)));
}

#[test]
fn kde_round_trips_through_json() {
    let kde = kde_fit(&[vec![0.1, 0.2], vec![0.3, 0.4]], &[0, 1], 2, Some(0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kde.json");
    kde.save(&path).unwrap();
    assert_eq!(KdeModel::load(&path).unwrap(), kde);
}

#[test]
fn dropout_uncertainty_properties() {
    let model = random_mlp(&[5, 8, 3], Some(0.5), 3);
    let x = random_input(5, &mut Rng::seed_from_u64(3));
    let (_, zero) = dropout_uncertainty(&model, &x, 10, 0.0, &mut Rng::seed_from_u64(4)).unwrap();
    assert!(zero.abs() < 1e-15);
    let (mu, tr) = dropout_uncertainty(&model, &x, 30, 0.5, &mut Rng::seed_from_u64(5)).unwrap();
    assert!(tr >= 0.0);
    assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let (_, again) = dropout_uncertainty(&model, &x, 30, 0.5, &mut Rng::seed_from_u64(5)).unwrap();
    assert_eq!(tr, again);
    let masks = sample_masks(&model, 6, 0.5, &mut Rng::seed_from_u64(6)).unwrap();
    let probs: Vec<Vec<f64>> = masks.iter().map(|m| crate::diffnet::softmax(&model.forward(&x, Some(m)).unwrap().logits.into_data())).collect();
    let mean: Vec<f64> = (0..3).map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / 6.0).collect();
    let brute: f64 = probs.iter().flat_map(|p| p.iter().zip(&mean).map(|(a, m)| (a - m).powi(2))).sum::<f64>() / 5.0;
    let (_, fast) = uncertainty_with_masks(&model, &x, &masks).unwrap();
    assert!((fast - brute).abs() < 1e-14);
    let plain = random_mlp(&[5, 8, 3], None, 3);
    assert!(matches!(dropout_uncertainty(&plain, &x, 5, 0.5, &mut Rng::seed_from_u64(7)), Err(Error::NoDropout)));
}

fn tiny_setup() -> (crate::diffnet::Model, KdeModel, BaselineConfig, Vec<Tensor>) {
    let model = random_mlp(&[16, 8, 3], Some(0.5), 4);
    let mut rng = Rng::seed_from_u64(8);
    let images: Vec<Tensor> = (0..60).map(|_| random_input(16, &mut rng).reshape(vec![1, 4, 4]).unwrap()).collect();
    let labels: Vec<usize> = images.iter().map(|x| model.predict(x).unwrap()).collect();
    let config = BaselineConfig {
        artifacts: ArtifactsConfig {
            dropout_masks: 8,
            ..ArtifactsConfig::default()
        },
        ..BaselineConfig::default()
    };
    let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let labels: Vec<usize> = if present.len() == 3 { labels } else { (0..60).map(|i| i % 3).collect() };
    let kde = fit_artifacts(&model, &images, &labels, &config.artifacts).unwrap();
    (model, kde, config, images)
}

#[test]
fn baseline_statistics_are_bounded_and_reproducible() {
    let (model, kde, config, images) = tiny_setup();
    for (i, x) in images.iter().enumerate().take(10) {
        let s = baseline_stats(&model, &kde, x, &config, i as u64).unwrap();
        assert!((0.0..=2.0).contains(&s.fs));
        assert!(s.uncertainty >= 0.0);
        assert_eq!(s, baseline_stats(&model, &kde, x, &config, i as u64).unwrap());
        for t in squeeze_transforms(x, &config.squeeze).unwrap() {
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn baseline_calibration_and_strict_thresholds() {
    let (model, kde, config, images) = tiny_setup();
    let stats: Vec<BaselineStats> = images
        .iter()
        .enumerate()
        .map(|(i, x)| baseline_stats(&model, &kde, x, &config, i as u64).unwrap())
        .collect();
    let th = calibrate_baselines(&stats, 0.2, &model, &config, "tiny").unwrap();
    let fs_rate = stats.iter().filter(|s| baseline_detect(s, &th).feature_squeezing).count();
    let art_rate = stats.iter().filter(|s| baseline_detect(s, &th).artifacts).count();
    assert!(fs_rate <= 12 && art_rate <= 12);
    assert!(th.check(&model, &config).is_ok());
    let other = BaselineConfig { seed: 9, ..config.clone() };
    assert!(matches!(th.check(&model, &other), Err(Error::StaleCalibration(_))));
    let at = BaselineStats {
        fs: th.t_fs,
        log_density: th.t_log_density,
        uncertainty: th.t_uncertainty,
    };
    assert_eq!(
        baseline_detect(&at, &th),
        BaselineVerdict {
            feature_squeezing: false,
            artifacts: false
        }
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    th.save(&path).unwrap();
    assert_eq!(BaselineThresholds::load(&path).unwrap(), th);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bit_depth_is_idempotent_and_in_box(values in proptest::collection::vec(0.0f64..=1.0, 9), bits in 1u32..=8) {
        let x = image(values, 3, 3);
        let once = Squeeze::BitDepth(bits).apply(&x);
        prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(Squeeze::BitDepth(bits).apply(&once), once);
    }

    #[test]
    fn median_output_is_an_input_value(values in proptest::collection::vec(0.0f64..=1.0, 16)) {
        let x = image(values.clone(), 4, 4);
        let out = Squeeze::Median(3).apply(&x);
        prop_assert!(out.data().iter().all(|v| values.contains(v)));
    }
}
