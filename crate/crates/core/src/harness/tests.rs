use std::sync::OnceLock;

use super::*;
use crate::config::{DataSource, ExperimentConfig};

fn blob_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data.source = DataSource::Blobs {
        n_per_class: 200,
        classes: 3,
        dim: 16,
        separation: 1.5,
    };
    c.data.splits = crate::data::SplitSizes {
        calibration: 60,
        audit: 60,
        eval: 120,
        train: None,
    };
    c.data.pass_set = 12;
    c.model.hidden = vec![16];
    c.model.training.epochs = 20;
    c.model.training.learning_rate = 0.01;
    c.attacks.steps = 10;
    c.attacks.learning_rates = vec![0.01, 0.1];
    c.adaptive.lambda_schedule.probe_images = 6;
    c.adaptive.lambda_schedule.max_doublings = 2;
    c.adaptive.artifacts_attack.dropout_masks = 8;
    c.baselines.artifacts.dropout_masks = 8;
    c.detector.budget_probe.images = 20;
    c.detector.budget_probe.radii = vec![0.05, 0.2, 0.5];
    c.plan.trend_checkpoints = vec![0, 5, 10];
    c.plan.trend_images = 6;
    c.plan.timing_images = 3;
    c.plan.timing_repeats = 2;
    c
}

fn fixture() -> &'static (ExperimentConfig, crate::diffnet::Model, SplitData, Evaluation) {
    static CELL: OnceLock<(ExperimentConfig, crate::diffnet::Model, SplitData, Evaluation)> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = blob_config();
        let data = load_dataset(&config).unwrap();
        let splits = split_dataset(&data, &config).unwrap();
        let (model, _) = train_model(&config, &splits).unwrap();
        let eval = run_plan(&config, &model, &splits).unwrap();
        (config, model, splits, eval)
    })
}

#[test]
fn quantiles_interpolate_linearly() {
    assert_eq!(quantiles(&[3.0, 1.0, 2.0, 4.0], [0.0, 0.5, 1.0]), vec![1.0, 2.5, 4.0]);
    assert_eq!(quantiles(&[7.0], [0.3]), vec![7.0]);
}

#[test]
fn grid_covers_every_cell_with_auditable_counts() {
    let (config, _, _, eval) = fixture();
    let r = &eval.report;
    let per_kind = config.attacks.variants.len() * config.attacks.learning_rates.len();
    let cw = (config.attacks.variants.len() - 2) * config.attacks.learning_rates.len();
    assert_eq!(r.cells.len(), per_kind + cw);
    for c in &r.cells {
        assert_eq!(c.n, 12);
        assert!(c.successes <= c.n);
        assert!(c.in_box);
        assert!(c.max_linf <= c.tau + 1e-12);
        assert_eq!(c.counts.len(), Row::ALL.len() * config.plan.fprs.len());
        for k in &c.counts {
            assert!(k.detected <= c.successes);
            match k.rate {
                Some(rate) => {
                    assert!((0.0..=1.0).contains(&rate));
                    assert_eq!(rate, k.detected as f64 / c.successes as f64);
                }
                None => assert_eq!(c.successes, 0),
            }
        }
    }
    assert_eq!(r.audit.len(), Row::ALL.len() * config.plan.fprs.len());
    assert_eq!(r.thresholds.len(), config.plan.fprs.len());
}

#[test]
fn worst_case_is_the_row_minimum() {
    let r = &fixture().3.report;
    for w in &r.worst_case {
        let min = r.cells.iter().filter_map(|c| c.rate(w.row, w.fpr)).fold(f64::INFINITY, f64::min);
        assert_eq!(w.rate.unwrap_or(f64::INFINITY), min);
    }
    let text = render_tables(r);
    assert!(text.contains('*'));
    assert!(text.contains("audit FPR"));
}

#[test]
fn tables_csv_round_trips() {
    let r = &fixture().3.report;
    let csv = cells_to_csv(&r.cells);
    assert_eq!(cells_from_csv(&csv).unwrap(), r.cells);
    assert!(cells_from_csv("nonsense\n").is_err());
}

#[cfg(feature = "parallel")]
#[test]
fn report_is_reproducible_across_thread_counts() {
    let (config, model, splits, eval) = fixture();
    let again = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| run_plan(config, model, splits).unwrap());
    assert_eq!(
        serde_json::to_string(&again.report).unwrap(),
        serde_json::to_string(&eval.report).unwrap()
    );
}

#[test]
fn trend_and_curves_have_the_expected_shape() {
    let (config, _, _, eval) = fixture();
    let r = &eval.report;
    let trend = r.trend.as_ref().unwrap();
    assert_eq!(trend.checkpoints, vec![0, 5, 10]);
    let first = trend.point("clean", 0).unwrap();
    for &c in &trend.checkpoints {
        let p = trend.point("clean", c).unwrap();
        assert_eq!(p.delta, first.delta);
        assert_eq!(p.k_t, first.k_t);
        for s in ["white_box", "gray_box"] {
            let q = trend.point(s, c).unwrap();
            assert!(q.delta[0] <= q.delta[1] && q.delta[1] <= q.delta[2]);
        }
    }
    assert_eq!(trend.point("white_box", 0).unwrap().delta, first.delta);
    let id = cell_id(AttackKind::Pgd, Variant::Full, 0.01);
    let l1 = r.curve(&id, "L1");
    assert_eq!(l1.len(), config.attacks.steps);
    assert!(l1.iter().all(|p| p.q25 <= p.median && p.median <= p.q75));
    assert!(r.curve(&cell_id(AttackKind::Pgd, Variant::FsAdaptive, 0.01), "L1").is_empty());
}

#[test]
fn timing_rows_are_positive() {
    let eval = &fixture().3;
    assert!(!eval.timing.is_empty());
    for t in &eval.timing {
        assert!(t.mean_seconds > 0.0);
        assert!(t.variance >= 0.0);
    }
    assert!(eval.timing.iter().any(|t| t.input_kind == "clean"));
}

#[test]
fn emitted_files_exist() {
    let eval = &fixture().3;
    let dir = tempfile::tempdir().unwrap();
    emit_report(eval, dir.path()).unwrap();
    for f in ["report.json", "tables.csv", "curves.csv", "trend.csv", "timing.csv", "tables.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back: EvaluationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.config_fingerprint, eval.report.config_fingerprint);
    assert!(json.contains("\"seed\""));
    let blocked = dir.path().join("report.json").join("x");
    assert!(emit_report(eval, &blocked).is_err());
}

#[test]
fn combined_row_flags_when_any_enabled_criterion_fires() {
    let th = &fixture().3.report.thresholds[0];
    let base = BaselineStats {
        fs: 0.0,
        log_density: f64::INFINITY,
        uncertainty: 0.0,
    };
    let mut stats = DetectionStats {
        delta: 0.0,
        k_t: crate::attacks::FlipCount {
            steps: 0,
            flipped: true,
            score: 0.0,
        },
        k_u: crate::attacks::FlipCount {
            steps: 0,
            flipped: true,
            score: 0.0,
        },
        target: 0,
        seconds: [0.0; 3],
    };
    assert!(!th.flags(Row::Combined, &stats, &base));
    stats.delta = th.combined.t_c1.unwrap() + 1e-9;
    assert!(th.flags(Row::Combined, &stats, &base));
    assert!(!th.flags(Row::Fs, &stats, &base));
}
