//! Experiment orchestration: calibration, the attack grid, detection-rate
//! tables, loss curves, statistic trends and timing.

pub mod gradcheck;
mod report;
mod setup;
mod timing;
mod trend;

pub use report::{cells_from_csv, cells_to_csv, curves_to_csv, emit_report, render_tables, timing_to_csv, trend_to_csv};
pub use setup::{
    correctly_classified, load_dataset, load_or_train, model_spec, probe_budget, select_sigma, split_dataset, train_model, BudgetChoice,
    BudgetRound, SigmaSelection, SplitData,
};
pub use timing::{timing_table, TimingRow};
pub use trend::{statistic_trend, TrendPoint, TrendSeries};

use serde::{Deserialize, Serialize};

use crate::adaptive::{
    escalate_lambda, run_whitebox, whitebox_vs_artifacts, whitebox_vs_feature_squeezing, ArtifactsAttackConfig, BaseLoss, LambdaSearch,
    LossTerm, LossTrace, SqueezeAttackConfig, WhiteboxConfig,
};
use crate::baselines::{baseline_detect, baseline_stats, calibrate_baselines, fit_artifacts, BaselineStats, BaselineThresholds, KdeModel};
use crate::config::{AttackKind, ExperimentConfig, Variant};
use crate::data::build_pass_set;
use crate::detector::{calibrate_from_stats, compute_stats, Criterion, DetectionStats, DetectorConfig, Thresholds};
use crate::diffnet::Model;
use crate::error::Result;
use crate::par;
use crate::tensor::Tensor;

/// Rows of the detection-rate tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Row {
    C1,
    C2t,
    C2u,
    Combined,
    #[serde(rename = "FS")]
    Fs,
    Artifacts,
}

impl Row {
    pub const ALL: [Row; 6] = [Row::C1, Row::C2t, Row::C2u, Row::Combined, Row::Fs, Row::Artifacts];

    pub fn name(self) -> &'static str {
        match self {
            Row::C1 => "C1",
            Row::C2t => "C2t",
            Row::C2u => "C2u",
            Row::Combined => "Combined",
            Row::Fs => "FS",
            Row::Artifacts => "Artifacts",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Row::ALL.into_iter().find(|r| r.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCount {
    pub row: Row,
    pub fpr: f64,
    pub detected: usize,
    /// `detected / successes`; `None` when no attack succeeded.
    pub rate: Option<f64>,
}

/// One attack configuration evaluated on the pass set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub kind: AttackKind,
    pub variant: Variant,
    pub lr: f64,
    pub tau: f64,
    pub lambda: f64,
    pub n: usize,
    pub successes: usize,
    /// Largest L-infinity distance of any output from its clean image.
    pub max_linf: f64,
    /// Every output lies in the unit box.
    pub in_box: bool,
    pub counts: Vec<RowCount>,
}

impl CellResult {
    pub fn success_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.successes as f64 / self.n as f64
        }
    }

    pub fn rate(&self, row: Row, fpr: f64) -> Option<f64> {
        self.counts.iter().find(|c| c.row == row && c.fpr == fpr).and_then(|c| c.rate)
    }
}

/// Thresholds of every row at one target FPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub fpr: f64,
    pub combined: Thresholds,
    pub c1: Thresholds,
    pub c2t: Thresholds,
    pub c2u: Thresholds,
    pub baselines: BaselineThresholds,
}

impl ThresholdSet {
    pub fn flags(&self, row: Row, stats: &DetectionStats, base: &BaselineStats) -> bool {
        match row {
            Row::C1 => flagged(stats, &self.c1),
            Row::C2t => flagged(stats, &self.c2t),
            Row::C2u => flagged(stats, &self.c2u),
            Row::Combined => flagged(stats, &self.combined),
            Row::Fs => baseline_detect(base, &self.baselines).feature_squeezing,
            Row::Artifacts => baseline_detect(base, &self.baselines).artifacts,
        }
    }
}

fn flagged(stats: &DetectionStats, thresholds: &Thresholds) -> bool {
    Criterion::ALL
        .into_iter()
        .any(|c| thresholds.get(c).is_some_and(|t| stats.score(c) > t))
}

/// False-positive rate of a row on the calibration set and on held-out
/// clean images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub row: Row,
    pub fpr: f64,
    pub calibration_fpr: f64,
    pub audit_fpr: f64,
    pub audit_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub cell: String,
    pub search: LambdaSearch,
}

/// Per-step quartiles of one loss term over the pass set. Step 0 is
/// evaluated at the clean image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cell: String,
    pub term: String,
    pub step: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub row: Row,
    pub fpr: f64,
    pub rate: Option<f64>,
    pub cell: Option<String>,
}

/// Everything but wall-clock timings, so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_fingerprint: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub model_checksum: String,
    pub eval_accuracy: f64,
    pub sigma: Option<SigmaSelection>,
    pub budget: Option<BudgetChoice>,
    pub detector: DetectorConfig,
    pub calibration_size: usize,
    pub pass_set_size: usize,
    pub thresholds: Vec<ThresholdSet>,
    pub audit: Vec<AuditRow>,
    pub lambdas: Vec<LambdaRecord>,
    pub cells: Vec<CellResult>,
    pub worst_case: Vec<WorstCase>,
    pub trend: Option<TrendSeries>,
    pub curves: Vec<CurvePoint>,
}

impl EvaluationReport {
    pub fn cell(&self, kind: AttackKind, variant: Variant, lr: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.kind == kind && c.variant == variant && c.lr == lr)
    }

    pub fn worst(&self, row: Row, fpr: f64) -> Option<&WorstCase> {
        self.worst_case.iter().find(|w| w.row == row && w.fpr == fpr)
    }

    pub fn curve(&self, cell: &str, term: &str) -> Vec<&CurvePoint> {
        self.curves.iter().filter(|c| c.cell == cell && c.term == term).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub timing: Vec<TimingRow>,
}

/// Linear-interpolation quantiles of `values` at each level.
pub fn quantiles<const N: usize>(values: &[f64], levels: [f64; N]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&q| {
            if s.is_empty() {
                return f64::NAN;
            }
            let pos = q * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        })
        .collect()
}

pub fn cell_id(kind: AttackKind, variant: Variant, lr: f64) -> String {
    format!("{}/{}/lr={}", kind.name(), variant.name(), lr)
}

/// Id offsets that keep the random streams of different input groups apart.
const CALIBRATION_IDS: u64 = 1_000_000;
const AUDIT_IDS: u64 = 2_000_000;
const TREND_IDS: u64 = 3_000_000;
const CELL_IDS: u64 = 10_000_000;
const CELL_STRIDE: u64 = 100_000;

/// Clean statistics of a set of inputs.
struct CleanSet {
    detector: Vec<DetectionStats>,
    baseline: Vec<BaselineStats>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    model: &'a Model,
    detector: DetectorConfig,
    kde: KdeModel,
    thresholds: Vec<ThresholdSet>,
}

impl Context<'_> {
    fn clean_set(&self, images: &[Tensor], ids: &[u64]) -> Result<CleanSet> {
        let detector = par::try_map(images.len(), |i| compute_stats(self.model, &images[i], &self.detector, ids[i]))?;
        let baseline = par::try_map(images.len(), |i| baseline_stats(self.model, &self.kde, &images[i], &self.config.baselines, ids[i]))?;
        Ok(CleanSet { detector, baseline })
    }

    fn whitebox_config(&self, kind: AttackKind, variant: Variant, lr: f64) -> WhiteboxConfig {
        let a = &self.config.attacks;
        let mut wb = self.config.adaptive.whitebox.clone();
        wb.lr = lr;
        wb.steps = a.steps;
        wb.tau = if variant == Variant::SmallRadius { a.small_radius_tau } else { a.tau };
        wb.sigma = self.detector.sigma;
        wb.kappa = a.kappa;
        wb.base_loss = match kind {
            AttackKind::Pgd => BaseLoss::PgdCe,
            AttackKind::Cw => BaseLoss::CwMargin,
        };
        wb.losses = match variant {
            Variant::GrayBox => vec![LossTerm::L1],
            Variant::C1Only => vec![LossTerm::L1, LossTerm::L2],
            _ => vec![LossTerm::L1, LossTerm::L2, LossTerm::L3, LossTerm::L4],
        };
        wb
    }
}

struct Outcome {
    x_adv: Tensor,
    success: bool,
    losses: Option<LossTrace>,
}

/// Outcome of one attack in [`attack_cell`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub index: usize,
    pub label: usize,
    pub target: usize,
    pub success: bool,
    pub final_prediction: usize,
    pub linf: f64,
    pub x_adv: Tensor,
    pub losses: Option<LossTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBatch {
    pub cell: String,
    pub lambda: f64,
    pub sigma: f64,
    pub records: Vec<AttackRecord>,
}

/// Runs one attack configuration on the pass set, with the same noise
/// level and λ schedule as [`run_plan`].
pub fn attack_cell(config: &ExperimentConfig, model: &Model, splits: &SplitData, kind: AttackKind, variant: Variant, lr: f64) -> Result<AttackBatch> {
    config.validate()?;
    let mut detector = config.detector.config.clone();
    if config.detector.sigma_rule.enabled {
        detector.sigma = select_sigma(model, &splits.calibration, &config.detector.sigma_rule, config.plan.seed)?.sigma;
    }
    let kde = if variant == Variant::ArtifactsAdaptive {
        fit_artifacts(model, &splits.train.images_vec(), &splits.train.labels, &config.baselines.artifacts)?
    } else {
        KdeModel {
            bandwidth: 1.0,
            dim: 0,
            classes: Vec::new(),
        }
    };
    let ctx = Context {
        config,
        model,
        detector,
        kde,
        thresholds: Vec::new(),
    };
    let pass = build_pass_set(model, &splits.eval, config.data.pass_set, config.plan.seed)?;
    let images: Vec<Tensor> = pass.indices.iter().map(|&i| splits.eval.image(i)).collect();
    let targets: Vec<usize> = if variant == Variant::Untargeted {
        (0..images.len()).map(|i| runner_up(model, &images[i], pass.labels[i])).collect::<Result<_>>()?
    } else {
        pass.targets.clone()
    };
    let mut wb = ctx.whitebox_config(kind, variant, lr);
    if variant.is_adaptive() && config.adaptive.lambda_schedule.enabled {
        let s = &config.adaptive.lambda_schedule;
        let probe: Vec<(u64, Tensor, usize, usize)> = (0..s.probe_images.min(images.len()))
            .map(|i| (i as u64, images[i].clone(), pass.labels[i], targets[i]))
            .collect();
        wb.lambda = escalate_lambda(model, &probe, &wb, s.required_success, s.max_doublings)?.lambda;
    }
    let outcomes = par::try_map(images.len(), |i| attack_one(&ctx, variant, &wb, &images[i], pass.labels[i], targets[i], i as u64))?;
    let records = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            Ok(AttackRecord {
                index: pass.indices[i],
                label: pass.labels[i],
                target: targets[i],
                success: o.success,
                final_prediction: model.predict(&o.x_adv)?,
                linf: o.x_adv.linf_distance(&images[i]),
                x_adv: o.x_adv,
                losses: o.losses,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AttackBatch {
        cell: cell_id(kind, variant, lr),
        lambda: if variant.is_baseline_attack() { 0.0 } else { wb.lambda },
        sigma: ctx.detector.sigma,
        records,
    })
}

/// Effective detector configuration after the noise rule and budget probe,
/// with the calibration-set statistics it was derived from.
pub struct CalibratedDetector {
    pub detector: DetectorConfig,
    pub sigma: Option<SigmaSelection>,
    pub budget: Option<BudgetChoice>,
    pub stats: Vec<DetectionStats>,
    pub images: Vec<Tensor>,
    pub ids: Vec<u64>,
}

/// Resolves the detector configuration and computes clean statistics on
/// the correctly classified calibration images.
pub fn calibrate_detector(config: &ExperimentConfig, model: &Model, splits: &SplitData) -> Result<CalibratedDetector> {
    let mut detector = config.detector.config.clone();
    let sigma = if config.detector.sigma_rule.enabled {
        let s = select_sigma(model, &splits.calibration, &config.detector.sigma_rule, config.plan.seed)?;
        detector.sigma = s.sigma;
        Some(s)
    } else {
        None
    };
    let (idx, images) = correctly_classified(model, &splits.calibration)?;
    let ids: Vec<u64> = idx.iter().map(|&i| CALIBRATION_IDS + i as u64).collect();
    let budget = if config.detector.budget_probe.enabled && !images.is_empty() {
        let k = config.detector.budget_probe.images.min(images.len());
        let b = probe_budget(model, &images[..k], &ids[..k], &detector, &config.detector.budget_probe)?;
        b.apply(&mut detector);
        Some(b)
    } else {
        None
    };
    detector.validate()?;
    let stats = par::try_map(images.len(), |i| compute_stats(model, &images[i], &detector, ids[i]))?;
    Ok(CalibratedDetector {
        detector,
        sigma,
        budget,
        stats,
        images,
        ids,
    })
}

/// Class with the highest clean probability other than `label`.
fn runner_up(model: &Model, x: &Tensor, label: usize) -> Result<usize> {
    let p = model.probs(x)?;
    Ok((0..p.len())
        .filter(|&c| c != label)
        .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
        .expect("at least two classes"))
}

/// Calibrates every row once per FPR target, runs the attack grid on the
/// pass set and evaluates every row on the successful adversarials.
pub fn run_plan(config: &ExperimentConfig, model: &Model, splits: &SplitData) -> Result<Evaluation> {
    config.validate()?;
    let plan = &config.plan;
    let calibrated = calibrate_detector(config, model, splits)?;
    if let Some(s) = &calibrated.sigma {
        log::info!("noise level {} (clean accuracy {:.4})", s.sigma, s.clean_accuracy);
    }
    if let Some(b) = &calibrated.budget {
        log::info!("detector radius {} with caps {}/{}", b.radius, b.c2t_cap, b.c2u_cap);
    }
    let (audit_idx, audit_images) = correctly_classified(model, &splits.audit)?;
    let audit_ids: Vec<u64> = audit_idx.iter().map(|&i| AUDIT_IDS + i as u64).collect();
    let kde = fit_artifacts(model, &splits.train.images_vec(), &splits.train.labels, &config.baselines.artifacts)?;
    let mut ctx = Context {
        config,
        model,
        detector: calibrated.detector.clone(),
        kde,
        thresholds: Vec::new(),
    };
    let cal_images = &calibrated.images;
    let cal = CleanSet {
        baseline: par::try_map(cal_images.len(), |i| {
            baseline_stats(model, &ctx.kde, &cal_images[i], &config.baselines, calibrated.ids[i])
        })?,
        detector: calibrated.stats,
    };
    let audit = ctx.clean_set(&audit_images, &audit_ids)?;
    log::info!("clean statistics for {} calibration and {} audit images", cal_images.len(), audit_images.len());
    let (sigma, budget) = (calibrated.sigma, calibrated.budget);

    let set_id = format!("calibration:{}", cal_images.len());
    for &fpr in &plan.fprs {
        let single = |c: Criterion| calibrate_from_stats(&cal.detector, &[c], fpr, model, &ctx.detector, &set_id);
        ctx.thresholds.push(ThresholdSet {
            fpr,
            combined: calibrate_from_stats(&cal.detector, &Criterion::ALL, fpr, model, &ctx.detector, &set_id)?,
            c1: single(Criterion::C1)?,
            c2t: single(Criterion::C2t)?,
            c2u: single(Criterion::C2u)?,
            baselines: calibrate_baselines(&cal.baseline, fpr, model, &config.baselines, &set_id)?,
        });
    }
    let rate_on = |set: &CleanSet, th: &ThresholdSet, row: Row| {
        let n = set.detector.len();
        let hits = (0..n).filter(|&i| th.flags(row, &set.detector[i], &set.baseline[i])).count();
        if n == 0 {
            0.0
        } else {
            hits as f64 / n as f64
        }
    };
    let mut audit_rows = Vec::new();
    for th in &ctx.thresholds {
        for row in Row::ALL {
            audit_rows.push(AuditRow {
                row,
                fpr: th.fpr,
                calibration_fpr: rate_on(&cal, th, row),
                audit_fpr: rate_on(&audit, th, row),
                audit_size: audit.detector.len(),
            });
        }
    }

    let pass = build_pass_set(model, &splits.eval, config.data.pass_set, plan.seed)?;
    let images: Vec<Tensor> = pass.indices.iter().map(|&i| splits.eval.image(i)).collect();

    let mut lambdas = Vec::new();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    let mut timing_inputs: Vec<(String, Vec<Tensor>)> = vec![(
        "clean".into(),
        images.iter().take(plan.timing_images).cloned().collect(),
    )];
    let mut cell_index = 0u64;
    for &kind in &config.attacks.kinds {
        for &variant in &config.attacks.variants {
            if variant.is_baseline_attack() && kind != AttackKind::Pgd {
                continue;
            }
            for &lr in &config.attacks.learning_rates {
                let id = cell_id(kind, variant, lr);
                let mut wb = ctx.whitebox_config(kind, variant, lr);
                let targets: Vec<usize> = if variant == Variant::Untargeted {
                    (0..images.len()).map(|i| runner_up(model, &images[i], pass.labels[i])).collect::<Result<_>>()?
                } else {
                    pass.targets.clone()
                };
                if variant.is_adaptive() && config.adaptive.lambda_schedule.enabled {
                    let s = &config.adaptive.lambda_schedule;
                    let probe: Vec<(u64, Tensor, usize, usize)> = (0..s.probe_images.min(images.len()))
                        .map(|i| (i as u64, images[i].clone(), pass.labels[i], targets[i]))
                        .collect();
                    let search = escalate_lambda(model, &probe, &wb, s.required_success, s.max_doublings)?;
                    log::info!("{id}: lambda {} ({:.3} probe success)", search.lambda, search.success_rate);
                    wb.lambda = search.lambda;
                    lambdas.push(LambdaRecord { cell: id.clone(), search });
                }
                let outcomes = par::try_map(images.len(), |i| attack_one(&ctx, variant, &wb, &images[i], pass.labels[i], targets[i], i as u64))?;
                let base = CELL_IDS + cell_index * CELL_STRIDE;
                let cell = evaluate_cell(&ctx, &id, kind, variant, &wb, &images, &outcomes, base)?;
                log::info!("{id}: success {}/{}", cell.successes, cell.n);
                if variant == Variant::GrayBox && lr == config.attacks.learning_rates[0] {
                    let adv: Vec<Tensor> = outcomes.iter().filter(|o| o.success).take(plan.timing_images).map(|o| o.x_adv.clone()).collect();
                    timing_inputs.push((format!("{}-adv", kind.name()), adv));
                }
                curves.extend(loss_curves(&id, &outcomes));
                cells.push(cell);
                cell_index += 1;
            }
        }
    }

    let trend = if plan.trend_checkpoints.is_empty() || plan.trend_images == 0 {
        None
    } else {
        let k = plan.trend_images.min(images.len());
        let mut white = ctx.whitebox_config(AttackKind::Pgd, Variant::Full, plan.trend_lr);
        if let Some(r) = lambdas.iter().find(|r| r.cell == cell_id(AttackKind::Pgd, Variant::Full, plan.trend_lr)) {
            white.lambda = r.search.lambda;
        }
        let gray = ctx.whitebox_config(AttackKind::Pgd, Variant::GrayBox, plan.trend_lr);
        Some(statistic_trend(
            model,
            &images[..k],
            &pass.labels[..k],
            &pass.targets[..k],
            &white,
            &gray,
            &ctx.detector,
            &plan.trend_checkpoints,
            TREND_IDS,
        )?)
    };

    let timing = if plan.timing_images > 0 {
        timing_table(model, &timing_inputs, &ctx.detector, plan.timing_repeats)?
    } else {
        Vec::new()
    };

    let worst_case = worst_cases(&cells, &plan.fprs);
    let eval_accuracy = model.accuracy(&splits.eval.images_vec(), &splits.eval.labels)?;
    let report = EvaluationReport {
        config_fingerprint: config.fingerprint(),
        seed: plan.seed,
        config: config.clone(),
        model_checksum: model.checksum(),
        eval_accuracy,
        sigma,
        budget,
        detector: ctx.detector.clone(),
        calibration_size: cal_images.len(),
        pass_set_size: images.len(),
        thresholds: ctx.thresholds,
        audit: audit_rows,
        lambdas,
        cells,
        worst_case,
        trend,
        curves,
    };
    Ok(Evaluation { report, timing })
}

fn attack_one(ctx: &Context, variant: Variant, wb: &WhiteboxConfig, x: &Tensor, label: usize, target: usize, id: u64) -> Result<Outcome> {
    let model = ctx.model;
    match variant {
        Variant::FsAdaptive => {
            let cfg = SqueezeAttackConfig {
                lr: wb.lr,
                steps: wb.steps,
                tau: wb.tau,
                ..ctx.config.adaptive.squeeze_attack.clone()
            };
            let r = whitebox_vs_feature_squeezing(model, x, target, &ctx.config.baselines.squeeze, &cfg)?;
            Ok(Outcome {
                success: r.success,
                x_adv: r.x_adv,
                losses: None,
            })
        }
        Variant::ArtifactsAdaptive => {
            let cfg = ArtifactsAttackConfig {
                lr: wb.lr,
                steps: wb.steps,
                tau: wb.tau,
                dropout_masks: ctx.config.baselines.artifacts.dropout_masks,
                dropout_rate: ctx.config.baselines.artifacts.dropout_rate,
                ..ctx.config.adaptive.artifacts_attack.clone()
            };
            let r = whitebox_vs_artifacts(model, x, target, &ctx.kde, &cfg, id)?;
            Ok(Outcome {
                success: r.success,
                x_adv: r.x_adv,
                losses: None,
            })
        }
        _ => {
            let r = run_whitebox(model, x, label, target, wb, id)?;
            let success = if variant == Variant::Untargeted {
                r.attack.final_prediction != label
            } else {
                r.attack.success
            };
            Ok(Outcome {
                success,
                x_adv: r.attack.x_adv,
                losses: Some(r.losses),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    ctx: &Context,
    id: &str,
    kind: AttackKind,
    variant: Variant,
    wb: &WhiteboxConfig,
    images: &[Tensor],
    outcomes: &[Outcome],
    id_base: u64,
) -> Result<CellResult> {
    let winners: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].success).collect();
    let stats = par::try_map(winners.len(), |k| {
        let i = winners[k];
        let x = &outcomes[i].x_adv;
        let sid = id_base + i as u64;
        Ok((
            compute_stats(ctx.model, x, &ctx.detector, sid)?,
            baseline_stats(ctx.model, &ctx.kde, x, &ctx.config.baselines, sid)?,
        ))
    })?;
    let mut counts = Vec::new();
    for th in &ctx.thresholds {
        for row in Row::ALL {
            let detected = stats.iter().filter(|(d, b)| th.flags(row, d, b)).count();
            counts.push(RowCount {
                row,
                fpr: th.fpr,
                detected,
                rate: (!winners.is_empty()).then(|| detected as f64 / winners.len() as f64),
            });
        }
    }
    let max_linf = outcomes.iter().zip(images).map(|(o, x)| o.x_adv.linf_distance(x)).fold(0.0, f64::max);
    let in_box = outcomes.iter().all(|o| o.x_adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let lambda = if variant.is_baseline_attack() { 0.0 } else { wb.lambda };
    Ok(CellResult {
        id: id.to_string(),
        kind,
        variant,
        lr: wb.lr,
        tau: wb.tau,
        lambda,
        n: outcomes.len(),
        successes: winners.len(),
        max_linf,
        in_box,
        counts,
    })
}

fn loss_curves(cell: &str, outcomes: &[Outcome]) -> Vec<CurvePoint> {
    let traces: Vec<&LossTrace> = outcomes.iter().filter_map(|o| o.losses.as_ref()).collect();
    let Some(steps) = traces.iter().map(|t| t.len()).min() else {
        return Vec::new();
    };
    let terms: [(&str, fn(&LossTrace) -> &Vec<f64>); 5] = [
        ("L1", |t| &t.l1),
        ("L2", |t| &t.l2),
        ("L3", |t| &t.l3),
        ("L4", |t| &t.l4),
        ("total", |t| &t.total),
    ];
    let mut out = Vec::new();
    for (name, get) in terms {
        for step in 0..steps {
            let values: Vec<f64> = traces.iter().map(|t| get(t)[step]).collect();
            let q = quantiles(&values, [0.25, 0.5, 0.75]);
            out.push(CurvePoint {
                cell: cell.to_string(),
                term: name.to_string(),
                step,
                q25: q[0],
                median: q[1],
                q75: q[2],
            });
        }
    }
    out
}

/// Row minimum over all cells with at least one successful attack.
pub fn worst_cases(cells: &[CellResult], fprs: &[f64]) -> Vec<WorstCase> {
    let mut out = Vec::new();
    for &fpr in fprs {
        for row in Row::ALL {
            let best = cells
                .iter()
                .filter_map(|c| c.rate(row, fpr).map(|r| (r, &c.id)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            out.push(WorstCase {
                row,
                fpr,
                rate: best.map(|b| b.0),
                cell: best.map(|b| b.1.clone()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests;
