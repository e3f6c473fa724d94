//! Experiment configuration: one JSON document with the sections
//! `model`, `data`, `detector`, `attacks`, `adaptive`, `baselines` and
//! `plan`, plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adaptive::{ArtifactsAttackConfig, SqueezeAttackConfig, WhiteboxConfig};
use crate::baselines::BaselineConfig;
use crate::data::SplitSizes;
use crate::detector::DetectorConfig;
use crate::diffnet::TrainingConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub dropout: Option<f64>,
    pub training: TrainingConfig,
    /// Checkpoint path; relative paths resolve against the output directory.
    pub checkpoint: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            dropout: Some(0.5),
            training: TrainingConfig::default(),
            checkpoint: "model.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// IDX image and label files, optionally gzip-compressed. Relative
    /// paths resolve against the config file's directory.
    Idx { images: String, labels: String },
    Blobs {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub source: DataSource,
    pub splits: SplitSizes,
    pub split_seed: u64,
    pub pass_set: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Idx {
                images: "data/mnist/images-idx3-ubyte.gz".into(),
                labels: "data/mnist/labels-idx1-ubyte.gz".into(),
            },
            splits: SplitSizes::default(),
            split_seed: 0,
            pass_set: 200,
        }
    }
}

/// Picks the largest noise level whose accuracy drop on the calibration
/// split stays within `max_drop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaRule {
    pub enabled: bool,
    pub grid: Vec<f64>,
    pub max_drop: f64,
}

impl Default for SigmaRule {
    fn default() -> Self {
        Self {
            enabled: true,
            grid: vec![0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3],
            max_drop: 0.01,
        }
    }
}

/// Picks the smallest detector radius at which `coverage` of probed clean
/// images flip within the configured step caps, then shrinks the caps to
/// `cap_factor` times the observed `coverage` quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetProbe {
    pub enabled: bool,
    pub images: usize,
    pub radii: Vec<f64>,
    pub coverage: f64,
    pub cap_factor: f64,
    pub min_cap: usize,
}

impl Default for BudgetProbe {
    fn default() -> Self {
        Self {
            enabled: true,
            images: 100,
            radii: vec![0.03, 0.05, 0.1, 0.2, 0.3, 0.5],
            coverage: 0.99,
            cap_factor: 2.0,
            min_cap: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    #[serde(flatten)]
    pub config: DetectorConfig,
    pub sigma_rule: SigmaRule,
    pub budget_probe: BudgetProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Pgd,
    Cw,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All four loss terms.
    Full,
    /// Classification loss only.
    GrayBox,
    /// Classification loss and the noise term.
    C1Only,
    /// All terms, aimed at the runner-up class; any misclassification
    /// counts as success.
    Untargeted,
    /// All terms at the small radius.
    SmallRadius,
    /// Adaptive attack on Feature Squeezing.
    FsAdaptive,
    /// Adaptive attack on Artifacts.
    ArtifactsAdaptive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::GrayBox => "gray_box",
            Variant::C1Only => "c1_only",
            Variant::Untargeted => "untargeted",
            Variant::SmallRadius => "small_radius",
            Variant::FsAdaptive => "fs_adaptive",
            Variant::ArtifactsAdaptive => "artifacts_adaptive",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            Variant::Full,
            Variant::GrayBox,
            Variant::C1Only,
            Variant::Untargeted,
            Variant::SmallRadius,
            Variant::FsAdaptive,
            Variant::ArtifactsAdaptive,
        ]
        .into_iter()
        .find(|v| v.name() == name)
    }

    /// Whether the attacker optimizes against the proposed detector.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Variant::Full | Variant::C1Only | Variant::Untargeted | Variant::SmallRadius)
    }

    pub fn is_baseline_attack(self) -> bool {
        matches!(self, Variant::FsAdaptive | Variant::ArtifactsAdaptive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub learning_rates: Vec<f64>,
    pub variants: Vec<Variant>,
    pub steps: usize,
    pub tau: f64,
    pub small_radius_tau: f64,
    pub kappa: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kinds: vec![AttackKind::Pgd, AttackKind::Cw],
            learning_rates: vec![0.01, 0.03, 0.1],
            variants: vec![
                Variant::Full,
                Variant::GrayBox,
                Variant::C1Only,
                Variant::Untargeted,
                Variant::SmallRadius,
                Variant::FsAdaptive,
                Variant::ArtifactsAdaptive,
            ],
            steps: 50,
            tau: 0.1,
            small_radius_tau: 0.03,
            kappa: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaSchedule {
    pub enabled: bool,
    pub probe_images: usize,
    pub required_success: f64,
    pub max_doublings: usize,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            probe_images: 32,
            required_success: 0.95,
            max_doublings: 6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveSection {
    /// Loss weights and Monte Carlo settings. Step size, step count,
    /// radius, loss terms and noise level are set per grid cell.
    pub whitebox: WhiteboxConfig,
    pub lambda_schedule: LambdaSchedule,
    pub squeeze_attack: SqueezeAttackConfig,
    pub artifacts_attack: ArtifactsAttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSection {
    pub fprs: Vec<f64>,
    pub seed: u64,
    /// Attack iteration counts at which the statistic trend is sampled.
    pub trend_checkpoints: Vec<usize>,
    pub trend_lr: f64,
    pub trend_images: usize,
    pub timing_images: usize,
    pub timing_repeats: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            fprs: vec![0.1, 0.2],
            seed: 0,
            trend_checkpoints: vec![0, 10, 25, 50, 100, 200],
            trend_lr: 0.01,
            trend_images: 100,
            timing_images: 20,
            timing_repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub detector: DetectorSection,
    pub attacks: AttackSection,
    pub adaptive: AdaptiveSection,
    pub baselines: BaselineConfig,
    pub plan: PlanSection,
    /// Directory that relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a config file and applies `key=value` overrides. Unknown keys
    /// in the file or the overrides are errors.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text, overrides)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        let parsed: Self = serde_json::from_value(raw.clone())?;
        let mut full = serde_json::to_value(&parsed)?;
        reject_unknown(&raw, &full, "")?;
        for o in overrides {
            apply_override(&mut full, o)?;
        }
        let config: Self = serde_json::from_value(full)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.attacks.kinds.is_empty() || self.attacks.learning_rates.is_empty() || self.attacks.variants.is_empty() {
            return bad("attack grid is empty");
        }
        if self.plan.fprs.is_empty() || self.plan.fprs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad("FPR targets must lie in (0, 1)");
        }
        if self.data.pass_set == 0 {
            return bad("pass set must be nonempty");
        }
        self.detector.config.validate()?;
        self.baselines.validate()?;
        Ok(())
    }

    /// Uses `seed` for every randomized component except the data split.
    pub fn set_seed(&mut self, seed: u64) {
        self.plan.seed = seed;
        self.model.training.seed = seed;
        self.detector.config.seed = seed;
        self.adaptive.whitebox.seed = seed;
        self.adaptive.artifacts_attack.seed = seed;
        self.baselines.seed = seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn reject_unknown(raw: &Value, full: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(r), Value::Object(f)) = (raw, full) {
        for (k, v) in r {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match f.get(k) {
                Some(fv) => reject_unknown(v, fv, &key)?,
                None => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
            }
        }
    }
    Ok(())
}

/// Sets `a.b.c=value` in `doc`. The key must already exist. The value is
/// parsed as JSON, falling back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let mut node = &mut *doc;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
