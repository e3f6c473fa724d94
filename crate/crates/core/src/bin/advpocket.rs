use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use advpocket::config::{AttackKind, ExperimentConfig};
use advpocket::detector::{calibrate_from_stats, compute_stats, Criterion, DetectorConfig, Thresholds, Verdict};
use advpocket::diffnet::Model;
use advpocket::harness::{self, AttackBatch, SplitData};
use advpocket::Error;

#[derive(Parser)]
#[command(name = "advpocket", version, about = "Adversarial-image detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set detector.sigma=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for per-image work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every randomized component except the data split.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; ADVPOCKET_OUT takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and write its checkpoint.
    Train,
    /// Attack the pass set with the first kind, variant and step size of the grid.
    Attack,
    /// Calibrate detector thresholds on the calibration split.
    Calibrate,
    /// Print a verdict line per input.
    Detect {
        /// Adversarial batch written by `attack`; the pass set when omitted.
        inputs: Option<PathBuf>,
    },
    /// Run the full experiment grid and write the report files.
    Evaluate,
    /// Render the tables of an existing report.json.
    Report {
        /// Defaults to `<out>/report.json`.
        path: Option<PathBuf>,
    },
}

/// Thresholds file written by `calibrate`.
#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    detector: DetectorConfig,
    thresholds: Vec<Thresholds>,
    config: ExperimentConfig,
}

#[derive(Serialize, Deserialize)]
struct AttackFile {
    batch: AttackBatch,
    config: ExperimentConfig,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(Error::Io { source, .. })) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            match e {
                Error::StaleCalibration(_) => eprintln!("refusing to use thresholds: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(2)
        }
    }
}

fn threshold(t: Option<f64>) -> String {
    t.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

fn out_dir(cli: &Cli) -> PathBuf {
    std::env::var_os("ADVPOCKET_OUT").map(PathBuf::from).unwrap_or_else(|| cli.out.clone())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required for this subcommand".into()))?;
    if !path.exists() {
        return Err(Failure::Usage(format!("config file {} not found", path.display())));
    }
    let mut config = ExperimentConfig::load(path, &cli.overrides).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Runtime(Error::Io { path: path.into(), source: e }))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::Io { path: path.into(), source: e }))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

struct Setup {
    config: ExperimentConfig,
    splits: SplitData,
    model: Model,
    out: PathBuf,
}

fn setup(cli: &Cli) -> Result<Setup, Failure> {
    let config = load_config(cli)?;
    configure_jobs(cli.jobs)?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(Error::Io { path: out.clone(), source: e }))?;
    let data = harness::load_dataset(&config)?;
    let splits = harness::split_dataset(&data, &config)?;
    let model = harness::load_or_train(&config, &splits, &out.join(&config.model.checkpoint))?;
    Ok(Setup { config, splits, model, out })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| Failure::Runtime(Error::Io { path: "<stdout>".into(), source: e });
    match &cli.command {
        Command::Report { path } => {
            let path = path.clone().unwrap_or_else(|| out_dir(cli).join("report.json"));
            let report: harness::EvaluationReport = read_json(&path)?;
            write!(out, "{}", harness::render_tables(&report)).map_err(io)?;
        }
        Command::Train => {
            let config = load_config(cli)?;
            configure_jobs(cli.jobs)?;
            let dir = out_dir(cli);
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.clone(), source: e }))?;
            let data = harness::load_dataset(&config)?;
            let splits = harness::split_dataset(&data, &config)?;
            let path = dir.join(&config.model.checkpoint);
            let _ = std::fs::remove_file(&path);
            let model = harness::load_or_train(&config, &splits, &path)?;
            let accuracy = model.accuracy(&splits.eval.images_vec(), &splits.eval.labels)?;
            let summary = serde_json::json!({
                "checkpoint": path,
                "model_checksum": model.checksum(),
                "eval_accuracy": accuracy,
                "config": config,
            });
            write_json(&dir.join("train.json"), &summary)?;
            writeln!(out, "{}", serde_json::to_string(&summary).map_err(Error::from)?).map_err(io)?;
        }
        Command::Attack => {
            let s = setup(cli)?;
            let a = &s.config.attacks;
            let batch = harness::attack_cell(&s.config, &s.model, &s.splits, a.kinds[0], a.variants[0], a.learning_rates[0])?;
            writeln!(out, "index\tlabel\ttarget\tprediction\tsuccess\tlinf").map_err(io)?;
            for r in &batch.records {
                writeln!(out, "{}\t{}\t{}\t{}\t{}\t{:.6}", r.index, r.label, r.target, r.final_prediction, r.success, r.linf).map_err(io)?;
            }
            let file = AttackFile {
                batch,
                config: s.config.clone(),
            };
            write_json(&s.out.join("adversarials.json"), &file)?;
        }
        Command::Calibrate => {
            let s = setup(cli)?;
            let cal = harness::calibrate_detector(&s.config, &s.model, &s.splits)?;
            let set_id = format!("calibration:{}", cal.stats.len());
            let thresholds = s
                .config
                .plan
                .fprs
                .iter()
                .map(|&fpr| calibrate_from_stats(&cal.stats, &Criterion::ALL, fpr, &s.model, &cal.detector, &set_id))
                .collect::<Result<Vec<_>, _>>()?;
            for t in &thresholds {
                writeln!(
                    out,
                    "fpr {}\tc1 {}\tc2t {}\tc2u {}\tachieved {}",
                    t.target_fpr,
                    threshold(t.t_c1),
                    threshold(t.t_c2t),
                    threshold(t.t_c2u),
                    t.achieved_fpr
                )
                .map_err(io)?;
            }
            let file = CalibrationFile {
                detector: cal.detector,
                thresholds,
                config: s.config.clone(),
            };
            write_json(&s.out.join("thresholds.json"), &file)?;
        }
        Command::Detect { inputs } => {
            let s = setup(cli)?;
            let file: CalibrationFile = read_json(&s.out.join("thresholds.json"))?;
            let fpr = s.config.plan.fprs[0];
            let thresholds = file
                .thresholds
                .iter()
                .find(|t| t.target_fpr == fpr)
                .ok_or_else(|| Failure::Usage(format!("thresholds.json has no thresholds for FPR {fpr}")))?;
            if file.config.detector != s.config.detector {
                return Err(Error::StaleCalibration("detector settings changed since calibration; rerun calibrate".into()).into());
            }
            thresholds.check(&s.model, &file.detector)?;
            let items: Vec<(usize, advpocket::Tensor)> = match inputs {
                Some(path) => {
                    let f: AttackFile = read_json(path)?;
                    f.batch.records.into_iter().filter(|r| r.success).map(|r| (r.index, r.x_adv)).collect()
                }
                None => {
                    let pass = advpocket::data::build_pass_set(&s.model, &s.splits.eval, s.config.data.pass_set, s.config.plan.seed)?;
                    pass.indices.iter().map(|&i| (i, s.splits.eval.image(i))).collect()
                }
            };
            writeln!(out, "id\tdelta\tk_t\tk_u\tverdict\tfailed").map_err(io)?;
            for (id, x) in &items {
                let stats = compute_stats(&s.model, x, &file.detector, 5_000_000 + *id as u64)?;
                let v = Verdict::from_stats(stats, thresholds);
                let failed: Vec<&str> = v.failed_criteria.iter().map(|c| c.name()).collect();
                writeln!(
                    out,
                    "{}\t{:.6}\t{:.3}\t{:.3}\t{}\t{}",
                    id,
                    v.stats.delta,
                    v.stats.k_t.score,
                    v.stats.k_u.score,
                    if v.is_adversarial { "adversarial" } else { "benign" },
                    if failed.is_empty() { "-".to_string() } else { failed.join(",") }
                )
                .map_err(io)?;
            }
        }
        Command::Evaluate => {
            let s = setup(cli)?;
            let evaluation = harness::run_plan(&s.config, &s.model, &s.splits)?;
            harness::emit_report(&evaluation, &s.out)?;
            write!(out, "{}", harness::render_tables(&evaluation.report)).map_err(io)?;
            let kinds: Vec<&str> = s.config.attacks.kinds.iter().map(|k: &AttackKind| k.name()).collect();
            log::info!("evaluated attack kinds {:?}; reports in {}", kinds, s.out.display());
        }
    }
    Ok(())
}
