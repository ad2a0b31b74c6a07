//! Command-line pipelines: `generate`, `train`, `eval`, `bench` and `repro`.
//!
//! Every pipeline is a plain function over an [`ExperimentConfig`], so the
//! binary is a thin argument parser around this module. Settings come from
//! built-in defaults, then the TOML file given with `--config`, then flags.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{parse_dataset, serialize_dataset, Dataset, DatasetKind};
use crate::encoder::{build_directory, ApDirectory};
use crate::error::{Error, Result};
use crate::eval::{
    bench_csv, evaluate, report_to_files, scaling_benchmark, BenchConfig, EvalReport,
    REFERENCE_ACCURACY, REFERENCE_ERROR_M, REFERENCE_LABEL,
};
use crate::models::{ModelConfig, PredictorKind, Trained};
use crate::predictor::{Localizer, TruthOracle};
use crate::synth::{
    generate_dataset, generate_environment, Environment, EnvironmentSpec, RadioModel,
};
use crate::wifinet::TrainReport;

pub const ENVIRONMENT_FILE: &str = "environment.json";
pub const BENCH_FILE: &str = "bench.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_HEADER: &str =
    "predictor,protocol,n_samples,accuracy,rmse_m,mean_err_m,p50_m,p75_m";

/// Test protocols reported by `repro`, in table order.
pub const PROTOCOLS: [DatasetKind; 3] = [
    DatasetKind::TestKnown,
    DatasetKind::TestUnknown,
    DatasetKind::TestTrajectory,
];

/// File name of a generated dataset, e.g. `test-known.csv`.
pub fn dataset_file(kind: DatasetKind) -> String {
    format!("{kind}.csv")
}

pub fn checkpoint_file(kind: PredictorKind) -> String {
    format!("{kind}.ckpt")
}

pub fn loss_file(kind: PredictorKind) -> String {
    format!("{kind}.loss.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scans: usize,
    pub known_scans: usize,
    pub unknown_scans: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_scans: 50,
            known_scans: 10,
            unknown_scans: 5,
        }
    }
}

/// Everything one experiment needs. `seed` drives all randomness: the
/// environment, every dataset and every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: PredictorKind,
    /// TOML file holding an environment spec; the default spec when absent.
    /// Relative paths resolve against the config file's directory.
    pub environment: Option<PathBuf>,
    pub radio: RadioModel,
    pub data: DataConfig,
    pub models: ModelConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            model: PredictorKind::WiFiNet,
            environment: None,
            radio: RadioModel::default(),
            data: DataConfig::default(),
            models: ModelConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(env), Some(dir)) = (&cfg.environment, path.parent()) {
            if env.is_relative() {
                cfg.environment = Some(dir.join(env));
            }
        }
        Ok(cfg)
    }

    /// Small datasets, two WiFiNet epochs and a single benchmark cell.
    pub fn quick(mut self) -> Self {
        self.data = DataConfig {
            train_scans: 10,
            known_scans: 4,
            unknown_scans: 2,
        };
        self.models.train.epochs = 2;
        self.bench.ap_counts = vec![113];
        self.bench.position_counts = vec![30];
        self.bench.scans_per_point = 5;
        self.bench.predictions = 100;
        self
    }

    pub fn environment_spec(&self) -> Result<EnvironmentSpec> {
        match &self.environment {
            None => Ok(EnvironmentSpec::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Checks referenced files and every parameter block.
    pub fn validate(&self) -> Result<()> {
        self.environment_spec()?.validate()?;
        self.radio.validate()?;
        self.models.train.validate()?;
        let d = &self.data;
        if d.train_scans == 0 || d.known_scans == 0 || d.unknown_scans == 0 {
            return Err(Error::Config("scans per position must be positive".into()));
        }
        Ok(())
    }

    /// Model hyperparameters with every seed set from the experiment seed.
    pub fn seeded_models(&self) -> ModelConfig {
        let mut m = self.models.clone();
        m.train.seed = self.seed;
        m.svm.seed = self.seed;
        m.subknn.seed = self.seed;
        m
    }

    fn dataset_seed(&self, kind: DatasetKind) -> u64 {
        let k = DatasetKind::ALL
            .iter()
            .position(|&d| d == kind)
            .unwrap_or(0) as u64;
        self.seed.wrapping_add(1 + k)
    }
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Parser)]
#[command(
    name = "wifiloc",
    version,
    about = "WiFi fingerprint localisation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// wifinet, knn, svm or subknn.
    #[arg(long, global = true)]
    pub model: Option<PredictorKind>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the environment and the four datasets.
    Generate,
    /// Train one predictor; writes a checkpoint and a loss curve.
    Train {
        /// Directory holding train.csv (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the ground-truth oracle) on a test set.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Predict the true location of every scan.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        /// Test set CSV.
        #[arg(long)]
        test: PathBuf,
        /// Test set kind; inferred from the file name when omitted.
        #[arg(long)]
        kind: Option<DatasetKind>,
        /// Encode with the AP directory of this training set instead of the
        /// one stored in the checkpoint.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Latency across AP and position counts.
    Bench,
    /// Generate, train all predictors, evaluate every protocol, benchmark.
    Repro {
        #[arg(long)]
        quick: bool,
    },
}

impl Cli {
    /// Defaults, then the config file, then `--quick`, then flags.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Command::Repro { quick: true } = self.command {
            cfg = cfg.quick();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------- output

fn plain() -> bool {
    std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) || !std::io::stderr().is_terminal()
}

/// Progress line on stderr.
pub fn note(msg: &str) {
    if plain() {
        eprintln!("wifiloc: {msg}");
    } else {
        eprintln!("\x1b[1;36mwifiloc\x1b[0m: {msg}");
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- commands

pub struct Generated {
    pub environment: Environment,
    pub datasets: Vec<Dataset>,
}

/// Builds the environment and the train, known, unknown and trajectory sets.
pub fn generate_all(cfg: &ExperimentConfig) -> Result<Generated> {
    let environment = generate_environment(&cfg.environment_spec()?, cfg.seed)?;
    let datasets = DatasetKind::ALL
        .iter()
        .map(|&kind| {
            let scans = match kind {
                DatasetKind::Train => cfg.data.train_scans,
                DatasetKind::TestKnown => cfg.data.known_scans,
                DatasetKind::TestUnknown => cfg.data.unknown_scans,
                DatasetKind::TestTrajectory => 1,
            };
            generate_dataset(
                &environment,
                &cfg.radio,
                kind,
                scans,
                cfg.dataset_seed(kind),
            )
        })
        .collect::<Result<_>>()?;
    Ok(Generated {
        environment,
        datasets,
    })
}

/// Writes `environment.json` and one CSV per dataset into `dir`.
pub fn cmd_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let g = generate_all(cfg)?;
    let env_path = dir.join(ENVIRONMENT_FILE);
    g.environment.save(&env_path)?;
    let mut written = vec![env_path];
    for ds in &g.datasets {
        let p = dir.join(dataset_file(ds.kind()));
        serialize_dataset(ds, &p)?;
        written.push(p);
    }
    Ok(written)
}

pub fn loss_csv(report: Option<&TrainReport>) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in report
        .map(|r| r.epoch_loss.as_slice())
        .unwrap_or(&[])
        .iter()
        .enumerate()
    {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    out
}

/// Trains `cfg.model` on `<data>/train.csv`; writes `<model>.ckpt` and
/// `<model>.loss.csv` (header only for models without iterative training).
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path) -> Result<Vec<PathBuf>> {
    let train = parse_dataset(
        data.join(dataset_file(DatasetKind::Train)),
        DatasetKind::Train,
    )?;
    ensure_dir(&cfg.out)?;
    note(&format!("training {} on {} scans", cfg.model, train.len()));
    let (model, report) = Trained::fit(cfg.model, &train, &cfg.seeded_models())?;
    let ck = cfg.out.join(checkpoint_file(cfg.model));
    model.save(&ck)?;
    let loss = cfg.out.join(loss_file(cfg.model));
    write_file(&loss, &loss_csv(report.as_ref()))?;
    Ok(vec![ck, loss])
}

pub enum EvalSubject {
    Checkpoint(PathBuf),
    Oracle,
}

fn infer_kind(path: &Path) -> DatasetKind {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(DatasetKind::TestKnown)
}

/// AP order of any dataset, for the oracle which never looks at pixels.
fn directory_of(ds: &Dataset) -> Result<ApDirectory> {
    let mut order: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in ds.samples().iter().flat_map(|s| &s.readings) {
        if seen.insert(r.ap.clone()) {
            order.push(r.ap.clone());
        }
    }
    ApDirectory::from_order(order)
}

/// Evaluates a checkpoint or the oracle on `test`; writes the report files
/// under `<out>/<predictor>-<kind>`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    subject: &EvalSubject,
    test: &Path,
    kind: Option<DatasetKind>,
    train: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let kind = kind.unwrap_or_else(|| infer_kind(test));
    let test_ds = parse_dataset(test, kind)?;
    let override_dir = train
        .map(|p| parse_dataset(p, DatasetKind::Train).and_then(|t| build_directory(&t)))
        .transpose()?;
    let (model, dir): (Box<dyn Localizer>, ApDirectory) = match subject {
        EvalSubject::Checkpoint(p) => {
            let m = Trained::load(p)?;
            let dir = match override_dir {
                Some(d) => d,
                None => m
                    .directory()
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint("checkpoint has no AP directory".into()))?,
            };
            (Box::new(m), dir)
        }
        EvalSubject::Oracle => {
            let dir = match override_dir {
                Some(d) => d,
                None => directory_of(&test_ds)?,
            };
            (Box::new(TruthOracle::new(dir.side())), dir)
        }
    };
    ensure_dir(&cfg.out)?;
    let evaluation = evaluate(model.as_ref(), &test_ds, &dir)?;
    let files = report_to_files(
        &evaluation,
        cfg.out.join(format!("{}-{kind}", model.name())),
    )?;
    Ok(vec![files.metrics_json, files.errors_csv, files.box_csv])
}

/// Runs `f` on a single worker so timings are not skewed by contention.
fn single_threaded<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(f)
}

pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let mut bench = cfg.bench.clone();
    bench.seed = cfg.seed;
    bench.radio = cfg.radio.clone();
    let rows = single_threaded(|| scaling_benchmark(&bench))?;
    let p = cfg.out.join(BENCH_FILE);
    write_file(&p, &bench_csv(&rows))?;
    Ok(vec![p])
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per (predictor, protocol) plus the published reference.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.predictor,
            r.dataset,
            r.n_samples,
            opt(r.accuracy),
            r.rmse_m,
            r.mean_err_m,
            r.p50_m,
            r.p75_m
        );
    }
    let _ = writeln!(
        out,
        "{REFERENCE_LABEL},{},,{},,{},,",
        DatasetKind::TestKnown,
        opt(Some(REFERENCE_ACCURACY)),
        opt(Some(REFERENCE_ERROR_M)),
    );
    out
}

pub fn timing_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("predictor,protocol,mean_latency_s,p95_latency_s\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.predictor, r.dataset, r.latency.mean_s, r.latency.p95_s
        );
    }
    out
}

/// The whole pipeline. `summary.csv` depends only on the config; wall-clock
/// figures go to `timing.csv` and `bench.csv`.
pub fn cmd_repro(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let data_dir = cfg.out.join("data");
    let model_dir = cfg.out.join("models");
    let report_dir = cfg.out.join("reports");
    for d in [&data_dir, &model_dir, &report_dir] {
        ensure_dir(d)?;
    }
    note("generating datasets");
    let mut written = cmd_generate(cfg, &data_dir)?;
    let sets: Vec<Dataset> = PROTOCOLS
        .iter()
        .map(|&k| parse_dataset(data_dir.join(dataset_file(k)), k))
        .collect::<Result<_>>()?;
    let model_cfg = ExperimentConfig {
        out: model_dir.clone(),
        ..cfg.clone()
    };
    let mut reports = Vec::new();
    for kind in PredictorKind::ALL {
        written.extend(cmd_train(
            &ExperimentConfig {
                model: kind,
                ..model_cfg.clone()
            },
            &data_dir,
        )?);
        let model = Trained::load(model_dir.join(checkpoint_file(kind)))?;
        let dir = model
            .directory()
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no AP directory".into()))?;
        for ds in &sets {
            note(&format!("evaluating {kind} on {}", ds.kind()));
            let ev = evaluate(&model, ds, &dir)?;
            let files = report_to_files(&ev, report_dir.join(format!("{kind}-{}", ds.kind())))?;
            written.extend([files.metrics_json, files.errors_csv, files.box_csv]);
            reports.push(ev.report);
        }
    }
    let summary = cfg.out.join(SUMMARY_FILE);
    write_file(&summary, &summary_csv(&reports))?;
    let timing = cfg.out.join(TIMING_FILE);
    write_file(&timing, &timing_csv(&reports))?;
    written.extend([summary, timing]);
    note("benchmarking");
    written.extend(cmd_bench(cfg)?);
    Ok(written)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.experiment()?;
    let go = || match &cli.command {
        Command::Generate => cmd_generate(&cfg, &cfg.out),
        Command::Train { data } => cmd_train(&cfg, data.as_deref().unwrap_or(&cfg.out)),
        Command::Eval {
            checkpoint,
            oracle,
            test,
            kind,
            train,
        } => {
            let subject = match (checkpoint, oracle) {
                (Some(p), false) => EvalSubject::Checkpoint(p.clone()),
                _ => EvalSubject::Oracle,
            };
            cmd_eval(&cfg, &subject, test, *kind, train.as_deref())
        }
        Command::Bench => cmd_bench(&cfg),
        Command::Repro { .. } => cmd_repro(&cfg),
    };
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Entry point of the binary. Success prints a JSON line listing the files
/// written; failure prints a JSON error line on stderr and exits non-zero.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let command = match cli.command {
        Command::Generate => "generate",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Bench => "bench",
        Command::Repro { .. } => "repro",
    };
    match run(&cli) {
        Ok(files) => {
            let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            println!(
                "{}",
                serde_json::json!({ "command": command, "outputs": files })
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli =
            Cli::try_parse_from(["wifiloc", "train", "--seed", "7", "--model", "knn"]).unwrap();
        let cfg = cli.experiment().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model, PredictorKind::Knn);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        assert!(ExperimentConfig::from_toml("sead = 3").is_err());
        assert!(ExperimentConfig::from_toml("model = \"cnn\"").is_err());
        let cfg = ExperimentConfig::from_toml("seed = 3\n[models.train]\nepochs = 4").unwrap();
        assert_eq!((cfg.seed, cfg.models.train.epochs), (3, 4));
    }

    #[test]
    fn missing_environment_file_fails_validation() {
        let cfg = ExperimentConfig {
            environment: Some(PathBuf::from("/nonexistent/env.toml")),
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Io { .. })));
    }

    #[test]
    fn kind_from_file_name() {
        assert_eq!(
            infer_kind(Path::new("a/test-unknown.csv")),
            DatasetKind::TestUnknown
        );
        assert_eq!(infer_kind(Path::new("scans.csv")), DatasetKind::TestKnown);
    }

    #[test]
    fn summary_has_reference_row() {
        let s = summary_csv(&[]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert!(lines[1].starts_with("reference,test-known,,0.918900,"));
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
