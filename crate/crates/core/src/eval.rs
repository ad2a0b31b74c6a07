//! Accuracy, localisation-error statistics, latency and scaling benchmarks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetKind};
use crate::encoder::{encode_sample, ApDirectory, FingerprintImage};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, PredictorKind, Trained};
use crate::predictor::Localizer;
use crate::synth::{generate_dataset, generate_environment, EnvironmentSpec, Layout, RadioModel};

pub const SCHEMA_VERSION: u32 = 1;
/// One localisation per WiFi scan at up to 4 Hz.
pub const REAL_TIME_BOUND_S: f64 = 0.250;
pub const WARMUP_CALLS: usize = 100;
pub const TIMING_BATCHES: usize = 10;

/// Published figures for the CNN on known positions, for side-by-side
/// display only.
pub const REFERENCE_LABEL: &str = "reference";
pub const REFERENCE_ACCURACY: f64 = 0.9189;
pub const REFERENCE_ERROR_M: f64 = 0.28;

/// Linear-interpolation percentile of `values` (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Config(format!("percentile {q} is outside [0, 100]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("percentile of NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, q))
}

fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Values beyond 1.5 interquartile ranges from the box.
    pub outliers: Vec<f64>,
}

pub fn box_summary(values: &[f64]) -> Result<BoxSummary> {
    let q1 = percentile(values, 25.0)?;
    let q3 = percentile(values, 75.0)?;
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(BoxSummary {
        min: percentile(values, 0.0)?,
        q1,
        median: percentile(values, 50.0)?,
        q3,
        max: percentile(values, 100.0)?,
        outliers: values
            .iter()
            .copied()
            .filter(|&v| v < lo || v > hi)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_s: f64,
    pub p95_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub predictor: String,
    pub dataset: DatasetKind,
    pub n_samples: usize,
    /// Fraction of scans assigned to their true position; absent when the
    /// test scans carry no position labels.
    pub accuracy: Option<f64>,
    pub rmse_m: f64,
    pub mean_err_m: f64,
    pub p50_m: f64,
    pub p75_m: f64,
    #[serde(rename = "box")]
    pub box_plot: BoxSummary,
    pub latency: LatencySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_idx: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub pred_x: f64,
    pub pred_y: f64,
    pub error_m: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub samples: Vec<SampleResult>,
}

/// Summary statistics over per-sample results.
pub fn summarize(
    predictor: &str,
    dataset: DatasetKind,
    samples: &[SampleResult],
    accuracy: Option<f64>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let errors: Vec<f64> = samples.iter().map(|s| s.error_m).collect();
    let n = errors.len() as f64;
    let mean_err_m = errors.iter().sum::<f64>() / n;
    let rmse_m = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    // the two can disagree in the last bit when every error is equal
    let rmse_m = rmse_m.max(mean_err_m);
    let lat: Vec<f64> = samples.iter().map(|s| s.latency_s).collect();
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        predictor: predictor.to_string(),
        dataset,
        n_samples: samples.len(),
        accuracy,
        rmse_m,
        mean_err_m,
        p50_m: percentile(&errors, 50.0)?,
        p75_m: percentile(&errors, 75.0)?,
        box_plot: box_summary(&errors)?,
        latency: LatencySummary {
            mean_s: lat.iter().sum::<f64>() / n,
            p95_s: percentile(&lat, 95.0)?,
        },
    })
}

/// Localises every test scan one at a time, timing each call (encoding
/// included) after a warm-up.
pub fn evaluate<L: Localizer + ?Sized>(
    model: &L,
    test: &Dataset,
    dir: &ApDirectory,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dir.side() != model.side() {
        return Err(Error::SideMismatch {
            expected: model.side(),
            got: dir.side(),
        });
    }
    let scans = test.samples();
    for i in 0..WARMUP_CALLS {
        let s = &scans[i % scans.len()];
        model.locate(&encode_sample(s, dir), s)?;
    }
    let mut out = Vec::with_capacity(scans.len());
    let mut hits = 0usize;
    let labelled = scans.iter().all(|s| s.position_id.is_some());
    for (i, s) in scans.iter().enumerate() {
        let truth = s
            .location
            .ok_or_else(|| Error::InvalidDataset(format!("scan {i} has no ground truth")))?;
        let t = Instant::now();
        let est = model.locate(&encode_sample(s, dir), s)?;
        let latency_s = t.elapsed().as_secs_f64();
        if s.position_id == Some(est.position_id) {
            hits += 1;
        }
        out.push(SampleResult {
            sample_idx: i,
            true_x: truth.x,
            true_y: truth.y,
            pred_x: est.location.x,
            pred_y: est.location.y,
            error_m: truth.distance(&est.location),
            latency_s,
        });
    }
    let accuracy = labelled.then(|| hits as f64 / scans.len() as f64);
    let report = summarize(model.name(), test.kind(), &out, accuracy)?;
    debug_assert!(report.mean_err_m <= report.rmse_m);
    Ok(Evaluation {
        report,
        samples: out,
    })
}

/// Paths written by [`report_to_files`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics_json: PathBuf,
    pub errors_csv: PathBuf,
    pub box_csv: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub const ERRORS_CSV_HEADER: &str = "sample_idx,true_x,true_y,pred_x,pred_y,error_m,latency_s";

pub fn errors_csv(samples: &[SampleResult]) -> String {
    let mut out = String::from(ERRORS_CSV_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.sample_idx, s.true_x, s.true_y, s.pred_x, s.pred_y, s.error_m, s.latency_s
        );
    }
    out
}

pub fn box_csv(b: &BoxSummary) -> String {
    let outliers: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
    format!(
        "min,q1,median,q3,max,n_outliers,outliers\n{},{},{},{},{},{},{}\n",
        b.min,
        b.q1,
        b.median,
        b.q3,
        b.max,
        b.outliers.len(),
        outliers.join(";")
    )
}

/// Writes `<prefix>.metrics.json`, `<prefix>.errors.csv` and
/// `<prefix>.box.csv`.
pub fn report_to_files(eval: &Evaluation, prefix: impl AsRef<Path>) -> Result<ReportFiles> {
    if eval.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prefix = prefix.as_ref();
    let files = ReportFiles {
        metrics_json: with_suffix(prefix, ".metrics.json"),
        errors_csv: with_suffix(prefix, ".errors.csv"),
        box_csv: with_suffix(prefix, ".box.csv"),
    };
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    write(
        &files.metrics_json,
        serde_json::to_string_pretty(&eval.report)?,
    )?;
    write(&files.errors_csv, errors_csv(&eval.samples))?;
    write(&files.box_csv, box_csv(&eval.report.box_plot))?;
    Ok(files)
}

// ---------------------------------------------------------------- latency

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Median over batches of the mean per-call time.
    pub median_of_means_s: f64,
    pub mean_s: f64,
    pub p95_s: f64,
    pub calls: usize,
}

/// Times `calls` single-scan localisations (at least one per batch),
/// cycling over `scans`, after [`WARMUP_CALLS`] discarded calls.
pub fn measure_latency<L: Localizer + ?Sized>(
    model: &L,
    scans: &Dataset,
    dir: &ApDirectory,
    calls: usize,
) -> Result<LatencyStats> {
    if scans.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = scans.samples();
    for i in 0..WARMUP_CALLS {
        model.locate(&encode_sample(&s[i % s.len()], dir), &s[i % s.len()])?;
    }
    let per_batch = calls.div_ceil(TIMING_BATCHES).max(1);
    let mut times = Vec::with_capacity(per_batch * TIMING_BATCHES);
    let mut batch_means = Vec::with_capacity(TIMING_BATCHES);
    let mut k = 0;
    for _ in 0..TIMING_BATCHES {
        let mut sum = 0.0;
        for _ in 0..per_batch {
            let scan = &s[k % s.len()];
            k += 1;
            let t = Instant::now();
            let img: FingerprintImage = encode_sample(scan, dir);
            model.locate(&img, scan)?;
            let dt = t.elapsed().as_secs_f64();
            sum += dt;
            times.push(dt);
        }
        batch_means.push(sum / per_batch as f64);
    }
    Ok(LatencyStats {
        median_of_means_s: percentile(&batch_means, 50.0)?,
        mean_s: times.iter().sum::<f64>() / times.len() as f64,
        p95_s: percentile(&times, 95.0)?,
        calls: times.len(),
    })
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub predictors: Vec<PredictorKind>,
    pub ap_counts: Vec<usize>,
    pub position_counts: Vec<usize>,
    pub scans_per_point: usize,
    /// Timed predictions per cell.
    pub predictions: usize,
    pub seed: u64,
    pub radio: RadioModel,
    pub models: ModelConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut models = ModelConfig::default();
        models.train.epochs = 1;
        BenchConfig {
            predictors: PredictorKind::ALL.to_vec(),
            ap_counts: vec![113, 1024],
            position_counts: vec![30, 94],
            scans_per_point: 10,
            predictions: 1000,
            seed: 0,
            radio: RadioModel::default(),
            models,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub predictor: PredictorKind,
    pub n_ap: usize,
    pub n_pos: usize,
    pub n_train: usize,
    pub latency_s: f64,
    pub p95_s: f64,
    pub real_time: bool,
}

/// Environment spec for a benchmark cell: the default loop layout with
/// bounds grown until the loop fits.
pub fn bench_spec(n_ap: usize, n_pos: usize) -> EnvironmentSpec {
    let base = EnvironmentSpec::default();
    let (min, mean) = match base.layout {
        Layout::Loop {
            min_spacing_m,
            mean_spacing_m,
        } => (min_spacing_m, mean_spacing_m),
        Layout::Grid { .. } => unreachable!("default layout is a loop"),
    };
    // longest possible loop: every gap at its upper bound
    let max_gap = min + 3.0 * (mean - min);
    let side = (n_pos as f64 * max_gap / 4.0 + 4.0)
        .max(base.width_m)
        .ceil();
    EnvironmentSpec {
        width_m: side,
        height_m: side,
        n_aps: n_ap,
        n_positions: n_pos,
        n_unknown: 0,
        ..base
    }
}

/// One benchmark cell per (predictor, AP count, position count), sorted by
/// that key.
pub fn scaling_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.predictors.is_empty() || cfg.ap_counts.is_empty() || cfg.position_counts.is_empty() {
        return Err(Error::Config("benchmark grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &n_ap in &cfg.ap_counts {
        for &n_pos in &cfg.position_counts {
            let env = generate_environment(&bench_spec(n_ap, n_pos), cfg.seed)?;
            let train = generate_dataset(
                &env,
                &cfg.radio,
                DatasetKind::Train,
                cfg.scans_per_point,
                cfg.seed.wrapping_add(1),
            )?;
            let test = generate_dataset(
                &env,
                &cfg.radio,
                DatasetKind::TestKnown,
                2,
                cfg.seed.wrapping_add(2),
            )?;
            for &kind in &cfg.predictors {
                let (model, _) = Trained::fit(kind, &train, &cfg.models)?;
                let dir = model
                    .directory()
                    .expect("fitted models carry a directory")
                    .clone();
                let lat = measure_latency(&model, &test, &dir, cfg.predictions)?;
                rows.push(BenchRow {
                    predictor: kind,
                    n_ap,
                    n_pos,
                    n_train: train.len(),
                    latency_s: lat.median_of_means_s,
                    p95_s: lat.p95_s,
                    real_time: lat.median_of_means_s < REAL_TIME_BOUND_S,
                });
            }
        }
    }
    rows.sort_by_key(|r| (r.predictor, r.n_ap, r.n_pos));
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("predictor,n_ap,n_pos,n_train,latency_s,p95_s,real_time_250ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.predictor, r.n_ap, r.n_pos, r.n_train, r.latency_s, r.p95_s, r.real_time
        );
    }
    out
}

/// KNN latency as the training set grows, at a fixed environment.
pub fn knn_size_scaling(
    spec: &EnvironmentSpec,
    radio: &RadioModel,
    scans_per_point: &[usize],
    predictions: usize,
    seed: u64,
) -> Result<Vec<(usize, LatencyStats)>> {
    let env = generate_environment(spec, seed)?;
    let test = generate_dataset(&env, radio, DatasetKind::TestKnown, 2, seed.wrapping_add(2))?;
    let cfg = ModelConfig::default();
    scans_per_point
        .iter()
        .map(|&k| {
            let train = generate_dataset(&env, radio, DatasetKind::Train, k, seed.wrapping_add(1))?;
            let (model, _) = Trained::fit(PredictorKind::Knn, &train, &cfg)?;
            let dir = model.directory().expect("fitted").clone();
            Ok((
                train.len(),
                measure_latency(&model, &test, &dir, predictions)?,
            ))
        })
        .collect()
}
