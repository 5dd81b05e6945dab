//! Deletion-rate sweeps and the repeated-removal scenario.
//!
//! Each rate is one cell: dirty a copy of the training split at that rate,
//! train and capture on it, then remove the dirtied rows with every selected
//! method and compare against retraining. Cells are independent and carry
//! their own seeds, so running them in parallel changes only the timings.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ingest::{ingest, IngestOptions};
use super::inject::{inject_errors, pick_rows, DEFAULT_ERROR_FACTOR};
use super::synth::{generate, split, SynthSpec};
use crate::capture::{cache_stats, default_t_s, train_and_capture, CacheMode, CaptureOptions};
use crate::engine::{Engine, Method};
use crate::error::{Error, Result};
use crate::linearizer::InterpolationTable;
use crate::metrics::{cosine_sim, l2_dist, mse, validation_accuracy};
use crate::model::{build_schedule, DeletionRequest, Hyperparams, ModelKind, StorageKind, TrainingDataset};
use crate::trainer::{default_eta, TrainOptions};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    File {
        path: PathBuf,
        #[serde(flatten)]
        options: IngestOptions,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<TrainingDataset> {
        match self {
            DatasetSource::Synthetic(spec) => generate(spec),
            DatasetSource::File { path, options } => ingest(path, options),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpConfig {
    /// `None` picks `0.9 / L` from the Lipschitz estimate.
    pub eta: Option<f64>,
    pub lambda: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for HpConfig {
    fn default() -> Self {
        HpConfig {
            eta: None,
            lambda: 0.01,
            batch_size: 100,
            iterations: 200,
            seed: 0,
        }
    }
}

impl HpConfig {
    pub fn resolve(&self, ds: &TrainingDataset) -> Result<Hyperparams> {
        let eta = match self.eta {
            Some(e) => e,
            None => default_eta(ds, self.lambda)?,
        };
        let hp = Hyperparams {
            eta,
            lambda: self.lambda,
            batch_size: self.batch_size,
            iterations: self.iterations,
            seed: self.seed,
            model_kind: ds.kind(),
        };
        hp.validate(ds.n())?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    /// `None`: sparse-linearized for sparse data, dense-full otherwise.
    pub mode: Option<CacheMode>,
    pub epsilon: f64,
    /// Early-stop iteration for the logistic opt path; `None` uses 70% of τ.
    pub t_s: Option<usize>,
    pub segments: u32,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            mode: None,
            epsilon: 0.01,
            t_s: None,
            segments: InterpolationTable::default().segments(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// One cell per deletion rate.
    Rates,
    /// Train once, then remove `repeat` different subsets of `repeat_rate`.
    Repeated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split: f64,
    pub split_seed: u64,
    pub hp: HpConfig,
    pub scenario: Scenario,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub error_factor: f64,
    pub inject_seed: u64,
    pub repeat: usize,
    pub repeat_rate: f64,
    pub cache: CacheConfig,
    /// JSON-lines report; the CSV summary goes next to it.
    pub output: PathBuf,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SynthSpec::default()),
            split: 0.9,
            split_seed: 0,
            hp: HpConfig::default(),
            scenario: Scenario::Rates,
            rates: vec![0.0001, 0.001, 0.01, 0.1, 0.2],
            methods: vec![Method::Priu, Method::PriuOpt, Method::Basel, Method::ClosedForm, Method::Infl],
            error_factor: DEFAULT_ERROR_FACTOR,
            inject_seed: 0,
            repeat: 10,
            repeat_rate: 0.001,
            cache: CacheConfig::default(),
            output: PathBuf::from("report.jsonl"),
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML or JSON by extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::config(format!("split {} must lie in (0, 1)", self.split)));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::config(format!("deletion rate {r} must lie in (0, 1)")));
        }
        if !(self.repeat_rate > 0.0 && self.repeat_rate < 1.0) {
            return Err(Error::config("repeat_rate must lie in (0, 1)"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.with_extension("csv")
    }
}

/// One (cell, method) line of the report. Missing values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub schema: u32,
    pub scenario: String,
    pub rate: f64,
    pub repeat_index: Option<usize>,
    pub method: String,
    pub removed: usize,
    pub n: usize,
    pub m: usize,
    pub semantics: Option<String>,
    pub update_ms: Option<f64>,
    pub prepare_ms: Option<f64>,
    /// Offline train-and-capture time, excluded from `update_ms`.
    pub capture_ms: Option<f64>,
    pub cache_bytes: Option<usize>,
    pub l2_to_basel: Option<f64>,
    pub cosine_to_basel: Option<f64>,
    pub mse: Option<f64>,
    pub accuracy: Option<f64>,
    /// Resident set size after the update; approximate.
    pub rss_kb_approx: Option<u64>,
    pub error: Option<String>,
}

impl SweepRecord {
    fn blank(scenario: &str, rate: f64, method: Method, ds: &TrainingDataset) -> Self {
        SweepRecord {
            schema: REPORT_SCHEMA,
            scenario: scenario.into(),
            rate,
            repeat_index: None,
            method: method.name().into(),
            removed: 0,
            n: ds.n(),
            m: ds.m(),
            semantics: None,
            update_ms: None,
            prepare_ms: None,
            capture_ms: None,
            cache_bytes: None,
            l2_to_basel: None,
            cosine_to_basel: None,
            mse: None,
            accuracy: None,
            rss_kb_approx: None,
            error: None,
        }
    }
}

/// Resident set size from `/proc/self/statm`, assuming 4 KiB pages.
pub fn rss_kb() -> Option<u64> {
    let s = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = s.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4)
}

fn capture_options(cfg: &ExperimentConfig, ds: &TrainingDataset, hp: &Hyperparams) -> Result<CaptureOptions> {
    let mode = cfg.cache.mode.unwrap_or(match ds.storage_kind() {
        StorageKind::Sparse => CacheMode::SparseLinearized,
        StorageKind::Dense => CacheMode::DenseFull,
    });
    let wants_opt = cfg.methods.contains(&Method::PriuOpt) && ds.kind().is_logistic() && mode != CacheMode::SparseLinearized;
    Ok(CaptureOptions {
        mode,
        epsilon: cfg.cache.epsilon,
        t_s: if wants_opt {
            Some(cfg.cache.t_s.unwrap_or_else(|| default_t_s(hp.iterations)))
        } else {
            None
        },
        table: InterpolationTable::new(InterpolationTable::default().a_bound(), cfg.cache.segments)?,
    })
}

struct Cell {
    engine: Engine,
    capture_ms: f64,
    cache_bytes: usize,
}

fn prepare_cell(cfg: &ExperimentConfig, train: &TrainingDataset) -> Result<Cell> {
    let hp = cfg.hp.resolve(train)?;
    let schedule = build_schedule(train.n(), &hp)?;
    let opts = capture_options(cfg, train, &hp)?;
    let start = Instant::now();
    let (_, cache) = train_and_capture(train, &hp, &schedule, &TrainOptions::default(), &opts)?;
    let capture_ms = start.elapsed().as_secs_f64() * 1e3;
    let cache_bytes = cache_stats(&cache).total_bytes;
    Ok(Cell {
        engine: Engine::new(train.clone(), cache)?,
        capture_ms,
        cache_bytes,
    })
}

fn quality(kind: ModelKind, val: &TrainingDataset, w: &[f64], rec: &mut SweepRecord) {
    if kind == ModelKind::Linear {
        rec.mse = mse(val, w).ok();
    } else {
        rec.accuracy = validation_accuracy(val, w).ok();
    }
}

/// Runs every selected method on one removal and returns one record each.
fn run_methods(
    cfg: &ExperimentConfig,
    cell: &Cell,
    val: &TrainingDataset,
    request: &DeletionRequest,
    scenario: &str,
    rate: f64,
    repeat_index: Option<usize>,
) -> Vec<SweepRecord> {
    let ds = &cell.engine.ds;
    let base = cell.engine.run(Method::Basel, request);
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let mut rec = SweepRecord::blank(scenario, rate, method, ds);
        rec.repeat_index = repeat_index;
        rec.removed = request.len();
        rec.capture_ms = Some(cell.capture_ms);
        rec.cache_bytes = Some(cell.cache_bytes);
        let result = if method == Method::Basel {
            base.as_ref().map(|r| r.clone()).map_err(|e| Error::numeric(e.to_string()))
        } else {
            cell.engine.run(method, request)
        };
        match result {
            Ok((w, report)) => {
                rec.semantics = Some(report.semantics.clone());
                rec.update_ms = Some(report.update_ms);
                rec.prepare_ms = Some(report.prepare_ms);
                if let Ok((wb, _)) = &base {
                    rec.l2_to_basel = l2_dist(&w.w, &wb.w).ok();
                    rec.cosine_to_basel = cosine_sim(&w.w, &wb.w).ok();
                }
                quality(ds.kind(), val, &w.w, &mut rec);
                rec.rss_kb_approx = rss_kb();
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        out.push(rec);
    }
    out
}

fn rate_cell(cfg: &ExperimentConfig, train: &TrainingDataset, val: &TrainingDataset, k: usize, rate: f64) -> Vec<SweepRecord> {
    let seed = cfg.inject_seed.wrapping_add(k as u64);
    let attempt = || -> Result<Vec<SweepRecord>> {
        let (dirty, rows) = inject_errors(train, rate, cfg.error_factor, seed)?;
        let cell = prepare_cell(cfg, &dirty)?;
        let request = DeletionRequest::new(rows, dirty.n(), format!("rate {rate}"))?;
        Ok(run_methods(cfg, &cell, val, &request, "rates", rate, None))
    };
    attempt().unwrap_or_else(|e| {
        cfg.methods
            .iter()
            .map(|&m| {
                let mut r = SweepRecord::blank("rates", rate, m, train);
                r.error = Some(e.to_string());
                r
            })
            .collect()
    })
}

fn repeated(cfg: &ExperimentConfig, train: &TrainingDataset, val: &TrainingDataset) -> Result<Vec<SweepRecord>> {
    let cell = prepare_cell(cfg, train)?;
    let mut out = Vec::new();
    let mut totals = vec![0.0; cfg.methods.len()];
    let mut failed = vec![false; cfg.methods.len()];
    for k in 0..cfg.repeat {
        let rows = pick_rows(train.n(), cfg.repeat_rate, cfg.inject_seed.wrapping_add(k as u64));
        let request = DeletionRequest::new(rows, train.n(), format!("subset {k}"))?;
        let recs = run_methods(cfg, &cell, val, &request, "repeated", cfg.repeat_rate, Some(k));
        for (j, r) in recs.iter().enumerate() {
            match r.update_ms {
                Some(ms) => totals[j] += ms,
                None => failed[j] = true,
            }
        }
        out.extend(recs);
    }
    for (j, &method) in cfg.methods.iter().enumerate() {
        let mut r = SweepRecord::blank("repeated-sum", cfg.repeat_rate, method, train);
        r.removed = out.iter().filter(|x| x.method == method.name()).map(|x| x.removed).sum();
        r.capture_ms = Some(cell.capture_ms);
        r.update_ms = (!failed[j]).then_some(totals[j]);
        out.push(r);
    }
    Ok(out)
}

/// Runs the configured experiment and returns its records in a fixed order
/// (by rate, then by method as listed).
pub fn sweep_records(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let full = cfg.dataset.load()?;
    let (train, val) = split(&full, cfg.split, cfg.split_seed)?;
    match cfg.scenario {
        Scenario::Repeated => repeated(cfg, &train, &val),
        Scenario::Rates if cfg.parallel => {
            let cells: Vec<Vec<SweepRecord>> = std::thread::scope(|s| {
                let handles: Vec<_> = cfg
                    .rates
                    .iter()
                    .enumerate()
                    .map(|(k, &rate)| {
                        let (train, val) = (&train, &val);
                        s.spawn(move || rate_cell(cfg, train, val, k, rate))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sweep cell panicked")).collect()
            });
            Ok(cells.concat())
        }
        Scenario::Rates => Ok(cfg
            .rates
            .iter()
            .enumerate()
            .flat_map(|(k, &rate)| rate_cell(cfg, &train, &val, k, rate))
            .collect()),
    }
}

pub fn write_jsonl<W: Write>(records: &[SweepRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "rate",
        "repeat_index",
        "method",
        "removed",
        "update_ms",
        "l2_to_basel",
        "cosine_to_basel",
        "mse",
        "accuracy",
        "error",
    ])
    .map_err(|e| Error::Io(e.into()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.rate.to_string(),
            r.repeat_index.map(|k| k.to_string()).unwrap_or_default(),
            r.method.clone(),
            r.removed.to_string(),
            opt(r.update_ms),
            opt(r.l2_to_basel),
            opt(r.cosine_to_basel),
            opt(r.mse),
            opt(r.accuracy),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<SweepRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: k + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Runs the sweep and writes the JSON-lines report and CSV summary.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    let records = sweep_records(cfg)?;
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl(&records, std::io::BufWriter::new(std::fs::File::create(&cfg.output)?))?;
    write_summary_csv(&records, std::fs::File::create(cfg.csv_path())?)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ModelKind, methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SynthSpec {
                kind,
                n: 300,
                m: 4,
                ..Default::default()
            }),
            hp: HpConfig {
                batch_size: 30,
                iterations: 40,
                lambda: 0.05,
                ..Default::default()
            },
            rates: vec![0.01, 0.1],
            methods,
            ..Default::default()
        }
    }

    #[test]
    fn basel_only_fills_baseline_columns() {
        let recs = sweep_records(&small(ModelKind::Linear, vec![Method::Basel])).unwrap();
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert_eq!(r.l2_to_basel, Some(0.0));
            assert!(r.mse.is_some() && r.accuracy.is_none() && r.error.is_none());
        }
    }

    #[test]
    fn linear_priu_is_exact() {
        let recs = sweep_records(&small(ModelKind::Linear, vec![Method::Priu, Method::Basel])).unwrap();
        for r in recs.iter().filter(|r| r.method == "priu") {
            assert!(r.l2_to_basel.unwrap() <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn closed_form_on_logistic_is_a_cell_error() {
        let recs = sweep_records(&small(ModelKind::BinaryLogistic, vec![Method::ClosedForm, Method::PriuOpt])).unwrap();
        assert!(recs.iter().filter(|r| r.method == "closed-form").all(|r| r.error.is_some()));
        assert!(recs.iter().filter(|r| r.method == "priu-opt").all(|r| r.error.is_none()));
    }

    #[test]
    fn repeated_sums_timings() {
        let mut cfg = small(ModelKind::BinaryLogistic, vec![Method::Priu, Method::Basel]);
        cfg.scenario = Scenario::Repeated;
        cfg.repeat = 3;
        cfg.repeat_rate = 0.01;
        let recs = sweep_records(&cfg).unwrap();
        assert_eq!(recs.len(), 3 * 2 + 2);
        let sum: f64 = recs.iter().filter(|r| r.scenario == "repeated" && r.method == "priu").map(|r| r.update_ms.unwrap()).sum();
        let agg = recs.iter().find(|r| r.scenario == "repeated-sum" && r.method == "priu").unwrap();
        assert!((agg.update_ms.unwrap() - sum).abs() < 1e-9);
    }

    #[test]
    fn deterministic_apart_from_timings() {
        let mut cfg = small(ModelKind::BinaryLogistic, vec![Method::Priu, Method::Infl]);
        let strip = |mut v: Vec<SweepRecord>| {
            for r in &mut v {
                r.update_ms = None;
                r.prepare_ms = None;
                r.capture_ms = None;
                r.rss_kb_approx = None;
            }
            v
        };
        let a = strip(sweep_records(&cfg).unwrap());
        cfg.parallel = true;
        let b = strip(sweep_records(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn config_round_trips_through_toml_and_jsonl() {
        let cfg = small(ModelKind::Linear, vec![Method::Priu]);
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = toml::from_str("rates = [0.5]\n[dataset]\nsource = \"synthetic\"\nn = 50\n").unwrap();
        assert_eq!(partial.split, 0.9);
        assert!(matches!(partial.dataset, DatasetSource::Synthetic(SynthSpec { n: 50, .. })));
        let recs = sweep_records(&cfg).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), recs);
        let bad = ExperimentConfig {
            rates: vec![1.5],
            ..cfg
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
