use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use priu::bench::ingest::{ingest, write_csv, write_libsvm, DataFormat, IngestOptions};
use priu::bench::inject::{inject_errors, pick_rows, DEFAULT_ERROR_FACTOR};
use priu::bench::render::report_render;
use priu::bench::sweep::{run_sweep, ExperimentConfig};
use priu::capture::{default_t_s, load_cache, save_cache, train_and_capture, CacheMode, CaptureOptions};
use priu::engine::{Engine, Method};
use priu::linearizer::InterpolationTable;
use priu::model::{build_schedule, DeletionRequest, Hyperparams, ModelKind, StorageKind, TrainingDataset};
use priu::service::{serve, Session};
use priu::trainer::{default_eta, train, TrainOptions};
use priu::{Error, Result};

#[derive(Parser)]
#[command(name = "priu", version, about = "Incremental model updates under training-sample deletion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its parameters as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write the provenance cache.
    Capture {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
        #[arg(long, default_value = "dense-full", value_parser = parse_mode)]
        mode: CacheMode,
        /// Relative spectral threshold for dense-svd.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Freeze linearisation at this iteration (logistic models).
        #[arg(long, conflicts_with = "early_stop")]
        t_s: Option<usize>,
        /// Freeze at 70% of the iterations.
        #[arg(long)]
        early_stop: bool,
        #[arg(long, default_value_t = 1_000_000)]
        segments: u32,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trained parameters.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Remove samples and update the trained model.
    Update {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "priu")]
        method: Method,
        /// File of row indices, or a rate in (0, 1) for a seeded random subset.
        #[arg(long)]
        remove: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescale a random subset of rows and write the dirty dataset.
    InjectErrors {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = DEFAULT_ERROR_FACTOR)]
        factor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the dirtied row indices, one per line.
        #[arg(long)]
        indices: Option<PathBuf>,
    },
    /// Run a deletion-rate sweep from a TOML or JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a sweep report into an SVG plot and a markdown table.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the what-if HTTP API over a dataset and cache.
    Serve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        cache: PathBuf,
        /// Evaluate accuracy / MSE here instead of on the training rows.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PRIU_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the file extension (.csv or LIBSVM otherwise).
    #[arg(long, value_parser = parse_format)]
    format: Option<DataFormat>,
    /// linear, binary or multinomial:<classes>
    #[arg(long)]
    kind: ModelKind,
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn options_for(&self, path: &Path) -> IngestOptions {
        IngestOptions {
            format: self.format.unwrap_or_else(|| DataFormat::from_path(path)),
            kind: self.kind,
            label_column: self.label_column,
            has_header: self.header,
            features: self.features,
            standardize: self.standardize,
        }
    }

    fn load(&self) -> Result<TrainingDataset> {
        ingest(&self.data, &self.options_for(&self.data))
    }
}

#[derive(Args, Clone)]
struct HpArgs {
    /// Defaults to 0.9 / L from a Lipschitz estimate.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HpArgs {
    fn resolve(&self, ds: &TrainingDataset) -> Result<Hyperparams> {
        let hp = Hyperparams {
            eta: match self.eta {
                Some(e) => e,
                None => default_eta(ds, self.lambda)?,
            },
            lambda: self.lambda,
            batch_size: self.batch,
            iterations: self.iterations,
            seed: self.seed,
            model_kind: ds.kind(),
        };
        hp.validate(ds.n())?;
        Ok(hp)
    }
}

fn parse_format(s: &str) -> std::result::Result<DataFormat, String> {
    match s {
        "csv" => Ok(DataFormat::Csv),
        "libsvm" => Ok(DataFormat::Libsvm),
        _ => Err(format!("unknown format {s:?} (csv or libsvm)")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<CacheMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown cache mode {s:?} (dense-full, dense-svd, sparse-linearized)"))
}

#[derive(Serialize)]
struct ModelFile<'a> {
    hp: &'a Hyperparams,
    w: &'a [f64],
    final_objective: Option<f64>,
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Indices from a file (whitespace or comma separated), or a seeded random
/// subset when the argument is a rate.
fn removal(spec: &str, n: usize, seed: u64) -> Result<DeletionRequest> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Ok(rate) = spec.parse::<f64>() {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Config(format!("removal rate {rate} must lie in (0, 1)")));
            }
            return DeletionRequest::new(pick_rows(n, rate, seed), n, format!("rate {rate}"));
        }
    }
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    for (k, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            ids.push(tok.parse::<u32>().map_err(|_| Error::Parse {
                line: k + 1,
                msg: format!("bad row index {tok:?}"),
            })?);
        }
    }
    DeletionRequest::new(ids, n, spec.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, hp, out } => {
            let ds = data.load()?;
            let hp = hp.resolve(&ds)?;
            let schedule = build_schedule(ds.n(), &hp)?;
            let run = train(&ds, &hp, &schedule, &TrainOptions::default())?;
            write_json(
                Some(&out),
                &ModelFile {
                    hp: &hp,
                    w: &run.final_params.w,
                    final_objective: run.objective_trace.last().copied(),
                },
            )
        }
        Command::Capture {
            data,
            hp,
            mode,
            epsilon,
            t_s,
            early_stop,
            segments,
            out,
            model_out,
        } => {
            let ds = data.load()?;
            let hp = hp.resolve(&ds)?;
            if mode == CacheMode::SparseLinearized && ds.storage_kind() != StorageKind::Sparse {
                return Err(Error::Config("sparse-linearized needs LIBSVM input".into()));
            }
            let schedule = build_schedule(ds.n(), &hp)?;
            let opts = CaptureOptions {
                mode,
                epsilon,
                t_s: if early_stop { Some(default_t_s(hp.iterations)) } else { t_s },
                table: InterpolationTable::new(InterpolationTable::default().a_bound(), segments)?,
            };
            let (run, cache) = train_and_capture(&ds, &hp, &schedule, &TrainOptions::default(), &opts)?;
            save_cache(&cache, &out)?;
            if let Some(p) = model_out {
                write_json(
                    Some(&p),
                    &ModelFile {
                        hp: &hp,
                        w: &run.final_params.w,
                        final_objective: run.objective_trace.last().copied(),
                    },
                )?;
            }
            Ok(())
        }
        Command::Update {
            data,
            cache,
            method,
            remove,
            seed,
            out,
        } => {
            let ds = data.load()?;
            let cache = load_cache(&cache)?;
            let engine = Engine::new(ds, cache)?;
            let request = removal(&remove, engine.ds.n(), seed)?;
            let (w, report) = engine.run(method, &request)?;
            #[derive(Serialize)]
            struct Out<'a> {
                w: &'a [f64],
                report: priu::update::UpdateReport,
            }
            write_json(out.as_deref(), &Out { w: &w.w, report })
        }
        Command::InjectErrors {
            data,
            rate,
            factor,
            seed,
            out,
            indices,
        } => {
            let ds = data.load()?;
            let (dirty, rows) = inject_errors(&ds, rate, factor, seed)?;
            let file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            match DataFormat::from_path(&out) {
                DataFormat::Csv => write_csv(&dirty, file)?,
                DataFormat::Libsvm => write_libsvm(&dirty, file)?,
            }
            let list: String = rows.iter().map(|r| format!("{r}\n")).collect();
            match indices {
                Some(p) => std::fs::write(p, list)?,
                None => print!("{list}"),
            }
            Ok(())
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let records = run_sweep(&cfg)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{} records written to {} ({} with errors)",
                records.len(),
                cfg.output.display(),
                failed
            );
            Ok(())
        }
        Command::Render { report, out } => {
            for p in report_render(&report, &out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Serve {
            data,
            cache,
            validation,
            host,
            port,
            cors_origin,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Error::Config(format!("invalid address {host}:{port}")))?;
            let load = move || -> Result<Session> {
                let ds = data.load()?;
                let val = match &validation {
                    Some(p) => Some(ingest(p, &data.options_for(p))?),
                    None => None,
                };
                Session::new(Engine::new(ds, load_cache(&cache)?)?, val)
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, cors_origin, load))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
