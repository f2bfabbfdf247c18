//! Command-line front end: `toy`, `train`, `analyze`, `sweep`, `gen-data`.
//!
//! Exit codes: 0 on success, 2 for usage, config and input-data problems,
//! 3 when a run fails while computing or its outputs cannot be written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{collapse_report, AnalysisInput, AnalysisOptions, CollapseReport};
use crate::data::{self, FieldSchema};
use crate::engine::{read_checkpoint, write_checkpoint};
use crate::error::Error;
use crate::experiment::{parse_config, run_experiment, DataSourceKind, ExperimentConfig, Outcome};
use crate::fsutil::{read_to_string, write_atomic, write_json};
use crate::models::ModelSpec;
use crate::train::{median, run_toy_with, IaSnapshot, RunRecord, ToyConfig, ToyRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "COLLAPSE_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "collapse-lab",
    version,
    about = "Embedding-collapse diagnostics for multi-field recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Three-field FM toy: IA of the first field's table under full-batch SGD.
    Toy(ToyArgs),
    /// Train and analyze one model from a JSON config.
    Train(TrainArgs),
    /// Collapse report for a saved checkpoint.
    Analyze(AnalyzeArgs),
    /// Cartesian sweep over config values and seeds.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Cardinalities of the third field, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_positive)]
    d3: Vec<usize>,
    #[arg(long, default_value_t = 5000, value_parser = parse_positive)]
    steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 10, value_parser = parse_positive)]
    embedding_size: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Path to a checkpoint `manifest.json`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Field schema JSON, as written by `train` or `gen-data`.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Leave the `i == j` cells out of grid row and column sums.
    #[arg(long)]
    exclude_diagonal: bool,
    #[arg(long, default_value_t = 2)]
    se_split_sets: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key=v1,v2,...`; keys are dotted config paths or one of the aliases
    /// `K`, `M`, `fraction`, `unitary_reg_weight`. Repeatable.
    #[arg(long = "vary", required = true)]
    vary: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GenSource {
    Toy,
    TwoPattern,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Take the generator settings from a config's `data` section.
    #[arg(long, conflicts_with_all = ["source", "d3", "seed", "cardinalities", "rows", "hidden_dim", "noise"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two-pattern")]
    source: GenSource,
    #[arg(long, value_parser = parse_positive)]
    d3: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    cardinalities: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_positive)]
    rows: Option<usize>,
    #[arg(long, value_parser = parse_positive)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_input_error() {
            EXIT_USAGE
        } else {
            EXIT_RUNTIME
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Failures while writing results are runtime failures even though the
/// underlying error is an i/o one.
fn emit<T>(r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::runtime(e.to_string()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let pool = thread_pool()?;
    pool.install(|| match cli.command {
        Command::Toy(a) => cmd_toy(a),
        Command::Train(a) => cmd_train(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenData(a) => cmd_gen_data(a),
    })
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n =
            parse_positive(&v).map_err(|e| CliError::usage(format!("{THREADS_ENV}={v:?}: {e}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::runtime(format!("cannot start worker pool: {e}")))
}

// ---------------------------------------------------------------- toy

#[derive(Serialize)]
struct ToyRunSummary {
    d3: usize,
    seed: u64,
    initial_ia: f64,
    final_ia: f64,
    trajectory: Vec<(u64, f64)>,
}

fn cmd_toy(a: ToyArgs) -> CliResult<()> {
    if a.seeds.is_empty() {
        return Err(CliError::usage("--seeds must list at least one seed"));
    }
    if !(a.lr >= 0.0 && a.lr.is_finite()) {
        return Err(CliError::usage("--lr must be finite and >= 0"));
    }
    let jobs: Vec<ToyConfig> =
        a.d3.iter()
            .flat_map(|&d3| {
                a.seeds.iter().map(move |&seed| ToyConfig {
                    d3,
                    steps: a.steps,
                    seed,
                    lr: a.lr,
                    embedding_size: a.embedding_size,
                })
            })
            .collect();
    let runs: Vec<ToyRun> = jobs
        .par_iter()
        .map(run_toy_with)
        .collect::<crate::Result<_>>()?;

    let mut csv = String::from("d3,seed,step,field,ia\n");
    for r in &runs {
        for (step, ia) in &r.trajectory {
            let _ = writeln!(csv, "{},{},{step},0,{ia}", r.config.d3, r.config.seed);
        }
    }

    let mut median_final = BTreeMap::new();
    let mut median_initial = BTreeMap::new();
    for &d3 in &a.d3 {
        let of = |f: fn(&ToyRun) -> f64| {
            median(
                &runs
                    .iter()
                    .filter(|r| r.config.d3 == d3)
                    .map(f)
                    .collect::<Vec<_>>(),
            )
        };
        median_final.insert(d3.to_string(), of(ToyRun::final_ia));
        median_initial.insert(d3.to_string(), of(ToyRun::initial_ia));
    }
    let lo = *a.d3.iter().min().expect("clap requires d3");
    let hi = *a.d3.iter().max().expect("clap requires d3");
    let comparison = (lo != hi).then(|| {
        json!({
            "low_d3": lo,
            "high_d3": hi,
            "low_below_high": median_final[&lo.to_string()] < median_final[&hi.to_string()],
        })
    });
    let summary = json!({
        "config": {
            "d3": a.d3,
            "steps": a.steps,
            "seeds": a.seeds,
            "lr": a.lr,
            "embedding_size": a.embedding_size,
        },
        "median_initial_ia": median_initial,
        "median_final_ia": median_final,
        "comparison": comparison,
        "runs": runs.iter().map(|r| ToyRunSummary {
            d3: r.config.d3,
            seed: r.config.seed,
            initial_ia: r.initial_ia(),
            final_ia: r.final_ia(),
            trajectory: r.trajectory.clone(),
        }).collect::<Vec<_>>(),
    });
    emit(write_atomic(a.out.join("toy_trajectories.csv"), csv))?;
    emit(write_json(a.out.join("toy_summary.json"), &summary))?;
    println!("{}", a.out.join("toy_summary.json").display());
    Ok(())
}

// ---------------------------------------------------------------- train

fn load_config(path: &Path) -> CliResult<(ExperimentConfig, PathBuf)> {
    let text = read_to_string(path)?;
    let cfg = parse_config(&text, &path.display().to_string())?;
    cfg.validate()?;
    Ok((cfg, config_dir(path)))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(out: Option<PathBuf>, cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    out.unwrap_or_else(|| base.join(&cfg.output_dir))
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let (cfg, base) = load_config(&a.config)?;
    let out = resolve_out(a.out, &cfg, &base);
    let outcome = run_experiment(&cfg, &base)?;
    write_run(&out, &cfg, &outcome)?;
    println!("{}", out.join("collapse_report.json").display());
    Ok(())
}

/// Everything `train` writes for one run.
fn write_run(out: &Path, cfg: &ExperimentConfig, o: &Outcome) -> CliResult<()> {
    emit(write_json(out.join("config.json"), cfg))?;
    emit(write_json(out.join("run_record.json"), &o.record))?;
    emit(write_json(
        out.join("collapse_report.json"),
        &report_document(&o.report, &o.record.ia_trajectory)?,
    ))?;
    write_report_csvs(out, &o.report)?;
    emit(write_atomic(
        out.join("ia_trajectory.csv"),
        trajectory_csv(&o.record.ia_trajectory),
    ))?;
    let mut epochs = String::from("epoch,train_loss,val_auc\n");
    for e in &o.record.epochs {
        let _ = writeln!(epochs, "{},{},{}", e.epoch, e.train_loss, e.val_auc);
    }
    emit(write_atomic(out.join("epochs.csv"), epochs))?;
    let ckpt = out.join("checkpoint");
    emit(write_checkpoint(
        &ckpt,
        &o.model.checkpoint_entries()?,
        o.record.steps,
    ))?;
    emit(write_json(ckpt.join("model.json"), o.model.spec()))?;
    emit(write_json(
        out.join("schema.json"),
        o.model.layout().schema(),
    ))?;
    Ok(())
}

fn trajectory_csv(t: &[IaSnapshot]) -> String {
    let mut csv = String::from("step,set,field,ia\n");
    for s in t {
        let _ = writeln!(csv, "{},{},{},{}", s.step, s.set, s.field, s.ia);
    }
    csv
}

/// The report plus flat, plot-oriented keys: per-set grids and sums, mean
/// correlations, per-field diversity matrices and the IA trajectory.
pub fn report_document(report: &CollapseReport, trajectory: &[IaSnapshot]) -> crate::Result<Value> {
    let mut doc = serde_json::to_value(report)?;
    let obj = doc.as_object_mut().expect("report serializes to an object");
    let per_set = |f: fn(&crate::analysis::SetGrid) -> Value| {
        Value::Array(report.grids.iter().map(f).collect())
    };
    obj.insert("ia_grid".into(), per_set(|g| json!(g.values)));
    obj.insert("row_sums".into(), per_set(|g| json!(g.row_sums)));
    obj.insert("col_sums".into(), per_set(|g| json!(g.col_sums)));
    obj.insert("row_corr".into(), json!(report.mean_row_corr));
    obj.insert("col_corr".into(), json!(report.mean_col_corr));
    obj.insert(
        "diversity_matrix".into(),
        Value::Array(report.diversity.iter().map(|d| json!(d.matrix)).collect()),
    );
    obj.insert("ia_trajectory".into(), serde_json::to_value(trajectory)?);
    Ok(doc)
}

fn write_report_csvs(out: &Path, r: &CollapseReport) -> CliResult<()> {
    let mut ia = String::from("field,set,ia\n");
    for (i, v) in r.ia_per_field.iter().enumerate() {
        let _ = writeln!(ia, "{i},concat,{v}");
    }
    for (m, set) in r.ia_per_set.iter().enumerate() {
        for (i, v) in set.iter().enumerate() {
            let _ = writeln!(ia, "{i},{m},{v}");
        }
    }
    emit(write_atomic(out.join("ia_per_field.csv"), ia))?;

    if !r.grids.is_empty() {
        let mut grid = String::from("set,i,j,ia,block_norm\n");
        let mut sums = String::from("set,rank,field,field_ia,row_sum,col_sum\n");
        let mut corr = String::from("set,row_corr,col_corr\n");
        for g in &r.grids {
            for (i, row) in g.values.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let norm = g
                        .block_norms
                        .as_ref()
                        .map(|b| b[i][j].to_string())
                        .unwrap_or_default();
                    let _ = writeln!(grid, "{},{i},{j},{v},{norm}", g.set);
                }
            }
            for (rank, &f) in g.field_order.iter().enumerate() {
                let (rs, cs) = (g.row_sums.get(rank), g.col_sums.get(rank));
                let fmt = |x: Option<&f64>| x.map(f64::to_string).unwrap_or_default();
                let _ = writeln!(
                    sums,
                    "{},{rank},{f},{},{},{}",
                    g.set,
                    g.field_ia[f],
                    fmt(rs),
                    fmt(cs)
                );
            }
            let _ = writeln!(corr, "{},{},{}", g.set, g.row_corr, g.col_corr);
        }
        emit(write_atomic(out.join("ia_grid.csv"), grid))?;
        emit(write_atomic(out.join("grid_summary.csv"), sums))?;
        emit(write_atomic(out.join("grid_corr.csv"), corr))?;
    }

    let mut div = String::from("field,kind,a,b,diversity\n");
    for d in &r.diversity {
        let kind = serde_json::to_value(&d.kind).expect("enum serializes");
        let kind = kind.as_str().unwrap_or_default();
        for (a, row) in d.matrix.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let _ = writeln!(div, "{},{kind},{a},{b},{v}", d.field);
            }
        }
    }
    emit(write_atomic(out.join("diversity.csv"), div))?;
    Ok(())
}

// ---------------------------------------------------------------- analyze

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let schema: FieldSchema = serde_json::from_str(&read_to_string(&a.schema)?)
        .map_err(|e| Error::Data(format!("{}: {e}", a.schema.display())))?;
    let slots = read_checkpoint(&a.checkpoint)?;
    let spec_path = config_dir(&a.checkpoint).join("model.json");
    let spec: Option<ModelSpec> = if spec_path.exists() {
        Some(
            serde_json::from_str(&read_to_string(&spec_path)?)
                .map_err(|e| Error::Data(format!("{}: {e}", spec_path.display())))?,
        )
    } else {
        None
    };
    let opts = AnalysisOptions {
        include_diagonal: !a.exclude_diagonal,
        se_split_sets: a.se_split_sets,
    };
    let input =
        AnalysisInput::from_checkpoint(&slots, &schema, spec.as_ref().map(|s| s.interaction))?;
    let mut report = collapse_report(&input, &opts)?;
    report.config = json!({
        "checkpoint": a.checkpoint,
        "schema": schema,
        "model": spec,
        "analysis": opts,
    });
    emit(write_json(
        a.out.join("collapse_report.json"),
        &report_document(&report, &[])?,
    ))?;
    write_report_csvs(&a.out, &report)?;
    println!("{}", a.out.join("collapse_report.json").display());
    Ok(())
}

// ---------------------------------------------------------------- sweep

fn alias(key: &str) -> &str {
    match key {
        "K" => "model.embedding_size",
        "M" => "model.num_sets",
        "fraction" => "data.fraction",
        "unitary_reg_weight" => "model.unitary_reg_weight",
        other => other,
    }
}

/// A parsed `--vary` flag: a config path and the values it takes.
#[derive(Clone, Debug)]
struct Axis {
    key: String,
    values: Vec<Value>,
}

fn lookup<'a>(doc: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(doc, |v, part| v.get(part))
}

fn lookup_mut<'a>(doc: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(doc, |v, part| v.get_mut(part))
}

/// Parses one raw value so that it has the same JSON type as the value it
/// replaces.
fn typed_value(key: &str, current: &Value, raw: &str) -> CliResult<Value> {
    let bad = |what: &str| CliError::usage(format!("--vary {key}: {raw:?} is not {what}"));
    Ok(match current {
        Value::Number(n) if n.is_u64() => json!(raw
            .parse::<u64>()
            .map_err(|_| bad("a non-negative integer"))?),
        Value::Number(n) if n.is_i64() => {
            json!(raw.parse::<i64>().map_err(|_| bad("an integer"))?)
        }
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad("a number"))?;
            if !v.is_finite() {
                return Err(bad("a finite number"));
            }
            json!(v)
        }
        Value::Bool(_) => json!(raw.parse::<bool>().map_err(|_| bad("true or false"))?),
        Value::String(_) => json!(raw),
        Value::Null => serde_json::from_str(raw).unwrap_or_else(|_| json!(raw)),
        Value::Array(_) | Value::Object(_) => {
            return Err(CliError::usage(format!(
                "--vary {key}: only scalar keys can be varied"
            )))
        }
    })
}

fn parse_axis(spec: &str, base: &Value) -> CliResult<Axis> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--vary {spec:?}: expected key=v1,v2,...")))?;
    let key = alias(key.trim()).to_string();
    let current = lookup(base, &key)
        .ok_or_else(|| CliError::usage(format!("--vary: unknown config key {key:?}")))?;
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|raw| typed_value(&key, current, raw))
        .collect::<CliResult<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::usage(format!("--vary {key}: no values given")));
    }
    Ok(Axis { key, values })
}

#[derive(Serialize)]
struct SweepRun {
    seed: u64,
    dir: String,
    test_auc: Option<f64>,
    mean_ia: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepCell {
    cell: usize,
    values: BTreeMap<String, Value>,
    median_test_auc: f64,
    median_mean_ia: f64,
    runs: Vec<SweepRun>,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    if a.seeds.is_empty() {
        return Err(CliError::usage("--seeds must list at least one seed"));
    }
    let (cfg, base) = load_config(&a.config)?;
    let out = resolve_out(a.out, &cfg, &base);
    let base_doc = cfg.to_json();
    let axes = a
        .vary
        .iter()
        .map(|s| parse_axis(s, &base_doc))
        .collect::<CliResult<Vec<_>>>()?;

    // cartesian product in row-major order of the --vary flags
    let mut cells: Vec<Vec<Value>> = vec![Vec::new()];
    for axis in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }

    let mut jobs = Vec::new();
    for (ci, values) in cells.iter().enumerate() {
        let mut doc = base_doc.clone();
        for (axis, v) in axes.iter().zip(values) {
            *lookup_mut(&mut doc, &axis.key).expect("key checked") = v.clone();
        }
        for &seed in &a.seeds {
            let mut run_doc = doc.clone();
            run_doc["train"]["seed"] = json!(seed);
            let run_cfg: ExperimentConfig = serde_json::from_value(run_doc)
                .map_err(|e| CliError::usage(format!("cell {ci}: {e}")))?;
            run_cfg
                .validate()
                .map_err(|e| CliError::usage(format!("cell {ci}: {e}")))?;
            jobs.push((ci, seed, run_cfg));
        }
    }

    let results: Vec<CliResult<SweepRun>> = jobs
        .par_iter()
        .map(|(ci, seed, run_cfg)| {
            let dir = PathBuf::from("cells")
                .join(format!("cell{ci}"))
                .join(format!("seed{seed}"));
            match run_experiment(run_cfg, &base) {
                Ok(o) => {
                    write_run(&out.join(&dir), run_cfg, &o)?;
                    Ok(SweepRun {
                        seed: *seed,
                        dir: dir.display().to_string(),
                        test_auc: Some(o.record.test_auc),
                        mean_ia: Some(o.report.mean_ia_per_field()),
                        error: None,
                    })
                }
                Err(e) if e.is_input_error() => Err(e.into()),
                Err(e) => Ok(SweepRun {
                    seed: *seed,
                    dir: dir.display().to_string(),
                    test_auc: None,
                    mean_ia: None,
                    error: Some(e.to_string()),
                }),
            }
        })
        .collect();
    let mut runs = results
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?
        .into_iter();

    let mut summary = Vec::with_capacity(cells.len());
    for (ci, values) in cells.iter().enumerate() {
        let cell_runs: Vec<SweepRun> = runs.by_ref().take(a.seeds.len()).collect();
        let aucs: Vec<f64> = cell_runs.iter().filter_map(|r| r.test_auc).collect();
        let ias: Vec<f64> = cell_runs.iter().filter_map(|r| r.mean_ia).collect();
        summary.push(SweepCell {
            cell: ci,
            values: axes
                .iter()
                .map(|ax| ax.key.clone())
                .zip(values.iter().cloned())
                .collect(),
            median_test_auc: median(&aucs),
            median_mean_ia: median(&ias),
            runs: cell_runs,
        });
    }

    let mut csv = String::from("cell");
    for ax in &axes {
        let _ = write!(csv, ",{}", ax.key);
    }
    csv.push_str(",n_runs,n_failed,median_test_auc,median_mean_ia\n");
    for (cell, values) in summary.iter().zip(&cells) {
        let _ = write!(csv, "{}", cell.cell);
        for v in values {
            let _ = write!(csv, ",{}", value_label(v));
        }
        let failed = cell.runs.iter().filter(|r| r.error.is_some()).count();
        let _ = writeln!(
            csv,
            ",{},{failed},{},{}",
            cell.runs.len(),
            cell.median_test_auc,
            cell.median_mean_ia
        );
    }
    let doc = json!({
        "config": base_doc,
        "vary": axes.iter().map(|ax| json!({"key": ax.key, "values": ax.values})).collect::<Vec<_>>(),
        "seeds": a.seeds,
        "cells": summary,
    });
    emit(write_atomic(out.join("summary.csv"), csv))?;
    emit(write_json(out.join("summary.json"), &doc))?;

    let failures: Vec<String> = summary
        .iter()
        .flat_map(|c| {
            c.runs.iter().filter_map(move |r| {
                r.error
                    .as_ref()
                    .map(|e| format!("cell {} seed {}: {e}", c.cell, r.seed))
            })
        })
        .collect();
    if !failures.is_empty() {
        return Err(CliError::runtime(format!(
            "{} of {} runs failed; first: {}",
            failures.len(),
            jobs.len(),
            failures[0]
        )));
    }
    println!("{}", out.join("summary.csv").display());
    Ok(())
}

// ---------------------------------------------------------------- gen-data

fn cmd_gen_data(a: GenDataArgs) -> CliResult<()> {
    let data_cfg = match &a.config {
        Some(path) => load_config(path)?.0.data,
        None => {
            let mut d = crate::experiment::DataConfig {
                source: match a.source {
                    GenSource::Toy => DataSourceKind::Toy,
                    GenSource::TwoPattern => DataSourceKind::TwoPattern,
                },
                ..Default::default()
            };
            if let Some(v) = a.d3 {
                d.d3 = v;
            }
            if let Some(v) = a.seed {
                d.seed = v;
            }
            if let Some(v) = a.cardinalities.clone() {
                d.cardinalities = v;
            }
            let p = &mut d.pattern;
            if let Some(v) = a.rows {
                p.n_rows = v;
            }
            if let Some(v) = a.hidden_dim {
                p.hidden_dim = v;
            }
            if let Some(v) = a.noise {
                p.noise = v;
            }
            d
        }
    };
    let (ds, truth) = match data_cfg.source {
        DataSourceKind::Toy => (data::gen_toy(data_cfg.d3, data_cfg.seed)?, None),
        DataSourceKind::TwoPattern => {
            let schema = FieldSchema::from_cardinalities(&data_cfg.cardinalities)?;
            let tp = data::gen_two_pattern(&schema, &data_cfg.pattern, data_cfg.seed)?;
            (tp.dataset.clone(), Some(tp))
        }
        DataSourceKind::Csv => {
            return Err(CliError::usage(
                "gen-data only generates toy or two_pattern data",
            ))
        }
    };
    emit(write_atomic(a.out.join("data.csv"), ds.to_csv_string()))?;
    emit(write_json(a.out.join("schema.json"), &ds.schema))?;
    let mut generator = json!({
        "data": data_cfg,
        "provenance": ds.provenance,
        "rows": ds.len(),
        "positives": ds.rows.iter().filter(|r| r.label == 1).count(),
    });
    if let Some(tp) = &truth {
        generator["pairs"] = json!(tp.pairs);
        for (p, bank) in tp.banks.iter().enumerate() {
            for (i, m) in bank.iter().enumerate() {
                emit(write_atomic(
                    a.out.join("truth").join(format!("bank{p}_field{i}.txt")),
                    m.to_text(),
                ))?;
            }
        }
    }
    emit(write_json(a.out.join("generator.json"), &generator))?;
    println!("{}", a.out.join("data.csv").display());
    Ok(())
}

/// Drops the wall-clock entry from a run record so two records of the same
/// run compare equal.
pub fn strip_wall_clock(mut record: Value) -> Value {
    if let Some(obj) = record.as_object_mut() {
        obj.remove(RunRecord::WALL_CLOCK_KEY);
    }
    record
}
