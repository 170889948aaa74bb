//! `fedgmr` command-line driver: runs simulations, sweeps and canned
//! experiments, and post-processes their CSV output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fedgmr::checkpoint::Checkpoint;
use fedgmr::diagnostics::{
    growth_slope, prune_eval, smoothed_acc, AccuracyTrace, MriReport, PruneEvalRow, SlopeResult,
};
use fedgmr::experiments::{ablate, feasibility, feasibility_slopes, final_accuracy, train_and_prune, Ablation};
use fedgmr::sim::metrics::load_accuracy_trace;
use fedgmr::sim::{prepare, run, SimConfig, SimOutcome};

#[derive(Parser)]
#[command(
    name = "fedgmr",
    version,
    about = "Semi-asynchronous heterogeneous federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML or JSON config file (`.json` selects JSON).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set bandwidth.model_mb=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SimConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = split_assignment(kv)?;
            cfg = cfg.with_override(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics CSV.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Metrics CSV path; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also save the final global model and its importance scores.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the cartesian product of config axes.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis as `KEY=V1,V2,...`. Repeatable; commas inside brackets are kept.
        #[arg(long = "grid", value_name = "KEY=VALUES", required = true)]
        grid: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
        /// Evaluations averaged for the final accuracy.
        #[arg(long, default_value_t = 11)]
        window: usize,
    },
    /// Train every client at a fixed density and report accuracy growth slopes.
    Feasibility {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.3, 0.5, 1.0])]
        densities: Vec<f64>,
        /// Accuracy interval as `LO:HI`. Repeatable.
        #[arg(long = "interval", value_name = "LO:HI", required = true)]
        intervals: Vec<String>,
        /// Slope CSV path; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Directory for the per-density accuracy traces.
        #[arg(long)]
        traces_dir: Option<PathBuf>,
    },
    /// Compare component ablations over paired seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "full,no-gmr,no-stage1,no-ims,no-buffer,ga,fa"
        )]
        presets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 11)]
        window: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train, then prune the final global model to each density.
    PruneEval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.2, 0.5, 1.0])]
        densities: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Post-process existing runs.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Subcommand)]
enum Analyze {
    /// Mean relative improvement of one method over baselines at a time budget.
    Mri {
        /// Metrics CSVs of the method; their smoothed accuracies are averaged.
        #[arg(long = "run", num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// One metrics CSV per baseline, named by file stem.
        #[arg(long = "baseline", num_args = 1.., required = true)]
        baselines: Vec<PathBuf>,
        /// Time budget; defaults to the latest time at which every trace
        /// still has a full window around it.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, default_value_t = 11)]
        window: usize,
    },
    /// Accuracy growth slope between two accuracy levels.
    Slope {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
    },
    /// Prune a saved model to each density and evaluate it.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        densities: Vec<f64>,
        /// Config that regenerates the validation split of the training run.
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            checkpoint,
        } => {
            let cfg = config.load()?;
            let outcome = run(&cfg)?;
            write_output(out.as_deref(), |w| Ok(outcome.metrics.write_csv(w)?))?;
            if let Some(path) = checkpoint {
                save_checkpoint(&outcome, &path)?;
            }
            report(&outcome);
        }
        Command::Sweep {
            config,
            grid,
            out_dir,
            window,
        } => sweep(&config.load()?, &grid, &out_dir, window)?,
        Command::Feasibility {
            config,
            densities,
            intervals,
            out,
            traces_dir,
        } => {
            let cfg = config.load()?;
            let intervals = intervals
                .iter()
                .map(|s| parse_interval(s))
                .collect::<Result<Vec<_>>>()?;
            let runs = feasibility(&cfg, &densities)?;
            if let Some(dir) = traces_dir {
                fs::create_dir_all(&dir)?;
                for r in &runs {
                    write_trace(&r.trace, &dir.join(format!("rho_{}.csv", r.density)))?;
                }
            }
            let rows = feasibility_slopes(&runs, &intervals)?
                .into_iter()
                .map(|r| SlopeCsv::new(Some(r.density), r.lo, r.hi, r.result))
                .collect::<Vec<_>>();
            write_rows(out.as_deref(), &rows)?;
        }
        Command::Ablate {
            config,
            presets,
            seeds,
            window,
            out,
        } => {
            let cfg = config.load()?;
            let presets = presets
                .iter()
                .map(|p| Ablation::parse(p))
                .collect::<Result<Vec<_>, _>>()?;
            write_rows(out.as_deref(), &ablate(&cfg, &presets, &seeds, window)?)?;
        }
        Command::PruneEval {
            config,
            densities,
            out,
            checkpoint,
        } => {
            let (outcome, rows) = train_and_prune(&config.load()?, &densities)?;
            if let Some(path) = checkpoint {
                save_checkpoint(&outcome, &path)?;
            }
            write_rows(out.as_deref(), &rows)?;
        }
        Command::Analyze(a) => analyze(a)?,
    }
    Ok(())
}

fn analyze(a: Analyze) -> Result<()> {
    match a {
        Analyze::Mri {
            runs,
            baselines,
            time,
            window,
        } => {
            let run_traces = runs.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
            let base_traces = baselines.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
            let t_star = match time {
                Some(t) => t,
                None => run_traces
                    .iter()
                    .chain(&base_traces)
                    .map(|t| latest_full_window(t, window))
                    .fold(f64::INFINITY, f64::min),
            };
            let mut method_acc = 0.0;
            for (trace, path) in run_traces.iter().zip(&runs) {
                method_acc += smoothed_acc(trace, t_star, window)
                    .with_context(|| path.display().to_string())?
                    .0;
            }
            method_acc /= run_traces.len() as f64;
            let mut named = Vec::new();
            for (trace, path) in base_traces.iter().zip(&baselines) {
                let acc = smoothed_acc(trace, t_star, window)
                    .with_context(|| path.display().to_string())?
                    .0;
                named.push((stem(path), acc));
            }
            let method = if runs.len() == 1 {
                stem(&runs[0])
            } else {
                "method".to_string()
            };
            let report = MriReport::new(method, method_acc, named)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Analyze::Slope { run, lo, hi } => {
            let result = growth_slope(&load_trace(&run)?, lo, hi)?;
            write_rows(None, &[SlopeCsv::new(None, lo, hi, result)])?;
        }
        Analyze::Prune {
            checkpoint,
            densities,
            config,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let val = prepare(&config.load()?)?.val;
            let rows: Vec<PruneEvalRow> = prune_eval(&ckpt.params, &ckpt.spec, &ckpt.importance, &densities, &val)?;
            write_rows(out.as_deref(), &rows)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SlopeCsv {
    density: Option<f64>,
    lo: f64,
    hi: f64,
    reached: bool,
    slope: Option<f64>,
    t_lo: Option<f64>,
    t_hi: Option<f64>,
}

impl SlopeCsv {
    fn new(density: Option<f64>, lo: f64, hi: f64, result: SlopeResult) -> Self {
        let (slope, t_lo, t_hi) = match result {
            SlopeResult::Reached { slope, t_lo, t_hi } => (Some(slope), Some(t_lo), Some(t_hi)),
            SlopeResult::Unreached => (None, None, None),
        };
        SlopeCsv {
            density,
            lo,
            hi,
            reached: slope.is_some(),
            slope,
            t_lo,
            t_hi,
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    run: usize,
    settings: String,
    final_acc: f64,
    final_std: f64,
    bytes_down: u64,
    final_time: f64,
}

fn sweep(base: &SimConfig, grid: &[String], out_dir: &Path, window: usize) -> Result<()> {
    let mut axes = Vec::new();
    for g in grid {
        let (key, values) = split_assignment(g)?;
        let values = split_top_level(values);
        if values.is_empty() {
            bail!("grid axis `{key}` has no values");
        }
        axes.push((key.to_string(), values));
    }
    fs::create_dir_all(out_dir)?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut summary = Vec::new();
    for (i, combo) in combos.iter().enumerate() {
        let mut cfg = base.clone();
        for (k, v) in combo {
            cfg = cfg.with_override(k, v)?;
        }
        let settings = combo
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let outcome = run(&cfg).with_context(|| format!("sweep run {i} ({settings})"))?;
        outcome.metrics.save(&out_dir.join(format!("run_{i:03}.csv")))?;
        let (final_acc, final_std) = final_accuracy(&outcome.metrics, window)?;
        let last = outcome.metrics.last().expect("a finished run has at least one tick");
        eprintln!("run {i}: {settings} -> acc {final_acc:.4}");
        summary.push(SweepRow {
            run: i,
            settings,
            final_acc,
            final_std,
            bytes_down: last.bytes_down_cum,
            final_time: last.time_s,
        });
    }
    write_rows(Some(&out_dir.join("summary.csv")), &summary)
}

fn report(outcome: &SimOutcome) {
    if let Some(last) = outcome.metrics.last() {
        eprintln!(
            "{} ticks, {} uploads, t={:.1}s, val acc {:.4}, densities {:?}",
            outcome.ticks, outcome.uploads, last.time_s, last.global_val_acc, last.densities
        );
    }
}

fn save_checkpoint(outcome: &SimOutcome, path: &Path) -> Result<()> {
    Checkpoint::new(
        outcome.spec.clone(),
        outcome.final_model.clone(),
        outcome.importance.clone(),
    )?
    .save(path)
    .with_context(|| format!("writing {}", path.display()))
}

fn load_trace(path: &Path) -> Result<AccuracyTrace> {
    load_accuracy_trace(path).with_context(|| format!("reading {}", path.display()))
}

/// Time of the last sample that has `window / 2` samples after it.
fn latest_full_window(trace: &AccuracyTrace, window: usize) -> f64 {
    let s = trace.samples();
    s.len()
        .checked_sub(1 + window / 2)
        .map_or(f64::NEG_INFINITY, |i| s[i].0)
}

fn write_trace(trace: &AccuracyTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "global_val_acc"])?;
    for (t, a) in trace.samples() {
        w.write_record([t.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut file =
                io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}

fn write_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    write_output(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => bail!("expected KEY=VALUE, got `{s}`"),
    }
}

/// Splits on commas that are not nested inside brackets.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_interval(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(':')
        .with_context(|| format!("expected LO:HI, got `{s}`"))?;
    let (lo, hi): (f64, f64) = (lo.trim().parse()?, hi.trim().parse()?);
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        bail!("interval `{s}` must have LO < HI");
    }
    Ok((lo, hi))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}
