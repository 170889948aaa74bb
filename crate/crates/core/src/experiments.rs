//! Canned experiment drivers shared by the command line and the test suite.

use serde::{Deserialize, Serialize};

use crate::aggregation::Aggregator;
use crate::diagnostics::{growth_slope, prune_eval, smoothed_acc, AccuracyTrace, PruneEvalRow, SlopeResult};
use crate::error::{Error, Result};
use crate::sim::{prepare, run, MetricsLog, SimConfig, SimOutcome};

/// Mean and std of the last `window` accuracy evaluations of a run.
pub fn final_accuracy(log: &MetricsLog, window: usize) -> Result<(f64, f64)> {
    let trace = log.accuracy_trace()?;
    let n = trace.len();
    let half = window / 2;
    if n < window {
        return Err(Error::InsufficientSamples(format!("{n} evaluations, need {window}")));
    }
    smoothed_acc(&trace, trace.samples()[n - 1 - half].0, window)
}

#[derive(Debug, Clone)]
pub struct FeasibilityRun {
    pub density: f64,
    pub trace: AccuracyTrace,
}

/// Trains with every client pinned at each density in turn (no
/// restoration) and returns the accuracy traces.
pub fn feasibility(base: &SimConfig, densities: &[f64]) -> Result<Vec<FeasibilityRun>> {
    densities
        .iter()
        .map(|&rho| {
            let cfg = SimConfig {
                gmr: false,
                initial_density: Some(vec![rho; base.n_clients]),
                ..base.clone()
            };
            Ok(FeasibilityRun {
                density: rho,
                trace: run(&cfg)?.metrics.accuracy_trace()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub density: f64,
    pub lo: f64,
    pub hi: f64,
    pub result: SlopeResult,
}

pub fn feasibility_slopes(runs: &[FeasibilityRun], intervals: &[(f64, f64)]) -> Result<Vec<SlopeRow>> {
    let mut rows = Vec::new();
    for r in runs {
        for &(lo, hi) in intervals {
            rows.push(SlopeRow {
                density: r.density,
                lo,
                hi,
                result: growth_slope(&r.trace, lo, hi)?,
            });
        }
    }
    Ok(rows)
}

/// Configuration variants for component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The configuration as given.
    Full,
    /// Densities pinned at the bandwidth presets.
    NoGmr,
    /// Restoration from the presets, no stage-1 equalisation.
    NoStage1,
    NoIms,
    NoBuffer,
    /// Gradient-average aggregation behind a barrier.
    Ga,
    /// Zero-padded FedAvg behind a barrier.
    Fa,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Full,
        Ablation::NoGmr,
        Ablation::NoStage1,
        Ablation::NoIms,
        Ablation::NoBuffer,
        Ablation::Ga,
        Ablation::Fa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGmr => "no-gmr",
            Ablation::NoStage1 => "no-stage1",
            Ablation::NoIms => "no-ims",
            Ablation::NoBuffer => "no-buffer",
            Ablation::Ga => "ga",
            Ablation::Fa => "fa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation preset `{s}`")))
    }

    pub fn apply(self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoGmr => {
                c.gmr = false;
                c.initial_density = None;
            }
            Ablation::NoStage1 => {
                c.gmr = true;
                c.stage.max_stage1_rounds = 0;
            }
            Ablation::NoIms => c.ims = false,
            Ablation::NoBuffer => c.buffer = false,
            Ablation::Ga => c.aggregator = Aggregator::Ga,
            Ablation::Fa => c.aggregator = Aggregator::Fa,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub seed: u64,
    pub final_acc: f64,
    pub final_std: f64,
    pub bytes_down: u64,
    pub final_time: f64,
}

pub fn ablation_row(preset: Ablation, seed: u64, outcome: &SimOutcome, window: usize) -> Result<AblationRow> {
    let (final_acc, final_std) = final_accuracy(&outcome.metrics, window)?;
    let last = outcome
        .metrics
        .last()
        .ok_or_else(|| Error::InsufficientSamples("run produced no ticks".into()))?;
    Ok(AblationRow {
        preset: preset.name().to_string(),
        seed,
        final_acc,
        final_std,
        bytes_down: last.bytes_down_cum,
        final_time: last.time_s,
    })
}

pub fn ablate(base: &SimConfig, presets: &[Ablation], seeds: &[u64], window: usize) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &p in presets {
            let cfg = SimConfig { seed, ..p.apply(base) };
            rows.push(ablation_row(p, seed, &run(&cfg)?, window)?);
        }
    }
    Ok(rows)
}

/// Trains with `cfg`, then prunes the final global model to each density.
pub fn train_and_prune(cfg: &SimConfig, densities: &[f64]) -> Result<(SimOutcome, Vec<PruneEvalRow>)> {
    let outcome = run(cfg)?;
    let val = prepare(cfg)?.val;
    let rows = prune_eval(
        &outcome.final_model,
        &outcome.spec,
        &outcome.importance,
        densities,
        &val,
    )?;
    Ok((outcome, rows))
}
