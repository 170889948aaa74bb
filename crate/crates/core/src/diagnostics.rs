//! Post-run analysis: accuracy at a time budget, relative improvement over
//! baselines, accuracy growth slopes and post-hoc pruning sweeps.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, ModelSpec, ParamVector};
use crate::pruning::{ImportanceOrdering, ImportanceVector};

/// `(time_s, accuracy)` samples with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTrace {
    samples: Vec<(f64, f64)>,
}

impl AccuracyTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("trace times must be strictly increasing".into()));
        }
        if samples.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
            return Err(Error::Config("trace contains non-finite samples".into()));
        }
        Ok(AccuracyTrace { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.0)
    }

    /// Index of the sample closest to `t` (earlier one on ties).
    fn nearest(&self, t: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &(ti, _)) in self.samples.iter().enumerate() {
            let d = (ti - t).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Mean and population standard deviation of `window` evaluations centred on
/// the sample nearest to `t_star`.
pub fn smoothed_acc(trace: &AccuracyTrace, t_star: f64, window: usize) -> Result<(f64, f64)> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("window must be odd and ≥ 1, got {window}")));
    }
    let half = window / 2;
    let range_msg = || match (trace.samples.first(), trace.samples.last()) {
        (Some(a), Some(b)) => format!("{} samples over [{}, {}] s", trace.len(), a.0, b.0),
        _ => "no samples".to_string(),
    };
    let center = trace
        .nearest(t_star)
        .ok_or_else(|| Error::InsufficientSamples(format!("need {window} samples, have {}", range_msg())))?;
    if center < half || center + half >= trace.len() {
        return Err(Error::InsufficientSamples(format!(
            "need {half} samples on each side of t*={t_star}, have {}",
            range_msg()
        )));
    }
    let vals: Vec<f64> = trace.samples[center - half..=center + half]
        .iter()
        .map(|s| s.1)
        .collect();
    let mean = vals.iter().sum::<f64>() / window as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
    Ok((mean, var.sqrt()))
}

/// Mean relative improvement of `method_acc` over `baselines`.
pub fn mri(method_acc: f64, baselines: &[f64]) -> Result<f64> {
    if baselines.is_empty() {
        return Err(Error::Config("at least one baseline is required".into()));
    }
    if let Some(b) = baselines.iter().find(|&&b| b.is_nan() || b <= 0.0) {
        return Err(Error::Config(format!("baseline accuracy must be > 0, got {b}")));
    }
    Ok(baselines.iter().map(|b| (method_acc - b) / b).sum::<f64>() / baselines.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MriReport {
    pub method: String,
    pub method_acc: f64,
    pub baselines: Vec<(String, f64)>,
    pub mri: f64,
}

impl MriReport {
    pub fn new(method: impl Into<String>, method_acc: f64, baselines: Vec<(String, f64)>) -> Result<Self> {
        let accs: Vec<f64> = baselines.iter().map(|(_, a)| *a).collect();
        Ok(MriReport {
            method: method.into(),
            method_acc,
            mri: mri(method_acc, &accs)?,
            baselines,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SlopeResult {
    Reached { slope: f64, t_lo: f64, t_hi: f64 },
    Unreached,
}

impl SlopeResult {
    pub fn slope(&self) -> Option<f64> {
        match self {
            SlopeResult::Reached { slope, .. } => Some(*slope),
            SlopeResult::Unreached => None,
        }
    }
}

/// First time the trace reaches `level`, interpolating linearly between the
/// two samples that bracket the crossing.
pub fn first_crossing(trace: &AccuracyTrace, level: f64) -> Option<f64> {
    let s = trace.samples();
    let first = s.first()?;
    if first.1 >= level {
        return Some(first.0);
    }
    s.windows(2).find_map(|w| {
        let ((t0, a0), (t1, a1)) = (w[0], w[1]);
        (a1 >= level).then(|| t0 + (level - a0) / (a1 - a0) * (t1 - t0))
    })
}

/// Accuracy gained per second between first reaching `lo` and first
/// reaching `hi`.
pub fn growth_slope(trace: &AccuracyTrace, lo: f64, hi: f64) -> Result<SlopeResult> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::Config(format!("interval ({lo}, {hi}) is empty")));
    }
    let (Some(t_lo), Some(t_hi)) = (first_crossing(trace, lo), first_crossing(trace, hi)) else {
        return Ok(SlopeResult::Unreached);
    };
    if t_hi <= t_lo {
        // Both levels crossed inside one sample step at the very start.
        return Ok(SlopeResult::Unreached);
    }
    Ok(SlopeResult::Reached {
        slope: (hi - lo) / (t_hi - t_lo),
        t_lo,
        t_hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneEvalRow {
    pub density: f64,
    pub retained: usize,
    pub accuracy: f64,
}

/// Accuracy of `model` pruned to each density using one shared ordering of
/// `scores`.
pub fn prune_eval(
    model: &ParamVector,
    spec: &ModelSpec,
    scores: &ImportanceVector,
    densities: &[f64],
    val: &Dataset,
) -> Result<Vec<PruneEvalRow>> {
    model.check_len(scores.len(), "importance scores")?;
    let ordering = ImportanceOrdering::from_scores(scores, 0);
    densities
        .iter()
        .map(|&rho| {
            let mask = ordering.mask_for(rho)?;
            let (_, accuracy) = evaluate(&model.masked(&mask)?, spec, val)?;
            Ok(PruneEvalRow {
                density: rho,
                retained: mask.count_ones(),
                accuracy,
            })
        })
        .collect()
}
