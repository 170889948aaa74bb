//! Two-stage density control.
//!
//! Stage 1 nudges every client's density so that its round time approaches
//! the reference client's: `ρ ← Π[ρ_min,1](ρ · (1 + λ (t_s − t)/t))`.
//! Stage 2 keeps densities on a fixed ladder and advances a client exactly
//! one rung whenever its validation accuracy plateaus (early-stopping check).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Stage1,
    Stage2,
}

/// Sorted, de-duplicated set of admissible Stage-2 densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DensityLadder(Vec<f64>);

impl TryFrom<Vec<f64>> for DensityLadder {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DensityLadder::new(v)
    }
}

impl From<DensityLadder> for Vec<f64> {
    fn from(l: DensityLadder) -> Self {
        l.0
    }
}

impl DensityLadder {
    pub fn new(mut levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("density ladder is empty".into()));
        }
        if let Some(bad) = levels.iter().find(|r| !(r.is_finite() && **r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("ladder level {bad} not in (0, 1]")));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Ok(DensityLadder(levels))
    }

    /// The five-rung ladder `{0.05, 0.1, 0.2, 0.5, 1.0}`.
    pub fn standard() -> Self {
        DensityLadder(vec![0.05, 0.1, 0.2, 0.5, 1.0])
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn contains(&self, rho: f64) -> bool {
        self.0.contains(&rho)
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("non-empty")
    }

    /// Smallest level strictly above `rho`.
    pub fn next_above(&self, rho: f64) -> Option<f64> {
        self.0.iter().copied().find(|&l| l > rho)
    }

    /// Smallest level `≥ rho`, or the top level if `rho` exceeds all.
    pub fn snap_up(&self, rho: f64) -> f64 {
        self.0.iter().copied().find(|&l| l >= rho).unwrap_or_else(|| self.max())
    }

    pub fn position(&self, rho: f64) -> Option<usize> {
        self.0.iter().position(|&l| l == rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVector {
    pub rho: BTreeMap<ClientId, f64>,
    pub stage: Stage,
}

impl DensityVector {
    pub fn new(rho: BTreeMap<ClientId, f64>, stage: Stage) -> Self {
        DensityVector { rho, stage }
    }

    pub fn get(&self, client: ClientId) -> Option<f64> {
        self.rho.get(&client).copied()
    }
}

/// Observed one-round wall times and the reference time `t_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTimeObs {
    pub times: BTreeMap<ClientId, f64>,
    pub reference: f64,
}

impl RoundTimeObs {
    fn validate(&self) -> Result<()> {
        if !(self.reference.is_finite() && self.reference > 0.0) {
            return Err(Error::Config(format!("reference time {} must be > 0", self.reference)));
        }
        if let Some((c, t)) = self.times.iter().find(|(_, t)| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Config(format!("client {c} round time {t} must be > 0")));
        }
        Ok(())
    }
}

/// `½ Σ_i ((t_i − t_s)/t_i)²`.
pub fn time_loss(obs: &RoundTimeObs) -> Result<f64> {
    obs.validate()?;
    Ok(0.5
        * obs
            .times
            .values()
            .map(|&t| {
                let r = (t - obs.reference) / t;
                r * r
            })
            .sum::<f64>())
}

/// One projected descent step for every client present in `obs`; other
/// clients keep their density.
pub fn stage1_update(rho: &DensityVector, obs: &RoundTimeObs, lambda: f64, rho_min: f64) -> Result<DensityVector> {
    if rho.stage != Stage::Stage1 {
        return Err(Error::Protocol("stage-1 update outside stage 1".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    if !(rho_min > 0.0 && rho_min <= 1.0) {
        return Err(Error::Config(format!("rho_min {rho_min} not in (0, 1]")));
    }
    obs.validate()?;
    let mut next = rho.clone();
    for (client, &t) in &obs.times {
        if let Some(r) = next.rho.get_mut(client) {
            let stepped = *r * (1.0 + lambda * (obs.reference - t) / t);
            *r = stepped.clamp(rho_min, 1.0);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsmConfig {
    /// Consecutive non-improving evaluations before a client is saturated.
    pub patience: u32,
    /// Rounds between evaluations.
    pub eval_interval: u64,
    /// Minimum gain that counts as an improvement.
    pub tol: f64,
}

impl Default for EsmConfig {
    fn default() -> Self {
        EsmConfig {
            patience: 5,
            eval_interval: 25,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsmTrack {
    pub best_metric: f64,
    pub evals_since_improve: u32,
}

impl Default for EsmTrack {
    fn default() -> Self {
        EsmTrack {
            best_metric: f64::NEG_INFINITY,
            evals_since_improve: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsmVerdict {
    Continue,
    Saturated,
}

/// Early-stopping state, one track per client.
#[derive(Debug, Clone, PartialEq)]
pub struct EsmState {
    pub config: EsmConfig,
    tracks: BTreeMap<ClientId, EsmTrack>,
}

impl EsmState {
    pub fn new(config: EsmConfig) -> Self {
        EsmState {
            config,
            tracks: BTreeMap::new(),
        }
    }

    pub fn track(&self, client: ClientId) -> EsmTrack {
        self.tracks.get(&client).copied().unwrap_or_default()
    }

    pub fn is_eval_round(&self, round: u64) -> bool {
        self.config.eval_interval > 0 && round.is_multiple_of(self.config.eval_interval)
    }

    /// Records `metric` for `client`; saturated once the number of evaluations
    /// without an improvement above `tol` reaches `patience`.
    pub fn check(&mut self, client: ClientId, metric: f64, _round: u64) -> EsmVerdict {
        let tol = self.config.tol;
        let patience = self.config.patience;
        let t = self.tracks.entry(client).or_default();
        if metric > t.best_metric + tol {
            t.best_metric = metric;
            t.evals_since_improve = 0;
        } else {
            t.evals_since_improve += 1;
        }
        if t.evals_since_improve >= patience {
            EsmVerdict::Saturated
        } else {
            EsmVerdict::Continue
        }
    }

    pub fn reset(&mut self, client: ClientId) {
        self.tracks.insert(client, EsmTrack::default());
    }
}

/// Advances every client in `saturated` by one ladder level and resets its
/// early-stopping track. Clients at the top of the ladder stay put.
pub fn restore(
    rho: &DensityVector,
    esm: &mut EsmState,
    saturated: &BTreeSet<ClientId>,
    ladder: &DensityLadder,
) -> Result<DensityVector> {
    if rho.stage != Stage::Stage2 {
        return Err(Error::Protocol("restoration outside stage 2".into()));
    }
    let mut next = rho.clone();
    for client in saturated {
        if let Some(r) = next.rho.get_mut(client) {
            if let Some(up) = ladder.next_above(*r) {
                *r = up;
            }
            esm.reset(*client);
        }
    }
    Ok(next)
}

/// Stage-2 step: on evaluation rounds feed each client's metric to the
/// early-stopping check and restore the saturated ones.
pub fn gmr_step(
    rho: &DensityVector,
    esm: &mut EsmState,
    metrics: &BTreeMap<ClientId, f64>,
    round: u64,
    ladder: &DensityLadder,
) -> Result<DensityVector> {
    if rho.stage != Stage::Stage2 {
        return Err(Error::Protocol("gmr step outside stage 2".into()));
    }
    if !esm.is_eval_round(round) {
        return Ok(rho.clone());
    }
    let mut saturated = BTreeSet::new();
    for (&client, &metric) in metrics {
        if !rho.rho.contains_key(&client) {
            continue;
        }
        if esm.check(client, metric, round) == EsmVerdict::Saturated {
            saturated.insert(client);
        }
    }
    restore(rho, esm, &saturated, ladder)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// A stage-1 update counts as stable when every |Δρ_i| is below this.
    pub eps_stab: f64,
    /// Consecutive stable updates required to switch to stage 2.
    pub w_stab: u32,
    /// Hard cap on stage-1 updates; 0 starts directly in stage 2.
    pub max_stage1_rounds: u32,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            eps_stab: 0.01,
            w_stab: 3,
            max_stage1_rounds: 40,
        }
    }
}

/// Tracks stage-1 history and decides when to move to stage 2.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTracker {
    config: StageConfig,
    updates: u32,
    stable_streak: u32,
}

impl StageTracker {
    pub fn new(config: StageConfig) -> Self {
        StageTracker {
            config,
            updates: 0,
            stable_streak: 0,
        }
    }

    pub fn starts_in_stage2(&self) -> bool {
        self.config.max_stage1_rounds == 0
    }

    /// Records one stage-1 update (`before → after`); returns true when the
    /// transition rule fires.
    pub fn observe(&mut self, before: &DensityVector, after: &DensityVector) -> bool {
        self.updates += 1;
        let max_delta = after
            .rho
            .iter()
            .map(|(c, r)| (r - before.rho.get(c).copied().unwrap_or(*r)).abs())
            .fold(0.0, f64::max);
        if max_delta < self.config.eps_stab {
            self.stable_streak += 1;
        } else {
            self.stable_streak = 0;
        }
        self.should_transition()
    }

    /// Counts a round in which stage 1 could not update (e.g. no fresh
    /// observations). Only the hard cap applies.
    pub fn observe_idle(&mut self) -> bool {
        self.updates += 1;
        self.should_transition()
    }

    pub fn should_transition(&self) -> bool {
        self.stable_streak >= self.config.w_stab || self.updates >= self.config.max_stage1_rounds
    }

    pub fn updates(&self) -> u32 {
        self.updates
    }
}

/// Switches to stage 2, snapping every density to the nearest ladder level
/// at or above it.
pub fn stage_transition(rho: &DensityVector, ladder: &DensityLadder) -> DensityVector {
    DensityVector {
        rho: rho.rho.iter().map(|(&c, &r)| (c, ladder.snap_up(r))).collect(),
        stage: Stage::Stage2,
    }
}
