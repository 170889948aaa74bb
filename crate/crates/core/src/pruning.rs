//! Importance scoring and nested sub-model extraction.
//!
//! Importance approximates the first-order Taylor pruning error with the
//! weight change standing in for the gradient:
//! `I[n] = ((W_k[n] − W_{k−1}[n]) · W_k[n])²`. All clients share one
//! descending ordering of `I`, so a client at density `ρ` keeps the first
//! `⌈ρN⌉` coordinates of that ordering and masks are nested by construction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ClientId, Mask, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector(Vec<f64>);

impl ImportanceVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Structural(format!(
                "importance scores must be finite and ≥ 0, found {bad}"
            )));
        }
        Ok(ImportanceVector(scores))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn importance(w_k: &ParamVector, w_prev: &ParamVector) -> Result<ImportanceVector> {
    w_prev.check_len(w_k.len(), "previous model")?;
    let scores = w_k
        .iter()
        .zip(w_prev.iter())
        .map(|(&cur, &prev)| {
            let t = (cur - prev) * cur;
            t * t
        })
        .collect();
    ImportanceVector::new(scores)
}

/// `|W|` elementwise; used when no previous model exists yet.
pub fn magnitude_importance(w: &ParamVector) -> ImportanceVector {
    ImportanceVector(w.iter().map(|v| v.abs()).collect())
}

/// Number of coordinates retained at density `rho`: `⌈ρN⌉`, at least 1.
///
/// Products that land within floating-point noise of an integer are snapped
/// to it first, so `0.2 · 10` keeps 2 coordinates rather than 3.
pub fn retained_count(rho: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = rho * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * (n as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

fn check_density(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("density {rho} not in (0, 1]")))
    }
}

/// One descending sort of importance scores (stable, lower index first on
/// ties), tagged with the epoch it was built in.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceOrdering {
    order: Vec<u32>,
    epoch: u32,
}

impl ImportanceOrdering {
    pub fn from_scores(scores: &ImportanceVector, epoch: u32) -> Self {
        let s = scores.as_slice();
        let mut order: Vec<u32> = (0..s.len() as u32).collect();
        // `sort_by` is stable, so equal scores keep ascending index order.
        order.sort_by(|&a, &b| s[b as usize].total_cmp(&s[a as usize]));
        ImportanceOrdering { order, epoch }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn n_coords(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn mask_for(&self, rho: f64) -> Result<Mask> {
        check_density(rho)?;
        let n = self.order.len();
        let k = retained_count(rho, n);
        Ok(Mask::from_indices(n, self.order[..k].iter().map(|&i| i as usize)))
    }

    pub fn extract(&self, densities: &BTreeMap<ClientId, f64>, round: u64) -> Result<MaskSet> {
        if densities.is_empty() {
            return Err(Error::Config("density map is empty".into()));
        }
        let mut masks = BTreeMap::new();
        for (&client, &rho) in densities {
            masks.insert(client, self.mask_for(rho)?);
        }
        Ok(MaskSet {
            masks,
            densities: densities.clone(),
            built_at_round: round,
            epoch: self.epoch,
        })
    }
}

/// Per-client masks built from one ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: BTreeMap<ClientId, Mask>,
    pub densities: BTreeMap<ClientId, f64>,
    pub built_at_round: u64,
    pub epoch: u32,
}

impl MaskSet {
    pub fn get(&self, client: ClientId) -> Option<&Mask> {
        self.masks.get(&client)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn n_coords(&self) -> usize {
        self.masks.values().next().map_or(0, Mask::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClientId, &Mask)> {
        self.masks.iter().map(|(&c, m)| (c, m))
    }

    /// The densest mask. Masks are nested, so this is also their union.
    pub fn widest(&self) -> Option<&Mask> {
        self.masks.values().max_by_key(|m| m.count_ones())
    }
}

/// Builds a fresh ordering from `scores` and extracts every client's mask.
pub fn extract_masks(scores: &ImportanceVector, densities: &BTreeMap<ClientId, f64>, round: u64) -> Result<MaskSet> {
    ImportanceOrdering::from_scores(scores, 0).extract(densities, round)
}

/// Whether masks are rebuilt at round `k` (every `k_rest` rounds).
pub fn refresh_due(round: u64, k_rest: i64) -> Result<bool> {
    if k_rest <= 0 {
        return Err(Error::Config(format!(
            "mask refresh interval must be ≥ 1, got {k_rest}"
        )));
    }
    Ok(round.is_multiple_of(k_rest as u64))
}
