//! Buffered mask-aware aggregation and the comparison rules.
//!
//! - **MA** (`buff_mask_fedavg`): per coordinate, a staleness-weighted mean
//!   over the clients whose mask retains it; uncovered coordinates carry the
//!   previous global value forward.
//! - **GA** (`aggregate_ga`): masked model deltas summed and divided by the
//!   total client count.
//! - **FA** (`aggregate_fa`): plain FedAvg with zero padding.
//!
//! GA and FA are only defined for synchronous rounds (every buffered record
//! trained from the current model). The buffer itself does no locking;
//! callers must not insert while an aggregation is running.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClientId, Mask, ParamVector};
use crate::pruning::MaskSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Ma,
    Ga,
    Fa,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Ma => "MA",
            Aggregator::Ga => "GA",
            Aggregator::Fa => "FA",
        }
    }

    /// GA and FA only exist in the synchronous comparison mode.
    pub fn requires_barrier(self) -> bool {
        !matches!(self, Aggregator::Ma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadRecord {
    pub client_id: ClientId,
    /// Zero outside `mask`.
    pub model: ParamVector,
    pub mask: Mask,
    /// Global-model version the client started from.
    pub trained_from_round: u64,
    pub arrival_time: f64,
}

impl UploadRecord {
    pub fn new(
        client_id: ClientId,
        model: ParamVector,
        mask: Mask,
        trained_from_round: u64,
        arrival_time: f64,
    ) -> Result<Self> {
        if !model.respects_mask(&mask) {
            return Err(Error::Structural(format!(
                "upload from client {client_id} has values outside its mask"
            )));
        }
        Ok(UploadRecord {
            client_id,
            model,
            mask,
            trained_from_round,
            arrival_time,
        })
    }
}

/// Latest upload per client.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buffer {
    latest: BTreeMap<ClientId, UploadRecord>,
}

impl Buffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps the record with the later arrival time; returns whether `record`
    /// was stored.
    pub fn insert(&mut self, record: UploadRecord) -> bool {
        match self.latest.get(&record.client_id) {
            Some(existing) if existing.arrival_time > record.arrival_time => false,
            _ => {
                self.latest.insert(record.client_id, record);
                true
            }
        }
    }

    pub fn get(&self, client: ClientId) -> Option<&UploadRecord> {
        self.latest.get(&client)
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn clear(&mut self) {
        self.latest.clear();
    }

    pub fn records(&self) -> impl Iterator<Item = &UploadRecord> {
        self.latest.values()
    }

    /// Drops records older than `max_staleness` rounds.
    pub fn expire(&mut self, round: u64, max_staleness: u64) {
        self.latest
            .retain(|_, r| round.saturating_sub(r.trained_from_round) <= max_staleness);
    }
}

/// Raw staleness weights `s_i = (1 + (k − k'_i))^(−α)`.
pub fn staleness_weights(buffer: &Buffer, round: u64, alpha: f64) -> Result<BTreeMap<ClientId, f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!("staleness exponent must be ≥ 0, got {alpha}")));
    }
    buffer
        .records()
        .map(|r| {
            if r.trained_from_round > round {
                return Err(Error::Protocol(format!(
                    "client {} trained from round {} but server is at round {round}",
                    r.client_id, r.trained_from_round
                )));
            }
            let staleness = (round - r.trained_from_round) as f64;
            Ok((r.client_id, (1.0 + staleness).powf(-alpha)))
        })
        .collect()
}

fn check_buffer_dims(buffer: &Buffer, n: usize) -> Result<()> {
    for r in buffer.records() {
        r.model.check_len(n, "buffered model")?;
        if r.mask.len() != n {
            return Err(Error::Dimension(format!(
                "client {} mask has {} coordinates, model has {n}",
                r.client_id,
                r.mask.len()
            )));
        }
    }
    Ok(())
}

/// Staleness-weighted mask-aware aggregation with carry-forward.
pub fn buff_mask_fedavg(buffer: &Buffer, w_prev: &ParamVector, round: u64, alpha: f64) -> Result<ParamVector> {
    let n = w_prev.len();
    check_buffer_dims(buffer, n)?;
    let weights = staleness_weights(buffer, round, alpha)?;
    let mut w_cum = vec![0.0; n];
    let mut m_cum = vec![0.0; n];
    for r in buffer.records() {
        let s = weights[&r.client_id];
        let values = r.model.as_slice();
        for i in r.mask.iter_ones() {
            w_cum[i] += s * values[i];
            m_cum[i] += s;
        }
    }
    let out = w_prev
        .iter()
        .zip(w_cum.iter().zip(&m_cum))
        .map(|(&prev, (&num, &den))| if den > 0.0 { num / den } else { prev })
        .collect();
    Ok(ParamVector::new(out))
}

fn check_synchronous(buffer: &Buffer, round: u64, n_clients: usize, rule: &str) -> Result<()> {
    if buffer.len() != n_clients {
        return Err(Error::Protocol(format!(
            "{rule} needs all {n_clients} clients in the buffer, found {}",
            buffer.len()
        )));
    }
    if let Some(r) = buffer.records().find(|r| r.trained_from_round != round) {
        return Err(Error::Protocol(format!(
            "{rule} is synchronous-only: client {} trained from round {} at round {round}",
            r.client_id, r.trained_from_round
        )));
    }
    Ok(())
}

/// Gradient-average aggregation in model-delta form:
/// `W ← W_prev + γ_s · (1/C) Σ_i (w_i − W_prev ⊙ m_i)`.
pub fn aggregate_ga(
    buffer: &Buffer,
    w_prev: &ParamVector,
    round: u64,
    n_clients: usize,
    server_lr: f64,
) -> Result<ParamVector> {
    let n = w_prev.len();
    check_buffer_dims(buffer, n)?;
    check_synchronous(buffer, round, n_clients, "GA")?;
    let mut delta = vec![0.0; n];
    for r in buffer.records() {
        let values = r.model.as_slice();
        for i in r.mask.iter_ones() {
            delta[i] += values[i] - w_prev[i];
        }
    }
    let scale = server_lr / n_clients as f64;
    Ok(ParamVector::new(
        w_prev.iter().zip(&delta).map(|(&p, &d)| p + scale * d).collect(),
    ))
}

/// Zero-padded FedAvg: `W[n] = (1/C) Σ_i w_i[n]`.
pub fn aggregate_fa(buffer: &Buffer, round: u64, n_clients: usize) -> Result<ParamVector> {
    let first = buffer
        .records()
        .next()
        .ok_or_else(|| Error::Protocol("FA needs a full buffer, found none".into()))?;
    let n = first.model.len();
    check_buffer_dims(buffer, n)?;
    check_synchronous(buffer, round, n_clients, "FA")?;
    let mut sum = vec![0.0; n];
    for r in buffer.records() {
        for (s, v) in sum.iter_mut().zip(r.model.iter()) {
            *s += v;
        }
    }
    let inv = 1.0 / n_clients as f64;
    Ok(ParamVector::new(sum.into_iter().map(|s| s * inv).collect()))
}

/// Clients sharing one identical mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCoverage {
    pub members: Vec<ClientId>,
    pub density: f64,
    /// `Γ*_g`: minimum coverage over the group's retained coordinates.
    pub min_gamma: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    /// `Γ^(n)`: number of clients retaining coordinate `n`.
    pub gamma: Vec<u32>,
    pub groups: Vec<GroupCoverage>,
    /// `Σ_g |C_g| / Γ*_g`.
    pub a_dagger: f64,
    /// `Σ_g |C_g| / (Γ*_g)²`.
    pub b_dagger: f64,
}

impl CoverageStats {
    /// Smallest coverage over all coordinates (0 when some coordinate is
    /// retained by nobody).
    pub fn min_gamma(&self) -> u32 {
        self.gamma.iter().copied().min().unwrap_or(0)
    }
}

pub fn coverage_from_masks<'a>(masks: impl IntoIterator<Item = (ClientId, &'a Mask)>) -> Result<CoverageStats> {
    let masks: Vec<(ClientId, &Mask)> = masks.into_iter().collect();
    let n = masks
        .first()
        .map(|(_, m)| m.len())
        .ok_or_else(|| Error::Config("coverage needs at least one client".into()))?;
    let mut gamma = vec![0u32; n];
    for (c, m) in &masks {
        if m.len() != n {
            return Err(Error::Dimension(format!("client {c} mask length {} ≠ {n}", m.len())));
        }
        for i in m.iter_ones() {
            gamma[i] += 1;
        }
    }

    let mut groups: Vec<(&Mask, Vec<ClientId>)> = Vec::new();
    for (c, m) in &masks {
        match groups.iter_mut().find(|(gm, _)| *gm == *m) {
            Some((_, members)) => members.push(*c),
            None => groups.push((m, vec![*c])),
        }
    }

    let mut a_dagger = 0.0;
    let mut b_dagger = 0.0;
    let groups = groups
        .into_iter()
        .map(|(mask, members)| {
            let min_gamma = mask.iter_ones().map(|i| gamma[i]).min().unwrap_or(0);
            if min_gamma > 0 {
                let size = members.len() as f64;
                let g = f64::from(min_gamma);
                a_dagger += size / g;
                b_dagger += size / (g * g);
            }
            GroupCoverage {
                members,
                density: mask.density(),
                min_gamma,
            }
        })
        .collect();

    Ok(CoverageStats {
        gamma,
        groups,
        a_dagger,
        b_dagger,
    })
}

pub fn coverage_stats(masks: &MaskSet) -> Result<CoverageStats> {
    coverage_from_masks(masks.iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: u32, values: Vec<f64>, bits: &[bool], from: u64, at: f64) -> UploadRecord {
        let mask = Mask::from_bools(bits);
        UploadRecord::new(ClientId(c), ParamVector::new(values), mask, from, at).unwrap()
    }

    #[test]
    fn staleness_examples() {
        let mut b = Buffer::new();
        b.insert(rec(0, vec![1.0], &[true], 10, 0.0));
        b.insert(rec(1, vec![1.0], &[true], 7, 0.0));
        let fresh = staleness_weights(&b, 10, 0.5).unwrap();
        assert_eq!(fresh[&ClientId(0)], 1.0);
        assert_eq!(fresh[&ClientId(1)], 0.5);
        let flat = staleness_weights(&b, 10, 0.0).unwrap();
        assert!(flat.values().all(|&s| s == 1.0));
        assert!(matches!(staleness_weights(&b, 9, 0.5), Err(Error::Protocol(_))));
    }

    #[test]
    fn covered_mean_and_carry_forward() {
        let mut b = Buffer::new();
        b.insert(rec(0, vec![2.0, 0.0], &[true, false], 1, 0.0));
        b.insert(rec(1, vec![4.0, 0.0], &[true, false], 1, 0.0));
        b.insert(rec(2, vec![0.0, 0.0], &[false, false], 1, 0.0));
        let w = buff_mask_fedavg(&b, &ParamVector::new(vec![9.0, 7.0]), 1, 0.5).unwrap();
        assert_eq!(w.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn empty_buffer_returns_previous() {
        let prev = ParamVector::new(vec![1.0, -2.0]);
        assert_eq!(buff_mask_fedavg(&Buffer::new(), &prev, 3, 1.0).unwrap(), prev);
    }

    #[test]
    fn later_arrival_replaces() {
        let mut b = Buffer::new();
        assert!(b.insert(rec(0, vec![1.0], &[true], 1, 5.0)));
        assert!(b.insert(rec(0, vec![2.0], &[true], 2, 6.0)));
        assert!(!b.insert(rec(0, vec![3.0], &[true], 0, 4.0)));
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(ClientId(0)).unwrap().model[0], 2.0);
    }

    #[test]
    fn ga_scales_by_client_count() {
        let prev = ParamVector::new(vec![1.0, 1.0]);
        let mut b = Buffer::new();
        b.insert(rec(0, vec![1.5, 0.0], &[true, false], 4, 0.0));
        for c in 1..4 {
            b.insert(rec(c, vec![0.0, 0.0], &[false, false], 4, 0.0));
        }
        let w = aggregate_ga(&b, &prev, 4, 4, 1.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0 + 0.5 / 4.0, 1.0]);
    }

    #[test]
    fn ga_and_fa_reject_stale_or_partial_buffers() {
        let prev = ParamVector::new(vec![0.0]);
        let mut b = Buffer::new();
        b.insert(rec(0, vec![1.0], &[true], 3, 0.0));
        b.insert(rec(1, vec![1.0], &[true], 2, 0.0));
        assert!(matches!(aggregate_ga(&b, &prev, 3, 2, 1.0), Err(Error::Protocol(_))));
        assert!(matches!(aggregate_fa(&b, 3, 2), Err(Error::Protocol(_))));
        assert!(matches!(aggregate_fa(&b, 2, 3), Err(Error::Protocol(_))));
    }

    #[test]
    fn fa_zero_padding_mean() {
        let mut b = Buffer::new();
        b.insert(rec(0, vec![2.0], &[true], 1, 0.0));
        b.insert(rec(1, vec![4.0], &[true], 1, 0.0));
        b.insert(rec(2, vec![0.0], &[false], 1, 0.0));
        assert_eq!(aggregate_fa(&b, 1, 3).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn coverage_full_density() {
        let full = Mask::full(6);
        let stats = coverage_from_masks((0..10).map(|c| (ClientId(c), &full))).unwrap();
        assert_eq!(stats.groups.len(), 1);
        assert_eq!(stats.groups[0].min_gamma, 10);
        assert_eq!(stats.a_dagger, 1.0);
        assert_eq!(stats.b_dagger, 0.1);
    }

    #[test]
    fn coverage_singleton_half_density() {
        let m = Mask::from_bools(&[true, false, true, false]);
        let stats = coverage_from_masks([(ClientId(0), &m)]).unwrap();
        assert!(stats.gamma.iter().all(|&g| g <= 1));
        assert_eq!(stats.min_gamma(), 0);
        assert_eq!(stats.groups[0].min_gamma, 1);
        assert_eq!((stats.a_dagger, stats.b_dagger), (1.0, 1.0));
    }
}
