//! Incremental model splitting.
//!
//! Nested masks `M_1 ⊂ M_2 ⊂ … ⊂ M_J` cut the global model into disjoint
//! increments `ΔW_j = W ⊙ (M_j − M_{j−1})`. A client at level `j` rebuilds
//! its sub-model by summing increments `1..=j`; after a restoration it only
//! needs the increments between its old and new level.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClientId, Mask, ParamVector};
use crate::pruning::MaskSet;

/// Sparse `(index, value)` pairs, indices ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Increment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> ParamVector {
        let mut out = ParamVector::zeros(n);
        self.add_into(&mut out);
        out
    }

    fn add_into(&self, out: &mut ParamVector) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSet {
    increments: Vec<Increment>,
    /// Client → its level (0-based); the client needs increments `0..=level`.
    index_map: BTreeMap<ClientId, usize>,
    epoch: u32,
    n_coords: usize,
}

/// Splits `w` along the nested masks in `masks`. Clients whose masks are
/// identical share one level.
pub fn split(w: &ParamVector, masks: &MaskSet) -> Result<IncrementSet> {
    let n = w.len();
    if masks.is_empty() {
        return Err(Error::Config("cannot split without masks".into()));
    }
    let mut levels: Vec<&Mask> = Vec::new();
    for (client, mask) in masks.iter() {
        if mask.len() != n {
            return Err(Error::Dimension(format!(
                "client {client} mask has {} coordinates, model has {n}",
                mask.len()
            )));
        }
        if !levels.contains(&mask) {
            levels.push(mask);
        }
    }
    levels.sort_by_key(|m| m.count_ones());
    for pair in levels.windows(2) {
        if !pair[0].is_subset_of(pair[1]) {
            return Err(Error::Structural("masks are not nested".into()));
        }
    }

    let values = w.as_slice();
    let mut increments = Vec::with_capacity(levels.len());
    let mut prev = Mask::empty(n);
    for mask in &levels {
        let indices: Vec<u32> = mask.difference(&prev).iter_ones().map(|i| i as u32).collect();
        let vals = indices.iter().map(|&i| values[i as usize]).collect();
        increments.push(Increment { indices, values: vals });
        prev = (*mask).clone();
    }
    let index_map = masks
        .iter()
        .map(|(c, m)| (c, levels.iter().position(|l| *l == m).expect("level present")))
        .collect();
    Ok(IncrementSet {
        increments,
        index_map,
        epoch: masks.epoch,
        n_coords: n,
    })
}

impl IncrementSet {
    pub fn increments(&self) -> &[Increment] {
        &self.increments
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    pub fn level(&self, client: ClientId) -> Option<usize> {
        self.index_map.get(&client).copied()
    }

    /// Increments a client at its current level needs in full.
    pub fn needed(&self, client: ClientId) -> Result<Range<usize>> {
        let level = self.level_of(client)?;
        Ok(0..level + 1)
    }

    /// Increments added when a client moves from `from_level` to its current
    /// level.
    pub fn restoration_delta(&self, client: ClientId, from_level: usize) -> Result<Range<usize>> {
        let level = self.level_of(client)?;
        Ok((from_level + 1).min(level + 1)..level + 1)
    }

    /// Coordinates covered by a range of increments.
    pub fn coords_in(&self, range: Range<usize>) -> usize {
        self.increments[range].iter().map(Increment::len).sum()
    }

    fn level_of(&self, client: ClientId) -> Result<usize> {
        self.level(client)
            .ok_or_else(|| Error::Protocol(format!("client {client} has no increments this round")))
    }

    /// Rebuilds `W ⊙ mask_client`; `client_epoch` is the ordering epoch the
    /// client's mask belongs to.
    pub fn reconstruct(&self, client: ClientId, client_epoch: u32) -> Result<ParamVector> {
        if client_epoch != self.epoch {
            return Err(Error::StaleIncrement {
                client,
                held: client_epoch,
                current: self.epoch,
            });
        }
        let mut out = ParamVector::zeros(self.n_coords);
        for inc in &self.increments[self.needed(client)?] {
            inc.add_into(&mut out);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByteAccounting {
    pub bytes_per_scalar: u64,
    /// Sparse index cost per transmitted coordinate; charged to both the
    /// incremental and the full sub-model path so the two stay comparable.
    pub index_bytes: u64,
}

impl Default for ByteAccounting {
    fn default() -> Self {
        ByteAccounting {
            bytes_per_scalar: 8,
            index_bytes: 4,
        }
    }
}

impl ByteAccounting {
    pub fn per_coord(&self) -> u64 {
        self.bytes_per_scalar + self.index_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    /// A shared increment leaves the server once.
    Broadcast,
    /// Every client's increments are sent separately.
    Unicast,
}

/// One downloading client. `restored_from` is the level the client already
/// holds when it only needs the restoration delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub client: ClientId,
    pub restored_from: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteReport {
    pub with_ims: u64,
    pub without_ims: u64,
}

pub fn bytes_saved(
    inc: &IncrementSet,
    plan: &[Dispatch],
    accounting: ByteAccounting,
    mode: DispatchMode,
) -> Result<ByteReport> {
    let per = accounting.per_coord();
    let mut without = 0;
    let mut unicast = 0;
    let mut union = BTreeSet::new();
    for d in plan {
        without += inc.coords_in(inc.needed(d.client)?) as u64 * per;
        let range = match d.restored_from {
            Some(from) => inc.restoration_delta(d.client, from)?,
            None => inc.needed(d.client)?,
        };
        unicast += inc.coords_in(range.clone()) as u64 * per;
        union.extend(range);
    }
    let with_ims = match mode {
        DispatchMode::Unicast => unicast,
        DispatchMode::Broadcast => union.into_iter().map(|j| inc.increments[j].len() as u64 * per).sum(),
    };
    Ok(ByteReport {
        with_ims,
        without_ims: without,
    })
}

/// Little-endian wire form: `u32 count`, `u32 epoch`, then `count` pairs of
/// `u32 index` + `f64 value`.
pub fn encode_increment(inc: &Increment, epoch: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + inc.len() * 12);
    out.extend_from_slice(&(inc.len() as u32).to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    for (&i, &v) in inc.indices.iter().zip(&inc.values) {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_increment(bytes: &[u8]) -> Result<(Increment, u32)> {
    let word = |at: usize| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|b| b.try_into().expect("4 bytes"))
            .ok_or_else(|| Error::Format("increment truncated".into()))
    };
    let count = u32::from_le_bytes(word(0)?) as usize;
    let epoch = u32::from_le_bytes(word(4)?);
    if bytes.len() != 8 + count * 12 {
        return Err(Error::Format(format!(
            "increment claims {count} entries but has {} bytes",
            bytes.len()
        )));
    }
    let mut indices = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for chunk in bytes[8..].chunks_exact(12) {
        indices.push(u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes")));
        values.push(f64::from_le_bytes(chunk[4..].try_into().expect("8 bytes")));
    }
    Ok((Increment { indices, values }, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::{ImportanceOrdering, ImportanceVector};

    fn two_level() -> (ParamVector, MaskSet) {
        let scores = ImportanceVector::new(vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        let dens = [(ClientId(0), 0.5), (ClientId(1), 1.0)].into_iter().collect();
        let masks = ImportanceOrdering::from_scores(&scores, 3).extract(&dens, 1).unwrap();
        (ParamVector::new(vec![1.0, 2.0, 3.0, 4.0]), masks)
    }

    #[test]
    fn set_difference_increments() {
        let (w, masks) = two_level();
        let inc = split(&w, &masks).unwrap();
        assert_eq!(inc.increments()[0].to_dense(4).as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(inc.increments()[1].to_dense(4).as_slice(), &[0.0, 0.0, 3.0, 4.0]);
        assert_eq!(
            inc.reconstruct(ClientId(0), 3).unwrap().as_slice(),
            &[1.0, 2.0, 0.0, 0.0]
        );
        assert_eq!(inc.reconstruct(ClientId(1), 3).unwrap(), w);
    }

    #[test]
    fn single_full_level() {
        let w = ParamVector::new(vec![5.0, -1.0]);
        let masks = ImportanceOrdering::from_scores(&ImportanceVector::new(vec![1.0, 2.0]).unwrap(), 0)
            .extract(&[(ClientId(0), 1.0)].into_iter().collect(), 0)
            .unwrap();
        let inc = split(&w, &masks).unwrap();
        assert_eq!(inc.increments().len(), 1);
        assert_eq!(inc.increments()[0].to_dense(2), w);
    }

    #[test]
    fn stale_epoch_rejected() {
        let (w, masks) = two_level();
        let inc = split(&w, &masks).unwrap();
        assert!(matches!(
            inc.reconstruct(ClientId(0), 2),
            Err(Error::StaleIncrement {
                held: 2,
                current: 3,
                ..
            })
        ));
    }

    #[test]
    fn non_nested_masks_rejected() {
        let mut masks = two_level().1;
        masks
            .masks
            .insert(ClientId(0), Mask::from_bools(&[false, false, true, false]));
        masks
            .masks
            .insert(ClientId(1), Mask::from_bools(&[true, true, false, false]));
        assert!(matches!(
            split(&ParamVector::zeros(4), &masks),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn byte_counting_edge_cases() {
        let (w, masks) = two_level();
        let inc = split(&w, &masks).unwrap();
        let acc = ByteAccounting::default();
        let one = bytes_saved(
            &inc,
            &[Dispatch {
                client: ClientId(1),
                restored_from: None,
            }],
            acc,
            DispatchMode::Broadcast,
        )
        .unwrap();
        assert_eq!(one.with_ims, one.without_ims);

        let mut same = masks.clone();
        same.masks.insert(ClientId(0), masks.masks[&ClientId(1)].clone());
        let inc = split(&w, &same).unwrap();
        let plan: Vec<_> = [0, 1]
            .map(|c| Dispatch {
                client: ClientId(c),
                restored_from: None,
            })
            .into();
        let r = bytes_saved(&inc, &plan, acc, DispatchMode::Broadcast).unwrap();
        assert_eq!(2 * r.with_ims, r.without_ims);
        let u = bytes_saved(&inc, &plan, acc, DispatchMode::Unicast).unwrap();
        assert_eq!(u.with_ims, u.without_ims);
    }

    #[test]
    fn restoration_only_sends_new_levels() {
        let (w, masks) = two_level();
        let inc = split(&w, &masks).unwrap();
        assert_eq!(inc.restoration_delta(ClientId(1), 0).unwrap(), 1..2);
        let plan = [Dispatch {
            client: ClientId(1),
            restored_from: Some(0),
        }];
        let r = bytes_saved(&inc, &plan, ByteAccounting::default(), DispatchMode::Unicast).unwrap();
        assert_eq!(r.with_ims, 2 * 12);
        assert_eq!(r.without_ims, 4 * 12);
    }

    #[test]
    fn wire_round_trip() {
        let inc = Increment {
            indices: vec![0, 7, 9],
            values: vec![1.5, -0.25, 3.0],
        };
        let bytes = encode_increment(&inc, 11);
        assert_eq!(bytes.len(), 8 + 3 * 12);
        assert_eq!(decode_increment(&bytes).unwrap(), (inc, 11));
        assert!(matches!(decode_increment(&bytes[..20]), Err(Error::Format(_))));
    }
}
