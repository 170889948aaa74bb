//! Randomised structural invariants.

mod common;

use std::collections::BTreeMap;

use common::*;
use fedgmr::aggregation::{buff_mask_fedavg, coverage_stats, staleness_weights};
use fedgmr::data::partition::{partition, PartitionScheme};
use fedgmr::data::synthetic::GaussianMixture;
use fedgmr::ims::{bytes_saved, decode_increment, encode_increment, split, ByteAccounting, Dispatch, DispatchMode};
use fedgmr::pruning::{extract_masks, retained_count, ImportanceVector};
use fedgmr::{ClientId, ParamVector};
use proptest::prelude::*;
use rand::Rng;

fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u8..6, 1..200).prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn densities_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(LADDER.to_vec()), 1..10)
}

fn as_map(d: &[f64]) -> BTreeMap<ClientId, f64> {
    d.iter().enumerate().map(|(i, &r)| (ClientId(i as u32), r)).collect()
}

proptest! {
    #[test]
    fn masks_are_nested_sized_and_tie_broken_by_index(scores in scores_strategy(), dens in densities_strategy()) {
        let n = scores.len();
        let iv = ImportanceVector::new(scores.clone()).unwrap();
        let masks = extract_masks(&iv, &as_map(&dens), 3).unwrap();
        let again = extract_masks(&iv, &as_map(&dens), 3).unwrap();
        prop_assert_eq!(&masks, &again);
        for (c, m) in masks.iter() {
            prop_assert_eq!(m.count_ones(), retained_count(dens[c.index()], n));
            prop_assert_eq!(m.count_ones(), ((dens[c.index()] * n as f64) - 1e-9).ceil().max(1.0) as usize);
            // Everything strictly more important, or equally important with a
            // lower index, than a retained coordinate is retained too.
            for j in m.iter_ones() {
                for i in 0..n {
                    if scores[i] > scores[j] || (scores[i] == scores[j] && i < j) {
                        prop_assert!(m.get(i));
                    }
                }
            }
            for (_, other) in masks.iter() {
                prop_assert!(m.is_subset_of(other) || other.is_subset_of(m));
            }
        }
    }

    #[test]
    fn increments_reconstruct_exactly(seed in any::<u64>(), n in 1usize..300, c in 1usize..10) {
        let mut r = rng(seed);
        let masks = nested_masks(n, c, &mut r);
        let w = random_vec(n, &mut r);
        let inc = split(&w, &masks).unwrap();
        let mut seen = vec![false; n];
        for piece in inc.increments() {
            for &i in &piece.indices {
                prop_assert!(!seen[i as usize], "coordinate {} in two increments", i);
                seen[i as usize] = true;
            }
            let (back, epoch) = decode_increment(&encode_increment(piece, inc.epoch())).unwrap();
            prop_assert_eq!(&back, piece);
            prop_assert_eq!(epoch, inc.epoch());
        }
        for (c, m) in masks.iter() {
            prop_assert_eq!(inc.reconstruct(c, masks.epoch).unwrap(), w.masked(m).unwrap());
        }
    }

    #[test]
    fn ims_never_costs_more(seed in any::<u64>(), n in 1usize..300, c in 1usize..10, broadcast in any::<bool>()) {
        let mut r = rng(seed);
        let masks = nested_masks(n, c, &mut r);
        let inc = split(&ParamVector::zeros(n), &masks).unwrap();
        let mut plan = Vec::new();
        for (client, _) in masks.iter() {
            if !r.random_bool(0.7) {
                continue;
            }
            let level = inc.level(client).unwrap();
            let restored_from = (level > 0 && r.random_bool(0.5)).then(|| r.random_range(0..level));
            plan.push(Dispatch { client, restored_from });
        }
        let mode = if broadcast { DispatchMode::Broadcast } else { DispatchMode::Unicast };
        let report = bytes_saved(&inc, &plan, ByteAccounting::default(), mode).unwrap();
        prop_assert!(report.with_ims <= report.without_ims);
    }

    #[test]
    fn staleness_weights_normalise_per_coordinate(seed in any::<u64>(), n in 1usize..64, c in 1usize..8) {
        let mut r = rng(seed);
        let round = 9;
        let buffer = random_buffer(n, c, round, &mut r);
        let s = staleness_weights(&buffer, round, 0.5).unwrap();
        for k in 0..n {
            let covering: Vec<f64> = buffer.records().filter(|u| u.mask.get(k)).map(|u| s[&u.client_id]).collect();
            if !covering.is_empty() {
                let total: f64 = covering.iter().sum();
                let beta_sum: f64 = covering.iter().map(|x| x / total).sum();
                prop_assert!((beta_sum - 1.0).abs() < 1e-12);
            }
        }
        // Uncovered coordinates carry the previous value forward bit for bit.
        let prev = random_vec(n, &mut r);
        let out = buff_mask_fedavg(&buffer, &prev, round, 0.5).unwrap();
        for k in 0..n {
            if buffer.records().all(|u| !u.mask.get(k)) {
                prop_assert_eq!(out[k].to_bits(), prev[k].to_bits());
            }
        }
    }

    #[test]
    fn raising_a_client_never_lowers_coverage(scores in scores_strategy(), dens in densities_strategy(), pick in any::<prop::sample::Index>()) {
        let iv = ImportanceVector::new(scores).unwrap();
        let before = extract_masks(&iv, &as_map(&dens), 1).unwrap();
        let i = pick.index(dens.len());
        let mut raised = dens.clone();
        if let Some(&up) = LADDER.iter().find(|&&l| l > dens[i]) {
            raised[i] = up;
        }
        let after = extract_masks(&iv, &as_map(&raised), 1).unwrap();
        let (b, a) = (coverage_stats(&before).unwrap(), coverage_stats(&after).unwrap());
        for (x, y) in b.gamma.iter().zip(&a.gamma) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn raising_a_whole_group_never_raises_discrepancy(scores in scores_strategy(), dens in densities_strategy(), pick in any::<prop::sample::Index>()) {
        let iv = ImportanceVector::new(scores).unwrap();
        let masks = extract_masks(&iv, &as_map(&dens), 1).unwrap();
        let before = coverage_stats(&masks).unwrap();
        // A structural group is every client sharing one mask; all of them
        // move to the same next level.
        let anchor = masks.get(ClientId(pick.index(dens.len()) as u32)).unwrap().clone();
        let members: Vec<usize> = (0..dens.len()).filter(|&i| masks.get(ClientId(i as u32)) == Some(&anchor)).collect();
        let top = members.iter().map(|&i| dens[i]).fold(0.0, f64::max);
        let Some(&up) = LADDER.iter().find(|&&l| l > top) else { return Ok(()); };
        let mut raised = dens.clone();
        for &i in &members {
            raised[i] = up;
        }
        let after = coverage_stats(&extract_masks(&iv, &as_map(&raised), 1).unwrap()).unwrap();
        prop_assert!(after.a_dagger <= before.a_dagger + 1e-12, "A† {} -> {}", before.a_dagger, after.a_dagger);
        prop_assert!(after.b_dagger <= before.b_dagger + 1e-12, "B† {} -> {}", before.b_dagger, after.b_dagger);
    }
}

#[test]
fn full_density_coverage_limits() {
    for c in 1..12u32 {
        let dens: BTreeMap<ClientId, f64> = (0..c).map(|i| (ClientId(i), 1.0)).collect();
        let masks = extract_masks(&ImportanceVector::new(vec![1.0; 50]).unwrap(), &dens, 1).unwrap();
        let s = coverage_stats(&masks).unwrap();
        assert_eq!(s.a_dagger, 1.0);
        assert_eq!(s.b_dagger, 1.0 / f64::from(c));
        assert_eq!(s.min_gamma(), c);
    }
}

#[test]
fn iid_partition_is_balanced_and_exhaustive() {
    let data = GaussianMixture {
        n_samples: 1003,
        ..Default::default()
    }
    .generate(&mut rng(7));
    let shards = partition(&data, 10, PartitionScheme::Iid, &mut rng(8)).unwrap();
    let sizes: Vec<usize> = shards.iter().map(|s| s.data.len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 1003);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    // Pooled label histogram is preserved.
    let mut pooled = vec![0; data.n_classes()];
    for s in &shards {
        for (p, h) in pooled.iter_mut().zip(s.data.class_histogram()) {
            *p += h;
        }
    }
    assert_eq!(pooled, data.class_histogram());
}

#[test]
fn dirichlet_concentration_controls_label_skew() {
    let data = GaussianMixture {
        n_samples: 4000,
        ..Default::default()
    }
    .generate(&mut rng(9));
    let skew = |alpha: f64| {
        let shards = partition(&data, 10, PartitionScheme::Dirichlet { alpha }, &mut rng(10)).unwrap();
        assert_eq!(shards.iter().map(|s| s.data.len()).sum::<usize>(), data.len());
        // Mean share of each shard's most frequent class.
        shards
            .iter()
            .map(|s| *s.data.class_histogram().iter().max().unwrap() as f64 / s.data.len() as f64)
            .sum::<f64>()
            / shards.len() as f64
    };
    let (low, high) = (skew(0.1), skew(100.0));
    assert!(low > 0.5, "α=0.1 dominant share {low}");
    assert!(high < 0.2, "α=100 dominant share {high}");
}
