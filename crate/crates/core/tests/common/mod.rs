#![allow(dead_code)]

use std::collections::BTreeMap;

use fedgmr::aggregation::{Buffer, UploadRecord};
use fedgmr::pruning::{extract_masks, ImportanceVector, MaskSet};
use fedgmr::rng::SimRng;
use fedgmr::{ClientId, Mask, ParamVector};
use rand::{Rng, SeedableRng};

pub const LADDER: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn random_vec(n: usize, rng: &mut impl Rng) -> ParamVector {
    ParamVector::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
}

pub fn random_mask(n: usize, p: f64, rng: &mut impl Rng) -> Mask {
    Mask::from_bools(&(0..n).map(|_| rng.random_bool(p)).collect::<Vec<_>>())
}

/// Scores with deliberate ties so tie-breaking is exercised.
pub fn random_scores(n: usize, rng: &mut impl Rng) -> ImportanceVector {
    ImportanceVector::new(
        (0..n)
            .map(|_| f64::from(rng.random_range(0..(n as u32 / 2 + 1))))
            .collect(),
    )
    .unwrap()
}

pub fn ladder_densities(c: usize, rng: &mut impl Rng) -> BTreeMap<ClientId, f64> {
    (0..c)
        .map(|i| (ClientId(i as u32), LADDER[rng.random_range(0..LADDER.len())]))
        .collect()
}

pub fn nested_masks(n: usize, c: usize, rng: &mut impl Rng) -> MaskSet {
    extract_masks(&random_scores(n, rng), &ladder_densities(c, rng), 1).unwrap()
}

/// A buffer of masked uploads with arbitrary masks and staleness.
pub fn random_buffer(n: usize, c: usize, round: u64, rng: &mut impl Rng) -> Buffer {
    let mut b = Buffer::new();
    for i in 0..c {
        let mask = random_mask(n, rng.random_range(0.1..1.0), rng);
        let model = random_vec(n, rng).masked(&mask).unwrap();
        let from = rng.random_range(0..=round);
        b.insert(UploadRecord::new(ClientId(i as u32), model, mask, from, 0.0).unwrap());
    }
    b
}
