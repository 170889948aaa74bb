//! Client partitioners: uniform IID split and Dirichlet label skew.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataShard, Dataset};
use crate::error::{Error, Result};
use crate::model::ClientId;

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    /// Per-class client proportions drawn from `Dirichlet(alpha · 1_C)`.
    Dirichlet {
        alpha: f64,
    },
}

pub fn partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_clients: usize,
    scheme: PartitionScheme,
    rng: &mut R,
) -> Result<Vec<DataShard>> {
    if n_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if dataset.len() < n_clients {
        return Err(Error::InsufficientSamples(format!(
            "{} samples cannot cover {n_clients} clients",
            dataset.len()
        )));
    }
    let assignment = match scheme {
        PartitionScheme::Iid => iid_assignment(dataset.len(), n_clients, rng),
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::Config(format!("dirichlet alpha must be > 0, got {alpha}")));
            }
            let mut found = None;
            for _ in 0..MAX_REDRAWS {
                let a = dirichlet_assignment(dataset, n_clients, alpha, rng);
                if a.iter().all(|s| !s.is_empty()) {
                    found = Some(a);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::InsufficientSamples(format!(
                    "dirichlet(α={alpha}) left a client empty after {MAX_REDRAWS} redraws"
                ))
            })?
        }
    };
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(c, idx)| DataShard {
            client_id: ClientId(c as u32),
            data: dataset.subset(&idx),
        })
        .collect())
}

fn iid_assignment<R: Rng + ?Sized>(n: usize, n_clients: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut out = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let len = base + usize::from(c < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

fn dirichlet_assignment<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for i in 0..dataset.len() {
        by_class[dataset.label(i) as usize].push(i);
    }
    let mut out = vec![Vec::new(); n_clients];
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut p: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|v| *v /= total);
        } else {
            p.iter_mut().for_each(|v| *v = 1.0 / n_clients as f64);
        }
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, pc) in p.iter().enumerate() {
            cum += pc;
            let end = if c + 1 == n_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            out[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    out
}
