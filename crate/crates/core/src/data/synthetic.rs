//! Synthetic Gaussian-mixture classification data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;

/// Each class is a mixture of `clusters_per_class` isotropic Gaussian blobs
/// whose centres are drawn from `N(0, separation² I)`. Classes are balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianMixture {
    pub n_samples: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    pub clusters_per_class: usize,
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for GaussianMixture {
    fn default() -> Self {
        GaussianMixture {
            n_samples: 1000,
            input_dim: 20,
            n_classes: 10,
            clusters_per_class: 1,
            separation: 1.0,
            noise_std: 1.0,
        }
    }
}

impl GaussianMixture {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        let d = self.input_dim;
        let k = self.clusters_per_class.max(1);
        let centres: Vec<Vec<f64>> = (0..self.n_classes * k)
            .map(|_| {
                (0..d)
                    .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut labels: Vec<u32> = (0..self.n_samples).map(|i| (i % self.n_classes) as u32).collect();
        labels.shuffle(rng);
        let mut features = Vec::with_capacity(self.n_samples * d);
        for &y in &labels {
            let cluster = rng.random_range(0..k);
            let centre = &centres[y as usize * k + cluster];
            for c in centre {
                let z: f64 = StandardNormal.sample(rng);
                features.push(c + self.noise_std * z);
            }
        }
        Dataset::new(d, self.n_classes, features, labels).expect("generator produces a consistent shape")
    }
}
