use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Batch, ClientId};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(input_dim: usize, n_classes: usize, features: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Dimension(format!(
                "{} features for {} labels of dim {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::Format(format!("label {bad} ≥ n_classes {n_classes}")));
        }
        Ok(Dataset {
            input_dim,
            n_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            features,
            labels,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &y in &self.labels {
            h[y as usize] += 1;
        }
        h
    }

    /// Random split into `(train, validation)` with `val_fraction` of the rows
    /// held out.
    pub fn split<R: Rng + ?Sized>(&self, val_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("val_fraction {val_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        let (val, train) = idx.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Concatenation of several datasets with identical shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InsufficientSamples("nothing to concatenate".into()))?;
        let mut out = first.clone();
        for d in iter {
            if d.input_dim != out.input_dim || d.n_classes != out.n_classes {
                return Err(Error::Dimension("datasets disagree on shape".into()));
            }
            out.features.extend_from_slice(&d.features);
            out.labels.extend_from_slice(&d.labels);
        }
        Ok(out)
    }
}

/// A client's local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub client_id: ClientId,
    pub data: Dataset,
}
