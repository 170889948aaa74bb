use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multinomial logistic regression (a single dense layer).
    Logistic,
    /// Fully connected network with ReLU hidden layers.
    Mlp,
}

/// Coordinate ranges of one dense layer. Weights are stored row-major as
/// `out_dim × in_dim`, followed by the `out_dim` biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ModelShape {
    kind: ModelKind,
    input_dim: usize,
    #[serde(default)]
    hidden_dims: Vec<usize>,
    n_classes: usize,
}

/// Architecture description plus the coordinate layout derived from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelShape", into = "ModelShape")]
pub struct ModelSpec {
    kind: ModelKind,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    n_classes: usize,
    layers: Vec<LayerLayout>,
}

impl From<ModelSpec> for ModelShape {
    fn from(s: ModelSpec) -> Self {
        ModelShape {
            kind: s.kind,
            input_dim: s.input_dim,
            hidden_dims: s.hidden_dims,
            n_classes: s.n_classes,
        }
    }
}

impl TryFrom<ModelShape> for ModelSpec {
    type Error = Error;

    fn try_from(s: ModelShape) -> Result<Self> {
        ModelSpec::new(s.kind, s.input_dim, s.hidden_dims, s.n_classes)
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, hidden_dims: Vec<usize>, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim ≥ 1 and n_classes ≥ 2 (got {input_dim}, {n_classes})"
            )));
        }
        match kind {
            ModelKind::Logistic if !hidden_dims.is_empty() => {
                return Err(Error::Config("logistic model takes no hidden layers".into()))
            }
            ModelKind::Mlp if hidden_dims.is_empty() || hidden_dims.contains(&0) => {
                return Err(Error::Config("mlp needs at least one non-empty hidden layer".into()))
            }
            _ => {}
        }
        let mut dims = vec![input_dim];
        dims.extend(&hidden_dims);
        dims.push(n_classes);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for pair in dims.windows(2) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let weights = offset..offset + in_dim * out_dim;
            let bias = weights.end..weights.end + out_dim;
            offset = bias.end;
            layers.push(LayerLayout {
                in_dim,
                out_dim,
                weights,
                bias,
            });
        }
        Ok(ModelSpec {
            kind,
            input_dim,
            hidden_dims,
            n_classes,
            layers,
        })
    }

    pub fn logistic(input_dim: usize, n_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Logistic, input_dim, Vec::new(), n_classes)
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp, input_dim, hidden_dims, n_classes)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.end)
    }

    pub fn widest_layer(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim.max(l.in_dim)).max().unwrap_or(0)
    }

    /// He-normal weights scaled by `scale`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.n_params()];
        for layer in &self.layers {
            let std = scale * (2.0 / layer.in_dim as f64).sqrt();
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                for v in &mut values[layer.weights.clone()] {
                    *v = normal.sample(rng);
                }
            }
        }
        ParamVector::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_partitions_coordinates() {
        let spec = ModelSpec::mlp(4, vec![3, 5], 2).unwrap();
        let mut covered = vec![0u8; spec.n_params()];
        for l in spec.layers() {
            for i in l.weights.clone().chain(l.bias.clone()) {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(spec.n_params(), 4 * 3 + 3 + 3 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ModelSpec::new(ModelKind::Logistic, 3, vec![4], 2).is_err());
        assert!(ModelSpec::mlp(3, vec![], 2).is_err());
        assert!(ModelSpec::logistic(3, 1).is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_layout() {
        let spec = ModelSpec::mlp(6, vec![8], 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
