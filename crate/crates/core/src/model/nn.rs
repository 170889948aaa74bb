//! Forward pass, cross-entropy loss and backpropagation on flat parameters.

use super::{ModelSpec, ParamVector};
use crate::error::{Error, Result};

/// A borrowed batch of row-major features and their labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [u32],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [u32]) -> Self {
        Batch { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
}

impl LossEval {
    pub fn accuracy(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.correct as f64 / n as f64
        }
    }
}

fn check_inputs(model: &ParamVector, spec: &ModelSpec, batch: &Batch<'_>) -> Result<()> {
    model.check_len(spec.n_params(), "model vs spec")?;
    if batch.is_empty() {
        return Err(Error::InsufficientSamples("empty batch".into()));
    }
    if batch.features.len() != batch.len() * spec.input_dim() {
        return Err(Error::Dimension(format!(
            "batch has {} features for {} samples of dim {}",
            batch.features.len(),
            batch.len(),
            spec.input_dim()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y as usize >= spec.n_classes()) {
        return Err(Error::Dimension(format!(
            "label {bad} out of range for {} classes",
            spec.n_classes()
        )));
    }
    Ok(())
}

/// Per-call scratch space: pre-activations and activations of every layer.
struct Scratch {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let layers = spec.layers();
        Scratch {
            pre: layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            act: layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            delta: vec![0.0; spec.widest_layer()],
            delta_prev: vec![0.0; spec.widest_layer()],
        }
    }
}

/// Runs one sample forward; returns `(loss, predicted_class)`.
fn forward_sample(w: &[f64], spec: &ModelSpec, x: &[f64], y: usize, s: &mut Scratch) -> (f64, usize) {
    let layers = spec.layers();
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let input: &[f64] = if l == 0 { x } else { &s.act[l - 1] };
        let z = &mut s.pre[l];
        let weights = &w[layer.weights.clone()];
        let bias = &w[layer.bias.clone()];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = bias[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            *zo = acc;
        }
        let z = &s.pre[l];
        if l < last {
            for (a, &zv) in s.act[l].iter_mut().zip(z) {
                *a = zv.max(0.0);
            }
        } else {
            s.act[l].copy_from_slice(z);
        }
    }
    let logits = &s.act[last];
    let mut argmax = 0;
    let mut max = f64::NEG_INFINITY;
    for (c, &v) in logits.iter().enumerate() {
        if v > max {
            max = v;
            argmax = c;
        }
    }
    let sum_exp: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let loss = max + sum_exp.ln() - logits[y];
    (loss, argmax)
}

/// Mean cross-entropy and number of correct argmax predictions.
pub fn forward_loss(model: &ParamVector, spec: &ModelSpec, batch: Batch<'_>) -> Result<LossEval> {
    check_inputs(model, spec, &batch)?;
    let d = spec.input_dim();
    let mut s = Scratch::new(spec);
    let w = model.as_slice();
    let mut total = 0.0;
    let mut correct = 0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let x = &batch.features[i * d..(i + 1) * d];
        let (loss, pred) = forward_sample(w, spec, x, y as usize, &mut s);
        total += loss;
        correct += usize::from(pred == y as usize);
    }
    Ok(LossEval {
        loss: total / batch.len() as f64,
        correct,
    })
}

/// Loss plus the gradient of the mean loss, written into `grad` (overwritten).
pub fn loss_and_grad(model: &ParamVector, spec: &ModelSpec, batch: Batch<'_>, grad: &mut [f64]) -> Result<LossEval> {
    check_inputs(model, spec, &batch)?;
    if grad.len() != model.len() {
        return Err(Error::Dimension("gradient buffer length".into()));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let d = spec.input_dim();
    let layers = spec.layers();
    let last = layers.len() - 1;
    let inv_b = 1.0 / batch.len() as f64;
    let mut s = Scratch::new(spec);
    let w = model.as_slice();
    let mut total = 0.0;
    let mut correct = 0;

    for (i, &y) in batch.labels.iter().enumerate() {
        let x = &batch.features[i * d..(i + 1) * d];
        let y = y as usize;
        let (loss, pred) = forward_sample(w, spec, x, y, &mut s);
        total += loss;
        correct += usize::from(pred == y);

        // dL/dz at the output: softmax − one-hot, scaled by 1/B.
        let logits = &s.act[last];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for (c, (d, &z)) in s.delta.iter_mut().zip(logits).enumerate() {
            let p = (z - max).exp() / sum_exp;
            *d = (p - f64::from(u8::from(c == y))) * inv_b;
        }

        for l in (0..=last).rev() {
            let layer = &layers[l];
            let input: &[f64] = if l == 0 { x } else { &s.act[l - 1] };
            let (gw, gb) = {
                let (head, tail) = grad.split_at_mut(layer.bias.start);
                (&mut head[layer.weights.clone()], &mut tail[..layer.out_dim])
            };
            for o in 0..layer.out_dim {
                let dz = s.delta[o];
                if dz == 0.0 {
                    continue;
                }
                gb[o] += dz;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += dz * xi;
                }
            }
            if l > 0 {
                let weights = &w[layer.weights.clone()];
                let prev_pre = &s.pre[l - 1];
                for j in 0..layer.in_dim {
                    if prev_pre[j] <= 0.0 {
                        s.delta_prev[j] = 0.0;
                        continue;
                    }
                    let mut acc = 0.0;
                    for o in 0..layer.out_dim {
                        acc += weights[o * layer.in_dim + j] * s.delta[o];
                    }
                    s.delta_prev[j] = acc;
                }
                std::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
        }
    }
    Ok(LossEval {
        loss: total / batch.len() as f64,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_batch(spec: &ModelSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<u32>) {
        let mut rng = seeded(seed);
        let x = (0..n * spec.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| rng.random_range(0..spec.n_classes() as u32)).collect();
        (x, y)
    }

    #[test]
    fn zero_logistic_gives_ln2() {
        let spec = ModelSpec::logistic(3, 2).unwrap();
        let (x, y) = random_batch(&spec, 7, 1);
        let eval = forward_loss(&ParamVector::zeros(spec.n_params()), &spec, Batch::new(&x, &y)).unwrap();
        assert_relative_eq!(eval.loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn zero_output_layer_gives_ln_classes() {
        let spec = ModelSpec::mlp(4, vec![6], 5).unwrap();
        let mut rng = seeded(3);
        let mut w = spec.init_params(1.0, &mut rng);
        let out = &spec.layers()[1];
        for i in out.weights.clone().chain(out.bias.clone()) {
            w[i] = 0.0;
        }
        let (x, y) = random_batch(&spec, 9, 2);
        let eval = forward_loss(&w, &spec, Batch::new(&x, &y)).unwrap();
        assert_relative_eq!(eval.loss, 5f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let spec = ModelSpec::logistic(3, 2).unwrap();
        let (x, y) = random_batch(&spec, 2, 1);
        let err = forward_loss(&ParamVector::zeros(5), &spec, Batch::new(&x, &y)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = ModelSpec::mlp(5, vec![7, 4], 3).unwrap();
        let mut rng = seeded(11);
        let w = spec.init_params(1.0, &mut rng);
        let (x, y) = random_batch(&spec, 6, 12);
        let batch = Batch::new(&x, &y);
        let mut grad = vec![0.0; w.len()];
        loss_and_grad(&w, &spec, batch, &mut grad).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let i = rng.random_range(0..w.len());
            let mut plus = w.clone();
            plus[i] += h;
            let mut minus = w.clone();
            minus[i] -= h;
            let fd = (forward_loss(&plus, &spec, batch).unwrap().loss
                - forward_loss(&minus, &spec, batch).unwrap().loss)
                / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-4);
            assert!(
                (fd - grad[i]).abs() / scale < 1e-5,
                "coordinate {i}: analytic {} vs numeric {fd}",
                grad[i]
            );
        }
    }
}
