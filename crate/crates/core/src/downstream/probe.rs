use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{accuracy, LabeledReps};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

/// Full-batch softmax regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            weight_decay: 0.0,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("probe learning_rate must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::invalid("probe weight_decay and init_scale must be non-negative"));
        }
        Ok(())
    }
}

/// Linear classifier: `n_classes × dim` weights (row-major) then `n_classes` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub dim: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

impl LinearProbe {
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        logits(&self.params, self.dim, self.n_classes, x, out);
    }

    /// Arg-max class per row, ties to the lowest class.
    pub fn predict(&self, queries: &[f64]) -> Vec<usize> {
        let mut z = vec![0.0; self.n_classes];
        queries
            .chunks(self.dim)
            .map(|x| {
                self.logits(x, &mut z);
                let mut best = 0;
                for c in 1..self.n_classes {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                best + 1
            })
            .collect()
    }
}

fn logits(params: &[f64], dim: usize, k: usize, x: &[f64], out: &mut [f64]) {
    let (w, b) = params.split_at(k * dim);
    for c in 0..k {
        out[c] = b[c] + w[c * dim..(c + 1) * dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Mean softmax cross-entropy plus `weight_decay/2 · ‖W‖²` and its gradient
/// with respect to `params` (layout as in [`LinearProbe`]).
pub fn probe_loss_grad(params: &[f64], data: &LabeledReps, n_classes: usize, weight_decay: f64) -> Result<(f64, Vec<f64>)> {
    let dim = data.dim();
    if params.len() != n_classes * (dim + 1) {
        return Err(Error::Shape(format!(
            "{} probe parameters for {n_classes} classes of dimension {dim}",
            params.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::invalid("probe needs training rows"));
    }
    if data.n_classes() > n_classes {
        return Err(Error::invalid(format!("label {} outside {n_classes} classes", data.n_classes())));
    }
    let n = data.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut z = vec![0.0; n_classes];
    for i in 0..data.len() {
        let x = data.row(i);
        logits(params, dim, n_classes, x, &mut z);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let y = data.labels()[i] - 1;
        loss += m + sum.ln() - z[y];
        for c in 0..n_classes {
            let p = (z[c] - m).exp() / sum;
            let delta = (p - if c == y { 1.0 } else { 0.0 }) / n;
            for (g, xv) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *g += delta * xv;
            }
            grad[n_classes * dim + c] += delta;
        }
    }
    loss /= n;
    if weight_decay > 0.0 {
        for (g, w) in grad[..n_classes * dim].iter_mut().zip(&params[..n_classes * dim]) {
            loss += 0.5 * weight_decay * w * w;
            *g += weight_decay * w;
        }
    }
    Ok((loss, grad))
}

/// Gradient descent on [`probe_loss_grad`]. Rows are put in a canonical
/// order first, so the result does not depend on the input row order.
pub fn train_probe(train: &LabeledReps, n_classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    cfg.validate()?;
    let dim = train.dim();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| {
        train.labels()[a].cmp(&train.labels()[b]).then_with(|| {
            train
                .row(a)
                .iter()
                .zip(train.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let canonical = LabeledReps::new(
        order.iter().flat_map(|&i| train.row(i).to_vec()).collect(),
        dim,
        order.iter().map(|&i| train.labels()[i]).collect(),
    )?;
    let mut rng = rng_from(cfg.seed, &[stream::PROBE]);
    let mut params: Vec<f64> = (0..n_classes * (dim + 1))
        .map(|i| {
            let v: f64 = StandardNormal.sample(&mut rng);
            if i < n_classes * dim { cfg.init_scale * v } else { 0.0 }
        })
        .collect();
    for step in 0..cfg.epochs {
        let (loss, grad) = probe_loss_grad(&params, &canonical, n_classes, cfg.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::ProbeDiverged { step });
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::ProbeDiverged { step: cfg.epochs });
    }
    Ok(LinearProbe { dim, n_classes, params })
}

/// Top-1 accuracy on `test` of a probe trained on `train`.
pub fn linear_probe(train: &LabeledReps, test: &LabeledReps, cfg: &ProbeConfig) -> Result<f64> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            left: train.dim(),
            right: test.dim(),
        });
    }
    let k = train.n_classes().max(test.n_classes());
    let probe = train_probe(train, k, cfg)?;
    Ok(accuracy(&probe.predict(test.reps()), test.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::seq::SliceRandom;
    use rand::Rng as _;

    fn blobs(n: usize, seed: u64) -> LabeledReps {
        let mut rng = rng_from(seed, &[]);
        let mut reps = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            reps.push(cx + rng.random_range(-1.0..1.0));
            reps.push(rng.random_range(-1.0..1.0));
            labels.push(c + 1);
        }
        LabeledReps::new(reps, 2, labels).unwrap()
    }

    #[test]
    fn separable_fixture_is_learned() {
        let d = blobs(40, 1);
        assert_eq!(linear_probe(&d, &blobs(40, 2), &ProbeConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let mut accs = Vec::new();
        for seed in 0..10 {
            let d = blobs(200, seed);
            let mut labels = d.labels().to_vec();
            labels.shuffle(&mut rng_from(seed, &[9]));
            let train = LabeledReps::new(d.reps().to_vec(), 2, labels).unwrap();
            accs.push(linear_probe(&train, &blobs(200, seed + 100), &ProbeConfig::default()).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn row_order_does_not_matter() {
        let d = blobs(30, 4);
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.reverse();
        let perm = LabeledReps::new(
            idx.iter().flat_map(|&i| d.row(i).to_vec()).collect(),
            2,
            idx.iter().map(|&i| d.labels()[i]).collect(),
        )
        .unwrap();
        let cfg = ProbeConfig::default();
        assert_eq!(train_probe(&d, 2, &cfg).unwrap(), train_probe(&perm, 2, &cfg).unwrap());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let d = LabeledReps::new(vec![1e200, -1e200], 1, vec![1, 2]).unwrap();
        let cfg = ProbeConfig {
            learning_rate: 1e10,
            init_scale: 0.0,
            epochs: 50,
            ..Default::default()
        };
        let r = train_probe(&d, 2, &cfg);
        assert!(matches!(r, Err(Error::ProbeDiverged { .. })), "{r:?}");
    }
}
