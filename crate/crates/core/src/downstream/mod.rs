//! Downstream evaluation of frozen representations and the
//! removal/retention harnesses built on top of it.

mod harness;
mod probe;

pub use harness::{
    ablate_and_retrain, coreset_retrain, downstream_set, evaluate_encoder, lambda_sweep, removal_set, AblationConfig, AblationResult,
    AblationRow, AblationSummary, CoresetConfig, CoresetResult, CoresetRow, DownstreamSet, DownstreamSpec, LambdaRow, LambdaSummary,
    LambdaSweepConfig, LambdaSweepResult, RemovalMode,
};
pub use probe::{linear_probe, probe_loss_grad, train_probe, LinearProbe, ProbeConfig};

use crate::alignment::l2;
use crate::error::{Error, Result};
use crate::synth::SynthPoint;
use crate::toytrain::ToyEncoder;

/// One representation per sample with its class label (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledReps {
    reps: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl LabeledReps {
    pub fn new(reps: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || reps.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dimension {dim}",
                reps.len(),
                labels.len()
            )));
        }
        if labels.contains(&0) {
            return Err(Error::invalid("class labels start at 1"));
        }
        if reps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite representation"));
        }
        Ok(Self { reps, dim, labels })
    }

    /// Clean (un-augmented) representations of `points` under `enc`.
    pub fn from_encoder(enc: &ToyEncoder, points: &[SynthPoint]) -> Result<Self> {
        let mut reps = Vec::with_capacity(points.len() * enc.arch.output);
        for p in points {
            reps.extend(enc.forward(&p.coords)?);
        }
        Self::new(reps, enc.arch.output, points.iter().map(|p| p.class).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.reps[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Label of the nearest class mean for each row of `queries` (row-major,
/// `train.dim()` columns). Ties go to the lowest class.
pub fn nearest_centroid(train: &LabeledReps, queries: &[f64]) -> Result<Vec<usize>> {
    let d = train.dim;
    if !queries.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            left: d,
            right: queries.len(),
        });
    }
    let k = train.n_classes();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &label) in train.labels.iter().enumerate() {
        counts[label - 1] += 1;
        for (s, v) in sums[(label - 1) * d..label * d].iter_mut().zip(train.row(i)) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {} has no training rows", empty + 1)));
    }
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|c| sums[c * d..(c + 1) * d].iter().map(|s| s / counts[c] as f64).collect())
        .collect();
    Ok(queries
        .chunks(d)
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (c, mu) in centroids.iter().enumerate() {
                let dist = l2(q, mu);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best.0 + 1
        })
        .collect())
}

/// Share of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

pub fn centroid_accuracy(train: &LabeledReps, test: &LabeledReps) -> Result<f64> {
    if train.dim != test.dim {
        return Err(Error::DimensionMismatch {
            left: train.dim,
            right: test.dim,
        });
    }
    Ok(accuracy(&nearest_centroid(train, &test.reps)?, &test.labels))
}
