//! Mini-batch gradient descent on the training objective.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderArch, ToyEncoder};
use super::loss::{loss_and_grad, BatchViews, LossBreakdown, LossConfig};
use crate::datamodel::SampleId;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};
use crate::synth::{AugmentationSpec, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    #[default]
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 8,
            learning_rate: 0.05,
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub encoder: ToyEncoder,
    pub trace: Vec<EpochLoss>,
}

impl TrainedEncoder {
    /// `epoch,total,infonce,uniformity,align_penalty`
    pub fn trace_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "epoch,total,infonce,uniformity,align_penalty").unwrap();
        for e in &self.trace {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?}",
                e.epoch, e.loss.total, e.loss.infonce, e.loss.uniformity, e.loss.align_penalty
            )
            .unwrap();
        }
        String::from_utf8(out).unwrap()
    }
}

/// Train an encoder initialized from `init_seed` on `items`.
///
/// Shuffling and training views depend only on `train.seed`, the epoch and
/// the sample ids, so identical inputs give bit-identical parameters. A
/// trailing batch with a single sample is skipped (it has no negatives).
pub fn train_encoder(
    items: &[(SampleId, Point)],
    arch: &EncoderArch,
    init_seed: u64,
    aug: &AugmentationSpec,
    loss_cfg: &LossConfig,
    train: &TrainConfig,
) -> Result<TrainedEncoder> {
    if items.len() < 2 {
        return Err(Error::invalid("training needs at least 2 samples"));
    }
    loss_cfg.validate()?;
    train.validate()?;
    aug.validate()?;
    let mut enc = ToyEncoder::init(*arch, init_seed);
    let mut params = enc.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..items.len()).collect();
    let view_seed = derive_seed(train.seed, &[init_seed]);
    let mut trace = Vec::with_capacity(train.epochs);

    for epoch in 0..train.epochs {
        let mut rng = rng_from(view_seed, &[stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(train.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch_items: Vec<(SampleId, Point)> = chunk.iter().map(|&i| items[i]).collect();
            let batch = BatchViews::draw(&batch_items, aug, loss_cfg.n_reg_views, view_seed, epoch as u64);
            let (loss, grad) = loss_and_grad(&enc, &batch, loss_cfg).map_err(|e| match e {
                Error::NonFiniteForward { .. } => Error::Diverged { epoch, loss: f64::NAN },
                other => other,
            })?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss.total,
                });
            }
            match train.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= train.learning_rate * g;
                    }
                }
                Optimizer::SgdMomentum => {
                    for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = train.momentum * *v + g;
                        *p -= train.learning_rate * *v;
                    }
                }
            }
            enc.set_params(&params);
            acc.total += loss.total;
            acc.infonce += loss.infonce;
            acc.uniformity += loss.uniformity;
            acc.align_penalty += loss.align_penalty;
            n_batches += 1;
        }
        let nb = n_batches.max(1) as f64;
        trace.push(EpochLoss {
            epoch,
            loss: LossBreakdown {
                total: acc.total / nb,
                infonce: acc.infonce / nb,
                uniformity: acc.uniformity / nb,
                align_penalty: acc.align_penalty / nb,
            },
        });
    }
    Ok(TrainedEncoder { encoder: enc, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items() -> Vec<(SampleId, Point)> {
        (0..12)
            .map(|i| (SampleId(i), [(i % 4) as f64 - 1.5, (i / 4) as f64 - 1.0]))
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let arch = EncoderArch::default();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            batch_size: 4,
            ..Default::default()
        };
        let t = train_encoder(&items(), &arch, 3, &AugmentationSpec::default(), &LossConfig::default(), &cfg).unwrap();
        assert_eq!(t.encoder, ToyEncoder::init(arch, 3));
        assert_eq!(t.trace.len(), 1);
    }

    #[test]
    fn same_seed_same_parameters() {
        let arch = EncoderArch::default();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 5,
            ..Default::default()
        };
        let loss = LossConfig {
            lambda: 0.2,
            uniformity_weight: 0.1,
            ..Default::default()
        };
        let a = train_encoder(&items(), &arch, 1, &AugmentationSpec::default(), &loss, &cfg).unwrap();
        let b = train_encoder(&items(), &arch, 1, &AugmentationSpec::default(), &loss, &cfg).unwrap();
        assert_eq!(a.encoder.params(), b.encoder.params());
        assert_eq!(a.trace_csv(), b.trace_csv());
        let c = train_encoder(&items(), &arch, 2, &AugmentationSpec::default(), &loss, &cfg).unwrap();
        assert_ne!(a.encoder.params(), c.encoder.params());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e200,
            optimizer: Optimizer::Sgd,
            ..Default::default()
        };
        let arch = EncoderArch {
            normalize: false,
            ..Default::default()
        };
        let r = train_encoder(&items(), &arch, 0, &AugmentationSpec::default(), &LossConfig::default(), &cfg);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }
}
