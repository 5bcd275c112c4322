//! Training objective: InfoNCE with in-batch negatives, an optional squared
//! cross-sample similarity penalty, and the alignment-limiting term
//!
//! ```text
//! total = (1 - lambda) * infonce - lambda * E d(f(x'), f(x'')) + w * uniformity
//! ```
//!
//! Each piece comes with its analytic gradient with respect to the
//! representations; [`loss_and_grad`] chains them through the encoder.

use serde::{Deserialize, Serialize};

use super::encoder::{ForwardCache, ToyEncoder};
use crate::alignment::{dot, l2};
use crate::datamodel::SampleId;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synth::{augment, AugmentationSpec, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLoss {
    #[default]
    Infonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub base: BaseLoss,
    pub temperature: f64,
    /// Negatives per anchor; `None` uses every other sample in the batch.
    pub n_negatives: Option<usize>,
    pub uniformity_weight: f64,
    /// Weight of the view-spreading regularizer, in `[0, 1)`.
    pub lambda: f64,
    /// Augmented views per sample entering the regularizer.
    pub n_reg_views: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            base: BaseLoss::Infonce,
            temperature: 0.5,
            n_negatives: None,
            uniformity_weight: 0.0,
            lambda: 0.0,
            n_reg_views: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.n_negatives == Some(0) {
            return Err(Error::invalid("n_negatives must be at least 1"));
        }
        if !(self.uniformity_weight >= 0.0) {
            return Err(Error::invalid("uniformity_weight must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if self.lambda > 0.0 && self.n_reg_views < 2 {
            return Err(Error::invalid("the regularizer needs at least 2 views"));
        }
        Ok(())
    }
}

/// Value and gradients of the InfoNCE loss for one anchor.
#[derive(Debug, Clone)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

pub fn infonce_with_grad(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], temperature: f64) -> Result<InfoNceGrad> {
    if negatives.is_empty() {
        return Err(Error::invalid("InfoNCE needs at least one negative"));
    }
    let logits: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|v| dot(anchor, v) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[0];
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();

    let d = anchor.len();
    let mut d_anchor = vec![0.0; d];
    let coef_pos = (probs[0] - 1.0) / temperature;
    for c in 0..d {
        d_anchor[c] += coef_pos * positive[c];
    }
    let d_positive: Vec<f64> = anchor.iter().map(|a| coef_pos * a).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for (neg, p) in negatives.iter().zip(&probs[1..]) {
        let coef = p / temperature;
        for c in 0..d {
            d_anchor[c] += coef * neg[c];
        }
        d_negatives.push(anchor.iter().map(|a| coef * a).collect());
    }
    Ok(InfoNceGrad {
        loss,
        d_anchor,
        d_positive,
        d_negatives,
    })
}

/// `-s+ / t + log(exp(s+ / t) + sum_i exp(s-_i / t))` with `s = anchor . v`.
pub fn infonce_loss(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], temperature: f64) -> Result<f64> {
    Ok(infonce_with_grad(anchor, positive, negatives, temperature)?.loss)
}

/// Mean squared inner product over unordered pairs of distinct samples, and
/// its gradient with respect to each representation.
pub fn uniformity_with_grad(reps: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = reps.len();
    if n < 2 {
        return Err(Error::invalid("uniformity penalty needs at least 2 samples"));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut total = 0.0;
    let mut grads = vec![vec![0.0; reps[0].len()]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = dot(reps[i], reps[j]);
            total += s * s;
            for c in 0..reps[i].len() {
                grads[i][c] += 2.0 * s * reps[j][c] / pairs;
                grads[j][c] += 2.0 * s * reps[i][c] / pairs;
            }
        }
    }
    Ok((total / pairs, grads))
}

pub fn uniformity_penalty(reps: &[&[f64]]) -> Result<f64> {
    Ok(uniformity_with_grad(reps)?.0)
}

/// Mean l2 distance over unordered pairs of views, with gradients. Coincident
/// views contribute a zero subgradient.
pub fn view_spread_with_grad(views: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = views.len();
    if k < 2 {
        return Err(Error::invalid("view spread needs at least 2 views"));
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let mut total = 0.0;
    let mut grads = vec![vec![0.0; views[0].len()]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = l2(views[i], views[j]);
            total += d;
            if d > 1e-12 {
                for c in 0..views[i].len() {
                    let g = (views[i][c] - views[j][c]) / d / pairs;
                    grads[i][c] += g;
                    grads[j][c] -= g;
                }
            }
        }
    }
    Ok((total / pairs, grads))
}

/// Inputs of one training step: each sample's clean point (anchor and
/// negative for others), one positive view, and the regularizer views.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    pub ids: Vec<SampleId>,
    pub anchors: Vec<Point>,
    pub positives: Vec<Point>,
    pub reg_views: Vec<Vec<Point>>,
}

impl BatchViews {
    /// Views for `(id, point)` pairs, drawn deterministically from
    /// `(seed, epoch, sample id, view index)`.
    pub fn draw(items: &[(SampleId, Point)], aug: &AugmentationSpec, n_reg_views: usize, seed: u64, epoch: u64) -> Self {
        let view = |id: SampleId, x: &Point, v: u64| augment(x, aug.kind, aug.strength, seed, &[stream::AUG_TRAIN, epoch, id.0, v]);
        BatchViews {
            ids: items.iter().map(|p| p.0).collect(),
            anchors: items.iter().map(|p| p.1).collect(),
            positives: items.iter().map(|(id, x)| view(*id, x, 0)).collect(),
            reg_views: items
                .iter()
                .map(|(id, x)| (0..n_reg_views as u64).map(|v| view(*id, x, v + 1)).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub infonce: f64,
    pub uniformity: f64,
    /// Mean view distance, entering the total with weight `-lambda`.
    pub align_penalty: f64,
}

fn negatives_of(i: usize, n: usize, limit: Option<usize>) -> impl Iterator<Item = usize> {
    let count = limit.map_or(n - 1, |l| l.min(n - 1));
    (1..=count).map(move |o| (i + o) % n)
}

fn evaluate(enc: &ToyEncoder, batch: &BatchViews, cfg: &LossConfig, with_grad: bool) -> Result<(LossBreakdown, Vec<f64>)> {
    cfg.validate()?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::invalid("a batch needs at least 2 samples for in-batch negatives"));
    }
    let fwd = |pts: &[Point]| -> Result<Vec<ForwardCache>> { pts.iter().map(|p| enc.forward_cached(p)).collect() };
    let anchors = fwd(&batch.anchors)?;
    let positives = fwd(&batch.positives)?;
    let use_reg = cfg.lambda > 0.0;
    let regs: Vec<Vec<ForwardCache>> = if use_reg {
        batch.reg_views.iter().map(|v| fwd(v)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let d = enc.arch.output;
    let nf = n as f64;
    let mut d_anchor = vec![vec![0.0; d]; n];
    let mut d_pos = vec![vec![0.0; d]; n];
    let mut d_reg: Vec<Vec<Vec<f64>>> = regs.iter().map(|v| vec![vec![0.0; d]; v.len()]).collect();

    let mut infonce = 0.0;
    for i in 0..n {
        let negs: Vec<usize> = negatives_of(i, n, cfg.n_negatives).collect();
        let neg_refs: Vec<&[f64]> = negs.iter().map(|&j| anchors[j].y.as_slice()).collect();
        let g = infonce_with_grad(&anchors[i].y, &positives[i].y, &neg_refs, cfg.temperature)?;
        infonce += g.loss;
        let w = (1.0 - cfg.lambda) / nf;
        for c in 0..d {
            d_anchor[i][c] += w * g.d_anchor[c];
            d_pos[i][c] += w * g.d_positive[c];
        }
        for (&j, gn) in negs.iter().zip(&g.d_negatives) {
            for c in 0..d {
                d_anchor[j][c] += w * gn[c];
            }
        }
    }
    infonce /= nf;

    let mut align_penalty = 0.0;
    if use_reg {
        for (i, views) in regs.iter().enumerate() {
            let refs: Vec<&[f64]> = views.iter().map(|c| c.y.as_slice()).collect();
            let (spread, grads) = view_spread_with_grad(&refs)?;
            align_penalty += spread;
            for (dst, g) in d_reg[i].iter_mut().zip(grads) {
                for c in 0..d {
                    dst[c] -= cfg.lambda / nf * g[c];
                }
            }
        }
        align_penalty /= nf;
    }

    let mut uniformity = 0.0;
    if cfg.uniformity_weight > 0.0 {
        let refs: Vec<&[f64]> = anchors.iter().map(|c| c.y.as_slice()).collect();
        let (u, grads) = uniformity_with_grad(&refs)?;
        uniformity = u;
        for (dst, g) in d_anchor.iter_mut().zip(grads) {
            for c in 0..d {
                dst[c] += cfg.uniformity_weight * g[c];
            }
        }
    }

    let total = (1.0 - cfg.lambda) * infonce - cfg.lambda * align_penalty + cfg.uniformity_weight * uniformity;
    let breakdown = LossBreakdown {
        total,
        infonce,
        uniformity,
        align_penalty,
    };
    let mut grad = Vec::new();
    if with_grad {
        grad = vec![0.0; enc.n_params()];
        for (cache, dy) in anchors.iter().zip(&d_anchor) {
            enc.backward(cache, dy, &mut grad);
        }
        for (cache, dy) in positives.iter().zip(&d_pos) {
            enc.backward(cache, dy, &mut grad);
        }
        for (caches, dys) in regs.iter().zip(&d_reg) {
            for (cache, dy) in caches.iter().zip(dys) {
                enc.backward(cache, dy, &mut grad);
            }
        }
    }
    Ok((breakdown, grad))
}

/// Batch objective without gradients.
pub fn total_loss(enc: &ToyEncoder, batch: &BatchViews, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(evaluate(enc, batch, cfg, false)?.0)
}

/// Batch objective and its gradient with respect to the flat encoder parameters.
pub fn loss_and_grad(enc: &ToyEncoder, batch: &BatchViews, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<f64>)> {
    evaluate(enc, batch, cfg, true)
}
