//! Analytic gradients against central finite differences. Each check
//! returns the worst relative error seen, or the first failing configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslmem::downstream::{probe_loss_grad, LabeledReps};
use sslmem::synth::{AugKind, AugmentationSpec};
use sslmem::toytrain::loss::{infonce_with_grad, uniformity_with_grad, view_spread_with_grad};
use sslmem::toytrain::{loss_and_grad, total_loss, Activation, BatchViews, EncoderArch, LossConfig, ToyEncoder};
use sslmem::SampleId;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|)` over the whole gradient vector.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn vec_of(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rows(flat: &[f64], d: usize) -> Vec<&[f64]> {
    flat.chunks(d).collect()
}

pub fn check_infonce(configs: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..6);
        let m = rng.random_range(1..6);
        let t = rng.random_range(0.2..2.0);
        // Layout: anchor, positive, then m negatives.
        let x = vec_of(&mut rng, d * (m + 2));
        let loss = |x: &[f64]| {
            let r = rows(x, d);
            infonce_with_grad(r[0], r[1], &r[2..], t).unwrap().loss
        };
        let r = rows(&x, d);
        let g = infonce_with_grad(r[0], r[1], &r[2..], t).unwrap();
        let mut analytic = g.d_anchor.clone();
        analytic.extend(&g.d_positive);
        for n in &g.d_negatives {
            analytic.extend(n);
        }
        let e = rel_error(&analytic, &central(&x, loss));
        if !(e < TOL) {
            return Err(format!("config {seed}: relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn check_uniformity(configs: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let d = rng.random_range(2..6);
        let n = rng.random_range(2..8);
        let x = vec_of(&mut rng, d * n);
        let loss = |x: &[f64]| uniformity_with_grad(&rows(x, d)).unwrap().0;
        let analytic: Vec<f64> = uniformity_with_grad(&rows(&x, d)).unwrap().1.concat();
        let e = rel_error(&analytic, &central(&x, loss));
        if !(e < TOL) {
            return Err(format!("config {seed}: relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn check_view_spread(configs: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let d = rng.random_range(2..6);
        let k = rng.random_range(2..6);
        let x = vec_of(&mut rng, d * k);
        let loss = |x: &[f64]| view_spread_with_grad(&rows(x, d)).unwrap().0;
        let analytic: Vec<f64> = view_spread_with_grad(&rows(&x, d)).unwrap().1.concat();
        let e = rel_error(&analytic, &central(&x, loss));
        if !(e < TOL) {
            return Err(format!("config {seed}: relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Full objective with respect to encoder parameters, with every term active.
pub fn check_regularized_objective(configs: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let arch = EncoderArch {
            hidden: rng.random_range(3..10),
            output: rng.random_range(2..5),
            activation: Activation::Tanh,
            normalize: rng.random_bool(0.7),
            ..EncoderArch::default()
        };
        let enc = ToyEncoder::init(arch, seed);
        let cfg = LossConfig {
            temperature: rng.random_range(0.3..1.5),
            uniformity_weight: rng.random_range(0.0..1.0),
            lambda: [0.0, 0.25, 0.5, 0.75][seed as usize % 4],
            n_reg_views: rng.random_range(2..4),
            n_negatives: if rng.random_bool(0.3) { Some(1) } else { None },
            ..LossConfig::default()
        };
        let n = rng.random_range(2..6);
        let items: Vec<(SampleId, [f64; 2])> = (0..n)
            .map(|i| (SampleId(i), [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]))
            .collect();
        let aug = AugmentationSpec {
            kind: AugKind::GaussianNoise,
            strength: 0.5,
            ..AugmentationSpec::default()
        };
        let batch = BatchViews::draw(&items, &aug, cfg.n_reg_views, seed, 0);
        let params = enc.params();
        let loss = |p: &[f64]| {
            let mut e = enc.clone();
            e.set_params(p);
            total_loss(&e, &batch, &cfg).unwrap().total
        };
        let (_, analytic) = loss_and_grad(&enc, &batch, &cfg).unwrap();
        let e = rel_error(&analytic, &central(&params, loss));
        if !(e < TOL) {
            return Err(format!("config {seed} (lambda {}): relative error {e:e}", cfg.lambda));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn check_probe(configs: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..5);
        let n = rng.random_range(k..12);
        let labels: Vec<usize> = (0..n).map(|i| 1 + i % k).collect();
        let data = LabeledReps::new(vec_of(&mut rng, n * d), d, labels).unwrap();
        let wd = if seed % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        let params = vec_of(&mut rng, k * (d + 1));
        let loss = |p: &[f64]| probe_loss_grad(p, &data, k, wd).unwrap().0;
        let (_, analytic) = probe_loss_grad(&params, &data, k, wd).unwrap();
        let e = rel_error(&analytic, &central(&params, loss));
        if !(e < TOL) {
            return Err(format!("config {seed}: relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}
