//! Independent brute-force implementations of library routines, checked on
//! random small fixtures. Each check returns the first mismatch.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslmem::downstream::{nearest_centroid, LabeledReps};
use sslmem::stats::{kendall_tau_b, welch_t_one_sided, Alternative};
use sslmem::toytrain::uniformity_penalty;
use sslmem::{alignment_loss, raw_memorization, Metric, RepresentationSet, SampleId};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub const TOL: f64 = 1e-10;

macro_rules! ensure {
    ($c:expr, $($arg:tt)+) => {
        if !$c {
            return Err(format!($($arg)+));
        }
    };
}

fn rng(test: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(test * 1_000_003 + i)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
}

fn dist(u: &[f64], v: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::L2 => u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let n = |w: &[f64]| w.iter().map(|a| a * a).sum::<f64>().sqrt();
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            (1.0 - dot / (n(u) * n(v))).max(0.0)
        }
    }
}

/// Mean over ordered pairs of distinct rows (each unordered pair twice).
fn brute_alignment(views: &[Vec<f64>], metric: Metric) -> f64 {
    let k = views.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                total += dist(&views[i], &views[j], metric);
            }
        }
    }
    total / (k * (k - 1)) as f64
}

pub fn check_alignment_loss(fixtures: u64) -> Result<(), String> {
    for i in 0..fixtures {
        let mut r = rng(1, i);
        let (k, d) = (r.random_range(2..7), r.random_range(1..6));
        let metric = if i % 2 == 0 { Metric::L2 } else { Metric::Cosine };
        let views: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut r, d)).collect();
        let got = alignment_loss(&views.concat(), d, metric).unwrap();
        let want = brute_alignment(&views, metric);
        ensure!((got - want).abs() < TOL, "fixture {i}: {got} vs {want}");
    }
    Ok(())
}

pub fn check_raw_memorization(fixtures: u64) -> Result<(), String> {
    for i in 0..fixtures {
        let mut r = rng(2, i);
        let (n, k, d) = (r.random_range(1..5), r.random_range(2..5), r.random_range(1..4));
        let metric = if i % 3 == 0 { Metric::Cosine } else { Metric::L2 };
        let ids: Vec<SampleId> = (0..n as u64).map(|j| SampleId(10 * j + 3)).collect();
        let (nf, ng) = (r.random_range(1..4), r.random_range(1..4));
        let mut make = |tag: &str, count: usize| -> Vec<(RepresentationSet, Vec<f64>)> {
            (0..count)
                .map(|s| {
                    let data = random_vec(&mut r, n * k * d);
                    let set = RepresentationSet::new(format!("{tag}{s}"), ids.clone(), k, d, data.clone()).unwrap();
                    (set, data)
                })
                .collect()
        };
        let f = make("f", nf);
        let g = make("g", ng);
        let fs: Vec<RepresentationSet> = f.iter().map(|x| x.0.clone()).collect();
        let gs: Vec<RepresentationSet> = g.iter().map(|x| x.0.clone()).collect();
        for (pos, &id) in ids.iter().enumerate() {
            let expect = |fam: &[(RepresentationSet, Vec<f64>)]| {
                fam.iter()
                    .map(|(_, data)| {
                        let views: Vec<Vec<f64>> = (0..k).map(|v| data[(pos * k + v) * d..(pos * k + v + 1) * d].to_vec()).collect();
                        brute_alignment(&views, metric)
                    })
                    .sum::<f64>()
                    / fam.len() as f64
            };
            let want = expect(&g) - expect(&f);
            let got = raw_memorization(&fs, &gs, id, metric).unwrap();
            ensure!((got - want).abs() < TOL, "fixture {i} sample {id}: {got} vs {want}");
        }
    }
    Ok(())
}

pub fn check_uniformity_penalty(fixtures: u64) -> Result<(), String> {
    for i in 0..fixtures {
        let mut r = rng(3, i);
        let (n, d) = (r.random_range(2..9), r.random_range(1..5));
        let reps: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d)).collect();
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let s: f64 = reps[a].iter().zip(&reps[b]).map(|(x, y)| x * y).sum();
                    total += s * s;
                }
            }
        }
        let want = total / (n * (n - 1)) as f64;
        let views: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        let got = uniformity_penalty(&views).unwrap();
        ensure!((got - want).abs() < TOL * want.max(1.0), "fixture {i}: {got} vs {want}");
    }
    Ok(())
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sizes of tie groups, counted with a hash map of bit patterns.
fn ties(v: &[f64]) -> Vec<f64> {
    let mut m: HashMap<u64, usize> = HashMap::new();
    for x in v {
        *m.entry(x.to_bits()).or_default() += 1;
    }
    m.into_values().filter(|&c| c > 1).map(|c| c as f64).collect()
}

pub fn check_kendall_tau_b(fixtures: u64) -> Result<(), String> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    for i in 0..fixtures {
        let mut r = rng(4, i);
        let n = r.random_range(3..25);
        // Half the fixtures draw from a few levels to force ties.
        let draw = |r: &mut ChaCha8Rng| if i % 2 == 0 { r.random_range(0..4) as f64 } else { r.random_range(-1.0..1.0) };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|j| if r.random_bool(0.5) { x[j] + draw(&mut r) } else { draw(&mut r) }).collect();
        let (mut num, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let (dx, dy) = (sgn(x[a] - x[b]), sgn(y[a] - y[b]));
                num += dx * dy;
                sx += dx * dx;
                sy += dy * dy;
            }
        }
        if sx == 0.0 || sy == 0.0 {
            ensure!(kendall_tau_b(&x, &y).is_err(), "fixture {i}: fully tied input accepted");
            continue;
        }
        let tau = num / (sx * sy).sqrt();
        let nf = n as f64;
        let (tx, ty) = (ties(&x), ties(&y));
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let vt: f64 = tx.iter().map(|t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
        let vu: f64 = ty.iter().map(|t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
        let v1 = tx.iter().map(|t| t * (t - 1.0)).sum::<f64>() * ty.iter().map(|t| t * (t - 1.0)).sum::<f64>();
        let v2 = tx.iter().map(|t| t * (t - 1.0) * (t - 2.0)).sum::<f64>() * ty.iter().map(|t| t * (t - 1.0) * (t - 2.0)).sum::<f64>();
        let var = (v0 - vt - vu) / 18.0 + v1 / (2.0 * nf * (nf - 1.0)) + v2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
        let z = (num / 2.0) / var.sqrt();
        let p = (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0);

        let got = kendall_tau_b(&x, &y).unwrap();
        ensure!((got.tau - tau).abs() < TOL, "fixture {i}: tau {} vs {tau}", got.tau);
        ensure!((got.z - z).abs() < 1e-9, "fixture {i}: z {} vs {z}", got.z);
        ensure!((got.p_value - p).abs() < TOL, "fixture {i}: p {} vs {p}", got.p_value);
    }
    Ok(())
}

pub fn check_welch_t_one_sided(fixtures: u64) -> Result<(), String> {
    for i in 0..fixtures {
        let mut r = rng(5, i);
        let (na, nb) = (r.random_range(2..30), r.random_range(2..30));
        let shift = r.random_range(-1.0..1.0);
        let a: Vec<f64> = (0..na).map(|_| r.random_range(-1.0..1.0) * 2.0 + shift).collect();
        let b: Vec<f64> = (0..nb).map(|_| r.random_range(-1.0..1.0)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (qa, qb) = (var(&a) / na as f64, var(&b) / nb as f64);
        let t = (mean(&a) - mean(&b)) / (qa + qb).sqrt();
        let dof = (qa + qb).powi(2) / (qa * qa / (na - 1) as f64 + qb * qb / (nb - 1) as f64);
        let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
        let p_greater = dist.sf(t);

        let got = welch_t_one_sided(&a, &b, Alternative::AGreater).unwrap();
        ensure!((got.statistic - t).abs() < TOL * t.abs().max(1.0), "fixture {i}");
        ensure!((got.dof - dof).abs() < TOL * dof, "fixture {i}");
        ensure!((got.p_value - p_greater).abs() < TOL, "fixture {i}: {} vs {p_greater}", got.p_value);
        let other = welch_t_one_sided(&a, &b, Alternative::BGreater).unwrap();
        ensure!((other.p_value - dist.cdf(t)).abs() < TOL, "fixture {i}");
    }
    Ok(())
}

pub fn check_nearest_centroid(fixtures: u64) -> Result<(), String> {
    for i in 0..fixtures {
        let mut r = rng(6, i);
        let (k, d) = (r.random_range(2..5), r.random_range(1..4));
        // Dyadic coordinates and power-of-two class sizes keep centroids and
        // squared distances exact, so ties are real ties.
        let exact = i % 2 == 0;
        let coord = |r: &mut ChaCha8Rng| if exact { r.random_range(-4..=4) as f64 / 2.0 } else { r.random_range(-3.0..3.0) };
        let mut labels = Vec::new();
        let mut reps = Vec::new();
        for c in 1..=k {
            for _ in 0..[1, 2, 4][r.random_range(0..3)] {
                labels.push(c);
                reps.extend((0..d).map(|_| coord(&mut r)));
            }
        }
        let nq = r.random_range(1..20);
        let queries: Vec<f64> = (0..nq * d).map(|_| coord(&mut r)).collect();

        let mut want = Vec::new();
        for q in queries.chunks(d) {
            let mut best: Option<(usize, f64)> = None;
            for c in 1..=k {
                let members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == c).collect();
                let mu: Vec<f64> = (0..d)
                    .map(|x| members.iter().map(|&j| reps[j * d + x]).sum::<f64>() / members.len() as f64)
                    .collect();
                let sq: f64 = q.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.is_none_or(|(_, s)| sq < s) {
                    best = Some((c, sq));
                }
            }
            want.push(best.unwrap().0);
        }
        let train = LabeledReps::new(reps, d, labels).unwrap();
        ensure!(nearest_centroid(&train, &queries).unwrap() == want, "fixture {i}: labels differ");
    }
    Ok(())
}
