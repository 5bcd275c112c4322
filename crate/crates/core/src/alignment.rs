//! Distances between representations and the alignment loss of a sample: the
//! mean distance between representations of its augmented views.

use serde::{Deserialize, Serialize};

use crate::datamodel::{RepresentationSet, SampleId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L2,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (expected l2 or cosine)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

pub fn pairwise_distance(u: &[f64], v: &[f64], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    match metric {
        Metric::L2 => Ok(l2(u, v)),
        Metric::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::invalid("cosine distance of a zero vector"));
            }
            Ok((1.0 - dot(u, v) / (nu * nv)).max(0.0))
        }
    }
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn l2(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance over the unordered pairs of distinct rows of a `k x dim`
/// row-major matrix. Requires `k >= 2`.
pub fn alignment_loss(views: &[f64], dim: usize, metric: Metric) -> Result<f64> {
    if dim == 0 || !views.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of width {dim}",
            views.len()
        )));
    }
    let k = views.len() / dim;
    if k < 2 {
        return Err(Error::invalid(format!("alignment needs at least 2 views, got {k}")));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += pairwise_distance(
                &views[i * dim..(i + 1) * dim],
                &views[j * dim..(j + 1) * dim],
                metric,
            )?;
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Alignment of `sample` averaged over encoder seeds.
pub fn expected_alignment(seeds: &[RepresentationSet], sample: SampleId, metric: Metric) -> Result<f64> {
    let first = seeds
        .first()
        .ok_or_else(|| Error::invalid("empty seed list"))?;
    let mut total = 0.0;
    for set in seeds {
        if set.n_views() != first.n_views() || set.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "seed {:?} has shape [{}x{}], expected [{}x{}]",
                set.encoder_id(),
                set.n_views(),
                set.dim(),
                first.n_views(),
                first.dim()
            )));
        }
        total += alignment_loss(set.views_of(sample)?, set.dim(), metric)?;
    }
    Ok(total / seeds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn l2_three_four_five() {
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0], Metric::L2).unwrap(), 5.0);
    }

    #[test]
    fn cosine_self_is_zero() {
        let u = [0.3, -1.2, 4.0];
        assert!(pairwise_distance(&u, &u, Metric::Cosine).unwrap().abs() < 1e-15);
        assert!(pairwise_distance(&u, &[0.0; 3], Metric::Cosine).is_err());
        assert!(matches!(
            pairwise_distance(&u, &[1.0], Metric::L2),
            Err(Error::DimensionMismatch { left: 3, right: 1 })
        ));
    }

    #[test]
    fn l2_matches_componentwise_oracle() {
        let mut rng = crate::rng::rng_from(5, &[]);
        for _ in 0..20 {
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut ss = 0.0;
            for i in 0..8 {
                let diff = u[i] - v[i];
                ss += diff * diff;
            }
            assert!((pairwise_distance(&u, &v, Metric::L2).unwrap() - ss.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(alignment_loss(&[0.0, 0.0, 3.0, 4.0], 2, Metric::L2).unwrap(), 5.0);
        assert_eq!(alignment_loss(&[1.5, -2.0].repeat(4), 2, Metric::L2).unwrap(), 0.0);
        // pairs: (0,0)-(1,0) = 1, (0,0)-(0,1) = 1, (1,0)-(0,1) = sqrt 2
        let expected = (1.0 + 1.0 + 2f64.sqrt()) / 3.0;
        let got = alignment_loss(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0], 2, Metric::L2).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 1.138071).abs() < 1e-6);
        assert!(alignment_loss(&[1.0, 2.0], 2, Metric::L2).is_err());
    }

    fn set(name: &str, data: Vec<f64>) -> RepresentationSet {
        RepresentationSet::new(name, vec![SampleId(1)], data.len() / 2, 2, data).unwrap()
    }

    #[test]
    fn expected_alignment_averages_seeds() {
        // per-seed alignments 0.2 and 0.4
        let a = set("a", vec![0.0, 0.0, 0.2, 0.0]);
        let b = set("b", vec![0.0, 0.0, 0.0, 0.4]);
        let one = expected_alignment(std::slice::from_ref(&a), SampleId(1), Metric::L2).unwrap();
        assert!((one - 0.2).abs() < 1e-15);
        let two = expected_alignment(&[a, b], SampleId(1), Metric::L2).unwrap();
        assert!((two - 0.3).abs() < 1e-15);
        assert!(expected_alignment(&[], SampleId(1), Metric::L2).is_err());
        let c = set("c", vec![0.0; 4]);
        assert!(matches!(
            expected_alignment(&[c], SampleId(2), Metric::L2),
            Err(Error::MissingSample(SampleId(2), _))
        ));
    }

    #[test]
    fn expected_alignment_matches_naive_loop() {
        let mut rng = crate::rng::rng_from(9, &[]);
        let (k, d) = (4, 3);
        let seeds: Vec<RepresentationSet> = (0..3)
            .map(|s| {
                let data = (0..2 * k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                RepresentationSet::new(format!("s{s}"), vec![SampleId(0), SampleId(1)], k, d, data).unwrap()
            })
            .collect();
        let mut acc = 0.0;
        for s in &seeds {
            let v = &s.data()[k * d..];
            let mut sum = 0.0;
            let mut count = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if i < j {
                        let mut ss = 0.0;
                        for c in 0..d {
                            ss += (v[i * d + c] - v[j * d + c]).powi(2);
                        }
                        sum += ss.sqrt();
                        count += 1.0;
                    }
                }
            }
            acc += sum / count;
        }
        let got = expected_alignment(&seeds, SampleId(1), Metric::L2).unwrap();
        assert!((got - acc / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..6), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let flat: Vec<f64> = rows.concat();
            let mut perm = rows.clone();
            perm.shuffle(&mut crate::rng::rng_from(seed, &[]));
            let a = alignment_loss(&flat, 3, Metric::L2).unwrap();
            let b = alignment_loss(&perm.concat(), 3, Metric::L2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn scales_linearly(rows in prop::collection::vec(-5.0f64..5.0, 8), s in 0.01f64..100.0) {
            let a = alignment_loss(&rows, 2, Metric::L2).unwrap();
            let scaled: Vec<f64> = rows.iter().map(|v| v * s).collect();
            let b = alignment_loss(&scaled, 2, Metric::L2).unwrap();
            prop_assert!((b - s * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn two_views_equal_pair_distance(u in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(-5.0f64..5.0, 4)) {
            let both = [u.clone(), v.clone()].concat();
            prop_assert_eq!(alignment_loss(&both, 4, Metric::L2).unwrap(), pairwise_distance(&u, &v, Metric::L2).unwrap());
        }

        #[test]
        fn zero_iff_all_equal(row in prop::collection::vec(-5.0f64..5.0, 3), k in 2usize..5, bump in 0usize..5) {
            let mut flat = row.repeat(k);
            prop_assert_eq!(alignment_loss(&flat, 3, Metric::L2).unwrap(), 0.0);
            flat[(bump % k) * 3] += 0.5;
            prop_assert!(alignment_loss(&flat, 3, Metric::L2).unwrap() > 0.0);
        }
    }
}
