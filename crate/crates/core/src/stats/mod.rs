//! Hypothesis tests and rank statistics for comparing score populations.

pub mod special;

use std::collections::BTreeSet;

use crate::datamodel::{SampleId, Subset};
use crate::error::{Error, Result};
use crate::memorization::MemorizationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// H1: mean(a) > mean(b).
    AGreater,
    /// H1: mean(b) > mean(a).
    BGreater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    /// Welch t statistic, oriented as `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Cohen's d with pooled standard deviation; `None` when that is zero.
    pub effect_size_d: Option<f64>,
    /// Both samples had zero variance; the statistic is 0 or infinite by convention.
    pub degenerate: bool,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn check_sample(v: &[f64], name: &str) -> Result<()> {
    if v.len() < 2 {
        return Err(Error::invalid(format!(
            "sample {name} needs at least 2 values, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("sample {name} contains non-finite values")));
    }
    Ok(())
}

/// One-sided Welch t-test.
pub fn welch_t_one_sided(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    let effect_size_d = cohens_d(a, b).ok();

    if se2 == 0.0 {
        let statistic = if ma == mb {
            0.0
        } else if ma > mb {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let upper = if ma == mb {
            0.5
        } else if ma > mb {
            0.0
        } else {
            1.0
        };
        return Ok(TestResult {
            statistic,
            p_value: oriented(upper, alternative),
            dof: na + nb - 2.0,
            effect_size_d,
            degenerate: true,
        });
    }

    let statistic = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let upper = special::student_t_sf(statistic, dof);
    Ok(TestResult {
        statistic,
        p_value: oriented(upper, alternative),
        dof,
        effect_size_d,
        degenerate: false,
    })
}

fn oriented(upper_tail: f64, alternative: Alternative) -> f64 {
    let p = match alternative {
        Alternative::AGreater => upper_tail,
        Alternative::BGreater => 1.0 - upper_tail,
    };
    p.clamp(0.0, 1.0)
}

/// `(mean_a - mean_b) / pooled_std`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(Error::invalid("pooled standard deviation is zero"));
    }
    Ok((ma - mb) / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KendallResult {
    pub tau: f64,
    /// Two-sided p-value from the normal approximation with tie correction.
    pub p_value: f64,
    pub z: f64,
}

fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push((j - i) as f64);
        }
        i = j;
    }
    out
}

/// Kendall's tau-b with the tie-corrected normal approximation for the p-value.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("kendall tau needs at least 2 pairs"));
    }
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).ok_or_else(|| Error::invalid("NaN in kendall input"))?;
            let dy = y[i].partial_cmp(&y[j]).ok_or_else(|| Error::invalid("NaN in kendall input"))?;
            use std::cmp::Ordering::Equal;
            if dx == Equal {
                tied_x += 1;
            }
            if dy == Equal {
                tied_y += 1;
            }
            if dx != Equal && dy != Equal {
                if dx == dy {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - tied_x as f64) * (n0 - tied_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::invalid("kendall tau undefined: an input is entirely tied"));
    }
    let s = concordant as f64 - discordant as f64;
    let tau = (s / denom).clamp(-1.0, 1.0);

    let nf = n as f64;
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let sum_a = |g: &[f64]| g.iter().map(|t| t * (t - 1.0) * (2.0 * t + 5.0)).sum::<f64>();
    let sum_b = |g: &[f64]| g.iter().map(|t| t * (t - 1.0)).sum::<f64>();
    let sum_c = |g: &[f64]| g.iter().map(|t| t * (t - 1.0) * (t - 2.0)).sum::<f64>();
    let mut var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - sum_a(&tx) - sum_a(&ty)) / 18.0
        + sum_b(&tx) * sum_b(&ty) / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += sum_c(&tx) * sum_c(&ty) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let z = if var > 0.0 { s / var.sqrt() } else { 0.0 };
    let p_value = (2.0 * special::normal_sf(z.abs())).min(1.0);
    Ok(KendallResult { tau, p_value, z })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length samples of at least 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Normalized scores of both reports over their common universe, paired by id.
/// The reports must cover the same ids (restricted to `subset` when given).
pub fn paired_scores(
    a: &MemorizationReport,
    b: &MemorizationReport,
    subset: Option<Subset>,
) -> Result<(Vec<SampleId>, Vec<f64>, Vec<f64>)> {
    let pick = |r: &MemorizationReport| -> BTreeSet<SampleId> {
        r.entries
            .iter()
            .filter(|e| subset.is_none_or(|s| e.subset == s))
            .map(|e| e.sample)
            .collect()
    };
    let ids_a = pick(a);
    let ids_b = pick(b);
    if ids_a != ids_b {
        let diff = ids_a.symmetric_difference(&ids_b).next().copied().unwrap();
        return Err(Error::invalid(format!(
            "reports cover different samples (first difference: {diff})"
        )));
    }
    let ids: Vec<SampleId> = ids_a.into_iter().collect();
    let xs = ids.iter().map(|&i| a.get(i).unwrap().normalized).collect();
    let ys = ids.iter().map(|&i| b.get(i).unwrap().normalized).collect();
    Ok((ids, xs, ys))
}

/// Fraction of the `k` highest-ranked ids shared by two rankings.
pub fn top_k_overlap_ranked(rank_a: &[SampleId], rank_b: &[SampleId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("top-k overlap needs k >= 1"));
    }
    if k > rank_a.len() || k > rank_b.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds ranking length ({}, {})",
            rank_a.len(),
            rank_b.len()
        )));
    }
    let top: BTreeSet<SampleId> = rank_a[..k].iter().copied().collect();
    Ok(rank_b[..k].iter().filter(|id| top.contains(id)).count() as f64 / k as f64)
}

/// Overlap of the `k` most memorized samples (descending normalized score,
/// ties by ascending id) of two reports.
pub fn top_k_overlap(a: &MemorizationReport, b: &MemorizationReport, k: usize, subset: Option<Subset>) -> Result<f64> {
    top_k_overlap_ranked(&a.ranking(subset), &b.ranking(subset), k)
}
