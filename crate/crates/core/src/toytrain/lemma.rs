//! Empirical checks of the two closeness/overlap bounds on a trained encoder.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::encoder::ToyEncoder;
use crate::alignment::l2;
use crate::datamodel::SampleId;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};
use crate::synth::{augment, sample_augmentations, AugmentationSpec, Point};

const MIN_PAIR_DIST: f64 = 1e-9;

fn input_dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Largest `‖f(a) − f(b)‖ / ‖a − b‖` over the given pairs.
pub fn lipschitz_over_pairs(enc: &ToyEncoder, pairs: &[(Point, Point)]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        let d_in = input_dist(a, b);
        if d_in < MIN_PAIR_DIST {
            continue;
        }
        let ratio = l2(&enc.forward(a)?, &enc.forward(b)?) / d_in;
        best = Some(best.map_or(ratio, |m: f64| m.max(ratio)));
    }
    best.ok_or_else(|| Error::invalid("no probe pair with distinct points"))
}

/// Lipschitz estimate over `n_pairs` random pairs of `probes`. The pairs for
/// a given seed form one fixed sequence, so a larger `n_pairs` probes a
/// superset and never lowers the estimate.
pub fn estimate_lipschitz(enc: &ToyEncoder, probes: &[Point], n_pairs: usize, seed: u64) -> Result<f64> {
    if probes.len() < 2 {
        return Err(Error::invalid("need at least 2 probe points"));
    }
    let mut rng = rng_from(seed, &[stream::LIPSCHITZ]);
    let pairs: Vec<(Point, Point)> = (0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..probes.len());
            let mut j = rng.random_range(0..probes.len() - 1);
            if j >= i {
                j += 1;
            }
            (probes[i], probes[j])
        })
        .collect();
    lipschitz_over_pairs(enc, &pairs)
}

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Whether `p` lies in the (closed) hull returned by [`convex_hull`].
pub fn hull_contains(hull: &[Point], p: &Point) -> bool {
    const EPS: f64 = 1e-12;
    match hull.len() {
        0 => false,
        1 => input_dist(&hull[0], p) <= EPS,
        2 => {
            let (a, b) = (&hull[0], &hull[1]);
            let len = input_dist(a, b);
            cross(a, b, p).abs() <= EPS * (1.0 + len)
                && (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]) >= -EPS
                && (p[0] - b[0]) * (a[0] - b[0]) + (p[1] - b[1]) * (a[1] - b[1]) >= -EPS
        }
        n => (0..n).all(|i| cross(&hull[i], &hull[(i + 1) % n], p) >= -EPS),
    }
}

fn satisfied(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + 1e-12 * (1.0 + rhs.abs())
}

/// Closeness row: `‖f(x) − f(z)‖ ≤ L·β + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosenessRow {
    pub index: usize,
    pub point: Point,
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Overlap row: `L_align(f, z) ≤ σ·c + (1 − σ)·L·E‖z′ − z″‖`, where σ is the
/// share of view pairs of z lying inside the hull of the anchor's views and
/// the expectation runs over the remaining pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapRow {
    pub index: usize,
    pub sigma: f64,
    /// Share of single views (not pairs) inside the hull.
    pub sigma_views: f64,
    pub rest_input_dist: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheckReport {
    pub anchor: SampleId,
    pub c: f64,
    pub l_hat: f64,
    pub closeness: Vec<ClosenessRow>,
    pub overlap: Vec<OverlapRow>,
}

impl LemmaCheckReport {
    pub fn n_rows(&self) -> usize {
        self.closeness.len() + self.overlap.len()
    }

    pub fn n_satisfied(&self) -> usize {
        self.closeness.iter().filter(|r| r.satisfied).count() + self.overlap.iter().filter(|r| r.satisfied).count()
    }

    pub fn all_satisfied(&self) -> bool {
        self.n_satisfied() == self.n_rows()
    }

    /// Satisfied flags with `c` and `L_hat` scaled, closeness rows first.
    pub fn recheck(&self, c_scale: f64, l_scale: f64) -> Vec<bool> {
        let (c, l) = (self.c * c_scale, self.l_hat * l_scale);
        let a = self.closeness.iter().map(|r| satisfied(r.lhs, l * r.beta + c));
        let b = self
            .overlap
            .iter()
            .map(|r| satisfied(r.lhs, r.sigma * c + (1.0 - r.sigma) * l * r.rest_input_dist));
        a.chain(b).collect()
    }

    /// True when no satisfied row fails after inflating `c`, `L_hat` or both by `factor`.
    pub fn monotone_under(&self, factor: f64) -> bool {
        let base = self.recheck(1.0, 1.0);
        [(factor, 1.0), (1.0, factor), (factor, factor)]
            .iter()
            .all(|&(cs, ls)| base.iter().zip(self.recheck(cs, ls)).all(|(&before, after)| !before || after))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "anchor {}", self.anchor);
        let _ = writeln!(s, "c {:.9}", self.c);
        let _ = writeln!(s, "l_hat {:.9}", self.l_hat);
        let _ = writeln!(s, "satisfied {}/{}", self.n_satisfied(), self.n_rows());
        let _ = writeln!(s, "kind,index,beta_or_sigma,lhs,rhs,satisfied");
        for r in &self.closeness {
            let _ = writeln!(s, "closeness,{},{:.9},{:.9},{:.9},{}", r.index, r.beta, r.lhs, r.rhs, r.satisfied);
        }
        for r in &self.overlap {
            let _ = writeln!(s, "overlap,{},{:.9},{:.9},{:.9},{}", r.index, r.sigma, r.lhs, r.rhs, r.satisfied);
        }
        s
    }
}

/// `n` points scattered around `center` with Gaussian spread `radius`.
pub fn nearby_points(center: &Point, n: usize, radius: f64, seed: u64) -> Vec<Point> {
    let mut rng = rng_from(seed, &[stream::LIPSCHITZ, 1]);
    (0..n)
        .map(|_| {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            [center[0] + radius * dx, center[1] + radius * dy]
        })
        .collect()
}

/// Evaluate both bounds for every test point against the anchor sample.
///
/// The anchor's views are its measurement views under `aug`; each test
/// point gets `aug.k` views of its own. `c` is the largest representation
/// distance among the anchor, its views and every test-point view inside
/// the anchor's view hull. `L_hat` is measured on exactly the pairs the
/// bounds rely on: each test point with its nearest anchor view, and every
/// test-view pair not inside the hull.
pub fn check_lemma_bounds(
    enc: &ToyEncoder,
    anchor: (SampleId, Point),
    training: &[SampleId],
    test_points: &[Point],
    aug: &AugmentationSpec,
) -> Result<LemmaCheckReport> {
    let (anchor_id, x) = anchor;
    if !training.contains(&anchor_id) {
        return Err(Error::MissingSample(anchor_id, "encoder training set".into()));
    }
    aug.validate()?;
    let mut anchor_pts = vec![x];
    anchor_pts.extend(sample_augmentations(&x, aug, anchor_id));
    let hull = convex_hull(&anchor_pts[1..]);

    let test_views: Vec<Vec<Point>> = test_points
        .iter()
        .enumerate()
        .map(|(i, z)| {
            (0..aug.k as u64)
                .map(|v| augment(z, aug.kind, aug.strength, aug.seed, &[stream::LIPSCHITZ, 2, i as u64, v]))
                .collect()
        })
        .collect();
    let inside: Vec<Vec<bool>> = test_views.iter().map(|vs| vs.iter().map(|v| hull_contains(&hull, v)).collect()).collect();

    let mut c_set: Vec<Vec<f64>> = anchor_pts.iter().map(|p| enc.forward(p)).collect::<Result<_>>()?;
    for (vs, ins) in test_views.iter().zip(&inside) {
        for (v, &is_in) in vs.iter().zip(ins) {
            if is_in {
                c_set.push(enc.forward(v)?);
            }
        }
    }
    let mut c: f64 = 0.0;
    for i in 0..c_set.len() {
        for j in i + 1..c_set.len() {
            c = c.max(l2(&c_set[i], &c_set[j]));
        }
    }

    let mut pairs: Vec<(Point, Point)> = Vec::new();
    let mut betas = Vec::with_capacity(test_points.len());
    for z in test_points {
        let (nearest, beta) = anchor_pts
            .iter()
            .map(|a| (*a, input_dist(a, z)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("anchor set is never empty");
        betas.push(beta);
        pairs.push((nearest, *z));
    }
    for (vs, ins) in test_views.iter().zip(&inside) {
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                if !(ins[i] && ins[j]) {
                    pairs.push((vs[i], vs[j]));
                }
            }
        }
    }
    // Covering pairs can all be degenerate (e.g. every test point is the anchor).
    let l_hat = lipschitz_over_pairs(enc, &pairs).unwrap_or(0.0);

    let fx = enc.forward(&x)?;
    let mut closeness = Vec::with_capacity(test_points.len());
    let mut overlap = Vec::with_capacity(test_points.len());
    for (i, z) in test_points.iter().enumerate() {
        let lhs = l2(&fx, &enc.forward(z)?);
        let rhs = l_hat * betas[i] + c;
        closeness.push(ClosenessRow {
            index: i,
            point: *z,
            beta: betas[i],
            lhs,
            rhs,
            satisfied: satisfied(lhs, rhs),
        });

        let vs = &test_views[i];
        let reps: Vec<Vec<f64>> = vs.iter().map(|v| enc.forward(v)).collect::<Result<_>>()?;
        let (mut total, mut n_pairs, mut n_in, mut rest_sum, mut n_rest) = (0.0, 0usize, 0usize, 0.0, 0usize);
        for a in 0..vs.len() {
            for b in a + 1..vs.len() {
                total += l2(&reps[a], &reps[b]);
                n_pairs += 1;
                if inside[i][a] && inside[i][b] {
                    n_in += 1;
                } else {
                    rest_sum += input_dist(&vs[a], &vs[b]);
                    n_rest += 1;
                }
            }
        }
        let lhs = total / n_pairs as f64;
        let sigma = n_in as f64 / n_pairs as f64;
        let rest = if n_rest == 0 { 0.0 } else { rest_sum / n_rest as f64 };
        let rhs = sigma * c + (1.0 - sigma) * l_hat * rest;
        overlap.push(OverlapRow {
            index: i,
            sigma,
            sigma_views: inside[i].iter().filter(|&&b| b).count() as f64 / vs.len() as f64,
            rest_input_dist: rest,
            lhs,
            rhs,
            satisfied: satisfied(lhs, rhs),
        });
    }
    Ok(LemmaCheckReport {
        anchor: anchor_id,
        c,
        l_hat,
        closeness,
        overlap,
    })
}
