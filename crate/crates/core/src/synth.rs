//! Synthetic 2-D data with latent classes, central clusters and outliers,
//! plus the augmentations used both for training and for measurement.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::SampleId;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub centers: Vec<Point>,
    pub cluster_std: f64,
    pub n_per_class: usize,
    pub n_outliers_per_class: usize,
    /// Distance of outliers from their class center.
    pub outlier_radius: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 2,
            centers: vec![[-5.0, 0.0], [5.0, 0.0]],
            cluster_std: 0.05,
            n_per_class: 100,
            n_outliers_per_class: 4,
            outlier_radius: 4.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.centers.len() != self.n_classes {
            return Err(Error::invalid(format!(
                "{} centers given for {} classes",
                self.centers.len(),
                self.n_classes
            )));
        }
        if !(self.cluster_std > 0.0) {
            return Err(Error::invalid("cluster_std must be positive"));
        }
        if !(self.outlier_radius > 3.0 * self.cluster_std) {
            return Err(Error::invalid(format!(
                "outlier_radius {} must exceed 3 * cluster_std = {}",
                self.outlier_radius,
                3.0 * self.cluster_std
            )));
        }
        for i in 0..self.n_classes {
            for j in i + 1..self.n_classes {
                let d = dist(&self.centers[i], &self.centers[j]);
                if !(d > 2.0 * self.outlier_radius) {
                    return Err(Error::invalid(format!(
                        "centers {i} and {j} are {d:.3} apart, need more than {}",
                        2.0 * self.outlier_radius
                    )));
                }
            }
        }
        Ok(())
    }

    /// The same spec with every center moved by `offset`.
    pub fn shifted(&self, offset: Point) -> SynthSpec {
        let mut s = self.clone();
        for c in &mut s.centers {
            c[0] += offset[0];
            c[1] += offset[1];
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthPoint {
    pub id: SampleId,
    pub coords: Point,
    /// Latent class, 1-based.
    pub class: usize,
    pub is_outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthDataset {
    points: Vec<SynthPoint>,
    index: HashMap<SampleId, usize>,
}

impl SynthDataset {
    pub fn new(points: Vec<SynthPoint>) -> Result<Self> {
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if p.class == 0 {
                return Err(Error::invalid(format!("sample {} has class 0; labels are 1-based", p.id)));
            }
            if index.insert(p.id, i).is_some() {
                return Err(Error::DuplicateId(p.id));
            }
        }
        Ok(Self { points, index })
    }

    pub fn points(&self) -> &[SynthPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, id: SampleId) -> Option<&SynthPoint> {
        self.index.get(&id).map(|&i| &self.points[i])
    }

    pub fn require(&self, id: SampleId) -> Result<&SynthPoint> {
        self.get(id).ok_or_else(|| Error::MissingSample(id, "dataset".into()))
    }

    pub fn select(&self, ids: &[SampleId]) -> Result<Vec<SynthPoint>> {
        ids.iter().map(|&id| self.require(id).copied()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.points.iter().map(|p| p.class).max().unwrap_or(0)
    }

    pub fn extend(&mut self, more: Vec<SynthPoint>) -> Result<()> {
        let mut all = std::mem::take(&mut self.points);
        all.extend(more);
        *self = SynthDataset::new(all)?;
        Ok(())
    }

    pub fn next_id(&self) -> u64 {
        self.points.iter().map(|p| p.id.0 + 1).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "sample_id,x0,x1,class,is_outlier").unwrap();
        for p in &self.points {
            writeln!(
                out,
                "{},{:?},{:?},{},{}",
                p.id, p.coords[0], p.coords[1], p.class, p.is_outlier as u8
            )
            .unwrap();
        }
        String::from_utf8(out).unwrap()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut points = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(format!("dataset row {row}"), e))?;
            if rec.len() != 5 {
                return Err(Error::parse(format!("dataset row {row}"), "expected 5 fields"));
            }
            let bad = |e: &dyn std::fmt::Display| Error::parse(format!("dataset row {row}"), e);
            points.push(SynthPoint {
                id: SampleId(rec[0].parse().map_err(|e| bad(&e))?),
                coords: [rec[1].parse().map_err(|e| bad(&e))?, rec[2].parse().map_err(|e| bad(&e))?],
                class: rec[3].parse().map_err(|e| bad(&e))?,
                is_outlier: match &rec[4] {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => return Err(bad(&format!("bad outlier flag {other:?}"))),
                },
            });
        }
        SynthDataset::new(points)
    }
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian clusters around each center plus outliers at `outlier_radius`,
/// evenly spaced in angle from a random starting direction. Ids are assigned
/// class by class, cluster points first.
pub fn generate_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = rng_from(seed, &[stream::DATASET]);
    let mut points = Vec::new();
    let mut next = 0u64;
    for (k, c) in spec.centers.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            let coords = [
                c[0] + spec.cluster_std * normal(&mut rng),
                c[1] + spec.cluster_std * normal(&mut rng),
            ];
            points.push(SynthPoint {
                id: SampleId(next),
                coords,
                class: k + 1,
                is_outlier: false,
            });
            next += 1;
        }
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for j in 0..spec.n_outliers_per_class {
            let angle = phase + std::f64::consts::TAU * j as f64 / spec.n_outliers_per_class as f64;
            let coords = [
                c[0] + spec.outlier_radius * angle.cos(),
                c[1] + spec.outlier_radius * angle.sin(),
            ];
            points.push(SynthPoint {
                id: SampleId(next),
                coords,
                class: k + 1,
                is_outlier: true,
            });
            next += 1;
        }
    }
    SynthDataset::new(points)
}

/// Points within Gaussian `jitter` of each source point, keeping its class and
/// outlier flag, with fresh ids starting at `first_id`.
pub fn near_copies(sources: &[SynthPoint], jitter: f64, first_id: u64, seed: u64) -> Vec<SynthPoint> {
    sources
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = first_id + i as u64;
            let mut rng = rng_from(seed, &[stream::DATASET, id]);
            SynthPoint {
                id: SampleId(id),
                coords: [
                    p.coords[0] + jitter * normal(&mut rng),
                    p.coords[1] + jitter * normal(&mut rng),
                ],
                ..*p
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugKind {
    #[default]
    GaussianNoise,
    CoordinateMask,
    ScaleJitter,
}

impl std::str::FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-noise" => Ok(AugKind::GaussianNoise),
            "coordinate-mask" => Ok(AugKind::CoordinateMask),
            "scale-jitter" => Ok(AugKind::ScaleJitter),
            _ => Err(Error::invalid(format!("unknown augmentation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    /// Noise std, mask probability, or jitter half-range.
    pub strength: f64,
    /// Views per sample.
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            kind: AugKind::GaussianNoise,
            strength: 0.3,
            k: 5,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0) {
            return Err(Error::invalid("augmentation strength must be positive"));
        }
        if self.k < 2 {
            return Err(Error::invalid("augmentation needs at least 2 views"));
        }
        if self.kind == AugKind::CoordinateMask && self.strength > 1.0 {
            return Err(Error::invalid("mask probability must be at most 1"));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let kind = match self.kind {
            AugKind::GaussianNoise => "gaussian-noise",
            AugKind::CoordinateMask => "coordinate-mask",
            AugKind::ScaleJitter => "scale-jitter",
        };
        format!("{kind}:strength={}:k={}:seed={}", self.strength, self.k, self.seed)
    }
}

/// One augmented view of `x`, drawn from a generator seeded by `parts`.
pub fn augment(x: &Point, kind: AugKind, strength: f64, seed: u64, parts: &[u64]) -> Point {
    let mut rng = rng_from(seed, parts);
    match kind {
        AugKind::GaussianNoise => [
            x[0] + strength * normal(&mut rng),
            x[1] + strength * normal(&mut rng),
        ],
        AugKind::CoordinateMask => {
            let mut out = *x;
            for v in &mut out {
                if rng.random::<f64>() < strength {
                    *v = 0.0;
                }
            }
            out
        }
        AugKind::ScaleJitter => {
            let u = rng.random_range(-strength..=strength);
            [x[0] * (1.0 + u), x[1] * (1.0 + u)]
        }
    }
}

/// The `spec.k` measurement views of sample `sample`, deterministic in
/// (spec.seed, sample, view index).
pub fn sample_augmentations(x: &Point, spec: &AugmentationSpec, sample: SampleId) -> Vec<Point> {
    (0..spec.k as u64)
        .map(|v| augment(x, spec.kind, spec.strength, spec.seed, &[stream::AUG_MEASURE, sample.0, v]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_counts() {
        let spec = SynthSpec {
            n_per_class: 0,
            n_outliers_per_class: 1,
            ..Default::default()
        };
        let d = generate_dataset(&spec, 3).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.points().iter().all(|p| p.is_outlier));
        for p in d.points() {
            let c = spec.centers[p.class - 1];
            assert!((dist(&p.coords, &c) - spec.outlier_radius).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(generate_dataset(&spec, 9).unwrap(), generate_dataset(&spec, 9).unwrap());
        assert_ne!(generate_dataset(&spec, 9).unwrap(), generate_dataset(&spec, 10).unwrap());
    }

    #[test]
    fn cluster_means_near_centers() {
        let spec = SynthSpec {
            cluster_std: 0.1,
            n_per_class: 100,
            n_outliers_per_class: 0,
            ..Default::default()
        };
        let d = generate_dataset(&spec, 1).unwrap();
        for (k, c) in spec.centers.iter().enumerate() {
            let pts: Vec<&SynthPoint> = d.points().iter().filter(|p| p.class == k + 1).collect();
            let mx = pts.iter().map(|p| p.coords[0]).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.coords[1]).sum::<f64>() / pts.len() as f64;
            assert!(dist(&[mx, my], c) < 0.05);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let close = SynthSpec {
            centers: vec![[0.0, 0.0], [1.0, 0.0]],
            ..Default::default()
        };
        assert!(generate_dataset(&close, 0).is_err());
        let tight = SynthSpec {
            outlier_radius: 0.1,
            ..Default::default()
        };
        assert!(generate_dataset(&tight, 0).is_err());
    }

    #[test]
    fn tiny_strength_leaves_point_fixed() {
        let x = [0.7, -1.3];
        for kind in [AugKind::GaussianNoise, AugKind::ScaleJitter, AugKind::CoordinateMask] {
            let spec = AugmentationSpec {
                kind,
                strength: 1e-12,
                k: 6,
                seed: 4,
            };
            for v in sample_augmentations(&x, &spec, SampleId(3)) {
                assert!(dist(&v, &x) < 1e-9, "{kind:?}");
            }
        }
    }

    #[test]
    fn views_are_deterministic() {
        let spec = AugmentationSpec::default();
        let a = sample_augmentations(&[1.0, 2.0], &spec, SampleId(8));
        assert_eq!(a, sample_augmentations(&[1.0, 2.0], &spec, SampleId(8)));
        assert_ne!(a, sample_augmentations(&[1.0, 2.0], &spec, SampleId(9)));
    }

    #[test]
    fn gaussian_view_moments() {
        let spec = AugmentationSpec {
            strength: 0.2,
            k: 1000,
            ..Default::default()
        };
        let views = sample_augmentations(&[0.0, 0.0], &spec, SampleId(0));
        for c in 0..2 {
            let m = views.iter().map(|v| v[c]).sum::<f64>() / 1000.0;
            let s = (views.iter().map(|v| (v[c] - m).powi(2)).sum::<f64>() / 999.0).sqrt();
            assert!((s - 0.2).abs() < 0.02, "coordinate {c}: {s}");
        }
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = generate_dataset(&SynthSpec::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        d.write_csv(&p).unwrap();
        assert_eq!(SynthDataset::read_csv(&p).unwrap(), d);
    }

    fn min_view_distance(a: &[Point], b: &[Point]) -> f64 {
        a.iter()
            .flat_map(|u| b.iter().map(move |v| dist(u, v)))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn neighbors_share_augmentation_regions() {
        // two points closer than the noise strength: some view pair lands
        // within `strength` of each other in most seeds
        let strength = 0.15;
        let mut hits = 0;
        for seed in 0..40 {
            let spec = AugmentationSpec {
                strength,
                k: 5,
                seed,
                ..Default::default()
            };
            let a = sample_augmentations(&[0.0, 0.0], &spec, SampleId(1));
            let b = sample_augmentations(&[0.1, 0.05], &spec, SampleId(2));
            if min_view_distance(&a, &b) < strength {
                hits += 1;
            }
        }
        assert!(hits >= 20, "{hits}/40");
    }

    #[test]
    fn outlier_views_stay_clear_of_clusters() {
        let spec = SynthSpec::default();
        let aug = AugmentationSpec::default();
        for seed in 0..5 {
            let d = generate_dataset(&spec, seed).unwrap();
            let aug = AugmentationSpec { seed, ..aug };
            let views: Vec<(bool, Vec<Point>)> = d
                .points()
                .iter()
                .map(|p| (p.is_outlier, sample_augmentations(&p.coords, &aug, p.id)))
                .collect();
            for (out, vo) in views.iter().filter(|v| v.0) {
                assert!(out);
                for (_, vc) in views.iter().filter(|v| !v.0) {
                    assert!(min_view_distance(vo, vc) > aug.strength);
                }
            }
        }
    }
}
