//! Leave-out experiment driver: build the four partitions, train encoder
//! families with and without the candidates, and export their
//! representations of shared augmented views.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderArch, ToyEncoder};
use super::loss::LossConfig;
use super::train::{train_encoder, TrainConfig, TrainedEncoder};
use crate::datamodel::{RepresentationSet, SampleId, ScoreConfig, SplitManifest};
use crate::error::{Error, Result};
use crate::memorization::{score_report, MemorizationReport};
use crate::rng::{derive_seed, rng_from, stream};
use crate::synth::{generate_dataset, near_copies, sample_augmentations, AugmentationSpec, SynthDataset, SynthPoint, SynthSpec};

/// Partition sizes. Outliers go to the candidate and independent sets only;
/// the extra set holds fresh cluster points plus `extra_near_candidates`
/// near-copies of candidate outliers (unseen points from the same rare
/// regions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Composition {
    pub n_shared: usize,
    pub n_candidates: usize,
    pub n_independent: usize,
    pub n_extra: usize,
    pub candidate_outliers: usize,
    pub independent_outliers: usize,
    pub extra_near_candidates: usize,
    /// Gaussian offset of the near-copies from their source outlier.
    pub near_copy_jitter: f64,
}

impl Default for Composition {
    fn default() -> Self {
        Self {
            n_shared: 200,
            n_candidates: 40,
            n_independent: 40,
            n_extra: 40,
            candidate_outliers: 32,
            independent_outliers: 32,
            extra_near_candidates: 12,
            near_copy_jitter: 0.03,
        }
    }
}

impl Composition {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_outliers > self.n_candidates
            || self.independent_outliers > self.n_independent
            || self.extra_near_candidates > self.n_extra
        {
            return Err(Error::invalid("partition holds more outliers than samples"));
        }
        if self.extra_near_candidates > self.candidate_outliers {
            return Err(Error::invalid("more near-copies requested than candidate outliers"));
        }
        if self.n_candidates == 0 {
            return Err(Error::invalid("candidate set must be nonempty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Geometry of the data; per-class counts are derived from `composition`.
    pub synth: SynthSpec,
    pub composition: Composition,
    pub arch: EncoderArch,
    /// Views used to measure alignment (shared by every encoder).
    pub measure_aug: AugmentationSpec,
    /// Augmentation used during training.
    pub train_aug: AugmentationSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    /// Encoders per family.
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            composition: Composition::default(),
            arch: EncoderArch::default(),
            measure_aug: AugmentationSpec::default(),
            train_aug: AugmentationSpec::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            n_seeds: 3,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// The same configuration with every seed derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.measure_aug.seed = derive_seed(seed, &[stream::AUG_MEASURE]);
        c.train.seed = derive_seed(seed, &[stream::AUG_TRAIN]);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.composition.validate()?;
        self.measure_aug.validate()?;
        self.train_aug.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::invalid("n_seeds must be at least 1"));
        }
        if self.measure_aug.k != self.score.n_views {
            return Err(Error::invalid(format!(
                "measurement augmentation draws {} views but scoring expects {}",
                self.measure_aug.k, self.score.n_views
            )));
        }
        Ok(())
    }
}

fn round_robin(mut by_class: Vec<Vec<SynthPoint>>) -> Vec<SynthPoint> {
    let mut out = Vec::new();
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for class in by_class.iter_mut() {
            if let Some(p) = class.get(i) {
                out.push(*p);
            }
        }
    }
    out
}

/// Generate the dataset and its class-balanced partition.
pub fn build_split(cfg: &PipelineConfig) -> Result<(SynthDataset, SplitManifest)> {
    cfg.validate()?;
    let c = &cfg.composition;
    let k = cfg.synth.n_classes.max(1);
    let inliers = c.n_shared + (c.n_candidates - c.candidate_outliers) + (c.n_independent - c.independent_outliers)
        + (c.n_extra - c.extra_near_candidates);
    let outliers = c.candidate_outliers + c.independent_outliers;
    let spec = SynthSpec {
        n_per_class: inliers.div_ceil(k),
        n_outliers_per_class: outliers.div_ceil(k),
        ..cfg.synth.clone()
    };
    let raw = generate_dataset(&spec, derive_seed(cfg.seed, &[stream::DATASET]))?;
    let mut rng = rng_from(cfg.seed, &[stream::SPLIT]);
    let mut group = |outlier: bool| {
        let mut by_class: Vec<Vec<SynthPoint>> = vec![Vec::new(); k];
        for p in raw.points().iter().filter(|p| p.is_outlier == outlier) {
            by_class[p.class - 1].push(*p);
        }
        for v in &mut by_class {
            v.shuffle(&mut rng);
        }
        round_robin(by_class)
    };
    let inl = group(false);
    let out = group(true);

    let mut take_in = inl.into_iter();
    let mut take_out = out.into_iter();
    let next = |it: &mut std::vec::IntoIter<SynthPoint>, n: usize| -> Vec<SynthPoint> { it.by_ref().take(n).collect() };
    let shared = next(&mut take_in, c.n_shared);
    let mut candidates = next(&mut take_out, c.candidate_outliers);
    let cand_outliers = candidates.clone();
    candidates.extend(next(&mut take_in, c.n_candidates - c.candidate_outliers));
    let mut independent = next(&mut take_out, c.independent_outliers);
    independent.extend(next(&mut take_in, c.n_independent - c.independent_outliers));
    let mut extra = next(&mut take_in, c.n_extra - c.extra_near_candidates);

    let copies = near_copies(
        &cand_outliers[..c.extra_near_candidates],
        c.near_copy_jitter,
        raw.next_id(),
        derive_seed(cfg.seed, &[stream::DATASET, 1]),
    );
    extra.extend(copies.iter().copied());

    let mut points: Vec<SynthPoint> = shared
        .iter()
        .chain(&candidates)
        .chain(&independent)
        .chain(&extra)
        .copied()
        .collect();
    points.sort_by_key(|p| p.id);
    let ids = |v: &[SynthPoint]| {
        let mut ids: Vec<SampleId> = v.iter().map(|p| p.id).collect();
        ids.sort();
        ids
    };
    let manifest = SplitManifest {
        shared: ids(&shared),
        candidates: ids(&candidates),
        independent: ids(&independent),
        extra: ids(&extra),
    };
    Ok((SynthDataset::new(points)?, manifest))
}

/// Representations of the measurement views of `ids`, rounded to storage precision.
pub fn evaluate_views(
    enc: &ToyEncoder,
    dataset: &SynthDataset,
    ids: &[SampleId],
    aug: &AugmentationSpec,
    encoder_id: &str,
) -> Result<RepresentationSet> {
    let mut data = Vec::with_capacity(ids.len() * aug.k * enc.arch.output);
    for &id in ids {
        let p = dataset.require(id)?;
        for v in sample_augmentations(&p.coords, aug, id) {
            data.extend(enc.forward(&v)?);
        }
    }
    Ok(RepresentationSet::new(encoder_id, ids.to_vec(), aug.k, enc.arch.output, data)?.to_storage_precision())
}

/// Encoders of both families and their representation sets.
#[derive(Debug, Clone)]
pub struct LeaveOut {
    pub f_encoders: Vec<TrainedEncoder>,
    pub g_encoders: Vec<TrainedEncoder>,
    pub f_sets: Vec<RepresentationSet>,
    pub g_sets: Vec<RepresentationSet>,
}

impl LeaveOut {
    /// Re-measure every encoder on a different set of views.
    pub fn remeasure(&self, dataset: &SynthDataset, ids: &[SampleId], aug: &AugmentationSpec) -> Result<(Vec<RepresentationSet>, Vec<RepresentationSet>)> {
        let run = |encs: &[TrainedEncoder], role: &str| -> Result<Vec<RepresentationSet>> {
            encs.iter()
                .enumerate()
                .map(|(s, t)| evaluate_views(&t.encoder, dataset, ids, aug, &format!("{role}{s}")))
                .collect()
        };
        Ok((run(&self.f_encoders, "f")?, run(&self.g_encoders, "g")?))
    }
}

/// Seed used to initialize encoder `index` of either family. Both families
/// share initializations index by index.
pub fn init_seed(train: &TrainConfig, index: usize) -> u64 {
    derive_seed(train.seed, &[stream::INIT, index as u64])
}

pub fn training_items(dataset: &SynthDataset, ids: &[SampleId]) -> Result<Vec<(SampleId, [f64; 2])>> {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.iter().map(|&id| Ok((id, dataset.require(id)?.coords))).collect()
}

/// Train `n_seeds` encoders on the shared and candidate points and
/// `n_seeds` on the shared and independent points, then represent the
/// measurement views of every manifest sample with each of them.
pub fn leave_out_experiment(
    dataset: &SynthDataset,
    manifest: &SplitManifest,
    cfg: &PipelineConfig,
) -> Result<LeaveOut> {
    cfg.validate()?;
    // Shared points first, then the family-specific ones: with equal-size
    // candidate and independent sets the two families see the same batches
    // except for the swapped slots.
    let paired = |own: &[SampleId]| -> Result<Vec<(SampleId, [f64; 2])>> {
        let mut items = training_items(dataset, &manifest.shared)?;
        items.extend(training_items(dataset, own)?);
        Ok(items)
    };
    let f_items = paired(&manifest.candidates)?;
    let g_items = paired(&manifest.independent)?;
    let jobs: Vec<(bool, usize)> = (0..cfg.n_seeds).flat_map(|s| [(true, s), (false, s)]).collect();
    let trained: Vec<TrainedEncoder> = jobs
        .par_iter()
        .map(|&(is_f, s)| {
            let items = if is_f { &f_items } else { &g_items };
            train_encoder(items, &cfg.arch, init_seed(&cfg.train, s), &cfg.train_aug, &cfg.loss, &cfg.train)
        })
        .collect::<Result<_>>()?;
    let mut f_encoders = Vec::new();
    let mut g_encoders = Vec::new();
    for ((is_f, _), t) in jobs.into_iter().zip(trained) {
        if is_f {
            f_encoders.push(t);
        } else {
            g_encoders.push(t);
        }
    }
    let mut all_ids: Vec<SampleId> = manifest.labeled().map(|(id, _)| id).collect();
    all_ids.sort();
    let mut lo = LeaveOut {
        f_encoders,
        g_encoders,
        f_sets: Vec::new(),
        g_sets: Vec::new(),
    };
    let (f_sets, g_sets) = lo.remeasure(dataset, &all_ids, &cfg.measure_aug)?;
    lo.f_sets = f_sets;
    lo.g_sets = g_sets;
    Ok(lo)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub dataset: SynthDataset,
    pub manifest: SplitManifest,
    pub leave_out: LeaveOut,
    pub report: MemorizationReport,
}

/// Split, train and score in one go.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let (dataset, manifest) = build_split(cfg)?;
    let leave_out = leave_out_experiment(&dataset, &manifest, cfg)?;
    let score = ScoreConfig {
        n_seeds_f: cfg.n_seeds,
        n_seeds_g: cfg.n_seeds,
        ..cfg.score.clone()
    };
    let report = score_report(&leave_out.f_sets, &leave_out.g_sets, &manifest, &score)?;
    Ok(PipelineRun {
        dataset,
        manifest,
        leave_out,
        report,
    })
}
