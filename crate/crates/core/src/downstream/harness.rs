use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::probe::{linear_probe, ProbeConfig};
use super::{centroid_accuracy, LabeledReps};
use crate::datamodel::{SampleId, SplitManifest, Subset};
use crate::error::{Error, Result};
use crate::alignment::expected_alignment;
use crate::memorization::{summarize, MemorizationReport, SubsetSummary};
use crate::rng::{derive_seed, rng_from, stream};
use crate::synth::{generate_dataset, SynthDataset, SynthPoint, SynthSpec};
use crate::toytrain::experiment::{init_seed, run_pipeline, training_items, PipelineConfig};
use crate::toytrain::{train_encoder, ToyEncoder};

/// Labeled evaluation data drawn from the pipeline's geometry, optionally
/// with every center moved by `shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSpec {
    pub name: String,
    pub n_per_class: usize,
    pub n_outliers_per_class: usize,
    pub shift: [f64; 2],
    pub seed: u64,
}

impl Default for DownstreamSpec {
    fn default() -> Self {
        Self {
            name: "same".into(),
            n_per_class: 60,
            n_outliers_per_class: 40,
            shift: [0.0, 0.0],
            seed: 1,
        }
    }
}

impl DownstreamSpec {
    pub fn shifted(shift: [f64; 2]) -> Self {
        Self {
            name: "shifted".into(),
            shift,
            seed: 2,
            ..Default::default()
        }
    }
}

/// Points for fitting the downstream classifier and points to score it on.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSet {
    pub name: String,
    pub train: Vec<SynthPoint>,
    pub test: Vec<SynthPoint>,
}

/// Generate a downstream set; alternate points of each class go to train and test.
pub fn downstream_set(geometry: &SynthSpec, spec: &DownstreamSpec) -> Result<DownstreamSet> {
    let synth = SynthSpec {
        n_per_class: spec.n_per_class,
        n_outliers_per_class: spec.n_outliers_per_class,
        ..geometry.shifted(spec.shift)
    };
    let data = generate_dataset(&synth, derive_seed(spec.seed, &[stream::DATASET, 7]))?;
    let mut seen: HashMap<(usize, bool), usize> = HashMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for p in data.points() {
        let n = seen.entry((p.class, p.is_outlier)).or_default();
        if (*n).is_multiple_of(2) {
            train.push(*p);
        } else {
            test.push(*p);
        }
        *n += 1;
    }
    Ok(DownstreamSet {
        name: spec.name.clone(),
        train,
        test,
    })
}

/// Nearest-centroid and probe accuracy of `enc` on one downstream set.
pub fn evaluate_encoder(enc: &ToyEncoder, set: &DownstreamSet, probe: &ProbeConfig) -> Result<(f64, f64)> {
    let train = LabeledReps::from_encoder(enc, &set.train)?;
    let test = LabeledReps::from_encoder(enc, &set.test)?;
    Ok((centroid_accuracy(&train, &test)?, linear_probe(&train, &test, probe)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalMode {
    Memorized,
    Random,
}

impl RemovalMode {
    pub fn label(self) -> &'static str {
        match self {
            RemovalMode::Memorized => "memorized",
            RemovalMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub removal_sizes: Vec<usize>,
    pub n_repeats: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            removal_sizes: vec![8, 16, 32],
            n_repeats: 5,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

/// Candidates removed for one (mode, size, repeat). Memorized mode takes the
/// top of the candidate ranking (score descending, id ascending); random mode
/// samples uniformly without replacement.
pub fn removal_set(
    report: &MemorizationReport,
    manifest: &SplitManifest,
    mode: RemovalMode,
    size: usize,
    seed: u64,
    repeat: usize,
) -> Result<Vec<SampleId>> {
    let candidates = manifest.ids(Subset::Candidate);
    if size > candidates.len() {
        return Err(Error::invalid(format!(
            "removal size {size} exceeds {} candidates",
            candidates.len()
        )));
    }
    let mut out = match mode {
        RemovalMode::Memorized => {
            let ranked = report.ranking(Some(Subset::Candidate));
            if ranked.len() != candidates.len() {
                return Err(Error::invalid("report does not score every candidate"));
            }
            ranked[..size].to_vec()
        }
        RemovalMode::Random => {
            let mut sorted = candidates.to_vec();
            sorted.sort();
            let mut rng = rng_from(seed, &[stream::REMOVAL, size as u64, repeat as u64]);
            sample(&mut rng, sorted.len(), size).into_iter().map(|i| sorted[i]).collect()
        }
    };
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub set: String,
    pub mode: RemovalMode,
    pub removal_size: usize,
    pub repeat: usize,
    pub centroid_acc: f64,
    pub probe_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub set: String,
    pub mode: RemovalMode,
    pub removal_size: usize,
    pub n: usize,
    pub centroid_mean: f64,
    pub centroid_std: f64,
    pub probe_mean: f64,
    pub probe_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    pub fn set_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.set) {
                names.push(r.set.clone());
            }
        }
        names
    }

    /// Mean and sample standard deviation per (set, mode, size).
    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut keys: Vec<(String, RemovalMode, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.set.clone(), r.mode, r.removal_size);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(set, mode, size)| {
                let rows: Vec<&AblationRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.set == set && r.mode == mode && r.removal_size == size)
                    .collect();
                let c = summarize(&rows.iter().map(|r| r.centroid_acc).collect::<Vec<_>>());
                let p = summarize(&rows.iter().map(|r| r.probe_acc).collect::<Vec<_>>());
                AblationSummary {
                    set,
                    mode,
                    removal_size: size,
                    n: rows.len(),
                    centroid_mean: c.mean,
                    centroid_std: c.std,
                    probe_mean: p.mean,
                    probe_std: p.std,
                }
            })
            .collect()
    }

    pub fn get(&self, set: &str, mode: RemovalMode, size: usize) -> Option<AblationSummary> {
        self.summary()
            .into_iter()
            .find(|s| s.set == set && s.mode == mode && s.removal_size == size)
    }

    /// `mode,removal_size,repeat,centroid_acc,probe_acc` rows for one set.
    pub fn csv(&self, set: &str) -> String {
        let mut s = String::from("mode,removal_size,repeat,centroid_acc,probe_acc\n");
        for r in self.rows.iter().filter(|r| r.set == set) {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", r.mode.label(), r.removal_size, r.repeat, r.centroid_acc, r.probe_acc);
        }
        s
    }
}

/// Train one f-encoder per distinct (training set, repeat) and evaluate it on
/// every downstream set. Encoder seeds depend only on the repeat index, so
/// both modes and every size share initializations.
fn retrain_and_evaluate(
    dataset: &SynthDataset,
    jobs: &[(Vec<SampleId>, usize)],
    cfg: &PipelineConfig,
    sets: &[DownstreamSet],
    probe: &ProbeConfig,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut unique: Vec<&(Vec<SampleId>, usize)> = Vec::new();
    for j in jobs {
        if !unique.contains(&j) {
            unique.push(j);
        }
    }
    let results: Vec<Vec<(f64, f64)>> = unique
        .par_iter()
        .map(|(ids, repeat)| {
            let items = training_items(dataset, ids)?;
            let enc = train_encoder(&items, &cfg.arch, init_seed(&cfg.train, *repeat), &cfg.train_aug, &cfg.loss, &cfg.train)?.encoder;
            sets.iter().map(|s| evaluate_encoder(&enc, s, probe)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(jobs
        .iter()
        .map(|j| results[unique.iter().position(|u| *u == j).expect("job listed")].clone())
        .collect())
}

/// Remove candidates by memorization rank or at random, retrain f on the rest
/// of its training data, and record downstream accuracy.
pub fn ablate_and_retrain(
    dataset: &SynthDataset,
    manifest: &SplitManifest,
    report: &MemorizationReport,
    cfg: &PipelineConfig,
    ablation: &AblationConfig,
    sets: &[DownstreamSet],
) -> Result<AblationResult> {
    if ablation.n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be at least 1"));
    }
    let training = manifest.f_training();
    let mut keys = Vec::new();
    let mut jobs = Vec::new();
    for mode in [RemovalMode::Memorized, RemovalMode::Random] {
        for &size in &ablation.removal_sizes {
            for repeat in 0..ablation.n_repeats {
                let removed = removal_set(report, manifest, mode, size, ablation.seed, repeat)?;
                let mut kept: Vec<SampleId> = training.iter().copied().filter(|id| removed.binary_search(id).is_err()).collect();
                kept.sort();
                keys.push((mode, size, repeat));
                jobs.push((kept, repeat));
            }
        }
    }
    let accs = retrain_and_evaluate(dataset, &jobs, cfg, sets, &ablation.probe)?;
    let mut rows = Vec::new();
    for ((mode, size, repeat), per_set) in keys.into_iter().zip(accs) {
        for (set, (c, p)) in sets.iter().zip(per_set) {
            rows.push(AblationRow {
                set: set.name.clone(),
                mode,
                removal_size: size,
                repeat,
                centroid_acc: c,
                probe_acc: p,
            });
        }
    }
    Ok(AblationResult { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoresetConfig {
    /// Number of f-training points kept, most memorized first.
    pub retain_sizes: Vec<usize>,
    pub n_repeats: usize,
    pub probe: ProbeConfig,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            retain_sizes: Vec::new(),
            n_repeats: 5,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoresetRow {
    pub set: String,
    pub retain_size: usize,
    pub repeat: usize,
    pub centroid_acc: f64,
    pub probe_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetResult {
    /// Size of the full f training set (the baseline rows use this size).
    pub full_size: usize,
    pub rows: Vec<CoresetRow>,
}

impl CoresetResult {
    /// Mean centroid and probe accuracy over repeats for one set and size.
    pub fn mean(&self, set: &str, retain_size: usize) -> Option<(f64, f64)> {
        let rows: Vec<&CoresetRow> = self.rows.iter().filter(|r| r.set == set && r.retain_size == retain_size).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.centroid_acc).sum::<f64>() / n,
            rows.iter().map(|r| r.probe_acc).sum::<f64>() / n,
        ))
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("set,retain_size,repeat,centroid_acc,probe_acc\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", r.set, r.retain_size, r.repeat, r.centroid_acc, r.probe_acc);
        }
        s
    }
}

/// Retrain f on only its `retain_k` most memorized training points (ranked
/// over every scored f-training sample) and compare with the full set, which
/// is always included as a baseline.
pub fn coreset_retrain(
    dataset: &SynthDataset,
    manifest: &SplitManifest,
    report: &MemorizationReport,
    cfg: &PipelineConfig,
    coreset: &CoresetConfig,
    sets: &[DownstreamSet],
) -> Result<CoresetResult> {
    let training = manifest.f_training();
    let ranked: Vec<SampleId> = report
        .ranking(None)
        .into_iter()
        .filter(|id| matches!(manifest.subset_of(*id), Some(Subset::Shared | Subset::Candidate)))
        .collect();
    if ranked.len() != training.len() {
        return Err(Error::invalid("report does not score every f-training sample"));
    }
    if coreset.n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be at least 1"));
    }
    let mut sizes = vec![training.len()];
    for &k in &coreset.retain_sizes {
        if k == 0 {
            return Err(Error::invalid("retain size must be positive"));
        }
        if k > training.len() {
            return Err(Error::invalid(format!("retain size {k} exceeds {} training points", training.len())));
        }
        if !sizes.contains(&k) {
            sizes.push(k);
        }
    }
    let mut keys = Vec::new();
    let mut jobs = Vec::new();
    for &k in &sizes {
        for repeat in 0..coreset.n_repeats {
            let mut kept = ranked[..k].to_vec();
            kept.sort();
            keys.push((k, repeat));
            jobs.push((kept, repeat));
        }
    }
    let accs = retrain_and_evaluate(dataset, &jobs, cfg, sets, &coreset.probe)?;
    let mut rows = Vec::new();
    for ((k, repeat), per_set) in keys.into_iter().zip(accs) {
        for (set, (c, p)) in sets.iter().zip(per_set) {
            rows.push(CoresetRow {
                set: set.name.clone(),
                retain_size: k,
                repeat,
                centroid_acc: c,
                probe_acc: p,
            });
        }
    }
    Ok(CoresetResult {
        full_size: training.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSweepConfig {
    pub lambdas: Vec<f64>,
    /// Independent pipeline runs per lambda; run `s` uses base seed `seed + s`.
    pub n_pipeline_seeds: usize,
    pub probe: ProbeConfig,
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.25, 0.5, 0.75],
            n_pipeline_seeds: 3,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub lambda: f64,
    pub seed: u64,
    pub set: String,
    pub candidate_mean: f64,
    pub candidate_raw_mean: f64,
    /// Mean alignment of f over its own training samples.
    pub train_alignment: f64,
    /// Accuracies averaged over the f encoders.
    pub centroid_acc: f64,
    pub probe_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub candidate: SubsetSummary,
    pub candidate_raw: SubsetSummary,
    pub train_alignment: SubsetSummary,
    pub centroid: SubsetSummary,
    pub probe: SubsetSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LambdaSweepResult {
    pub rows: Vec<LambdaRow>,
}

impl LambdaSweepResult {
    /// Per-lambda statistics over pipeline seeds, in sweep order.
    pub fn summary(&self, set: &str) -> Vec<LambdaSummary> {
        let mut lambdas: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !lambdas.contains(&r.lambda) {
                lambdas.push(r.lambda);
            }
        }
        lambdas
            .into_iter()
            .map(|lambda| {
                let rows: Vec<&LambdaRow> = self.rows.iter().filter(|r| r.lambda == lambda && r.set == set).collect();
                let col = |f: fn(&LambdaRow) -> f64| summarize(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                LambdaSummary {
                    lambda,
                    candidate: col(|r| r.candidate_mean),
                    candidate_raw: col(|r| r.candidate_raw_mean),
                    train_alignment: col(|r| r.train_alignment),
                    centroid: col(|r| r.centroid_acc),
                    probe: col(|r| r.probe_acc),
                }
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("lambda,seed,set,candidate_mean,candidate_raw_mean,train_alignment,centroid_acc,probe_acc\n");
        for r in &self.rows {
            writeln!(
                out,
                "{:?},{},{},{:?},{:?},{:?},{:?},{:?}",
                r.lambda, r.seed, r.set, r.candidate_mean, r.candidate_raw_mean, r.train_alignment, r.centroid_acc, r.probe_acc
            )
            .unwrap();
        }
        out
    }
}

/// Run the whole pipeline once per (lambda, pipeline seed) and record how the
/// candidate scores and the downstream accuracy of f respond.
pub fn lambda_sweep(cfg: &PipelineConfig, sweep: &LambdaSweepConfig, sets: &[DownstreamSet]) -> Result<LambdaSweepResult> {
    if sweep.lambdas.is_empty() || sweep.n_pipeline_seeds == 0 {
        return Err(Error::invalid("lambda sweep needs at least one lambda and one seed"));
    }
    let mut rows = Vec::new();
    for &lambda in &sweep.lambdas {
        for s in 0..sweep.n_pipeline_seeds {
            let seed = cfg.seed.wrapping_add(s as u64);
            let mut run_cfg = cfg.reseeded(seed);
            run_cfg.loss.lambda = lambda;
            let run = run_pipeline(&run_cfg)?;
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            let candidate_mean = mean(run.report.normalized_of(Subset::Candidate));
            let candidate_raw_mean = mean(run.report.raw_of(Subset::Candidate));
            let training = run.manifest.f_training();
            let train_alignment = mean(
                training
                    .iter()
                    .map(|&id| expected_alignment(&run.leave_out.f_sets, id, run_cfg.score.metric))
                    .collect::<Result<_>>()?,
            );
            let per_encoder: Vec<Vec<(f64, f64)>> = run
                .leave_out
                .f_encoders
                .par_iter()
                .map(|t| sets.iter().map(|set| evaluate_encoder(&t.encoder, set, &sweep.probe)).collect())
                .collect::<Result<_>>()?;
            for (i, set) in sets.iter().enumerate() {
                rows.push(LambdaRow {
                    lambda,
                    seed,
                    set: set.name.clone(),
                    candidate_mean,
                    candidate_raw_mean,
                    train_alignment,
                    centroid_acc: mean(per_encoder.iter().map(|a| a[i].0).collect()),
                    probe_acc: mean(per_encoder.iter().map(|a| a[i].1).collect()),
                });
            }
        }
    }
    Ok(LambdaSweepResult { rows })
}
