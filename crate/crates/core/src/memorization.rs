//! Memorization scores: alignment under encoders trained without a sample
//! minus alignment under encoders trained with it, normalized to `[-1, 1]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{expected_alignment, Metric};
use crate::datamodel::{l2_normalize, validate_manifest, RepresentationSet, SampleId, ScoreConfig, SplitManifest, Subset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Divide by `max - min` over the population.
    #[default]
    Range,
    /// Divide by `max |raw|`.
    MaxAbs,
}

/// Raw score of one sample. Positive when the `f` encoders align its views
/// more tightly than the `g` encoders.
pub fn raw_memorization(
    f_seeds: &[RepresentationSet],
    g_seeds: &[RepresentationSet],
    sample: SampleId,
    metric: Metric,
) -> Result<f64> {
    if f_seeds.is_empty() || g_seeds.is_empty() {
        return Err(Error::invalid("raw_memorization needs at least one f and one g seed"));
    }
    let (f0, g0) = (&f_seeds[0], &g_seeds[0]);
    if f0.dim() != g0.dim() {
        return Err(Error::DimensionMismatch {
            left: f0.dim(),
            right: g0.dim(),
        });
    }
    if f0.n_views() != g0.n_views() {
        return Err(Error::Shape(format!(
            "f seeds have {} views, g seeds have {}",
            f0.n_views(),
            g0.n_views()
        )));
    }
    Ok(expected_alignment(g_seeds, sample, metric)? - expected_alignment(f_seeds, sample, metric)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    pub scores: BTreeMap<SampleId, f64>,
    pub divisor: f64,
    /// Mode actually applied; differs from the request after a fallback.
    pub applied: NormalizationMode,
    /// Range division would leave `[-1, 1]` (all raws share a sign), so
    /// max-abs division was used instead.
    pub fallback: bool,
    /// Divisor was zero; every score was set to 0.
    pub degenerate: bool,
}

pub fn normalize_scores(raw: &BTreeMap<SampleId, f64>, mode: NormalizationMode) -> Result<NormalizedScores> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score map"));
    }
    let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.values().copied().fold(f64::INFINITY, f64::min);
    let max_abs = max.abs().max(min.abs());

    let (mut applied, mut divisor, mut fallback) = match mode {
        NormalizationMode::Range => (mode, max - min, false),
        NormalizationMode::MaxAbs => (mode, max_abs, false),
    };
    if applied == NormalizationMode::Range && divisor > 0.0 && (min > 0.0 || max < 0.0) {
        applied = NormalizationMode::MaxAbs;
        divisor = max_abs;
        fallback = true;
    }
    let degenerate = divisor == 0.0;
    let scores = raw
        .iter()
        .map(|(&id, &r)| (id, if degenerate { 0.0 } else { r / divisor }))
        .collect();
    Ok(NormalizedScores {
        scores,
        divisor,
        applied,
        fallback,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub sample: SampleId,
    pub subset: Subset,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config: ScoreConfig,
    pub divisor: f64,
    pub normalization_applied: NormalizationMode,
    pub fallback: bool,
    pub degenerate_divisor: bool,
    pub n_seeds_f: usize,
    pub n_seeds_g: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationReport {
    /// Sorted by ascending sample id.
    pub entries: Vec<ReportEntry>,
    pub meta: ReportMeta,
}

impl MemorizationReport {
    pub fn subset_entries(&self, subset: Subset) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(move |e| e.subset == subset)
    }

    pub fn normalized_of(&self, subset: Subset) -> Vec<f64> {
        self.subset_entries(subset).map(|e| e.normalized).collect()
    }

    pub fn raw_of(&self, subset: Subset) -> Vec<f64> {
        self.subset_entries(subset).map(|e| e.raw).collect()
    }

    pub fn get(&self, id: SampleId) -> Option<&ReportEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.sample)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Sample ids ordered by descending normalized score, ties by ascending id.
    pub fn ranking(&self, subset: Option<Subset>) -> Vec<SampleId> {
        let mut rows: Vec<&ReportEntry> = self
            .entries
            .iter()
            .filter(|e| subset.is_none_or(|s| e.subset == s))
            .collect();
        rows.sort_by(|a, b| b.normalized.total_cmp(&a.normalized).then(a.sample.cmp(&b.sample)));
        rows.into_iter().map(|e| e.sample).collect()
    }
}

/// Score every manifest sample. The normalization divisor is computed over
/// the union of all four partitions.
pub fn score_report(
    f_seeds: &[RepresentationSet],
    g_seeds: &[RepresentationSet],
    manifest: &SplitManifest,
    config: &ScoreConfig,
) -> Result<MemorizationReport> {
    config.validate()?;
    if f_seeds.len() != config.n_seeds_f || g_seeds.len() != config.n_seeds_g {
        return Err(Error::invalid(format!(
            "config expects {} f and {} g seeds, got {} and {}",
            config.n_seeds_f,
            config.n_seeds_g,
            f_seeds.len(),
            g_seeds.len()
        )));
    }
    for set in f_seeds.iter().chain(g_seeds) {
        if set.n_views() != config.n_views {
            return Err(Error::Shape(format!(
                "set {:?} has {} views, config expects {}",
                set.encoder_id(),
                set.n_views(),
                config.n_views
            )));
        }
    }
    let all: Vec<RepresentationSet> = f_seeds.iter().chain(g_seeds).cloned().collect();
    let violations = validate_manifest(manifest, &all);
    if !violations.is_empty() {
        let listed: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
        return Err(Error::InvalidManifest(format!(
            "{} violation(s): {}",
            violations.len(),
            listed.join("; ")
        )));
    }

    let prepare = |sets: &[RepresentationSet]| -> Result<Vec<RepresentationSet>> {
        if config.l2_normalize {
            sets.iter().map(l2_normalize).collect()
        } else {
            Ok(sets.to_vec())
        }
    };
    let f = prepare(f_seeds)?;
    let g = prepare(g_seeds)?;

    let labeled: Vec<(SampleId, Subset)> = manifest.labeled().collect();
    let raws: Vec<f64> = labeled
        .par_iter()
        .map(|&(id, _)| raw_memorization(&f, &g, id, config.metric))
        .collect::<Result<_>>()?;

    let raw_map: BTreeMap<SampleId, f64> = labeled.iter().map(|&(id, _)| id).zip(raws.iter().copied()).collect();
    if raw_map.is_empty() {
        return Err(Error::InvalidManifest("manifest lists no samples".into()));
    }
    let norm = normalize_scores(&raw_map, config.normalization)?;

    let mut entries: Vec<ReportEntry> = labeled
        .iter()
        .zip(raws)
        .map(|(&(sample, subset), raw)| ReportEntry {
            sample,
            subset,
            raw,
            normalized: norm.scores[&sample],
        })
        .collect();
    entries.sort_by_key(|e| e.sample);

    Ok(MemorizationReport {
        entries,
        meta: ReportMeta {
            config: config.clone(),
            divisor: norm.divisor,
            normalization_applied: norm.applied,
            fallback: norm.fallback,
            degenerate_divisor: norm.degenerate,
            n_seeds_f: f_seeds.len(),
            n_seeds_g: g_seeds.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSummary {
    pub mean: f64,
    /// Unbiased (n-1) standard deviation; 0 for a single entry.
    pub std: f64,
    pub n: usize,
}

/// Per-partition mean and spread of normalized scores, empty partitions omitted.
pub fn subset_summary(report: &MemorizationReport) -> Vec<(Subset, SubsetSummary)> {
    Subset::ALL
        .into_iter()
        .filter_map(|s| {
            let v = report.normalized_of(s);
            (!v.is_empty()).then(|| (s, summarize(&v)))
        })
        .collect()
}

pub(crate) fn summarize(v: &[f64]) -> SubsetSummary {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    SubsetSummary { mean, std, n }
}

/// Fraction of candidates whose normalized score reaches each threshold.
pub fn threshold_sweep(report: &MemorizationReport, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    let scores = report.normalized_of(Subset::Candidate);
    if scores.is_empty() {
        return Err(Error::invalid("report has no candidate entries"));
    }
    let n = scores.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, scores.iter().filter(|&&s| s >= t).count() as f64 / n))
        .collect())
}

/// Evenly spaced grid over `[lo, hi]` with `steps` intervals.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect()
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

/// Write `sample_id,subset,raw,normalized` plus the metadata document next to it.
pub fn write_report(report: &MemorizationReport, csv_path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "sample_id,subset,raw,normalized").unwrap();
    for e in &report.entries {
        writeln!(out, "{},{},{:?},{:?}", e.sample, e.subset, e.raw, e.normalized).unwrap();
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;
    let meta = toml::to_string(&report.meta).map_err(|e| Error::parse("report metadata", e))?;
    let mpath = meta_path(csv_path);
    fs::write(&mpath, meta).map_err(|e| Error::io(&mpath, e))
}

pub fn read_report(csv_path: &Path) -> Result<MemorizationReport> {
    let mpath = meta_path(csv_path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: ReportMeta = toml::from_str(&text).map_err(|e| Error::parse(mpath.display().to_string(), e))?;

    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| Error::parse(csv_path.display().to_string(), e))?;
    let mut entries = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("report row {row}"), e))?;
        if rec.len() != 4 {
            return Err(Error::parse(format!("report row {row}"), "expected 4 fields"));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::parse(format!("report row {row} field {i}"), e))
        };
        entries.push(ReportEntry {
            sample: SampleId(rec[0].parse().map_err(|e| Error::parse(format!("report row {row} sample_id"), e))?),
            subset: Subset::from_label(&rec[1])
                .ok_or_else(|| Error::parse(format!("report row {row}"), format!("unknown subset {:?}", &rec[1])))?,
            raw: num(2)?,
            normalized: num(3)?,
        });
    }
    entries.sort_by_key(|e| e.sample);
    Ok(MemorizationReport { entries, meta })
}
