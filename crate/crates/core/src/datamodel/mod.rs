//! Core data types shared by every other module: sample ids, representation
//! tensors, split manifests and the scoring configuration.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alignment::Metric;
use crate::error::{Error, Result};
use crate::memorization::NormalizationMode;

pub use io::{
    decode_repr, encode_repr, fnv1a64, read_csv_repr, read_manifest, read_repr, read_sidecar,
    write_manifest, write_repr, write_sidecar, EncoderRole, Sidecar, REPR_MAGIC, REPR_VERSION,
};

/// Norms at or below this are rejected by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for SampleId {
    fn from(v: u64) -> Self {
        SampleId(v)
    }
}

/// The four disjoint partitions of a leave-out experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    /// Trained into `f` only.
    #[serde(rename = "S_C")]
    Candidate,
    /// Trained into both `f` and `g`.
    #[serde(rename = "S_S")]
    Shared,
    /// Trained into `g` only.
    #[serde(rename = "S_I")]
    Independent,
    /// Seen by neither encoder family.
    #[serde(rename = "S_E")]
    Extra,
}

impl Subset {
    pub const ALL: [Subset; 4] = [
        Subset::Candidate,
        Subset::Shared,
        Subset::Independent,
        Subset::Extra,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subset::Candidate => "S_C",
            Subset::Shared => "S_S",
            Subset::Independent => "S_I",
            Subset::Extra => "S_E",
        }
    }

    pub fn from_label(s: &str) -> Option<Subset> {
        Subset::ALL.into_iter().find(|x| x.label() == s)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Representations of `n_views` augmented views for each sample, as produced
/// by one trained encoder. Data is laid out `[sample][view][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    encoder_id: String,
    sample_ids: Vec<SampleId>,
    n_views: usize,
    dim: usize,
    data: Vec<f64>,
    index: HashMap<SampleId, usize>,
}

impl RepresentationSet {
    pub fn new(
        encoder_id: impl Into<String>,
        sample_ids: Vec<SampleId>,
        n_views: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if n_views == 0 {
            return Err(Error::Shape("n_views must be at least 1".into()));
        }
        if dim == 0 {
            return Err(Error::Shape("dim must be at least 1".into()));
        }
        let expected = sample_ids.len() * n_views * dim;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data has {} values, header implies {} ({} samples x {} views x {} dims)",
                data.len(),
                expected,
                sample_ids.len(),
                n_views,
                dim
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            let per_sample = n_views * dim;
            return Err(Error::NonFinite {
                index,
                sample: index / per_sample,
                view: (index % per_sample) / dim,
                dim: index % dim,
            });
        }
        let mut lookup = HashMap::with_capacity(sample_ids.len());
        for (i, &id) in sample_ids.iter().enumerate() {
            if lookup.insert(id, i).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            encoder_id: encoder_id.into(),
            sample_ids,
            n_views,
            dim,
            data,
            index: lookup,
        })
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn sample_ids(&self) -> &[SampleId] {
        &self.sample_ids
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// All views of the sample at row `idx`, as a flat `k*d` slice.
    pub fn views_at(&self, idx: usize) -> &[f64] {
        let stride = self.n_views * self.dim;
        &self.data[idx * stride..(idx + 1) * stride]
    }

    pub fn views_of(&self, id: SampleId) -> Result<&[f64]> {
        let idx = self
            .position(id)
            .ok_or_else(|| Error::MissingSample(id, self.encoder_id.clone()))?;
        Ok(self.views_at(idx))
    }

    pub fn view(&self, idx: usize, view: usize) -> &[f64] {
        let start = (idx * self.n_views + view) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Round every value through `f32`, the on-disk precision.
    pub fn to_storage_precision(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = *v as f32 as f64;
        }
        out
    }

    pub fn with_encoder_id(mut self, encoder_id: impl Into<String>) -> Self {
        self.encoder_id = encoder_id.into();
        self
    }
}

/// Scale each view vector to unit Euclidean norm.
pub fn l2_normalize(set: &RepresentationSet) -> Result<RepresentationSet> {
    let mut out = set.clone();
    let d = set.dim;
    for (flat, chunk) in out.data.chunks_mut(d).enumerate() {
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= MIN_NORM {
            return Err(Error::ZeroNorm {
                sample: flat / set.n_views,
                view: flat % set.n_views,
                norm,
            });
        }
        chunk.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Disjoint assignment of sample ids to the four experiment partitions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(default)]
    pub shared: Vec<SampleId>,
    #[serde(default)]
    pub candidates: Vec<SampleId>,
    #[serde(default)]
    pub independent: Vec<SampleId>,
    #[serde(default)]
    pub extra: Vec<SampleId>,
}

impl SplitManifest {
    pub fn ids(&self, subset: Subset) -> &[SampleId] {
        match subset {
            Subset::Candidate => &self.candidates,
            Subset::Shared => &self.shared,
            Subset::Independent => &self.independent,
            Subset::Extra => &self.extra,
        }
    }

    /// Every (id, subset) pair, in subset order then list order.
    pub fn labeled(&self) -> impl Iterator<Item = (SampleId, Subset)> + '_ {
        Subset::ALL
            .into_iter()
            .flat_map(move |s| self.ids(s).iter().map(move |&id| (id, s)))
    }

    /// Training set of the encoders that include the candidates.
    pub fn f_training(&self) -> Vec<SampleId> {
        self.shared.iter().chain(&self.candidates).copied().collect()
    }

    /// Training set of the encoders that include the independent points.
    pub fn g_training(&self) -> Vec<SampleId> {
        self.shared.iter().chain(&self.independent).copied().collect()
    }

    pub fn subset_of(&self, id: SampleId) -> Option<Subset> {
        Subset::ALL.into_iter().find(|&s| self.ids(s).contains(&id))
    }

    /// Exchange the roles of candidates and independent points.
    pub fn swapped(&self) -> SplitManifest {
        SplitManifest {
            shared: self.shared.clone(),
            candidates: self.independent.clone(),
            independent: self.candidates.clone(),
            extra: self.extra.clone(),
        }
    }

    pub fn len(&self) -> usize {
        Subset::ALL.iter().map(|&s| self.ids(s).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// `id` is listed in two partitions (or twice in the same one).
    Overlap {
        id: SampleId,
        first: Subset,
        second: Subset,
    },
    /// `id` is listed in the manifest but absent from a representation set.
    Missing { id: SampleId, encoder_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Overlap { id, first, second } => {
                write!(f, "sample {id} appears in both {first} and {second}")
            }
            Violation::Missing { id, encoder_id } => {
                write!(f, "sample {id} missing from representation set {encoder_id:?}")
            }
        }
    }
}

/// Check disjointness and coverage. The result is sorted, so permuting the
/// manifest lists does not change it.
pub fn validate_manifest(manifest: &SplitManifest, sets: &[RepresentationSet]) -> Vec<Violation> {
    let mut seen: BTreeMap<SampleId, Vec<Subset>> = BTreeMap::new();
    for (id, subset) in manifest.labeled() {
        seen.entry(id).or_default().push(subset);
    }
    let mut out = BTreeSet::new();
    for (&id, subsets) in &seen {
        for i in 0..subsets.len() {
            for j in i + 1..subsets.len() {
                let (a, b) = if subsets[i] <= subsets[j] {
                    (subsets[i], subsets[j])
                } else {
                    (subsets[j], subsets[i])
                };
                out.insert(Violation::Overlap {
                    id,
                    first: a,
                    second: b,
                });
            }
        }
        for set in sets {
            if !set.contains(id) {
                out.insert(Violation::Missing {
                    id,
                    encoder_id: set.encoder_id.clone(),
                });
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Mean over the `k(k-1)/2` unordered pairs of distinct views.
    #[default]
    UnorderedDistinctPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub metric: Metric,
    pub n_views: usize,
    pub n_seeds_f: usize,
    pub n_seeds_g: usize,
    pub pairing: Pairing,
    pub normalization: NormalizationMode,
    /// Unit-normalize every view before scoring.
    pub l2_normalize: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            metric: Metric::L2,
            n_views: 5,
            n_seeds_f: 3,
            n_seeds_g: 3,
            pairing: Pairing::UnorderedDistinctPairs,
            normalization: NormalizationMode::Range,
            l2_normalize: true,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::invalid(format!(
                "alignment needs at least 2 views, got {}",
                self.n_views
            )));
        }
        if self.n_seeds_f == 0 || self.n_seeds_g == 0 {
            return Err(Error::invalid("seed counts must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(v: &[u64]) -> Vec<SampleId> {
        v.iter().map(|&i| SampleId(i)).collect()
    }

    fn set(name: &str, id_list: &[u64]) -> RepresentationSet {
        let n = id_list.len();
        RepresentationSet::new(name, ids(id_list), 2, 2, vec![1.0; n * 4]).unwrap()
    }

    #[test]
    fn normalizes_three_four_five() {
        let s = RepresentationSet::new("e", ids(&[0]), 1, 2, vec![3.0, 4.0]).unwrap();
        let n = l2_normalize(&s).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15);
        assert!((n.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn unit_vector_unchanged() {
        let s = RepresentationSet::new("e", ids(&[0]), 1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let n = l2_normalize(&s).unwrap();
        for (a, b) in s.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_batch_has_unit_norms() {
        let mut rng = crate::rng::rng_from(11, &[]);
        let data: Vec<f64> = (0..50 * 3 * 7).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = RepresentationSet::new("e", (0..50).map(SampleId).collect(), 3, 7, data).unwrap();
        let n = l2_normalize(&s).unwrap();
        for chunk in n.data().chunks(7) {
            let mut acc = 0.0;
            for v in chunk {
                acc += v * v;
            }
            assert!((acc.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_vector_reports_position() {
        let s = RepresentationSet::new("e", ids(&[4, 5]), 2, 2, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0])
            .unwrap();
        match l2_normalize(&s) {
            Err(Error::ZeroNorm { sample, view, .. }) => assert_eq!((sample, view), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        let r = RepresentationSet::new("e", ids(&[0, 1]), 1, 2, vec![0.0, 1.0, f64::NAN, 0.0]);
        assert!(matches!(r, Err(Error::NonFinite { index: 2, sample: 1, view: 0, dim: 0 })));
        let r = RepresentationSet::new("e", ids(&[3, 3]), 1, 1, vec![0.0, 1.0]);
        assert!(matches!(r, Err(Error::DuplicateId(SampleId(3)))));
        let r = RepresentationSet::new("e", ids(&[3]), 1, 1, vec![0.0, 1.0]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn valid_manifest_has_no_violations() {
        let m = SplitManifest {
            shared: ids(&[0, 1]),
            candidates: ids(&[2]),
            independent: ids(&[3]),
            extra: ids(&[4]),
        };
        let s = set("f0", &[0, 1, 2, 3, 4]);
        assert!(validate_manifest(&m, &[s]).is_empty());
    }

    #[test]
    fn overlap_is_reported_once() {
        let m = SplitManifest {
            shared: ids(&[0]),
            candidates: ids(&[7]),
            independent: ids(&[7]),
            extra: vec![],
        };
        let v = validate_manifest(&m, &[set("f0", &[0, 7])]);
        assert_eq!(
            v,
            vec![Violation::Overlap {
                id: SampleId(7),
                first: Subset::Candidate,
                second: Subset::Independent
            }]
        );
    }

    #[test]
    fn missing_id_is_reported() {
        let m = SplitManifest {
            shared: ids(&[0, 1]),
            candidates: ids(&[2]),
            ..Default::default()
        };
        let v = validate_manifest(&m, &[set("f0", &[0, 1, 2]), set("g0", &[0, 2])]);
        assert_eq!(
            v,
            vec![Violation::Missing {
                id: SampleId(1),
                encoder_id: "g0".into()
            }]
        );
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(data in prop::collection::vec(0.1f64..10.0, 12)) {
            let s = RepresentationSet::new("e", ids(&[0, 1]), 2, 3, data).unwrap();
            let once = l2_normalize(&s).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn manifest_validation_ignores_order(
            lists in prop::collection::vec(prop::collection::vec(0u64..12, 0..6), 4),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let m = SplitManifest {
                shared: ids(&lists[0]),
                candidates: ids(&lists[1]),
                independent: ids(&lists[2]),
                extra: ids(&lists[3]),
            };
            let mut rng = crate::rng::rng_from(seed, &[]);
            let mut p = m.clone();
            p.shared.shuffle(&mut rng);
            p.candidates.shuffle(&mut rng);
            p.independent.shuffle(&mut rng);
            p.extra.shuffle(&mut rng);
            let sets = [set("a", &[0, 1, 2, 3, 4, 5, 6])];
            prop_assert_eq!(validate_manifest(&m, &sets), validate_manifest(&p, &sets));
        }
    }
}
