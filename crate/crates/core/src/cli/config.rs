use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::ScoreConfig;
use crate::downstream::{AblationConfig, CoresetConfig, DownstreamSpec, LambdaSweepConfig, ProbeConfig};
use crate::error::{Error, Result};
use crate::synth::{AugmentationSpec, SynthSpec};
use crate::toytrain::{Composition, EncoderArch, LossConfig, PipelineConfig, TrainConfig};

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub f_reprs: Vec<PathBuf>,
    pub g_reprs: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub other_report: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub probe_train: Option<PathBuf>,
    pub probe_test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.f_reprs.iter_mut().for_each(fix);
        self.g_reprs.iter_mut().for_each(fix);
        for p in [
            &mut self.manifest,
            &mut self.report,
            &mut self.other_report,
            &mut self.dataset,
            &mut self.checkpoint,
            &mut self.probe_train,
            &mut self.probe_test,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSettings {
    pub anchor: Option<u64>,
    pub n_test_points: usize,
    /// Spread of the test points around the anchor.
    pub radius: f64,
}

impl Default for LemmaSettings {
    fn default() -> Self {
        Self {
            anchor: None,
            n_test_points: 20,
            radius: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Intervals of the threshold grid over [-1, 1].
    pub sweep_steps: usize,
    /// Bins of the per-subset score histograms over [-1, 1].
    pub histogram_bins: usize,
    /// Cut-offs for the top-k overlap table.
    pub top_k: Vec<usize>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            sweep_steps: 40,
            histogram_bins: 20,
            top_k: vec![5, 10, 20],
        }
    }
}

/// Everything a run needs, as one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub paths: Paths,
    pub score: ScoreConfig,
    pub synth: SynthSpec,
    pub composition: Composition,
    pub arch: EncoderArch,
    pub measure_aug: AugmentationSpec,
    pub train_aug: AugmentationSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub downstream: Vec<DownstreamSpec>,
    pub ablation: AblationConfig,
    pub coreset: CoresetConfig,
    pub lambda_sweep: LambdaSweepConfig,
    pub lemma: LemmaSettings,
    pub analysis: AnalysisSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: p.seed,
            n_seeds: p.n_seeds,
            paths: Paths::default(),
            score: p.score,
            synth: p.synth,
            composition: p.composition,
            arch: p.arch,
            measure_aug: p.measure_aug,
            train_aug: p.train_aug,
            loss: p.loss,
            train: p.train,
            probe: ProbeConfig::default(),
            downstream: vec![DownstreamSpec::default(), DownstreamSpec::shifted([0.0, 1.0])],
            ablation: AblationConfig::default(),
            coreset: CoresetConfig::default(),
            lambda_sweep: LambdaSweepConfig::default(),
            lemma: LemmaSettings::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::parse("config", e))?;
        cfg.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Training pipeline view of the config, with seeds derived from `seed`.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            synth: self.synth.clone(),
            composition: self.composition,
            arch: self.arch,
            measure_aug: self.measure_aug,
            train_aug: self.train_aug,
            loss: self.loss,
            train: self.train,
            score: ScoreConfig {
                n_seeds_f: self.n_seeds,
                n_seeds_g: self.n_seeds,
                ..self.score.clone()
            },
            n_seeds: self.n_seeds,
            seed: self.seed,
        }
        .reseeded(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        self.synth.validate()?;
        self.pipeline().validate()?;
        self.probe.validate()?;
        Ok(())
    }
}
