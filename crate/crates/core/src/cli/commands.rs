use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{Command, RoleArg};
use crate::datamodel::{
    fnv1a64, read_csv_repr, read_manifest, read_repr, write_manifest, write_repr, write_sidecar, EncoderRole, RepresentationSet, SampleId,
    Sidecar, SplitManifest, Subset,
};
use crate::downstream::{
    ablate_and_retrain, centroid_accuracy, coreset_retrain, downstream_set, lambda_sweep, linear_probe, DownstreamSet, LabeledReps,
};
use crate::error::{Error, Result};
use crate::memorization::{linear_grid, read_report, score_report, subset_summary, threshold_sweep, write_report, MemorizationReport};
use crate::rng::{derive_seed, stream};
use crate::stats::{kendall_tau_b, paired_scores, spearman, top_k_overlap, welch_t_one_sided, Alternative};
use crate::synth::SynthDataset;
use crate::toytrain::{check_lemma_bounds, nearby_points, run_pipeline, PipelineConfig, ToyEncoder};

pub(crate) const RUN_RECORD: &str = "run.toml";

/// Written by every subcommand next to its artifacts.
#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    command: String,
    version: String,
    seeds: BTreeMap<String, u64>,
    /// Input file name to FNV-1a hash of its bytes.
    inputs: BTreeMap<String, String>,
    config: ExperimentConfig,
}

pub(crate) fn load_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(RUN_RECORD);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rec: RunRecord = toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    Ok(rec.config)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    /// Fingerprint an input file; the key is the path as given.
    fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), format!("{:016x}", fnv1a64(&bytes)));
        Ok(())
    }

    fn finish(self, command: &str) -> Result<()> {
        let pipe = self.cfg.pipeline();
        let mut seeds = BTreeMap::new();
        seeds.insert("base".to_string(), self.cfg.seed);
        seeds.insert("dataset".to_string(), derive_seed(self.cfg.seed, &[stream::DATASET]));
        seeds.insert("measure_aug".to_string(), pipe.measure_aug.seed);
        seeds.insert("train".to_string(), pipe.train.seed);
        let mut config = self.cfg.clone();
        config.paths.out = None;
        let rec = RunRecord {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            inputs: self.inputs.clone(),
            config,
        };
        let text = toml::to_string(&rec).map_err(|e| Error::parse("run record", e))?;
        self.write(RUN_RECORD, text)
    }
}

fn required(given: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    given
        .clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::invalid(format!("no {what} given (flag or [paths] entry)")))
}

fn exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} does not exist", path.display())))
    }
}

pub(crate) fn dispatch(command: &Command, cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("sslmem-out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut ctx = Ctx {
        cfg,
        out,
        inputs: BTreeMap::new(),
    };
    match command {
        Command::Score { f_reprs, g_reprs, manifest } => score(&mut ctx, f_reprs, g_reprs, manifest)?,
        Command::Stats { report } => {
            let report = load_report(&mut ctx, &required(report, &cfg.paths.report, "report")?)?;
            let table = stats_table(&report)?;
            print!("{table}");
            ctx.write("stats.txt", table)?;
            ctx.write("histogram.csv", histogram_csv(&report, cfg.analysis.histogram_bins))?;
            ctx.write("summary.csv", summary_csv(&report))?;
        }
        Command::RankCompare { report, other, subset } => {
            let a = load_report(&mut ctx, &required(report, &cfg.paths.report, "report")?)?;
            let b = load_report(&mut ctx, &required(other, &cfg.paths.other_report, "other report")?)?;
            let subset = match subset.as_str() {
                "all" => None,
                s => Some(Subset::from_label(s).ok_or_else(|| Error::invalid(format!("unknown subset {s:?}")))?),
            };
            let (text, csv) = rank_compare(&a, &b, subset, &cfg.analysis.top_k)?;
            print!("{text}");
            ctx.write("rank_compare.txt", text)?;
            ctx.write("topk.csv", csv)?;
        }
        Command::SweepThreshold { report } => {
            let report = load_report(&mut ctx, &required(report, &cfg.paths.report, "report")?)?;
            ctx.write("sweep.csv", sweep_csv(&report, cfg.analysis.sweep_steps)?)?;
        }
        Command::ToyRun => toy_run(&ctx)?,
        Command::Ablate { from } => {
            let (dataset, manifest, report) = pipeline_inputs(&mut ctx, from.as_deref())?;
            let sets = downstream_sets(cfg)?;
            let result = ablate_and_retrain(&dataset, &manifest, &report, &cfg.pipeline(), &cfg.ablation, &sets)?;
            for set in &sets {
                ctx.write(&format!("ablation_{}.csv", set.name), result.csv(&set.name))?;
            }
            let mut s = String::from("set,mode,removal_size,n,centroid_mean,centroid_std,probe_mean,probe_std\n");
            for r in result.summary() {
                writeln!(
                    s,
                    "{},{},{},{},{:?},{:?},{:?},{:?}",
                    r.set,
                    r.mode.label(),
                    r.removal_size,
                    r.n,
                    r.centroid_mean,
                    r.centroid_std,
                    r.probe_mean,
                    r.probe_std
                )
                .unwrap();
            }
            ctx.write("ablation_summary.csv", s)?;
        }
        Command::Coreset { from } => {
            let (dataset, manifest, report) = pipeline_inputs(&mut ctx, from.as_deref())?;
            let sets = downstream_sets(cfg)?;
            let mut coreset = cfg.coreset.clone();
            if coreset.retain_sizes.is_empty() {
                let n = manifest.f_training().len() as f64;
                coreset.retain_sizes = vec![(0.8 * n).round() as usize, (0.9 * n).round() as usize];
            }
            let result = coreset_retrain(&dataset, &manifest, &report, &cfg.pipeline(), &coreset, &sets)?;
            ctx.write("coreset.csv", result.csv())?;
            let mut s = String::from("set,retain_size,fraction,centroid_mean,probe_mean,centroid_delta,probe_delta\n");
            for set in &sets {
                let (fc, fp) = result.mean(&set.name, result.full_size).expect("baseline present");
                let mut sizes: Vec<usize> = result.rows.iter().map(|r| r.retain_size).collect();
                sizes.sort_unstable_by(|a, b| b.cmp(a));
                sizes.dedup();
                for k in sizes {
                    let (c, p) = result.mean(&set.name, k).expect("size present");
                    writeln!(
                        s,
                        "{},{},{:?},{:?},{:?},{:?},{:?}",
                        set.name,
                        k,
                        k as f64 / result.full_size as f64,
                        c,
                        p,
                        c - fc,
                        p - fp
                    )
                    .unwrap();
                }
            }
            ctx.write("coreset_summary.csv", s)?;
        }
        Command::LambdaSweep => {
            let sets = downstream_sets(cfg)?;
            let result = lambda_sweep(&cfg.pipeline(), &cfg.lambda_sweep, &sets)?;
            ctx.write("lambda_sweep.csv", result.csv())?;
            let mut s = String::from(
                "set,lambda,candidate_mean,candidate_std,candidate_raw_mean,train_alignment,centroid_mean,centroid_std,probe_mean,probe_std\n",
            );
            for set in &sets {
                for r in result.summary(&set.name) {
                    writeln!(
                        s,
                        "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                        set.name,
                        r.lambda,
                        r.candidate.mean,
                        r.candidate.std,
                        r.candidate_raw.mean,
                        r.train_alignment.mean,
                        r.centroid.mean,
                        r.centroid.std,
                        r.probe.mean,
                        r.probe.std
                    )
                    .unwrap();
                }
            }
            ctx.write("lambda_summary.csv", s)?;
        }
        Command::LemmaCheck {
            from,
            checkpoint,
            dataset,
            manifest,
            anchor,
            role,
        } => lemma_check(&mut ctx, from.as_deref(), checkpoint, dataset, manifest, *anchor, *role)?,
        Command::Probe { train, test } => {
            let train = required(train, &cfg.paths.probe_train, "probe training set")?;
            let test = required(test, &cfg.paths.probe_test, "probe test set")?;
            ctx.record_input(&train)?;
            ctx.record_input(&test)?;
            let train = read_labeled(&train)?;
            let test = read_labeled(&test)?;
            let centroid = centroid_accuracy(&train, &test)?;
            let probe = linear_probe(&train, &test, &cfg.probe)?;
            let text = format!("centroid_accuracy {centroid:?}\nprobe_accuracy {probe:?}\n");
            print!("{text}");
            ctx.write("probe.txt", text)?;
        }
    }
    ctx.finish(command.name())
}

fn read_any_repr(path: &Path) -> Result<RepresentationSet> {
    exists(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv_repr(path),
        _ => read_repr(path),
    }
}

fn load_report(ctx: &mut Ctx, path: &Path) -> Result<MemorizationReport> {
    exists(path)?;
    ctx.record_input(path)?;
    read_report(path)
}

fn score(ctx: &mut Ctx, f: &[PathBuf], g: &[PathBuf], manifest: &Option<PathBuf>) -> Result<()> {
    let cfg = ctx.cfg;
    let f = if f.is_empty() { &cfg.paths.f_reprs[..] } else { f };
    let g = if g.is_empty() { &cfg.paths.g_reprs[..] } else { g };
    if f.is_empty() || g.is_empty() {
        return Err(Error::invalid("score needs at least one f and one g representation file"));
    }
    let manifest_path = required(manifest, &cfg.paths.manifest, "manifest")?;
    exists(&manifest_path)?;
    let load = |ctx: &mut Ctx, paths: &[PathBuf]| -> Result<Vec<RepresentationSet>> {
        paths
            .iter()
            .map(|p| {
                let set = read_any_repr(p)?;
                ctx.record_input(p)?;
                Ok(set)
            })
            .collect()
    };
    let f_sets = load(ctx, f)?;
    let g_sets = load(ctx, g)?;
    ctx.record_input(&manifest_path)?;
    let manifest = read_manifest(&manifest_path)?;
    let mut score_cfg = cfg.score.clone();
    score_cfg.n_seeds_f = f_sets.len();
    score_cfg.n_seeds_g = g_sets.len();
    let report = score_report(&f_sets, &g_sets, &manifest, &score_cfg)?;
    write_report(&report, &ctx.path("report.csv"))?;
    ctx.write("summary.csv", summary_csv(&report))?;
    print!("{}", summary_csv(&report));
    Ok(())
}

fn summary_csv(report: &MemorizationReport) -> String {
    let mut s = String::from("subset,n,mean,std\n");
    for (subset, sm) in subset_summary(report) {
        writeln!(s, "{subset},{},{:?},{:?}", sm.n, sm.mean, sm.std).unwrap();
    }
    s
}

/// Hypotheses tested, as (greater, lesser): the null is m(greater) <= m(lesser).
pub(crate) const HYPOTHESES: [(Subset, Subset); 6] = [
    (Subset::Candidate, Subset::Shared),
    (Subset::Candidate, Subset::Extra),
    (Subset::Shared, Subset::Independent),
    (Subset::Extra, Subset::Independent),
    (Subset::Candidate, Subset::Independent),
    (Subset::Independent, Subset::Candidate),
];

pub(crate) fn stats_table(report: &MemorizationReport) -> Result<String> {
    let mut s = format!("{:<24} {:>12} {:>12} {:>10} {:>10}\n", "null_hypothesis", "p_value", "statistic", "dof", "cohens_d");
    for (a, b) in HYPOTHESES {
        let h = format!("m({a}) <= m({b})");
        let (xa, xb) = (report.normalized_of(a), report.normalized_of(b));
        if xa.len() < 2 || xb.len() < 2 {
            writeln!(s, "{h:<24} {:>12} {:>12} {:>10} {:>10}", "n/a", "n/a", "n/a", "n/a").unwrap();
            continue;
        }
        let t = welch_t_one_sided(&xa, &xb, Alternative::AGreater)?;
        let d = t.effect_size_d.map_or("n/a".to_string(), |d| format!("{d:.4}"));
        writeln!(s, "{h:<24} {:>12.4e} {:>12.4} {:>10.2} {:>10}", t.p_value, t.statistic, t.dof, d).unwrap();
    }
    Ok(s)
}

fn histogram_csv(report: &MemorizationReport, bins: usize) -> String {
    let bins = bins.max(1);
    let edges = linear_grid(-1.0, 1.0, bins);
    let mut s = String::from("bin_lo,bin_hi");
    for sub in Subset::ALL {
        write!(s, ",{sub}").unwrap();
    }
    s.push('\n');
    let counts: Vec<Vec<usize>> = Subset::ALL
        .iter()
        .map(|&sub| {
            let mut c = vec![0; bins];
            for v in report.normalized_of(sub) {
                let i = (((v + 1.0) / 2.0) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
                c[i] += 1;
            }
            c
        })
        .collect();
    for i in 0..bins {
        write!(s, "{:?},{:?}", edges[i], edges[i + 1]).unwrap();
        for c in &counts {
            write!(s, ",{}", c[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// The smallest f64 strictly greater than `x`.
fn next_up(x: f64) -> f64 {
    x.next_up()
}

/// Threshold grid over [-1, 1], extended past the top candidate score when
/// needed so the last fraction is 0.
pub(crate) fn sweep_thresholds(report: &MemorizationReport, steps: usize) -> Vec<f64> {
    let mut grid = linear_grid(-1.0, 1.0, steps);
    let max = report.normalized_of(Subset::Candidate).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max >= *grid.last().unwrap() {
        grid.push(next_up(max));
    }
    grid
}

fn sweep_csv(report: &MemorizationReport, steps: usize) -> Result<String> {
    let rows = threshold_sweep(report, &sweep_thresholds(report, steps))?;
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in rows {
        writeln!(s, "{t:?},{f:?}").unwrap();
    }
    Ok(s)
}

fn rank_compare(a: &MemorizationReport, b: &MemorizationReport, subset: Option<Subset>, ks: &[usize]) -> Result<(String, String)> {
    let (ids, xa, xb) = paired_scores(a, b, subset)?;
    let kt = kendall_tau_b(&xa, &xb)?;
    let rho = spearman(&xa, &xb)?;
    let label = subset.map_or("all", Subset::label);
    let mut text = format!("universe {label} n {}\nkendall_tau {:.6} p_value {:.4e} z {:.4}\nspearman {:.6}\n", ids.len(), kt.tau, kt.p_value, kt.z, rho);
    let mut csv = String::from("k,overlap\n");
    for &k in ks {
        if k > ids.len() {
            continue;
        }
        let o = top_k_overlap(a, b, k, subset)?;
        writeln!(text, "top_{k}_overlap {o:.4}").unwrap();
        writeln!(csv, "{k},{o:?}").unwrap();
    }
    Ok((text, csv))
}

fn downstream_sets(cfg: &ExperimentConfig) -> Result<Vec<DownstreamSet>> {
    if cfg.downstream.is_empty() {
        return Err(Error::invalid("no [[downstream]] sets configured"));
    }
    cfg.downstream.iter().map(|d| downstream_set(&cfg.synth, d)).collect()
}

/// Dataset, manifest and report from an earlier toy-run, or a fresh pipeline run.
fn pipeline_inputs(ctx: &mut Ctx, from: Option<&Path>) -> Result<(SynthDataset, SplitManifest, MemorizationReport)> {
    match from {
        Some(dir) => {
            let (d, m, r) = (dir.join("dataset.csv"), dir.join("manifest.toml"), dir.join("report.csv"));
            for p in [&d, &m, &r] {
                exists(p)?;
                ctx.record_input(p)?;
            }
            Ok((SynthDataset::read_csv(&d)?, read_manifest(&m)?, read_report(&r)?))
        }
        None => {
            let run = run_pipeline(&ctx.cfg.pipeline())?;
            Ok((run.dataset, run.manifest, run.report))
        }
    }
}

fn toy_run(ctx: &Ctx) -> Result<()> {
    let cfg: PipelineConfig = ctx.cfg.pipeline();
    let run = run_pipeline(&cfg)?;
    let dataset_csv = run.dataset.to_csv();
    let dataset_hash = format!("{:016x}", fnv1a64(dataset_csv.as_bytes()));
    ctx.write("dataset.csv", &dataset_csv)?;
    write_manifest(&run.manifest, &ctx.path("manifest.toml"))?;
    let families = [
        (EncoderRole::F, "f", &run.leave_out.f_encoders, &run.leave_out.f_sets),
        (EncoderRole::G, "g", &run.leave_out.g_encoders, &run.leave_out.g_sets),
    ];
    for (role, tag, encoders, sets) in families {
        for (i, (enc, set)) in encoders.iter().zip(sets.iter()).enumerate() {
            let name = format!("{tag}{i}");
            fs::create_dir_all(ctx.path("reprs")).map_err(|e| Error::io(ctx.path("reprs"), e))?;
            write_repr(set, &ctx.path(&format!("reprs/{name}.bin")))?;
            write_sidecar(
                &Sidecar {
                    encoder_id: set.encoder_id().to_string(),
                    role,
                    seed: crate::toytrain::experiment::init_seed(&cfg.train, i),
                    augmentation: cfg.measure_aug.describe(),
                    dataset_hash: dataset_hash.clone(),
                },
                &ctx.path(&format!("reprs/{name}.sidecar.toml")),
            )?;
            ctx.write(&format!("checkpoints/{name}.ckpt"), enc.encoder.to_checkpoint())?;
            ctx.write(&format!("traces/{name}.csv"), enc.trace_csv())?;
        }
    }
    write_report(&run.report, &ctx.path("report.csv"))?;
    let summary = summary_csv(&run.report);
    ctx.write("summary.csv", &summary)?;
    let table = stats_table(&run.report)?;
    ctx.write("stats.txt", &table)?;
    ctx.write("histogram.csv", histogram_csv(&run.report, ctx.cfg.analysis.histogram_bins))?;
    ctx.write("sweep.csv", sweep_csv(&run.report, ctx.cfg.analysis.sweep_steps)?)?;
    print!("{summary}{table}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn lemma_check(
    ctx: &mut Ctx,
    from: Option<&Path>,
    checkpoint: &Option<PathBuf>,
    dataset: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
    anchor: Option<u64>,
    role: RoleArg,
) -> Result<()> {
    let cfg = ctx.cfg;
    let tag = match role {
        RoleArg::F => "f",
        RoleArg::G => "g",
    };
    let in_dir = |name: String| from.map(|d| d.join(name));
    let checkpoint = required(checkpoint, &cfg.paths.checkpoint.clone().or(in_dir(format!("checkpoints/{tag}0.ckpt"))), "checkpoint")?;
    let dataset = required(dataset, &cfg.paths.dataset.clone().or(in_dir("dataset.csv".into())), "dataset")?;
    let manifest = required(manifest, &cfg.paths.manifest.clone().or(in_dir("manifest.toml".into())), "manifest")?;
    for p in [&checkpoint, &dataset, &manifest] {
        exists(p)?;
        ctx.record_input(p)?;
    }
    let bytes = fs::read(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
    let enc = ToyEncoder::from_checkpoint(&bytes)?;
    let data = SynthDataset::read_csv(&dataset)?;
    let manifest = read_manifest(&manifest)?;
    let (training, own) = match role {
        RoleArg::F => (manifest.f_training(), Subset::Candidate),
        RoleArg::G => (manifest.g_training(), Subset::Independent),
    };
    let anchor = match anchor.or(cfg.lemma.anchor) {
        Some(a) => SampleId(a),
        None => manifest
            .ids(own)
            .iter()
            .copied()
            .find(|&id| data.get(id).is_some_and(|p| p.is_outlier))
            .or_else(|| training.first().copied())
            .ok_or_else(|| Error::invalid("empty training set"))?,
    };
    let x = data.require(anchor)?.coords;
    let tests = nearby_points(&x, cfg.lemma.n_test_points, cfg.lemma.radius, derive_seed(cfg.seed, &[stream::LIPSCHITZ, anchor.0]));
    let report = check_lemma_bounds(&enc, (anchor, x), &training, &tests, &cfg.measure_aug)?;
    let mut text = report.to_text();
    writeln!(text, "monotone_x1.1 {}", report.monotone_under(1.1)).unwrap();
    print!("{text}");
    ctx.write("lemma.txt", text)
}

fn read_labeled(path: &Path) -> Result<LabeledReps> {
    exists(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let width = reader.headers().map_err(|e| Error::parse("csv header", e))?.len();
    if width < 2 {
        return Err(Error::parse(path.display().to_string(), "expected `label,dim0,...`"));
    }
    let (mut labels, mut reps) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("row {row}"), e))?;
        labels.push(rec[0].parse::<usize>().map_err(|e| Error::parse(format!("row {row} label"), e))?);
        for v in rec.iter().skip(1) {
            reps.push(v.parse::<f64>().map_err(|e| Error::parse(format!("row {row}"), e))?);
        }
    }
    LabeledReps::new(reps, width - 1, labels)
}
