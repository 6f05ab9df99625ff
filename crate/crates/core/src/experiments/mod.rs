//! Experiment driver: MNIST protocols at configurable scale, with CSV metrics,
//! per-epoch model archives and a hashed manifest.

mod render;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{build_weights, hopfield_init, InitKind, InitSpec};
use crate::data_io::{BinaryDataset, MetricsWriter, ModelArchive};
use crate::error::{Error, Result};
use crate::evaluation::{ln_z_ais, log_likelihood, AisConfig};
use crate::hopfield::RetrievalConfig;
use crate::patterns::{class_mean_patterns, subpattern_clusters, PatternMatrix};
use crate::poe::{features, train_experts_with, train_head, ExpertEnsemble, HeadConfig};
use crate::rbm::{train, GaussBernRbm, TrainConfig};
use crate::reverse_map::{binarize_descent, reverse_pipeline, BinarizeConfig};
use crate::seeding::derive_seed;

pub use render::{archive_columns, render_weights, tile_columns, RenderSummary};

/// File name of the `epoch,run,metric,value` CSV every experiment writes.
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BETA_SWEEP_FILE: &str = "beta_sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    #[serde(rename = "fig2_beta_sweep")]
    Fig2BetaSweep,
    #[serde(rename = "fig4_generative")]
    Fig4Generative,
    #[serde(rename = "fig5_poe")]
    Fig5Poe,
    #[serde(rename = "figD1_reverse")]
    FigD1Reverse,
    #[serde(rename = "figD2_retrieval")]
    FigD2Retrieval,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Fig2BetaSweep,
        ExperimentKind::Fig4Generative,
        ExperimentKind::Fig5Poe,
        ExperimentKind::FigD1Reverse,
        ExperimentKind::FigD2Retrieval,
    ];

    pub fn needs_test_set(self) -> bool {
        matches!(self, ExperimentKind::Fig5Poe | ExperimentKind::FigD2Retrieval)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fig2BetaSweep => "fig2_beta_sweep",
            Self::Fig4Generative => "fig4_generative",
            Self::Fig5Poe => "fig5_poe",
            Self::FigD1Reverse => "figD1_reverse",
            Self::FigD2Retrieval => "figD2_retrieval",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig2" | "fig2_beta_sweep" => Ok(Self::Fig2BetaSweep),
            "fig4" | "fig4_generative" => Ok(Self::Fig4Generative),
            "fig5" | "fig5_poe" => Ok(Self::Fig5Poe),
            "figd1" | "figd1_reverse" => Ok(Self::FigD1Reverse),
            "figd2" | "figd2_retrieval" => Ok(Self::FigD2Retrieval),
            other => Err(Error::InvalidConfig(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Experiment parameters. Sizes of 0 for `train_subset`/`test_subset` mean the full split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub train_subset: usize,
    pub test_subset: usize,
    pub epochs: usize,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Sub-patterns per class (fig2 and fig5).
    pub ks: Vec<usize>,
    /// Inverse temperatures of the fig2 sweep.
    pub betas: Vec<f64>,
    #[serde(serialize_with = "serialize_inits")]
    pub inits: Vec<InitKind>,
    /// Hidden units of the single RBM (fig4, figD1, figD2).
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub cd_steps: usize,
    /// Training and evaluation inverse temperature.
    pub beta: f64,
    pub ais_chains: usize,
    pub ais_levels: usize,
    /// Epochs at which metrics are computed; `None` means every epoch.
    pub eval_epochs: Option<Vec<usize>>,
    /// Archive the model at every evaluated epoch.
    pub checkpoints: bool,
}

fn serialize_inits<S: serde::Serializer>(inits: &[InitKind], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(inits.iter().map(|i| i.to_string()))
}

impl ExperimentConfig {
    /// Desk-scale defaults for each protocol.
    pub fn preset(experiment: ExperimentKind) -> Self {
        let base = Self {
            experiment,
            train_subset: 10_000,
            test_subset: 0,
            epochs: 5,
            runs: 3,
            seed: 0,
            out_dir: PathBuf::from("runs").join(experiment.to_string()),
            ks: vec![1],
            betas: vec![2.0],
            inits: vec![InitKind::HopfieldQr],
            hidden: 10,
            learning_rate: 1e-4,
            batch_size: 100,
            cd_steps: 20,
            beta: 2.0,
            ais_chains: 100,
            ais_levels: 1000,
            eval_epochs: None,
            checkpoints: true,
        };
        match experiment {
            ExperimentKind::Fig2BetaSweep => {
                Self { epochs: 0, ks: vec![1, 2, 4, 8], betas: vec![0.5, 1.0, 2.0, 4.0], ais_chains: 500, ..base }
            }
            ExperimentKind::Fig4Generative => Self { inits: InitKind::ALL.to_vec(), ..base },
            ExperimentKind::Fig5Poe => Self {
                train_subset: 0,
                epochs: 1,
                runs: 1,
                ks: vec![10, 20, 100],
                inits: vec![InitKind::HopfieldQr, InitKind::Pca, InitKind::Random],
                ..base
            },
            ExperimentKind::FigD1Reverse => Self { epochs: 10, runs: 1, ..base },
            ExperimentKind::FigD2Retrieval => Self { epochs: 10, runs: 1, eval_epochs: Some(vec![0, 10]), ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.runs == 0 {
            return bad("runs must be positive");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("k values must be positive");
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return bad("beta values must be positive");
        }
        if self.inits.is_empty() {
            return bad("at least one initialization is required");
        }
        if self.hidden == 0 || self.batch_size == 0 || self.cd_steps == 0 {
            return bad("hidden units, batch size and CD steps must be positive");
        }
        if self.ais_chains == 0 || self.ais_levels == 0 {
            return bad("AIS chains and levels must be positive");
        }
        if let Some(e) = &self.eval_epochs {
            if e.iter().any(|&e| e > self.epochs) {
                return bad("evaluation epochs cannot exceed the number of epochs");
            }
        }
        self.train_config(self.seed).validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            cd_steps: self.cd_steps,
            epochs: self.epochs,
            seed,
            beta: self.beta,
            ..TrainConfig::default()
        }
    }

    fn ais(&self, seed: u64) -> AisConfig {
        AisConfig { chains: self.ais_chains, levels: self.ais_levels, seed, ..AisConfig::default() }
    }

    fn evaluates(&self, epoch: usize) -> bool {
        self.eval_epochs.as_ref().is_none_or(|e| e.contains(&epoch))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub complete: bool,
    pub error: Option<String>,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub files: Vec<FileRecord>,
}

/// Writes files under the output directory and remembers their hashes.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, FileRecord>,
    metrics: MetricsWriter,
    tables: BTreeMap<String, (Vec<String>, Vec<Vec<String>>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new(), metrics: MetricsWriter::new(), tables: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(rel, bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        let record = FileRecord { path: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 };
        self.files.insert(rel.to_string(), record);
    }

    fn archive(&mut self, rel: &str, archive: &ModelArchive) -> Result<()> {
        self.write(rel, &archive.to_bytes()?)
    }

    fn image(&mut self, rel: &str, m: &DMatrix<f64>) -> Result<()> {
        let (img, _) = tile_columns(m, None)?;
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))?;
        self.write(rel, &bytes.into_inner())
    }

    fn table(&mut self, name: &str, header: &[&str]) {
        self.tables.entry(name.to_string()).or_insert_with(|| (header.iter().map(|h| h.to_string()).collect(), Vec::new()));
    }

    fn row(&mut self, name: &str, row: Vec<String>) {
        self.tables.get_mut(name).expect("table declared before use").1.push(row);
    }

    /// Writes the metric CSVs, then the manifest.
    fn finish(mut self, cfg: &ExperimentConfig, error: Option<&Error>) -> Result<Vec<FileRecord>> {
        let csv = self.metrics.to_csv()?;
        self.write(METRICS_FILE, csv.as_bytes())?;
        let tables = std::mem::take(&mut self.tables);
        for (name, (header, rows)) in tables {
            let mut w = csv::Writer::from_writer(Vec::new());
            let to_err = |e: csv::Error| Error::InvalidConfig(e.to_string());
            w.write_record(&header).map_err(to_err)?;
            for row in rows {
                w.write_record(&row).map_err(to_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
            self.write(&name, &bytes)?;
        }
        let files: Vec<FileRecord> = self.files.into_values().collect();
        let manifest = Manifest {
            experiment: cfg.experiment,
            complete: error.is_none(),
            error: error.map(|e| e.to_string()),
            threads: rayon::current_num_threads(),
            config: cfg.clone(),
            files: files.clone(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub files: Vec<FileRecord>,
}

/// Runs one experiment. `test` is required for fig5 and figD2.
///
/// On failure the metrics gathered so far and a manifest marked incomplete are
/// still written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, train: &BinaryDataset, test: Option<&BinaryDataset>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let test = match (cfg.experiment.needs_test_set(), test) {
        (true, None) => return Err(Error::InvalidConfig(format!("{} needs a test set", cfg.experiment))),
        (_, t) => t.map(|t| take(t, cfg.test_subset)),
    };
    let train = take(train, cfg.train_subset);
    let mut out = Outputs::new(&cfg.out_dir)?;
    let result = match cfg.experiment {
        ExperimentKind::Fig2BetaSweep => fig2(cfg, &train, &mut out),
        ExperimentKind::Fig4Generative => fig4(cfg, &train, &mut out),
        ExperimentKind::Fig5Poe => fig5(cfg, &train, test.as_ref().expect("checked above"), &mut out),
        ExperimentKind::FigD1Reverse | ExperimentKind::FigD2Retrieval => reverse(cfg, &train, test.as_ref(), &mut out),
    };
    let files = out.finish(cfg, result.as_ref().err())?;
    result.map(|_| ExperimentSummary { out_dir: cfg.out_dir.clone(), files })
}

fn take(data: &BinaryDataset, n: usize) -> BinaryDataset {
    if n == 0 || n >= data.len() {
        data.clone()
    } else {
        data.head(n)
    }
}

fn patterns_for(data: &BinaryDataset, k: usize) -> Result<PatternMatrix> {
    let xi = if k == 1 { class_mean_patterns(data)? } else { subpattern_clusters(data, k)? };
    xi.check_rank()?;
    Ok(xi)
}

fn rbm_archive(rbm: &GaussBernRbm<f64>, meta: &[(&str, String)]) -> ModelArchive {
    let mut a = rbm.to_archive();
    for (k, v) in meta {
        a.metadata.insert(k.to_string(), v.clone());
    }
    a
}

fn fig2(cfg: &ExperimentConfig, train: &BinaryDataset, out: &mut Outputs) -> Result<()> {
    out.table(BETA_SWEEP_FILE, &["k", "beta", "run", "log_likelihood", "ln_z", "ln_z_stderr"]);
    for &k in &cfg.ks {
        let xi = patterns_for(train, k)?;
        let (q, _) = hopfield_init::<f64>(&xi)?;
        let mut rbm = GaussBernRbm::from_weights(q, 1.0)?;
        out.archive(&format!("models/k{k}.hrbm"), &rbm_archive(&rbm, &[("init", "hopfield".into()), ("k", k.to_string())]))?;
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            rbm.beta = beta;
            for run in 0..cfg.runs {
                let seed = derive_seed(cfg.seed, &[2, k as u64, bi as u64, run as u64]);
                let est = ln_z_ais(&rbm, &cfg.ais(seed))?.estimate;
                let ll = log_likelihood(&rbm, train, &est)?;
                out.row(
                    BETA_SWEEP_FILE,
                    vec![k.to_string(), beta.to_string(), run.to_string(), ll.to_string(), est.value.to_string(), est.stderr.to_string()],
                );
                out.metrics.push(0, run, format!("log_likelihood/k={k}/beta={beta}"), ll);
            }
        }
    }
    Ok(())
}

fn fig4(cfg: &ExperimentConfig, train_set: &BinaryDataset, out: &mut Outputs) -> Result<()> {
    let p = cfg.hidden;
    let xi = if cfg.inits.iter().any(|i| i.uses_patterns()) {
        if !p.is_multiple_of(train_set.n_classes()) {
            return Err(Error::InvalidConfig(format!(
                "pattern initializations need the hidden size to be a multiple of {} classes",
                train_set.n_classes()
            )));
        }
        Some(patterns_for(train_set, p / train_set.n_classes())?)
    } else {
        None
    };
    for run in 0..cfg.runs {
        for (ii, &init) in cfg.inits.iter().enumerate() {
            let spec = InitSpec { kind: init, p, seed: derive_seed(cfg.seed, &[1, run as u64, ii as u64]) };
            let w = build_weights::<f64>(&spec, train_set.n_visible(), Some(train_set), xi.as_ref())?.w;
            let rbm = GaussBernRbm::from_weights(w, cfg.beta)?;
            let tcfg = cfg.train_config(derive_seed(cfg.seed, &[3, run as u64, ii as u64]));
            train(rbm, train_set, &tcfg, |rbm, report| {
                let epoch = report.epoch;
                if !cfg.evaluates(epoch) {
                    return Ok(());
                }
                let seed = derive_seed(cfg.seed, &[4, run as u64, ii as u64, epoch as u64]);
                let est = ln_z_ais(rbm, &cfg.ais(seed))?.estimate;
                let ll = log_likelihood(rbm, train_set, &est)?;
                out.metrics.push(epoch, run, format!("log_likelihood/{init}"), ll);
                out.metrics.push(epoch, run, format!("ln_z/{init}"), est.value);
                out.metrics.push(epoch, run, format!("ln_z_stderr/{init}"), est.stderr);
                out.metrics.push(epoch, run, format!("weight_norm/{init}"), report.weight_norm);
                if cfg.checkpoints {
                    let meta = [("init", init.to_string()), ("run", run.to_string()), ("epoch", epoch.to_string())];
                    out.archive(&format!("models/{init}_run{run}_epoch{epoch}.hrbm"), &rbm_archive(rbm, &meta))?;
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}

fn fig5(cfg: &ExperimentConfig, train_set: &BinaryDataset, test: &BinaryDataset, out: &mut Outputs) -> Result<()> {
    let n_classes = train_set.n_classes();
    let error_rate = |pred: &[u8], labels: &[u8]| {
        pred.iter().zip(labels).filter(|(a, b)| a != b).count() as f64 / labels.len().max(1) as f64
    };
    for &k in &cfg.ks {
        let xi = if cfg.inits.iter().any(|i| i.uses_patterns()) { Some(subpattern_clusters(train_set, k)?) } else { None };
        for run in 0..cfg.runs {
            for (ii, &init) in cfg.inits.iter().enumerate() {
                let tcfg = cfg.train_config(derive_seed(cfg.seed, &[5, k as u64, run as u64, ii as u64]));
                let mut snapshots: BTreeMap<usize, Vec<GaussBernRbm<f64>>> = BTreeMap::new();
                train_experts_with(train_set, init, k, &tcfg, xi.as_ref(), |_, rbm, report| {
                    if cfg.evaluates(report.epoch) {
                        snapshots.entry(report.epoch).or_default().push(rbm.clone());
                    }
                    Ok(())
                })?;
                for (epoch, experts) in snapshots {
                    let mut ens = ExpertEnsemble::new(experts, init)?;
                    ens.metadata.insert("k".into(), k.to_string());
                    ens.metadata.insert("epoch".into(), epoch.to_string());
                    let f_train = features(&ens, train_set);
                    let head = train_head(&f_train, train_set.labels(), n_classes, &HeadConfig::default())?;
                    let train_err = error_rate(&head.predict(&f_train), train_set.labels());
                    let test_err = error_rate(&head.predict(&features(&ens, test)), test.labels());
                    out.metrics.push(epoch, run, format!("train_error/{init}/k={k}"), train_err);
                    out.metrics.push(epoch, run, format!("test_error/{init}/k={k}"), test_err);
                    if cfg.checkpoints {
                        out.archive(&format!("models/poe_{init}_k{k}_run{run}_epoch{epoch}.hrbm"), &ens.to_archive())?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// figD1 (binarization along training) and figD2 (retrieval with the recovered patterns).
fn reverse(cfg: &ExperimentConfig, train_set: &BinaryDataset, test: Option<&BinaryDataset>, out: &mut Outputs) -> Result<()> {
    let xi0 = class_mean_patterns(train_set)?;
    xi0.check_rank()?;
    let (q, r) = hopfield_init::<f64>(&xi0)?;
    out.image("patterns/xi_initial.png", &xi0.as_matrix())?;
    let classes = xi0.class_of_column().to_vec();
    let x0 = r.clone();
    let bcfg = BinarizeConfig { require_convergence: false, ..BinarizeConfig::default() };
    if test.is_some() {
        let mut header = vec!["epoch".to_string(), "run".into(), "label".into(), "count".into()];
        header.extend((0..xi0.p()).map(|c| format!("class{c}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.table("retrieval_tables.csv", &header);
    }
    for run in 0..cfg.runs {
        let rbm = GaussBernRbm::from_weights(q.clone(), cfg.beta)?;
        let tcfg = cfg.train_config(derive_seed(cfg.seed, &[6, run as u64]));
        train(rbm, train_set, &tcfg, |rbm, report| {
            let epoch = report.epoch;
            if !cfg.evaluates(epoch) {
                return Ok(());
            }
            let sol = match test {
                None => binarize_descent(&rbm.w, &x0, &bcfg)?,
                Some(test) => {
                    let rcfg = RetrievalConfig { seed: derive_seed(cfg.seed, &[7, run as u64, epoch as u64]), ..RetrievalConfig::default() };
                    let report = reverse_pipeline(rbm, &x0, classes.clone(), &bcfg, test, &rcfg)?;
                    let t = &report.table;
                    out.metrics.push(epoch, run, "retrieval_accuracy", t.accuracy);
                    out.metrics.push(epoch, run, "mean_correct_weight", t.mean_correct_weight);
                    out.metrics.push(epoch, run, "no_retrieval_fraction", t.no_retrieval as f64 / test.len().max(1) as f64);
                    for (label, row) in t.weights.iter().enumerate() {
                        let count = t.counts[label];
                        let mut cells = vec![epoch.to_string(), run.to_string(), label.to_string(), count.to_string()];
                        cells.extend(row.iter().map(|w| (w / count.max(1) as f64).to_string()));
                        out.row("retrieval_tables.csv", cells);
                    }
                    report.solution
                }
            };
            let b = sol.binary();
            let agree = b.iter().zip(xi0.as_matrix::<f64>().iter()).filter(|(a, b)| a == b).count();
            out.metrics.push(epoch, run, "binarization_error", sol.objective);
            out.metrics.push(epoch, run, "binarization_iterations", sol.iterations as f64);
            out.metrics.push(epoch, run, "binarization_converged", if sol.converged { 1.0 } else { 0.0 });
            out.metrics.push(epoch, run, "pattern_agreement", agree as f64 / b.len() as f64);
            out.metrics.push(epoch, run, "weight_relative_change", report.relative_change);
            out.image(&format!("patterns/run{run}_epoch{epoch}.png"), &b)?;
            if cfg.checkpoints {
                let a = rbm_archive(rbm, &[("init", "hopfield".into()), ("run", run.to_string()), ("epoch", epoch.to_string())]);
                out.archive(&format!("models/run{run}_epoch{epoch}.hrbm"), &a)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Loads an archive and renders it; thin wrapper for callers holding a path.
pub fn render_archive_file(archive: impl AsRef<Path>, out: impl AsRef<Path>, shape: Option<(usize, usize)>) -> Result<RenderSummary> {
    render_weights(&crate::data_io::load_model(archive)?, out, shape)
}
