use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use hoprbm::baselines::{build_weights, InitKind, InitSpec};
use hoprbm::data_io::{load_mnist, load_model, mnist_dir, save_model, BinaryDataset, MetricsWriter, ModelKind, Split, MNIST_DIR_ENV};
use hoprbm::evaluation::{ln_z_ais, log_likelihood, AisConfig};
use hoprbm::experiments::{render_weights, run_experiment, ExperimentConfig, ExperimentKind};
use hoprbm::forward_map::{factorize, Companion, FactorizationMethod};
use hoprbm::hopfield::{patterns_from_archive, projection_couplings, retrieval_table, RetrievalConfig, SpinRule};
use hoprbm::patterns::{class_mean_patterns, subpattern_clusters};
use hoprbm::poe::{features, train_experts, train_head, HeadConfig};
use hoprbm::reverse_map::{binarize_descent, random_x0, BinarizeConfig};
use hoprbm::{seeding, Rbm};

#[derive(Parser)]
#[command(name = "hoprbm", version, about = "Hopfield network / binary-gaussian RBM toolkit")]
struct Cli {
    /// Size of the global worker pool (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory holding the uncompressed MNIST IDX files (default: data/mnist in the workspace).
    #[arg(long, global = true, env = MNIST_DIR_ENV)]
    mnist_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pattern extraction.
    #[command(subcommand)]
    Patterns(PatternsCmd),
    /// Hopfield to RBM mapping.
    #[command(subcommand)]
    Map(MapCmd),
    /// CD-k training of a single RBM.
    Train(TrainArgs),
    /// Partition-function estimation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Approximate RBM to Hopfield mapping.
    #[command(subcommand)]
    Reverse(ReverseCmd),
    /// Classification.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Associative-memory retrieval of test images.
    Retrieve(RetrieveArgs),
    /// Run an experiment preset.
    Experiment(ExperimentArgs),
    /// Render the columns of an archive as an image grid.
    Render(RenderArgs),
}

#[derive(Subcommand)]
enum PatternsCmd {
    /// Class-mean (k = 1) or Ward sub-pattern extraction; writes a Hopfield archive with `xi`.
    Build {
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Training samples to use (0 = all).
        #[arg(long, default_value_t = 0)]
        subset: usize,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MapCmd {
    /// Orthogonal factorization of the stored patterns; the QR triangle is kept as `R`.
    Hn2rbm {
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long, default_value = "qr")]
        method: FactorizationMethod,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Start from this RBM archive instead of a fresh initialization.
    #[arg(long, conflicts_with = "init")]
    model: Option<PathBuf>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitKind>,
    /// Sub-patterns per class; the RBM gets `10k` hidden units.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long = "cd", alias = "cd-steps", default_value_t = 20)]
    cd_steps: usize,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    subset: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// AIS estimate of ln Z, and the mean log-likelihood of training data.
    Ais {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        chains: usize,
        #[arg(long, default_value_t = 1000)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the archived inverse temperature.
        #[arg(long)]
        beta: Option<f64>,
        /// Training samples for the log-likelihood (0 = skip).
        #[arg(long, default_value_t = 0)]
        subset: usize,
        /// CSV of the per-chain log importance weights.
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum X0 {
    QrR,
    Identity,
    Random,
}

#[derive(Subcommand)]
enum ReverseCmd {
    /// Gradient-descent binarization of the RBM weights; writes the recovered patterns.
    Binarize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "qr-r")]
        x0: X0,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        #[arg(long, default_value_t = 50_000)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// Product of per-class experts with a logistic-regression head.
    Poe {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_parser = parse_init, default_value = "hopfield")]
        init: InitKind,
        #[arg(long, default_value_t = 0)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long = "cd", alias = "cd-steps", default_value_t = 20)]
        cd_steps: usize,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        train_subset: usize,
        #[arg(long, default_value_t = 0)]
        test_subset: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RetrieveArgs {
    /// Hopfield archive holding `xi`; class-mean patterns of the training set when absent.
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    test_subset: usize,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 20)]
    ensemble: usize,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long)]
    metropolis: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of the class-by-class retrieval table.
    #[arg(long)]
    table_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// fig2, fig4, fig5, figD1 or figD2.
    preset: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_init)]
    inits: Option<Vec<InitKind>>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long = "cd", alias = "cd-steps")]
    cd_steps: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    ais_chains: Option<usize>,
    #[arg(long)]
    ais_levels: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eval_epochs: Option<Vec<usize>>,
    #[arg(long)]
    no_checkpoints: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tile shape as HxW when N is not a perfect square.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<(usize, usize)>,
}

fn parse_init(s: &str) -> Result<InitKind, String> {
    s.parse().map_err(|e: hoprbm::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((h.trim().parse().map_err(|_| "bad height")?, w.trim().parse().map_err(|_| "bad width")?))
}

struct Data {
    dir: Option<PathBuf>,
}

impl Data {
    fn dir(&self) -> anyhow::Result<&Path> {
        self.dir.as_deref().ok_or_else(|| anyhow!("no MNIST directory: pass --mnist-dir or set {MNIST_DIR_ENV}"))
    }

    fn load(&self, split: Split, subset: usize) -> anyhow::Result<BinaryDataset> {
        let data = load_mnist(self.dir()?, split)?;
        Ok(if subset == 0 || subset >= data.len() { data } else { data.head(subset) })
    }
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
}

fn load_rbm(path: &Path) -> anyhow::Result<(Rbm, hoprbm::data_io::ModelArchive)> {
    let archive = load_model(path)?;
    let rbm = Rbm::from_archive(&archive).with_context(|| format!("loading RBM from {}", path.display()))?;
    Ok((rbm, archive))
}

fn patterns_build(data: &Data, k: usize, subset: usize, beta: f64, out: &Path) -> anyhow::Result<()> {
    let train = data.load(Split::Train, subset)?;
    let xi = if k == 1 { class_mean_patterns(&train)? } else { subpattern_clusters(&train, k)? };
    xi.check_rank()?;
    let net = projection_couplings::<f64>(&xi)?.with_beta(beta)?;
    let archive = net.to_archive(Some(&xi)).with_meta("k", k).with_meta("samples", train.len());
    save_model(&archive, out)?;
    print_json(json!({ "n": xi.n(), "p": xi.p(), "out": out }));
    Ok(())
}

fn map_hn2rbm(patterns: &Path, method: FactorizationMethod, beta: Option<f64>, out: &Path) -> anyhow::Result<()> {
    let source = load_model(patterns)?;
    let xi = patterns_from_archive(&source)?;
    let beta = beta.unwrap_or(source.beta);
    let f = factorize::<f64>(&xi, method)?;
    let rbm = Rbm::from_weights(f.u, beta)?;
    let mut archive = rbm.to_archive().with_meta("method", method).with_meta("init", "hopfield");
    if let Companion::Qr { r } = &f.companion {
        archive.insert_matrix("R", r);
    }
    if let Some(classes) = source.meta("classes") {
        archive.metadata.insert("classes".into(), classes.to_string());
    }
    save_model(&archive, out)?;
    print_json(json!({ "n": xi.n(), "p": xi.p(), "method": method.to_string(), "out": out }));
    Ok(())
}

fn train_cmd(data: &Data, a: &TrainArgs) -> anyhow::Result<()> {
    let train = data.load(Split::Train, a.subset)?;
    let (rbm, init) = match (&a.model, a.init) {
        (Some(path), _) => (load_rbm(path)?.0, "archive".to_string()),
        (None, kind) => {
            let kind = kind.unwrap_or(InitKind::HopfieldQr);
            if a.k == 0 {
                bail!("--k must be positive");
            }
            let xi = if kind.uses_patterns() {
                Some(if a.k == 1 { class_mean_patterns(&train)? } else { subpattern_clusters(&train, a.k)? })
            } else {
                None
            };
            let p = a.k * train.n_classes();
            let spec = InitSpec { kind, p, seed: seeding::derive_seed(a.seed, &[1]) };
            let w = build_weights::<f64>(&spec, train.n_visible(), Some(&train), xi.as_ref())?.w;
            (Rbm::from_weights(w, a.beta)?, kind.to_string())
        }
    };
    let cfg = hoprbm::rbm::TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        cd_steps: a.cd_steps,
        epochs: a.epochs,
        seed: a.seed,
        beta: a.beta,
        ..Default::default()
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut metrics = MetricsWriter::new();
    let (_, reports) = hoprbm::rbm::train(rbm, &train, &cfg, |rbm, r| {
        metrics.push(r.epoch, 0, "weight_norm", r.weight_norm);
        metrics.push(r.epoch, 0, "relative_change", r.relative_change);
        metrics.push(r.epoch, 0, "epoch_step_norm", r.epoch_step_norm);
        let archive = rbm.to_archive().with_meta("init", &init).with_meta("epoch", r.epoch);
        save_model(&archive, a.out_dir.join(format!("epoch{}.hrbm", r.epoch)))
    })?;
    metrics.write(a.out_dir.join("metrics.csv"))?;
    print_json(json!({ "epochs": reports.len() - 1, "out_dir": a.out_dir }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_ais(
    data: &Data,
    model: &Path,
    chains: usize,
    levels: usize,
    seed: u64,
    beta: Option<f64>,
    subset: usize,
    weights_out: Option<&Path>,
) -> anyhow::Result<()> {
    let (mut rbm, _) = load_rbm(model)?;
    if let Some(beta) = beta {
        rbm.beta = beta;
    }
    let run = ln_z_ais(&rbm, &AisConfig { chains, levels, seed, ..AisConfig::default() })?;
    if let Some(path) = weights_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["chain", "log_weight"])?;
        for (j, lw) in run.log_weights.iter().enumerate() {
            w.write_record([j.to_string(), lw.to_string()])?;
        }
        w.flush()?;
    }
    let ll = if subset > 0 { Some(log_likelihood(&rbm, &data.load(Split::Train, subset)?, &run.estimate)?) } else { None };
    print_json(json!({
        "ln_z": run.estimate.value,
        "stderr": run.estimate.stderr,
        "chains": chains,
        "levels": levels,
        "beta": rbm.beta,
        "log_likelihood": ll,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reverse_binarize(model: &Path, x0: X0, seed: u64, alpha: f64, gamma: f64, max_iters: usize, out: &Path) -> anyhow::Result<()> {
    let (rbm, archive) = load_rbm(model)?;
    let p = rbm.n_hidden();
    let x0 = match x0 {
        X0::QrR => archive.matrix::<f64>("R").context("--x0 qr-r needs an archive written by `map hn2rbm`")?,
        X0::Identity => DMatrix::identity(p, p),
        X0::Random => random_x0(&rbm.w, &mut seeding::stream(seed, &[])),
    };
    let cfg = BinarizeConfig { alpha, gamma, max_iters, require_convergence: false, ..BinarizeConfig::default() };
    let sol = binarize_descent(&rbm.w, &x0, &cfg)?;
    let classes = match archive.meta("classes") {
        Some(list) => list.split(',').map(|c| c.parse()).collect::<Result<Vec<u8>, _>>()?,
        None => (0..p as u8).collect(),
    };
    let xi = sol.patterns(classes)?;
    let rank_ok = xi.check_rank().is_ok();
    let net = if rank_ok { projection_couplings::<f64>(&xi)?.with_beta(rbm.beta)? } else {
        hoprbm::hopfield::hebbian_couplings::<f64>(&xi).with_beta(rbm.beta)?
    };
    let rule = if rank_ok { "projection" } else { "hebbian" };
    save_model(&net.to_archive(Some(&xi)).with_meta("rule", rule).with_meta("binarization_error", sol.objective), out)?;
    print_json(json!({
        "error": sol.objective,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "gradient_norm": sol.grad_norm,
        "rule": rule,
        "out": out,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn classify_poe(
    data: &Data,
    k: usize,
    init: InitKind,
    cfg: hoprbm::rbm::TrainConfig,
    train_subset: usize,
    test_subset: usize,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let train = data.load(Split::Train, train_subset)?;
    let test = data.load(Split::Test, test_subset)?;
    let ens = train_experts::<f64>(&train, init, k, &cfg, None)?;
    let f_train = features(&ens, &train);
    let head = train_head(&f_train, train.labels(), train.n_classes(), &HeadConfig::default())?;
    let err = |pred: Vec<u8>, labels: &[u8]| pred.iter().zip(labels).filter(|(a, b)| a != b).count() as f64 / labels.len() as f64;
    let train_err = err(head.predict(&f_train), train.labels());
    let test_err = err(head.predict(&features(&ens, &test)), test.labels());
    if let Some(out) = out {
        save_model(&ens.to_archive(), out)?;
    }
    print_json(json!({
        "k": k,
        "init": init.to_string(),
        "epochs": cfg.epochs,
        "train_error": train_err,
        "test_error": test_err,
        "head_iterations": head.iterations,
    }));
    Ok(())
}

fn retrieve_cmd(data: &Data, a: &RetrieveArgs) -> anyhow::Result<()> {
    let xi = match &a.patterns {
        Some(path) => patterns_from_archive(&load_model(path)?)?,
        None => class_mean_patterns(&data.load(Split::Train, 0)?)?,
    };
    let net = projection_couplings::<f64>(&xi)?;
    let test = data.load(Split::Test, a.test_subset)?;
    let cfg = RetrievalConfig {
        beta: a.beta,
        ensemble: a.ensemble,
        threshold: a.threshold,
        rule: if a.metropolis { SpinRule::Metropolis } else { SpinRule::Glauber },
        seed: a.seed,
        ..RetrievalConfig::default()
    };
    let table = retrieval_table(&net, &xi, &test, &cfg);
    if let Some(path) = &a.table_out {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string(), "count".to_string()];
        header.extend((0..table.weights.len()).map(|c| format!("class{c}")));
        w.write_record(&header)?;
        for (label, row) in table.weights.iter().enumerate() {
            let count = table.counts[label];
            let mut cells = vec![label.to_string(), count.to_string()];
            cells.extend(row.iter().map(|v| (v / count.max(1) as f64).to_string()));
            w.write_record(&cells)?;
        }
        w.flush()?;
    }
    print_json(json!({
        "samples": test.len(),
        "accuracy": table.accuracy,
        "mean_correct_weight": table.mean_correct_weight,
        "no_retrieval": table.no_retrieval,
    }));
    Ok(())
}

fn experiment_cmd(data: &Data, a: &ExperimentArgs) -> anyhow::Result<()> {
    let kind: ExperimentKind = a.preset.parse()?;
    let mut cfg = ExperimentConfig::preset(kind);
    macro_rules! set {
        ($($field:ident <- $arg:expr),* $(,)?) => {
            $(if let Some(v) = $arg.clone() { cfg.$field = v; })*
        };
    }
    set!(
        out_dir <- a.out_dir,
        seed <- a.seed,
        train_subset <- a.subset,
        test_subset <- a.test_subset,
        epochs <- a.epochs,
        runs <- a.runs,
        ks <- a.ks,
        betas <- a.betas,
        inits <- a.inits,
        hidden <- a.hidden,
        learning_rate <- a.lr,
        batch_size <- a.batch,
        cd_steps <- a.cd_steps,
        beta <- a.beta,
        ais_chains <- a.ais_chains,
        ais_levels <- a.ais_levels,
    );
    if let Some(e) = &a.eval_epochs {
        cfg.eval_epochs = Some(e.clone());
    } else if let Some(e) = cfg.eval_epochs.as_mut() {
        // keep the preset's "first and last" evaluation in step with --epochs
        e.retain(|&x| x <= cfg.epochs);
        if !e.contains(&cfg.epochs) {
            e.push(cfg.epochs);
        }
    }
    cfg.checkpoints = !a.no_checkpoints;
    let train = data.load(Split::Train, 0)?;
    let test = if kind.needs_test_set() { Some(data.load(Split::Test, 0)?) } else { None };
    let summary = run_experiment(&cfg, &train, test.as_ref())?;
    print_json(json!({
        "experiment": kind.to_string(),
        "out_dir": summary.out_dir,
        "files": summary.files.len(),
    }));
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> anyhow::Result<()> {
    let archive = load_model(&a.model)?;
    let s = render_weights(&archive, &a.out, a.shape)?;
    let kind = match archive.kind {
        ModelKind::Hopfield => "hopfield",
        ModelKind::Rbm => "rbm",
        ModelKind::Poe => "poe",
    };
    print_json(json!({ "kind": kind, "tiles": s.tiles, "tile_shape": [s.tile_shape.0, s.tile_shape.1], "out": a.out }));
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let data = Data { dir: cli.mnist_dir.or_else(mnist_dir) };
    match cli.command {
        Command::Patterns(PatternsCmd::Build { k, subset, beta, out }) => patterns_build(&data, k, subset, beta, &out),
        Command::Map(MapCmd::Hn2rbm { patterns, method, beta, out }) => map_hn2rbm(&patterns, method, beta, &out),
        Command::Train(a) => train_cmd(&data, &a),
        Command::Eval(EvalCmd::Ais { model, chains, levels, seed, beta, subset, weights_out }) => {
            eval_ais(&data, &model, chains, levels, seed, beta, subset, weights_out.as_deref())
        }
        Command::Reverse(ReverseCmd::Binarize { model, x0, seed, alpha, gamma, max_iters, out }) => {
            reverse_binarize(&model, x0, seed, alpha, gamma, max_iters, &out)
        }
        Command::Classify(ClassifyCmd::Poe {
            k,
            init,
            epochs,
            lr,
            batch,
            cd_steps,
            beta,
            seed,
            train_subset,
            test_subset,
            out,
        }) => {
            let cfg = hoprbm::rbm::TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                cd_steps,
                epochs,
                seed,
                beta,
                ..Default::default()
            };
            classify_poe(&data, k, init, cfg, train_subset, test_subset, out.as_deref())
        }
        Command::Retrieve(a) => retrieve_cmd(&data, &a),
        Command::Experiment(a) => experiment_cmd(&data, &a),
        Command::Render(a) => render_cmd(&a),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err.downcast_ref::<hoprbm::Error>().map_or("Error", hoprbm::Error::kind);
            let report = json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
