//! Command-line surface: `train`, `eval`, `sweep`, `gradcheck`, `stats`.
//!
//! Each command writes its report to the given writer so it can be driven from
//! tests as well as from the `convkb` binary. Diagnostics go through `log`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalConfig, RankingReport, Setting};
use crate::kb::{load_dir, KnowledgeBase, Split};
use crate::model::{Activation, EmbeddingStore, FilterInit, ModelKind, Norm};
use crate::train::{init_model, run_suite, EpochStats, Optimizer, SuiteConfig, TrainConfig, Trainer, DEFAULT_STEP};

#[derive(Debug, Parser)]
#[command(
    name = "convkb",
    version,
    about = "Train and evaluate ConvKB and TransE knowledge base embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a per-epoch loss log.
    Train(TrainArgs),
    /// Rank a split with a trained checkpoint.
    Eval(EvalArgs),
    /// Grid search selected by validation Hits@10.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences on random instances.
    Gradcheck(GradcheckArgs),
    /// Print entity, relation and triple counts per split.
    Stats(StatsArgs),
}

/// Flags shared by `train` and `sweep` that are not grid dimensions.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "convkb")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Corrupted triples per valid triple.
    #[arg(long, default_value_t = 1)]
    pub neg_ratio: usize,
    /// ConvKB activation: relu, abs, square or identity.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// sgd or adam (default: sgd for TransE, adam for ConvKB).
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Rescale entity embeddings to unit norm before every batch
    /// (default: true for TransE, false for ConvKB).
    #[arg(long)]
    pub normalize: Option<bool>,
    /// Also update embeddings of entities that never occur in train.txt.
    #[arg(long)]
    pub train_unseen: bool,
    /// Checkpoint whose embeddings initialize this run (e.g. trained TransE).
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Embedding dimension.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of filters.
    #[arg(long)]
    pub tau: Option<usize>,
    /// TransE norm, 1 or 2.
    #[arg(long)]
    pub p: Option<u32>,
    /// TransE margin.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// L2 coefficient on the ConvKB weight vector [default: 0.001].
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// tnormal or fixed.
    #[arg(long)]
    pub filter_init: Option<FilterInit>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log path [default: <out>.loss.tsv].
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "filtered")]
    pub setting: Setting,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write per-triple head and tail ranks to this TSV.
    #[arg(long)]
    pub ranks: Option<PathBuf>,
}

/// Grid dimensions take comma-separated lists; the grid is their product.
#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epochs: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub filter_init: Vec<FilterInit>,
    #[arg(long, default_value = "filtered")]
    pub setting: Setting,
    /// Train grid points concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save every grid point's checkpoint as point-NNN.ckpt in this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Use a single ConvKB activation instead of alternating relu and square.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Check only one model.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Perturb one analytic gradient component; the check must then fail.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub h: f64,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

/// Whether a command that completed without error also passed its own check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    match &cli.command {
        Command::Train(args) => cmd_train(args, out).map(|_| Outcome::Success),
        Command::Eval(args) => cmd_eval(args, out).map(|_| Outcome::Success),
        Command::Sweep(args) => cmd_sweep(args, out).map(|_| Outcome::Success),
        Command::Gradcheck(args) => cmd_gradcheck(args, out),
        Command::Stats(args) => cmd_stats(args, out).map(|_| Outcome::Success),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

/// Optional overrides of a model's default hyperparameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub tau: Option<usize>,
    pub p: Option<u32>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub filter_init: Option<FilterInit>,
}

/// Starts from the model's defaults and applies every flag that was given.
pub fn build_config(run: &RunArgs, o: &Overrides) -> Result<TrainConfig> {
    let mut c = TrainConfig::for_model(run.model);
    c.batch_size = run.batch;
    c.neg_ratio = run.neg_ratio;
    c.seed = run.seed;
    c.train_unseen_entities = run.train_unseen;
    if let Some(a) = run.activation {
        c.activation = a;
    }
    if let Some(opt) = run.optimizer {
        c.optimizer = opt;
    }
    if let Some(n) = run.normalize {
        c.normalize_entities = n;
    }
    if let Some(k) = o.k {
        c.k = k;
    }
    if let Some(tau) = o.tau {
        c.tau = tau;
    }
    if let Some(p) = o.p {
        c.norm = Norm::from_p(p)?;
    }
    if let Some(g) = o.gamma {
        c.gamma = g;
    }
    if let Some(l) = o.lambda {
        c.lambda = l;
    }
    if let Some(lr) = o.lr {
        c.lr = lr;
    }
    if let Some(e) = o.epochs {
        c.epochs = e;
    }
    if let Some(f) = o.filter_init {
        c.filter_init = f;
    }
    c.validate()?;
    Ok(c)
}

/// Embeddings of a checkpoint trained on the same vocabularies as `kb`.
pub fn load_init_embeddings(path: &Path, kb: &KnowledgeBase) -> Result<EmbeddingStore> {
    let ck = Checkpoint::load(path)?;
    ck.check_vocab(kb)?;
    info!(
        "initializing embeddings from {} ({} checkpoint, k={})",
        path.display(),
        ck.model.kind().name(),
        ck.model.emb().k()
    );
    Ok(ck.model.emb().clone())
}

/// Trains `config` on `kb` and packages the result as a checkpoint.
pub fn train_to_checkpoint(
    kb: &KnowledgeBase,
    config: TrainConfig,
    init: Option<EmbeddingStore>,
    mut on_epoch: impl FnMut(&EpochStats) -> Result<()>,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let model = init_model(&config, kb, init)?;
    let mut trainer = Trainer::new(kb, config.clone(), model)?;
    let mut history = Vec::with_capacity(config.epochs);
    while trainer.epochs_done() < config.epochs {
        let stats = trainer.run_epoch()?;
        if !stats.mean_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {} at epoch {}",
                stats.mean_loss, stats.epoch
            )));
        }
        on_epoch(&stats)?;
        history.push(stats);
    }
    let epochs_completed = trainer.epochs_done() as u64;
    let (model, optimizer) = trainer.into_parts();
    let ck = Checkpoint {
        config,
        vocab: kb.vocabularies(),
        model,
        optimizer: optimizer.adam().cloned(),
        epochs_completed,
    };
    Ok((ck, history))
}

fn default_loss_log(out: &Path) -> PathBuf {
    let mut s: OsString = out.as_os_str().to_owned();
    s.push(".loss.tsv");
    PathBuf::from(s)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<Checkpoint> {
    let overrides = Overrides {
        k: args.k,
        tau: args.tau,
        p: args.p,
        gamma: args.gamma,
        lambda: args.lambda,
        lr: args.lr,
        epochs: args.epochs,
        filter_init: args.filter_init,
    };
    let config = build_config(&args.run, &overrides)?;
    let kb = load_dir(&args.run.data)?;
    let init = args
        .run
        .init_from
        .as_deref()
        .map(|p| load_init_embeddings(p, &kb))
        .transpose()?;

    let log_path = args.loss_log.clone().unwrap_or_else(|| default_loss_log(&args.out));
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let log_err = |e| Error::io(&log_path, e);
    writeln!(log, "epoch\tmean_loss").map_err(log_err)?;

    let every = (config.epochs / 20).max(1);
    info!(
        "training {} on {} triples for {} epochs",
        config.model.name(),
        kb.train.len(),
        config.epochs
    );
    let (ck, history) = train_to_checkpoint(&kb, config, init, |s| {
        writeln!(log, "{}\t{}", s.epoch, s.mean_loss).map_err(log_err)?;
        if s.epoch % every == 0 {
            info!("epoch {}: mean loss {:.6} ({:.2?})", s.epoch, s.mean_loss, s.elapsed);
        }
        Ok(())
    })?;
    log.flush().map_err(log_err)?;
    ck.save(&args.out)?;

    match history.last() {
        Some(last) => writeln!(out, "epochs\t{}\tfinal_mean_loss\t{}", last.epoch, last.mean_loss),
        None => writeln!(out, "epochs\t0\tfinal_mean_loss\tNA"),
    }
    .map_err(stdout_err)?;
    info!("checkpoint written to {}", args.out.display());
    Ok(ck)
}

fn parse_split(name: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown split {name:?} (expected train, valid or test)")))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<RankingReport> {
    let split = parse_split(&args.split)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let kb = load_dir(&args.data)?;
    ck.check_vocab(&kb)?;
    let report = evaluate_split(&ck.model, &kb, split, &EvalConfig::with_setting(args.setting))?;
    if let Some(path) = &args.ranks {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        report.write_ranks(&kb, &mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    writeln!(out, "MR\tMRR\tH@1\tH@3\tH@10").map_err(stdout_err)?;
    writeln!(out, "{}", report.summary_line()).map_err(stdout_err)?;
    Ok(report)
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub mr: f64,
    pub mrr: f64,
    pub hits10: f64,
}

pub const SWEEP_HEADER: &str =
    "index\tmodel\tk\ttau\tp\tgamma\tlambda\tlr\tepochs\tfilter_init\tfinal_loss\tvalid_mr\tvalid_mrr\tvalid_hits10";

impl SweepRow {
    /// Tab-separated row matching [`SWEEP_HEADER`]; floats print at full precision.
    pub fn tsv(&self) -> String {
        let c = &self.config;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.index,
            c.model.name(),
            c.k,
            c.tau,
            c.norm.p(),
            c.gamma,
            c.lambda,
            c.lr,
            c.epochs,
            c.filter_init.name(),
            self.final_loss,
            self.mr,
            self.mrr,
            self.hits10
        )
    }
}

/// Index of the best row: highest Hits@10, then lowest MR, then earliest.
pub fn select_best(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<&SweepRow> = None;
    for row in rows {
        let better = match best {
            None => true,
            Some(b) => row.hits10 > b.hits10 || (row.hits10 == b.hits10 && row.mr < b.mr),
        };
        if better {
            best = Some(row);
        }
    }
    best.map(|r| r.index)
}

/// Cartesian product of the grid lists, first dimension varying slowest.
/// An empty list means "use the model default".
pub fn grid_points(args: &SweepArgs) -> Vec<Overrides> {
    fn dim<T: Copy>(values: &[T]) -> Vec<Option<T>> {
        if values.is_empty() {
            vec![None]
        } else {
            values.iter().copied().map(Some).collect()
        }
    }
    let mut points = Vec::new();
    for k in dim(&args.k) {
        for tau in dim(&args.tau) {
            for p in dim(&args.p) {
                for gamma in dim(&args.gamma) {
                    for lambda in dim(&args.lambda) {
                        for lr in dim(&args.lr) {
                            for epochs in dim(&args.epochs) {
                                for filter_init in dim(&args.filter_init) {
                                    points.push(Overrides {
                                        k,
                                        tau,
                                        p,
                                        gamma,
                                        lambda,
                                        lr,
                                        epochs,
                                        filter_init,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    points
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<(Vec<SweepRow>, usize)> {
    let points = grid_points(args);
    let configs = points
        .iter()
        .map(|o| build_config(&args.run, o))
        .collect::<Result<Vec<_>>>()?;
    if configs.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let kb = load_dir(&args.run.data)?;
    if kb.valid.is_empty() {
        return Err(Error::Config(
            "sweep selects on the validation split, which is empty".into(),
        ));
    }
    let init = args
        .run
        .init_from
        .as_deref()
        .map(|p| load_init_embeddings(p, &kb))
        .transpose()?;
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let eval_cfg = EvalConfig::with_setting(args.setting);

    let run_point = |(index, config): (usize, &TrainConfig)| -> Result<SweepRow> {
        info!("grid point {index}: {config:?}");
        let (ck, history) = train_to_checkpoint(&kb, config.clone(), init.clone(), |_| Ok(()))?;
        if let Some(dir) = &args.checkpoint_dir {
            ck.save(dir.join(format!("point-{index:03}.ckpt")))?;
        }
        let report = evaluate_split(&ck.model, &kb, Split::Valid, &eval_cfg)?;
        Ok(SweepRow {
            index,
            config: config.clone(),
            final_loss: history.last().map_or(f64::NAN, |s| s.mean_loss),
            mr: report.mr,
            mrr: report.mrr,
            hits10: report.hits_at(10).unwrap_or(0.0),
        })
    };
    let rows: Vec<SweepRow> = if args.parallel {
        configs.par_iter().enumerate().map(run_point).collect::<Result<_>>()?
    } else {
        configs.iter().enumerate().map(run_point).collect::<Result<_>>()?
    };
    let best = select_best(&rows).expect("non-empty grid");

    let mut table = String::new();
    table.push_str(SWEEP_HEADER);
    table.push('\n');
    for row in &rows {
        table.push_str(&row.tsv());
        table.push('\n');
    }
    if let Some(path) = &args.out {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    write!(out, "{table}").map_err(stdout_err)?;
    writeln!(out, "best\t{}", rows[best].tsv()).map_err(stdout_err)?;
    Ok((rows, best))
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<Outcome> {
    if args.instances == 0 {
        return Err(Error::Config("--instances must be at least 1".into()));
    }
    if !(args.h.is_finite() && args.h > 0.0) {
        return Err(Error::Config(format!("--h must be positive, got {}", args.h)));
    }
    let config = SuiteConfig {
        instances: args.instances,
        seed: args.seed,
        h: args.h,
        activation: args.activation,
        model: args.model,
        corrupt: args.corrupt,
    };
    let report = run_suite(&config)?;
    let w = |e| stdout_err(e);
    let mut worst: Vec<(f64, f64)> = Vec::new();
    for r in &report.results {
        let tol = r.report.tolerance;
        let err = r.report.max_rel_err();
        match worst.iter_mut().find(|(t, _)| *t == tol) {
            Some(entry) => entry.1 = entry.1.max(err),
            None => worst.push((tol, err)),
        }
        if !r.report.passed() {
            writeln!(
                out,
                "FAIL\t{}\tmax_rel_err\t{:e}\ttolerance\t{:e}",
                r.spec.describe(),
                err,
                tol
            )
            .map_err(w)?;
        }
    }
    worst.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (tol, err) in &worst {
        writeln!(out, "tolerance\t{tol:e}\tmax_rel_err\t{err:e}").map_err(w)?;
    }
    let failed = report.results.iter().filter(|r| !r.report.passed()).count();
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(out, "{verdict}\t{} instances\t{failed} failed", report.results.len()).map_err(w)?;
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}

/// Per split: `split<TAB>entities<TAB>relations<TAB>triples`. Entity and
/// relation counts are those of the whole dataset vocabulary.
pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<KnowledgeBase> {
    let kb = load_dir(&args.data)?;
    if kb.train.is_empty() && kb.valid.is_empty() && kb.test.is_empty() {
        warn!("dataset in {} contains no triples", args.data.display());
    }
    for split in Split::ALL {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            split.name(),
            kb.num_entities(),
            kb.num_relations(),
            kb.split(split).len()
        )
        .map_err(stdout_err)?;
    }
    Ok(kb)
}
