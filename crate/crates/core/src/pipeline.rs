//! Commands behind the `moefuse` binary: synthetic data generation,
//! training, evaluation and configuration sweeps.
//!
//! Every command writes only below its output directory and is fully
//! determined by its arguments (wall-clock time in reports aside).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::data::{generate_synthetic, load_split, write_split, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::fusion::MoeConfig;
use crate::metrics::{eer, write_scores, EerResult, ScoredTrial};
use crate::model::MoeFusionModel;
use crate::train::{train_with, Checkpoint, EpochStats, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.mfck";
pub const LOSS_LOG_FILE: &str = "loss_log.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_TSV: &str = "sweep.tsv";
pub const SWEEP_MD: &str = "sweep.md";
pub const THREADS_ENV: &str = "MOEFUSE_THREADS";

/// The `k/n/H` grid of the configuration study, baseline first.
pub const TABLE_GRID: [(usize, usize, usize); 7] = [
    (2, 4, 128),
    (2, 6, 128),
    (2, 8, 128),
    (1, 4, 128),
    (3, 4, 128),
    (2, 4, 512),
    (2, 4, 1024),
];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `k/n/H` triples separated by commas, e.g. `2/4/128,1/4/128`.
pub fn parse_triples(text: &str) -> Result<Vec<(usize, usize, usize)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let parts: Vec<usize> = item
                .trim()
                .split('/')
                .map(|p| p.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad triple {item:?}: {e}")))?;
            match parts[..] {
                [k, n, h] => Ok((k, n, h)),
                _ => Err(Error::Config(format!("triple {item:?} must be k/n/H"))),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GenSynthArgs {
    pub spec: SynthSpec,
    pub out: PathBuf,
    pub split: String,
}

/// Writes a synthetic split to `<out>/<split>/`; returns that directory.
pub fn gen_synth(args: &GenSynthArgs) -> Result<PathBuf> {
    let files = generate_synthetic(&args.spec)?;
    write_split(&args.out, &args.split, &files)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub split: String,
    pub out: PathBuf,
    pub top_k: usize,
    pub experts_per_layer: usize,
    pub hidden_dim: usize,
    pub head_width: usize,
    pub train: TrainConfig,
}

impl TrainArgs {
    /// Baseline 2/4/128 with a 64-wide head.
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            split: "train".into(),
            out: out.into(),
            top_k: 2,
            experts_per_layer: 4,
            hidden_dim: 128,
            head_width: crate::classifier::DEFAULT_HEAD_WIDTH,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config: String,
    pub top_k: usize,
    pub experts_per_layer: usize,
    pub hidden_dim: usize,
    pub head_width: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub parameters: usize,
    pub lr_base: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub schedule_unit: &'static str,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weights: [f64; 2],
    pub utterances: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub loss_log: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub report: TrainReport,
}

pub fn run_train(args: &TrainArgs) -> Result<TrainSummary> {
    run_train_with(args, |_| {})
}

pub fn run_train_with(args: &TrainArgs, on_epoch: impl FnMut(&EpochStats)) -> Result<TrainSummary> {
    let started = Instant::now();
    args.train.validate()?;
    let dataset = load_split(&args.data, &args.split)?;
    let config = MoeConfig::new(args.top_k, args.experts_per_layer, args.hidden_dim)
        .with_geometry(dataset.frames(), dataset.feature_dim());
    let model = MoeFusionModel::init(config, args.head_width, args.train.seed)?;
    let parameters = model.num_parameters();
    let outcome = train_with(model, &dataset, &args.train, on_epoch)?;

    create_dir(&args.out)?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    outcome.best.save(&checkpoint)?;
    let loss_log = args.out.join(LOSS_LOG_FILE);
    let mut text = String::from("epoch\tloss\n");
    for (e, l) in outcome.loss_log().iter().enumerate() {
        let _ = writeln!(text, "{}\t{l}", e + 1);
    }
    write_text(&loss_log, &text)?;

    let t = &args.train;
    let report = TrainReport {
        config: config.label(),
        top_k: config.top_k,
        experts_per_layer: config.experts_per_layer,
        hidden_dim: config.hidden_dim,
        head_width: args.head_width,
        frames: config.frames,
        feature_dim: config.feature_dim,
        parameters,
        lr_base: t.lr_base,
        weight_decay: t.weight_decay,
        warmup: t.warmup_epochs,
        schedule_unit: t.schedule_unit.as_str(),
        max_epochs: t.max_epochs,
        patience: t.patience,
        batch_size: t.batch_size,
        seed: t.seed,
        class_weights: t.class_weights,
        utterances: dataset.len(),
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
        best_epoch: outcome.best.best_epoch + 1,
        best_loss: outcome.best_loss(),
        loss_log: outcome.loss_log().to_vec(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&args.out.join(REPORT_FILE), &json)?;
    Ok(TrainSummary {
        checkpoint,
        loss_log,
        report,
    })
}

/// Scores every utterance of `dataset`. Scores do not depend on how
/// utterances are grouped into batches.
pub fn score_dataset(model: &MoeFusionModel, dataset: &Dataset) -> Result<Vec<ScoredTrial>> {
    let cfg = model.config();
    if dataset.frames() != cfg.frames || dataset.feature_dim() != cfg.feature_dim {
        return Err(Error::Mismatch(format!(
            "checkpoint has T={} S={}, features have T={} S={}",
            cfg.frames,
            cfg.feature_dim,
            dataset.frames(),
            dataset.feature_dim()
        )));
    }
    let mut trials = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for idx in all.chunks(16) {
        let batch = dataset.batch(idx)?;
        let labels = batch.require_labels()?;
        let scores = model.scores(&batch.features)?;
        for ((id, label), score) in batch.ids.into_iter().zip(labels).zip(scores) {
            trials.push(ScoredTrial::new(id, score, label));
        }
    }
    Ok(trials)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: String,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub scores: PathBuf,
    pub trials: usize,
    pub result: EerResult,
}

pub fn scores_file_name(split: &str) -> String {
    format!("scores_{split}.tsv")
}

/// Scores a split with a checkpoint, writes `scores_<split>.tsv` under
/// `out`, and computes the EER.
pub fn run_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let dataset = load_split(&args.data, &args.split)?;
    let trials = score_dataset(&checkpoint.model, &dataset)?;
    create_dir(&args.out)?;
    let scores = args.out.join(scores_file_name(&args.split));
    write_scores(&scores, &trials)?;
    let result = eer(&trials)?;
    Ok(EvalSummary {
        scores,
        trials: trials.len(),
        result,
    })
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub data: PathBuf,
    pub train_split: String,
    pub eval_split: String,
    pub triples: Vec<(usize, usize, usize)>,
    pub out: PathBuf,
    pub head_width: usize,
    pub train: TrainConfig,
    /// Concurrent runs; each run stays single-threaded.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub epochs_run: usize,
    pub best_loss: f64,
    pub train_eer: f64,
    pub eval_eer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub triple: (usize, usize, usize),
    pub outcome: std::result::Result<SweepRun, String>,
}

impl SweepRow {
    pub fn label(&self) -> String {
        let (k, n, h) = self.triple;
        format!("{k}/{n}/{h}")
    }
}

/// Output directory of one sweep run, e.g. `k2_n4_h128`.
pub fn run_dir_name((k, n, h): (usize, usize, usize)) -> String {
    format!("k{k}_n{n}_h{h}")
}

/// Concurrency for sweeps: `MOEFUSE_THREADS` if set, else available cores.
pub fn sweep_threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn sweep_one(args: &SweepArgs, triple: (usize, usize, usize)) -> Result<SweepRun> {
    let (k, n, h) = triple;
    let dir = args.out.join(run_dir_name(triple));
    let train_args = TrainArgs {
        data: args.data.clone(),
        split: args.train_split.clone(),
        out: dir.clone(),
        top_k: k,
        experts_per_layer: n,
        hidden_dim: h,
        head_width: args.head_width,
        train: args.train.clone(),
    };
    let summary = run_train(&train_args)?;
    let eval_on = |split: &str| {
        run_eval(&EvalArgs {
            checkpoint: summary.checkpoint.clone(),
            data: args.data.clone(),
            split: split.to_string(),
            out: dir.clone(),
        })
    };
    let train_eer = eval_on(&args.train_split)?.result.eer;
    let eval_eer = eval_on(&args.eval_split)?.result.eer;
    Ok(SweepRun {
        epochs_run: summary.report.epochs_run,
        best_loss: summary.report.best_loss,
        train_eer,
        eval_eer,
    })
}

/// Trains and evaluates every triple, then writes `sweep.tsv` and
/// `sweep.md`. A failed run is recorded in its row; the sweep carries on.
pub fn run_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.triples.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one k/n/H triple".into(),
        ));
    }
    create_dir(&args.out)?;
    let slots: Vec<Mutex<Option<SweepRow>>> =
        args.triples.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = args.threads.clamp(1, args.triples.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&triple) = args.triples.get(i) else {
                    break;
                };
                let outcome = sweep_one(args, triple).map_err(|e| e.to_string());
                *slots[i].lock().unwrap() = Some(SweepRow { triple, outcome });
            });
        }
    });
    let rows: Vec<SweepRow> = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every triple ran"))
        .collect();
    write_text(&args.out.join(SWEEP_TSV), &sweep_tsv(&rows))?;
    write_text(
        &args.out.join(SWEEP_MD),
        &sweep_markdown(&rows, &args.train_split, &args.eval_split),
    )?;
    Ok(rows)
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("config\tstatus\tepochs\tbest_loss\ttrain_eer\teval_eer\n");
    for r in rows {
        let _ = match &r.outcome {
            Ok(run) => writeln!(
                out,
                "{}\tok\t{}\t{}\t{}\t{}",
                r.label(),
                run.epochs_run,
                run.best_loss,
                run.train_eer,
                run.eval_eer
            ),
            Err(e) => writeln!(
                out,
                "{}\tfailed: {}\t\t\t\t",
                r.label(),
                e.replace(['\t', '\n'], " ")
            ),
        };
    }
    out
}

pub fn sweep_markdown(rows: &[SweepRow], train_split: &str, eval_split: &str) -> String {
    let mut out = format!(
        "| Configuration | EER(%) {train_split} | EER(%) {eval_split} | Epochs |\n|---|---|---|---|\n"
    );
    for r in rows {
        let _ = match &r.outcome {
            Ok(run) => writeln!(
                out,
                "| {} | {:.2} | {:.2} | {} |",
                r.label(),
                100.0 * run.train_eer,
                100.0 * run.eval_eer,
                run.epochs_run
            ),
            Err(e) => writeln!(
                out,
                "| {} | failed | {} | - |",
                r.label(),
                e.replace('|', "/")
            ),
        };
    }
    out
}
