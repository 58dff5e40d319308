use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moefuse::data::SynthSpec;
use moefuse::pipeline::{
    self, gen_synth, parse_triples, run_eval, run_sweep, run_train_with, EvalArgs, GenSynthArgs,
    SweepArgs, TrainArgs,
};
use moefuse::train::{ScheduleUnit, TrainConfig};

#[derive(Parser)]
#[command(
    name = "moefuse",
    version,
    about = "Mixture-of-experts layer fusion for countermeasure scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic feature split.
    GenSynth(GenSynthFlags),
    /// Train a model on a feature split.
    Train(TrainFlags),
    /// Score a split with a checkpoint and report the EER.
    Eval(EvalFlags),
    /// Train and evaluate a grid of k/n/H configurations.
    Sweep(SweepFlags),
}

#[derive(Clone)]
struct LayerList(Vec<usize>);

fn parse_layers(s: &str) -> Result<LayerList, String> {
    let layers: Vec<usize> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if layers.is_empty() {
        return Err("at least one informative layer is required".into());
    }
    Ok(LayerList(layers))
}

fn parse_weights(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b] => Ok([a, b]),
        _ => Err("expected two comma-separated weights: spoof,bonafide".into()),
    }
}

#[derive(Args)]
struct GenSynthFlags {
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long = "t", default_value_t = 201)]
    frames: usize,
    #[arg(long = "s", default_value_t = 1024)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Informative layers in 0..24, comma-separated.
    #[arg(long, value_parser = parse_layers, default_value = "3,7")]
    layers: LayerList,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimFlags {
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Warm-up length in schedule units; clamped below --max-epochs.
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value = "epoch")]
    schedule: ScheduleUnit,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-entropy weights as spoof,bonafide.
    #[arg(long, value_parser = parse_weights, default_value = "1,1")]
    class_weights: [f64; 2],
    #[arg(long, default_value_t = 64)]
    head_width: usize,
    #[arg(long)]
    quiet: bool,
}

impl OptimFlags {
    fn train_config(&self) -> TrainConfig {
        let warmup = match self.schedule {
            ScheduleUnit::Epoch => self.warmup.min(self.max_epochs.saturating_sub(1)),
            ScheduleUnit::Step => self.warmup,
        };
        TrainConfig {
            lr_base: self.lr,
            eps: self.eps,
            weight_decay: self.weight_decay,
            warmup_epochs: warmup,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed: self.seed,
            class_weights: self.class_weights,
            schedule_unit: self.schedule,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Dataset root holding <split>/manifest.tsv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    top_k: usize,
    #[arg(long, default_value_t = 4)]
    experts: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[command(flatten)]
    optim: OptimFlags,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "eval")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepFlags {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    train_split: String,
    #[arg(long, default_value = "eval")]
    eval_split: String,
    /// k/n/H triples, comma-separated. Defaults to the 7-row study grid.
    #[arg(long)]
    configs: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optim: OptimFlags,
}

fn run(cli: Cli) -> moefuse::Result<()> {
    match cli.command {
        Command::GenSynth(f) => {
            let args = GenSynthArgs {
                spec: SynthSpec {
                    n_per_class: f.n_per_class,
                    frames: f.frames,
                    feature_dim: f.dim,
                    seed: f.seed,
                    informative_layers: f.layers.0,
                    delta: f.delta,
                    sigma: f.sigma,
                },
                out: f.out,
                split: f.split,
            };
            let dir = gen_synth(&args)?;
            println!(
                "wrote {} utterances to {}",
                2 * args.spec.n_per_class,
                dir.display()
            );
        }
        Command::Train(f) => {
            let args = TrainArgs {
                data: f.data,
                split: f.split,
                out: f.out,
                top_k: f.top_k,
                experts_per_layer: f.experts,
                hidden_dim: f.hidden,
                head_width: f.optim.head_width,
                train: f.optim.train_config(),
            };
            let quiet = f.optim.quiet;
            let summary = run_train_with(&args, |s| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  loss {:.6}  lr {:.3e}{}",
                        s.epoch + 1,
                        s.loss,
                        s.lr,
                        if s.improved { "  *" } else { "" }
                    );
                }
            })?;
            let r = &summary.report;
            println!(
                "{}: {} epochs, best loss {:.6} at epoch {}, checkpoint {}",
                r.config,
                r.epochs_run,
                r.best_loss,
                r.best_epoch,
                summary.checkpoint.display()
            );
        }
        Command::Eval(f) => {
            let summary = run_eval(&EvalArgs {
                checkpoint: f.checkpoint,
                data: f.data,
                split: f.split,
                out: f.out,
            })?;
            println!(
                "EER {:.4} ({:.2}%) at threshold {} over {} trials; scores in {}",
                summary.result.eer,
                100.0 * summary.result.eer,
                summary.result.threshold,
                summary.trials,
                summary.scores.display()
            );
        }
        Command::Sweep(f) => {
            let triples = match &f.configs {
                Some(text) => parse_triples(text)?,
                None => pipeline::TABLE_GRID.to_vec(),
            };
            let args = SweepArgs {
                data: f.data,
                train_split: f.train_split,
                eval_split: f.eval_split,
                triples,
                out: f.out,
                head_width: f.optim.head_width,
                train: f.optim.train_config(),
                threads: pipeline::sweep_threads_from_env(),
            };
            let rows = run_sweep(&args)?;
            print!(
                "{}",
                pipeline::sweep_markdown(&rows, &args.train_split, &args.eval_split)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
