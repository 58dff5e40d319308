//! A reduced configuration sweep over a synthetic split.
//!
//! cargo run --release --example sweep

use moefuse::data::SynthSpec;
use moefuse::pipeline::{gen_synth, run_sweep, sweep_markdown, GenSynthArgs, SweepArgs};
use moefuse::train::TrainConfig;

fn main() -> moefuse::Result<()> {
    let root = std::env::temp_dir().join("moefuse-sweep-example");
    for (split, seed) in [("train", 1), ("eval", 2)] {
        let spec = SynthSpec {
            n_per_class: 30,
            frames: 10,
            feature_dim: 8,
            seed,
            ..SynthSpec::default()
        };
        gen_synth(&GenSynthArgs {
            spec,
            out: root.clone(),
            split: split.into(),
        })?;
    }
    let args = SweepArgs {
        data: root.clone(),
        train_split: "train".into(),
        eval_split: "eval".into(),
        triples: vec![(1, 4, 32), (2, 4, 32), (2, 8, 32)],
        out: root.join("sweep"),
        head_width: 16,
        train: TrainConfig {
            lr_base: 1e-3,
            warmup_epochs: 1,
            max_epochs: 5,
            ..TrainConfig::default()
        },
        threads: moefuse::pipeline::sweep_threads_from_env(),
    };
    let rows = run_sweep(&args)?;
    print!(
        "{}",
        sweep_markdown(&rows, &args.train_split, &args.eval_split)
    );
    Ok(())
}
