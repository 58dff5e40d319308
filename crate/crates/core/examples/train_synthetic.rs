//! Train the baseline 2/4/128 model on synthetic features and score a
//! held-out split.
//!
//! cargo run --release --example train_synthetic

use moefuse::data::{generate_synthetic, Dataset, SynthSpec};
use moefuse::metrics::eer;
use moefuse::pipeline::score_dataset;
use moefuse::train::{train_with, TrainConfig};
use moefuse::{MoeConfig, MoeFusionModel};

fn split(seed: u64) -> moefuse::Result<Dataset> {
    let spec = SynthSpec {
        n_per_class: 100,
        frames: 20,
        feature_dim: 16,
        seed,
        ..SynthSpec::default()
    };
    Dataset::new(generate_synthetic(&spec)?)
}

fn main() -> moefuse::Result<()> {
    let (train_set, eval_set) = (split(7)?, split(8)?);
    let config = MoeConfig::new(2, 4, 128).with_geometry(20, 16);
    let model = MoeFusionModel::init(config, 64, 0)?;
    let cfg = TrainConfig {
        lr_base: 1e-4,
        max_epochs: 10,
        ..TrainConfig::default()
    };

    let outcome = train_with(model, &train_set, &cfg, |s| {
        println!(
            "epoch {:>2}  loss {:.5}  lr {:.2e}",
            s.epoch + 1,
            s.loss,
            s.lr
        );
    })?;
    let trials = score_dataset(&outcome.best.model, &eval_set)?;
    let result = eer(&trials)?;
    println!(
        "best epoch {}, held-out EER {:.2}%",
        outcome.best.best_epoch + 1,
        100.0 * result.eer
    );
    Ok(())
}
