//! Write a small synthetic train/eval pair and read it back.
//!
//! cargo run --example gen_synth -- /tmp/moefuse-data

use std::path::PathBuf;

use moefuse::data::{load_split, SynthSpec};
use moefuse::pipeline::{gen_synth, GenSynthArgs};

fn main() -> moefuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("moefuse-data"), PathBuf::from);
    for (split, seed) in [("train", 7), ("eval", 8)] {
        let spec = SynthSpec {
            n_per_class: 20,
            frames: 20,
            feature_dim: 16,
            seed,
            ..SynthSpec::default()
        };
        let dir = gen_synth(&GenSynthArgs {
            spec,
            out: out.clone(),
            split: split.into(),
        })?;
        let ds = load_split(&out, split)?;
        println!(
            "{}: {} utterances, T={} S={}",
            dir.display(),
            ds.len(),
            ds.frames(),
            ds.feature_dim()
        );
    }
    Ok(())
}
