//! Fuse a random batch with a freshly initialized model and inspect which
//! experts each frame used.
//!
//! cargo run --example fusion

use moefuse::numkit::Tensor;
use moefuse::{LayerFeatureBatch, MoeConfig, MoeFusionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> moefuse::Result<()> {
    let (b, t, s) = (2, 3, 8);
    let config = MoeConfig::new(2, 4, 16).with_geometry(t, s);
    let model = MoeFusionModel::init(config, 8, 0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layers = (0..25)
        .map(|_| {
            Tensor::new(
                vec![b, t, s],
                (0..b * t * s)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = model.forward(&LayerFeatureBatch::new(layers)?)?;

    println!("fused features: {:?}", out.fused.shape());
    for row in 0..out.gate.rows() {
        let picks: Vec<String> = out
            .gate
            .selected(row)
            .iter()
            .map(|&e| {
                format!(
                    "layer {} expert {} ({:.3})",
                    e / 4,
                    e % 4,
                    out.gate.weight(row, e)
                )
            })
            .collect();
        println!("frame {row}: {}", picks.join(", "));
    }
    println!("scores: {:?}", out.scores);
    Ok(())
}
