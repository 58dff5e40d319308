//! Compare backprop gradients against central differences on a tiny model.
//!
//! cargo run --example gradient_check

use moefuse::numkit::Tensor;
use moefuse::{Label, LayerFeatureBatch, MoeConfig, MoeFusionModel};

fn main() -> moefuse::Result<()> {
    let config = MoeConfig::new(2, 2, 2).with_geometry(2, 3);
    let model = MoeFusionModel::init(config, 4, 3)?;
    let layers = (0..25)
        .map(|l| {
            Tensor::new(
                vec![1, 2, 3],
                (0..6).map(|i| ((l * 7 + i) as f64 * 0.37).sin()).collect(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let batch = LayerFeatureBatch::new(layers)?;
    let labels = [Label::Bonafide];

    let (loss, grads) = model.loss_and_grads(&batch, &labels, [1.0, 1.0])?;
    println!("loss {loss:.6}, {} parameters", model.num_parameters());

    let h = 1e-5;
    let names = model.param_names();
    let mut probe = model.clone();
    for (p, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..grads[p].numel() {
            let orig = probe.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + h;
            let up = probe.loss(&batch, &labels, [1.0, 1.0])?;
            probe.params_mut()[p].data_mut()[i] = orig - h;
            let down = probe.loss(&batch, &labels, [1.0, 1.0])?;
            probe.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p].data()[i];
            worst =
                worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        if grads[p].data().iter().any(|&g| g != 0.0) {
            println!("{name:<24} max rel err {worst:.2e}");
        }
    }
    Ok(())
}
