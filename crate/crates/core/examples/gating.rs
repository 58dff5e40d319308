//! Top-K softmax gate on a handful of rows.
//!
//! cargo run --example gating

use moefuse::fusion::{gate_forward, GatingNetwork};
use moefuse::numkit::Tensor;

fn main() -> moefuse::Result<()> {
    // 3 rows of a 2-dim last-layer feature, 4 experts
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])?;
    let w = Tensor::from_rows(&[vec![2.0, 1.0, 0.0, -1.0], vec![0.0, 1.0, 3.0, 0.5]])?;
    let gate = gate_forward(&GatingNetwork::new(w)?, &x, 2)?;
    for row in 0..gate.rows() {
        let weights: Vec<String> = gate
            .weights()
            .row(row)
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect();
        println!(
            "row {row}: selected {:?}  weights [{}]",
            gate.selected(row),
            weights.join(", ")
        );
    }
    Ok(())
}
