//! Equal error rate and DET points for a toy score list.
//!
//! cargo run --example eer

use moefuse::metrics::{det_points, eer, ScoredTrial};
use moefuse::Label;

fn main() -> moefuse::Result<()> {
    let trials = [
        ("a", 2.1, Label::Bonafide),
        ("b", 1.4, Label::Bonafide),
        ("c", 0.3, Label::Bonafide),
        ("d", 0.9, Label::Spoof),
        ("e", -0.5, Label::Spoof),
        ("f", -1.7, Label::Spoof),
    ]
    .map(|(id, s, l)| ScoredTrial::new(id, s, l));

    for p in det_points(&trials)? {
        println!("θ {:>5}  FAR {:.3}  FRR {:.3}", p.threshold, p.far, p.frr);
    }
    let r = eer(&trials)?;
    println!("EER {:.3} at θ = {}", r.eer, r.threshold);
    Ok(())
}
