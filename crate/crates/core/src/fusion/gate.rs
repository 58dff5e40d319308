use rand::Rng;

use crate::error::{Error, Result};
use crate::init::fan_in_uniform;
use crate::numkit::{Graph, NodeId, Tensor};

/// Linear gate `W ∈ R^{S×N}` driven by the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub weight: Tensor,
}

impl GatingNetwork {
    pub fn new(weight: Tensor) -> Result<Self> {
        weight.dims2("gating")?;
        if !weight.is_finite() {
            return Err(Error::Config("gating weight has non-finite entries".into()));
        }
        Ok(Self { weight })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, feature_dim: usize, num_experts: usize) -> Self {
        Self {
            weight: fan_in_uniform(rng, feature_dim, num_experts),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Sparse per-row gate weights over all `N` experts.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    weights: Tensor,
    selected: Vec<Vec<usize>>,
}

impl GateOutput {
    /// `D×N` weight matrix; unselected entries are exactly zero.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    /// Selected expert indices of `row`, ascending.
    pub fn selected(&self, row: usize) -> &[usize] {
        &self.selected[row]
    }

    pub fn rows(&self) -> usize {
        self.selected.len()
    }

    pub fn weight(&self, row: usize, expert: usize) -> f64 {
        self.weights.row(row)[expert]
    }
}

/// Marks the `k` largest logits of each row. Equal logits are ranked by
/// lower expert index first.
pub fn top_k_mask(logits: &Tensor, k: usize) -> Result<Vec<bool>> {
    let (rows, n) = logits.dims2("top_k")?;
    if k == 0 || k > n {
        return Err(Error::Config(format!("top_k {k} outside 1..={n}")));
    }
    let mut mask = vec![false; rows * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for r in 0..rows {
        let row = logits.row(r);
        order.clear();
        order.extend(0..n);
        // stable: ties keep ascending index order
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &e in &order[..k] {
            mask[r * n + e] = true;
        }
    }
    Ok(mask)
}

/// Adds the gate to `g`. Top-K selection is a constant of the tape, so
/// gradients reach `weight` only through the selected logits.
pub(crate) fn gate_graph(
    g: &mut Graph,
    weight: NodeId,
    input: NodeId,
    k: usize,
) -> Result<(NodeId, Vec<bool>)> {
    let logits = g.matmul(input, weight)?;
    gate_graph_from_logits(g, logits, k)
}

fn gate_graph_from_logits(g: &mut Graph, logits: NodeId, k: usize) -> Result<(NodeId, Vec<bool>)> {
    let mask = top_k_mask(g.value(logits), k)?;
    let out = g.masked_softmax(logits, mask.clone())?;
    Ok((out, mask))
}

pub(crate) fn gate_output(weights: Tensor, mask: &[bool]) -> GateOutput {
    let n = weights.shape()[1];
    let selected = mask
        .chunks_exact(n)
        .map(|row| (0..n).filter(|&e| row[e]).collect())
        .collect();
    GateOutput { weights, selected }
}

/// Top-K softmax gate over precomputed logits (`D×N`).
pub fn gate_from_logits(logits: &Tensor, k: usize) -> Result<GateOutput> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let (out, mask) = gate_graph_from_logits(&mut g, z, k)?;
    Ok(gate_output(g.value(out).clone(), &mask))
}

/// Gate weights for a flattened last-layer feature `D×S`:
/// `softmax(TopK(x · W))` per row.
pub fn gate_forward(gating: &GatingNetwork, last_layer: &Tensor, k: usize) -> Result<GateOutput> {
    let mut g = Graph::new();
    let w = g.constant(gating.weight.clone());
    let x = g.constant(last_layer.clone());
    let (out, mask) = gate_graph(&mut g, w, x, k)?;
    Ok(gate_output(g.value(out).clone(), &mask))
}
