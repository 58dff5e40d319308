//! Top-K gated fusion of per-layer encoder features.
//!
//! The last hidden state of the encoder drives a linear gate over
//! `N = n · 24` experts. Each of the 24 remaining layers (feature encoder
//! output and the first 23 Transformer layers) owns a disjoint group of `n`
//! experts, so the fused output of layer `i` is
//!
//! ```text
//! y_i[r] = Σ_j gate[r, i·n + j] · E_{i,j}(x_i[r])
//! ```
//!
//! Experts are indexed layer-major: expert `j` of layer `i` is gate column
//! `i·n + j`. Top-K runs over all `N` logits jointly, so a row may leave
//! whole layers at zero. An expert is only evaluated on the rows that
//! gave it a nonzero weight.

mod config;
mod expert;
mod gate;

pub use config::{
    MoeConfig, DEFAULT_FEATURE_DIM, DEFAULT_FRAMES, FUSED_LAYERS, GATE_LAYER, STORED_LAYERS,
};
pub use expert::Expert;
pub use gate::{gate_forward, gate_from_logits, top_k_mask, GateOutput, GatingNetwork};

pub(crate) use expert::{expert_graph, ExpertIds};
pub(crate) use gate::{gate_graph, gate_output};

use crate::error::{Error, Result};
use crate::numkit::{Axis, Graph, NodeId, Tensor};

/// The 25 per-layer features of a batch, each `B×T×S`. Index 0 is the
/// feature encoder output, 1..=23 the Transformer hidden states, and 24 the
/// last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureBatch {
    layers: Vec<Tensor>,
}

impl LayerFeatureBatch {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        if layers.len() != STORED_LAYERS {
            return Err(Error::Config(format!(
                "expected {STORED_LAYERS} layers, got {}",
                layers.len()
            )));
        }
        let shape = layers[0].shape().to_vec();
        if shape.len() != 3 {
            return Err(crate::numkit::TensorError::Rank {
                op: "layer batch",
                expected: 3,
                shape,
            }
            .into());
        }
        if let Some(bad) = layers.iter().find(|l| l.shape() != shape.as_slice()) {
            return Err(crate::numkit::TensorError::Shape {
                op: "layer batch",
                lhs: shape,
                rhs: bad.shape().to_vec(),
            }
            .into());
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Tensor {
        &self.layers[i]
    }

    pub fn gate_input(&self) -> &Tensor {
        &self.layers[GATE_LAYER]
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.layers[0].shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].shape()[2]
    }
}

/// `B×T×S → (B·T)×S`. Row `r` holds batch `r / T`, frame `r % T`.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        &[b, t, s] => Ok(x.reshape(&[b * t, s])?),
        _ => Err(crate::numkit::TensorError::Rank {
            op: "flatten",
            expected: 3,
            shape: x.shape().to_vec(),
        }
        .into()),
    }
}

/// Inverse of [`flatten`].
pub fn unflatten(x: &Tensor, batch: usize, frames: usize) -> Result<Tensor> {
    let (d, s) = x.dims2("unflatten")?;
    check_rows(d, batch, frames)?;
    Ok(x.reshape(&[batch, frames, s])?)
}

fn check_rows(d: usize, batch: usize, frames: usize) -> Result<()> {
    if frames == 0 || d != batch * frames {
        return Err(crate::numkit::TensorError::Shape {
            op: "unflatten",
            lhs: vec![d],
            rhs: vec![batch, frames],
        }
        .into());
    }
    Ok(())
}

/// Lazily places expert parameters on a tape, so that experts no row
/// selected never appear in it.
pub(crate) struct ExpertBinding<'a> {
    experts: &'a [Vec<Expert>],
    ids: Vec<Option<ExpertIds>>,
    trainable: bool,
}

impl<'a> ExpertBinding<'a> {
    pub fn new(experts: &'a [Vec<Expert>], trainable: bool) -> Self {
        let n = experts.first().map_or(0, Vec::len);
        Self {
            experts,
            ids: vec![None; experts.len() * n],
            trainable,
        }
    }

    fn get(&mut self, g: &mut Graph, layer: usize, j: usize) -> ExpertIds {
        let n = self.experts[layer].len();
        let slot = &mut self.ids[layer * n + j];
        *slot.get_or_insert_with(|| self.experts[layer][j].bind(g, self.trainable))
    }

    /// Handles of experts that were used, indexed layer-major.
    pub fn bound(&self) -> &[Option<ExpertIds>] {
        &self.ids
    }
}

pub(crate) fn check_experts(config: &MoeConfig, experts: &[Vec<Expert>]) -> Result<()> {
    if experts.len() != FUSED_LAYERS {
        return Err(Error::Config(format!(
            "expected {FUSED_LAYERS} expert groups, got {}",
            experts.len()
        )));
    }
    for (i, group) in experts.iter().enumerate() {
        if group.len() != config.experts_per_layer {
            return Err(Error::Config(format!(
                "layer {i} has {} experts, config says {}",
                group.len(),
                config.experts_per_layer
            )));
        }
        for e in group {
            if e.feature_dim() != config.feature_dim || e.hidden_dim() != config.hidden_dim {
                return Err(Error::Config(format!(
                    "layer {i} expert is {}→{}, config says {}→{}",
                    e.feature_dim(),
                    e.hidden_dim(),
                    config.feature_dim,
                    config.hidden_dim
                )));
            }
        }
    }
    Ok(())
}

/// Builds the 24 fused outputs on `g`.
///
/// `gate` is the `D×N` gate node and `gate_weights` its value. Layer `i`'s
/// experts only ever read `layers[i]`.
pub(crate) fn fuse_graph(
    g: &mut Graph,
    config: &MoeConfig,
    binding: &mut ExpertBinding<'_>,
    gate: NodeId,
    layers: &[NodeId],
) -> Result<Vec<NodeId>> {
    let gate_weights = g.value(gate).clone();
    let (d, n_total) = gate_weights.dims2("fuse")?;
    if n_total != config.num_experts() || layers.len() != FUSED_LAYERS {
        return Err(Error::Config(format!(
            "gate has {n_total} columns and {} layers, config expects {} and {FUSED_LAYERS}",
            layers.len(),
            config.num_experts()
        )));
    }
    let s = config.feature_dim;
    let mut fused = Vec::with_capacity(FUSED_LAYERS);
    for (i, &layer) in layers.iter().enumerate() {
        let (rows, cols) = g.value(layer).dims2("fuse")?;
        if rows != d || cols != s {
            return Err(crate::numkit::TensorError::Shape {
                op: "fuse",
                lhs: vec![d, s],
                rhs: vec![rows, cols],
            }
            .into());
        }
        let mut parts = Vec::new();
        for j in 0..config.experts_per_layer {
            let e = config.expert_index(i, j);
            let active: Vec<usize> = (0..d).filter(|&r| gate_weights.row(r)[e] > 0.0).collect();
            if active.is_empty() {
                continue;
            }
            let ids = binding.get(g, i, j);
            let x = g.gather_rows(layer, &active)?;
            let out = expert_graph(g, ids, x)?;
            let entries: Vec<(usize, usize)> = active.iter().map(|&r| (r, e)).collect();
            let w = g.gather_entries(gate, &entries)?;
            let weighted = g.mul_rows(out, w)?;
            parts.push((weighted, active));
        }
        fused.push(g.scatter_rows(d, s, parts)?);
    }
    Ok(fused)
}

/// Per-layer fused outputs `y_0..y_23`, each `D×S`.
pub fn fuse_forward(
    config: &MoeConfig,
    experts: &[Vec<Expert>],
    gate: &GateOutput,
    flat_layers: &[Tensor],
) -> Result<Vec<Tensor>> {
    check_experts(config, experts)?;
    let mut g = Graph::new();
    let gate_id = g.constant(gate.weights().clone());
    let layer_ids: Vec<NodeId> = flat_layers.iter().map(|x| g.constant(x.clone())).collect();
    let mut binding = ExpertBinding::new(experts, false);
    let ys = fuse_graph(&mut g, config, &mut binding, gate_id, &layer_ids)?;
    Ok(ys.into_iter().map(|id| g.value(id).clone()).collect())
}

pub(crate) fn assemble_graph(
    g: &mut Graph,
    fused: &[NodeId],
    batch: usize,
    frames: usize,
) -> Result<NodeId> {
    let (d, s) = g.value(fused[0]).dims2("assemble")?;
    check_rows(d, batch, frames)?;
    let cat = g.concat(fused, Axis(1))?;
    Ok(g.reshape(cat, &[batch, frames, fused.len() * s])?)
}

/// Concatenates the fused outputs layer-major along the feature axis and
/// restores the batch layout: `B×T×(24·S)`, with layer `i` in columns
/// `[i·S, (i+1)·S)`.
pub fn assemble(fused: &[Tensor], batch: usize, frames: usize) -> Result<Tensor> {
    if fused.len() != FUSED_LAYERS {
        return Err(Error::Config(format!(
            "assemble expects {FUSED_LAYERS} layers, got {}",
            fused.len()
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = fused.iter().map(|y| g.constant(y.clone())).collect();
    let out = assemble_graph(&mut g, &ids, batch, frames)?;
    Ok(g.value(out).clone())
}
