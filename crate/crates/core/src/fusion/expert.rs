use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, zero_bias};
use crate::numkit::{Graph, NodeId, Tensor};

/// Two-layer feed-forward expert `S → H → S` with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Tape handles of one expert's parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ExpertIds {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl Expert {
    pub fn new(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        let (s, h) = w1.dims2("expert.w1")?;
        let consistent = b1.shape() == [h] && w2.shape() == [h, s] && b2.shape() == [s];
        if !consistent {
            return Err(Error::Config(format!(
                "expert shapes disagree: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w1: fan_in_uniform(rng, feature_dim, hidden_dim),
            b1: zero_bias(hidden_dim),
            w2: fan_in_uniform(rng, hidden_dim, feature_dim),
            b2: zero_bias(feature_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Applies the expert to every row of an `R×S` matrix.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let ids = self.bind(&mut g, false);
        let input = g.constant(x.clone());
        let out = expert_graph(&mut g, ids, input)?;
        Ok(g.value(out).clone())
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> ExpertIds {
        let mut put = |t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        ExpertIds {
            w1: put(&self.w1),
            b1: put(&self.b1),
            w2: put(&self.w2),
            b2: put(&self.b2),
        }
    }
}

pub(crate) fn expert_graph(g: &mut Graph, ids: ExpertIds, x: NodeId) -> Result<NodeId> {
    let h = g.matmul(x, ids.w1)?;
    let h = g.add_bias(h, ids.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, ids.w2)?;
    Ok(g.add_bias(o, ids.b2)?)
}
