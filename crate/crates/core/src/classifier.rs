//! Scoring head over the assembled fusion output.
//!
//! Mean-pools over frames, then `affine → ReLU → affine` to two logits
//! (index 0 spoof, index 1 bonafide). The countermeasure score is
//! `logit[bonafide] − logit[spoof]`, so higher means more bonafide.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, zero_bias};
use crate::label::Label;
use crate::numkit::{Axis, Graph, NodeId, Tensor};

pub const DEFAULT_HEAD_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wp: Tensor,
    pub bp: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIds {
    pub wp: NodeId,
    pub bp: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

impl HeadParams {
    pub fn new(wp: Tensor, bp: Tensor, wo: Tensor, bo: Tensor) -> Result<Self> {
        let (_, p) = wp.dims2("head.wp")?;
        if bp.shape() != [p] || wo.shape() != [p, 2] || bo.shape() != [2] {
            return Err(Error::Config(format!(
                "head shapes disagree: wp {:?}, bp {:?}, wo {:?}, bo {:?}",
                wp.shape(),
                bp.shape(),
                wo.shape(),
                bo.shape()
            )));
        }
        Ok(Self { wp, bp, wo, bo })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, width: usize) -> Self {
        Self {
            wp: fan_in_uniform(rng, input_dim, width),
            bp: zero_bias(width),
            wo: fan_in_uniform(rng, width, 2),
            bo: zero_bias(2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wp.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.wp.shape()[1]
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.wp, &self.bp, &self.wo, &self.bo]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.wp, &mut self.bp, &mut self.wo, &mut self.bo]
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> HeadIds {
        let mut put = |t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        HeadIds {
            wp: put(&self.wp),
            bp: put(&self.bp),
            wo: put(&self.wo),
            bo: put(&self.bo),
        }
    }
}

/// Adds the head to `g`; `fused` must be `B×T×F`. Returns `B×2` logits.
pub(crate) fn head_graph(g: &mut Graph, ids: HeadIds, fused: NodeId) -> Result<NodeId> {
    let shape = g.value(fused).shape().to_vec();
    let expected = g.value(ids.wp).shape()[0];
    if shape.len() != 3 || shape[2] != expected {
        return Err(crate::numkit::TensorError::Shape {
            op: "score",
            lhs: shape,
            rhs: vec![expected],
        }
        .into());
    }
    let pooled = g.mean_pool(fused, Axis(1))?;
    let h = g.matmul(pooled, ids.wp)?;
    let h = g.add_bias(h, ids.bp)?;
    let h = g.relu(h);
    let o = g.matmul(h, ids.wo)?;
    Ok(g.add_bias(o, ids.bo)?)
}

/// `logit[bonafide] − logit[spoof]` per row of `B×2` logits.
pub fn scores_from_logits(logits: &Tensor) -> Vec<f64> {
    logits
        .data()
        .chunks_exact(2)
        .map(|row| row[Label::Bonafide.index()] - row[Label::Spoof.index()])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Tensor,
    pub scores: Vec<f64>,
}

/// Scores a `B×T×(24·S)` assembled batch.
pub fn score(head: &HeadParams, fused: &Tensor) -> Result<HeadOutput> {
    let mut g = Graph::new();
    let ids = head.bind(&mut g, false);
    let x = g.constant(fused.clone());
    let out = head_graph(&mut g, ids, x)?;
    let logits = g.value(out).clone();
    let scores = scores_from_logits(&logits);
    Ok(HeadOutput { logits, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bias_only_path() {
        let mut head = HeadParams::init(&mut ChaCha8Rng::seed_from_u64(0), 6, 4);
        for p in head.params_mut() {
            p.data_mut().fill(0.0);
        }
        head.bo.data_mut().copy_from_slice(&[0.3, 0.7]);
        let out = score(&head, &Tensor::zeros(&[3, 5, 6])).unwrap();
        for s in out.scores {
            assert!((s - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_permutation_permutes_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = HeadParams::init(&mut rng, 4, 3);
        let data: Vec<f64> = (0..3 * 2 * 4)
            .map(|i| ((i * 37) % 19) as f64 * 0.1 - 0.9)
            .collect();
        let x = Tensor::new(vec![3, 2, 4], data.clone()).unwrap();
        let perm = [2, 0, 1];
        let permuted: Vec<f64> = perm
            .iter()
            .flat_map(|&b| data[b * 8..(b + 1) * 8].to_vec())
            .collect();
        let xp = Tensor::new(vec![3, 2, 4], permuted).unwrap();
        let s = score(&head, &x).unwrap().scores;
        let sp = score(&head, &xp).unwrap().scores;
        for (i, &b) in perm.iter().enumerate() {
            assert_eq!(sp[i], s[b]);
        }
    }

    #[test]
    fn frame_permutation_leaves_score_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = HeadParams::init(&mut rng, 3, 5);
        let data: Vec<f64> = (0..4 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![1, 4, 3], data.clone()).unwrap();
        let reversed: Vec<f64> = data.chunks_exact(3).rev().flatten().copied().collect();
        let xr = Tensor::new(vec![1, 4, 3], reversed).unwrap();
        let a = score(&head, &x).unwrap().scores[0];
        let b = score(&head, &xr).unwrap().scores[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let head = HeadParams::init(&mut ChaCha8Rng::seed_from_u64(3), 6, 4);
        assert!(score(&head, &Tensor::zeros(&[1, 2, 5])).is_err());
        assert!(score(&head, &Tensor::zeros(&[2, 6])).is_err());
    }
}
