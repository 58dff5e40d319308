//! Full scoring model: gate, 24 expert groups, and head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{head_graph, scores_from_logits, HeadParams};
use crate::error::{Error, Result};
use crate::fusion::{
    assemble_graph, check_experts, flatten, fuse_graph, gate_graph, gate_output, Expert,
    ExpertBinding, GateOutput, GatingNetwork, LayerFeatureBatch, MoeConfig, FUSED_LAYERS,
};
use crate::label::Label;
use crate::numkit::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MoeFusionModel {
    config: MoeConfig,
    pub gating: GatingNetwork,
    /// `experts[i][j]` is expert `j` of layer group `i`.
    pub experts: Vec<Vec<Expert>>,
    pub head: HeadParams,
}

/// Result of a forward pass without gradients.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub gate: GateOutput,
    /// `B×T×(24·S)` input of the head.
    pub fused: Tensor,
    pub logits: Tensor,
    pub scores: Vec<f64>,
}

struct Built<'a> {
    gate_w: NodeId,
    gate: NodeId,
    mask: Vec<bool>,
    assembled: NodeId,
    logits: NodeId,
    binding: ExpertBinding<'a>,
    head: crate::classifier::HeadIds,
}

impl MoeFusionModel {
    /// Seeded initialization: gate, then experts layer-major, then head.
    pub fn init(config: MoeConfig, head_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if head_width == 0 {
            return Err(Error::Config("head width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gating = GatingNetwork::init(&mut rng, config.feature_dim, config.num_experts());
        let experts = (0..FUSED_LAYERS)
            .map(|_| {
                (0..config.experts_per_layer)
                    .map(|_| Expert::init(&mut rng, config.feature_dim, config.hidden_dim))
                    .collect()
            })
            .collect();
        let head = HeadParams::init(&mut rng, config.fused_dim(), head_width);
        Ok(Self {
            config,
            gating,
            experts,
            head,
        })
    }

    pub fn from_parts(
        config: MoeConfig,
        gating: GatingNetwork,
        experts: Vec<Vec<Expert>>,
        head: HeadParams,
    ) -> Result<Self> {
        config.validate()?;
        check_experts(&config, &experts)?;
        if gating.weight.shape() != [config.feature_dim, config.num_experts()] {
            return Err(Error::Config(format!(
                "gating weight {:?}, config expects [{}, {}]",
                gating.weight.shape(),
                config.feature_dim,
                config.num_experts()
            )));
        }
        if head.input_dim() != config.fused_dim() {
            return Err(Error::Config(format!(
                "head input {} but fused width is {}",
                head.input_dim(),
                config.fused_dim()
            )));
        }
        Ok(Self {
            config,
            gating,
            experts,
            head,
        })
    }

    pub fn config(&self) -> &MoeConfig {
        &self.config
    }

    pub fn head_width(&self) -> usize {
        self.head.width()
    }

    /// All trainable tensors in a fixed order: gate, experts layer-major
    /// (`w1, b1, w2, b2` each), head (`wp, bp, wo, bo`).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.gating.weight];
        for e in self.experts.iter().flatten() {
            out.extend(e.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.gating.weight];
        for e in self.experts.iter_mut().flatten() {
            out.extend(e.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    /// Names matching [`params`](Self::params).
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["gate.w".to_string()];
        for (i, group) in self.experts.iter().enumerate() {
            for j in 0..group.len() {
                for p in ["w1", "b1", "w2", "b2"] {
                    out.push(format!("expert.{i}.{j}.{p}"));
                }
            }
        }
        out.extend(["head.wp", "head.bp", "head.wo", "head.bo"].map(String::from));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn check_batch(&self, batch: &LayerFeatureBatch) -> Result<()> {
        if batch.feature_dim() != self.config.feature_dim || batch.frames() != self.config.frames {
            return Err(Error::Mismatch(format!(
                "model expects T={} S={}, batch has T={} S={}",
                self.config.frames,
                self.config.feature_dim,
                batch.frames(),
                batch.feature_dim()
            )));
        }
        Ok(())
    }

    fn build<'a>(
        &'a self,
        g: &mut Graph,
        batch: &LayerFeatureBatch,
        trainable: bool,
    ) -> Result<Built<'a>> {
        self.check_batch(batch)?;
        let (b, t) = (batch.batch_size(), batch.frames());
        let gate_w = if trainable {
            g.leaf(self.gating.weight.clone())
        } else {
            g.constant(self.gating.weight.clone())
        };
        let gate_in = g.constant(flatten(batch.gate_input())?);
        let (gate, mask) = gate_graph(g, gate_w, gate_in, self.config.top_k)?;
        let layers = (0..FUSED_LAYERS)
            .map(|i| Ok(g.constant(flatten(batch.layer(i))?)))
            .collect::<Result<Vec<_>>>()?;
        let mut binding = ExpertBinding::new(&self.experts, trainable);
        let fused = fuse_graph(g, &self.config, &mut binding, gate, &layers)?;
        let assembled = assemble_graph(g, &fused, b, t)?;
        let head = self.head.bind(g, trainable);
        let logits = head_graph(g, head, assembled)?;
        Ok(Built {
            gate_w,
            gate,
            mask,
            assembled,
            logits,
            binding,
            head,
        })
    }

    pub fn forward(&self, batch: &LayerFeatureBatch) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let built = self.build(&mut g, batch, false)?;
        let logits = g.value(built.logits).clone();
        Ok(ForwardOutput {
            gate: gate_output(g.value(built.gate).clone(), &built.mask),
            fused: g.value(built.assembled).clone(),
            scores: scores_from_logits(&logits),
            logits,
        })
    }

    pub fn scores(&self, batch: &LayerFeatureBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let built = self.build(&mut g, batch, false)?;
        Ok(scores_from_logits(g.value(built.logits)))
    }

    /// Weighted cross-entropy loss of the batch and its gradient with
    /// respect to every tensor of [`params`](Self::params), in that order.
    /// Experts no row selected get exactly zero gradient.
    pub fn loss_and_grads(
        &self,
        batch: &LayerFeatureBatch,
        labels: &[Label],
        class_weights: [f64; 2],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let built = self.build(&mut g, batch, true)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let loss = g.cross_entropy(built.logits, &targets, &class_weights)?;
        g.backward(loss)?;

        let mut grads = vec![g.grad(built.gate_w).clone()];
        for (slot, expert) in built
            .binding
            .bound()
            .iter()
            .zip(self.experts.iter().flatten())
        {
            match slot {
                Some(ids) => {
                    grads.extend([ids.w1, ids.b1, ids.w2, ids.b2].map(|id| g.grad(id).clone()))
                }
                None => grads.extend(expert.params().map(|p| Tensor::zeros(p.shape()))),
            }
        }
        let h = built.head;
        grads.extend([h.wp, h.bp, h.wo, h.bo].map(|id| g.grad(id).clone()));
        Ok((g.value(loss).data()[0], grads))
    }

    /// Builds the loss on a fresh tape with every parameter as a leaf and
    /// returns the tape and loss node without running `backward`.
    pub fn trace(
        &self,
        batch: &LayerFeatureBatch,
        labels: &[Label],
        class_weights: [f64; 2],
    ) -> Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let built = self.build(&mut g, batch, true)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let loss = g.cross_entropy(built.logits, &targets, &class_weights)?;
        Ok((g, loss))
    }

    pub fn loss(
        &self,
        batch: &LayerFeatureBatch,
        labels: &[Label],
        class_weights: [f64; 2],
    ) -> Result<f64> {
        let mut g = Graph::new();
        let built = self.build(&mut g, batch, false)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let loss = g.cross_entropy(built.logits, &targets, &class_weights)?;
        Ok(g.value(loss).data()[0])
    }
}
