use crate::error::{Error, Result};

/// Number of encoder layers routed through expert groups: the feature
/// encoder output plus the first 23 Transformer layers.
pub const FUSED_LAYERS: usize = 24;

/// Layers stored per utterance: the fused layers plus the last hidden
/// state that drives the gate.
pub const STORED_LAYERS: usize = FUSED_LAYERS + 1;

/// Index of the gating layer inside a 25-layer feature set.
pub const GATE_LAYER: usize = FUSED_LAYERS;

pub const DEFAULT_FEATURE_DIM: usize = 1024;
pub const DEFAULT_FRAMES: usize = 201;

/// Shape of the fusion module: Top-K, experts per layer group, and
/// expert hidden width, plus the feature geometry it is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoeConfig {
    pub top_k: usize,
    pub experts_per_layer: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub frames: usize,
}

impl Default for MoeConfig {
    /// The 2/4/128 baseline at full encoder geometry.
    fn default() -> Self {
        Self {
            top_k: 2,
            experts_per_layer: 4,
            hidden_dim: 128,
            feature_dim: DEFAULT_FEATURE_DIM,
            frames: DEFAULT_FRAMES,
        }
    }
}

impl MoeConfig {
    pub fn new(top_k: usize, experts_per_layer: usize, hidden_dim: usize) -> Self {
        Self {
            top_k,
            experts_per_layer,
            hidden_dim,
            ..Self::default()
        }
    }

    pub fn with_geometry(mut self, frames: usize, feature_dim: usize) -> Self {
        self.frames = frames;
        self.feature_dim = feature_dim;
        self
    }

    /// Total expert count `N = n · 24`.
    pub fn num_experts(&self) -> usize {
        self.experts_per_layer * FUSED_LAYERS
    }

    /// Global gate column of expert `j` in layer group `layer`.
    pub fn expert_index(&self, layer: usize, j: usize) -> usize {
        layer * self.experts_per_layer + j
    }

    /// Width of the assembled feature axis, `24 · S`.
    pub fn fused_dim(&self) -> usize {
        FUSED_LAYERS * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("top_k", self.top_k),
            ("experts_per_layer", self.experts_per_layer),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("frames", self.frames),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.top_k > self.num_experts() {
            return Err(Error::Config(format!(
                "top_k {} exceeds expert count {}",
                self.top_k,
                self.num_experts()
            )));
        }
        Ok(())
    }

    /// Short `k/n/H` label, as used in sweep tables.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.top_k, self.experts_per_layer, self.hidden_dim
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_counts() {
        let cfg = MoeConfig::default();
        assert_eq!(cfg.num_experts(), 96);
        assert_eq!(cfg.label(), "2/4/128");
        assert_eq!(cfg.expert_index(3, 1), 13);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_out_of_range_k() {
        assert!(MoeConfig::new(0, 4, 128).validate().is_err());
        assert!(MoeConfig::new(97, 4, 128).validate().is_err());
        assert!(MoeConfig::new(96, 4, 128).validate().is_ok());
    }
}
