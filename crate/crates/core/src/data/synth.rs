//! Seeded Gaussian stand-in for precomputed encoder features.
//!
//! Every value is `N(0, σ²)`. Informative layers and the gate layer (24)
//! are shifted by `+δ/2` for bonafide and `−δ/2` for spoof utterances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::format::{FeatureFile, LayerFeatureSet};
use crate::error::{Error, Result};
use crate::fusion::{FUSED_LAYERS, GATE_LAYER, STORED_LAYERS};
use crate::label::Label;
use crate::numkit::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Layers in `0..24` that carry the class shift.
    pub informative_layers: Vec<usize>,
    pub delta: f64,
    pub sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            frames: crate::fusion::DEFAULT_FRAMES,
            feature_dim: crate::fusion::DEFAULT_FEATURE_DIM,
            seed: 0,
            informative_layers: vec![3, 7],
            delta: 4.0,
            sigma: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.informative_layers.is_empty() {
            return Err(Error::Config("informative layer set is empty".into()));
        }
        if let Some(bad) = self.informative_layers.iter().find(|&&l| l >= FUSED_LAYERS) {
            return Err(Error::Config(format!(
                "informative layer {bad} outside 0..{FUSED_LAYERS}"
            )));
        }
        if self.n_per_class == 0 || self.frames == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "n_per_class, frames and feature_dim must be positive".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        // delta = 0 is allowed as the no-signal control
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta must be non-negative, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn shift(&self, layer: usize, label: Label) -> f64 {
        if layer != GATE_LAYER && !self.informative_layers.contains(&layer) {
            return 0.0;
        }
        match label {
            Label::Bonafide => self.delta / 2.0,
            Label::Spoof => -self.delta / 2.0,
        }
    }
}

/// Utterance id for index `i` of a class, e.g. `bonafide_00012`.
pub fn synth_id(label: Label, i: usize) -> String {
    format!("{}_{i:05}", label.as_str())
}

/// All bonafide utterances first, then all spoof utterances. Values are
/// rounded to `f32` so that writing and reading them back is exact.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<FeatureFile>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_layer = spec.frames * spec.feature_dim;
    let mut out = Vec::with_capacity(2 * spec.n_per_class);
    for label in [Label::Bonafide, Label::Spoof] {
        for i in 0..spec.n_per_class {
            let layers = (0..STORED_LAYERS)
                .map(|layer| {
                    let mean = spec.shift(layer, label);
                    let data = (0..per_layer)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (mean + spec.sigma * z) as f32 as f64
                        })
                        .collect();
                    Tensor::new(vec![spec.frames, spec.feature_dim], data)
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(FeatureFile {
                id: synth_id(label, i),
                label: Some(label),
                features: LayerFeatureSet::new(layers)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_per_class: 3,
            frames: 4,
            feature_dim: 5,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = SynthSpec {
            seed: 12,
            ..small()
        };
        assert_ne!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn counts_and_labels() {
        let files = generate_synthetic(&small()).unwrap();
        assert_eq!(files.len(), 6);
        assert_eq!(
            files
                .iter()
                .filter(|f| f.label == Some(Label::Bonafide))
                .count(),
            3
        );
        assert_eq!(files[0].id, "bonafide_00000");
        assert_eq!(files[3].id, "spoof_00000");
    }

    #[test]
    fn rejects_bad_specs() {
        let empty = SynthSpec {
            informative_layers: vec![],
            ..small()
        };
        assert!(matches!(generate_synthetic(&empty), Err(Error::Config(_))));
        let out_of_range = SynthSpec {
            informative_layers: vec![24],
            ..small()
        };
        assert!(generate_synthetic(&out_of_range).is_err());
        let no_noise = SynthSpec {
            sigma: 0.0,
            ..small()
        };
        assert!(generate_synthetic(&no_noise).is_err());
    }

    #[test]
    fn shifted_layers_have_class_dependent_mean() {
        let spec = SynthSpec {
            n_per_class: 2,
            frames: 50,
            feature_dim: 40,
            delta: 4.0,
            ..small()
        };
        let files = generate_synthetic(&spec).unwrap();
        let mean = |f: &FeatureFile, l: usize| {
            let d = f.features.layers()[l].data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        for f in &files {
            let sign = if f.label == Some(Label::Bonafide) {
                1.0
            } else {
                -1.0
            };
            for l in [3, 7, GATE_LAYER] {
                assert!((mean(f, l) - sign * 2.0).abs() < 0.2);
            }
            assert!(mean(f, 0).abs() < 0.2);
        }
    }
}
