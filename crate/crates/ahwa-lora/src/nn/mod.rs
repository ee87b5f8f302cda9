//! A desk-scale transformer whose dense layers route through one of three
//! paths: plain digital matmuls, a training-time hardware-aware path
//! (injected weight/output noise plus converter quantization with
//! straight-through gradients), or an inference-time path over programmed
//! analog tiles.
//!
//! The mapped layers (embedding lookup as a one-hot-driven linear, the QKV
//! and output projections of attention, both FFN linears, and the classifier
//! head) carry frozen meta-weights. LoRA adapters attached to these layers
//! are the only state that trains after deployment. Attention scores,
//! softmax, GELU, layer norms, and pooling always run in full precision.

mod linear;
mod lora;
mod model;

pub use linear::{
    hwa_linear_backward, hwa_linear_forward, sample_weight_noise, AnalogRealization, HwaLinearCache,
    HwaLinearGrads,
};
pub use lora::{LoraAdapter, LoraSet};
pub use model::{
    deploy, one_hot, softmax_rows, Deployment, ForwardMode, MetaParams, ModelCache, ModelGrads,
    TinyTransformer,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where LoRA adapters are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraPlacement {
    /// Every mapped linear: attention projections, FFN, classifier head, and
    /// the embedding when `lora_on_embedding` is set.
    AllLinear,
    /// Only the attention-block projections.
    QkvOnly,
    /// Only the two FFN linears.
    FfnOnly,
}

/// Which mapped-layer group a slot belongs to. Mirrors the manifest schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotGroup {
    /// Attention-block projections (Q, K, V, and the output projection).
    Qkv,
    /// Feed-forward linears.
    Ffn,
    /// Token-embedding table, driven by one-hot inputs.
    Embed,
    /// Classifier head.
    Head,
}

impl LoraPlacement {
    /// Whether a slot of the given group carries an adapter under this
    /// placement. `lora_on_embedding` gates the embedding under `AllLinear`.
    pub fn selects(&self, group: SlotGroup, lora_on_embedding: bool) -> bool {
        match self {
            LoraPlacement::AllLinear => group != SlotGroup::Embed || lora_on_embedding,
            LoraPlacement::QkvOnly => group == SlotGroup::Qkv,
            LoraPlacement::FfnOnly => group == SlotGroup::Ffn,
        }
    }
}

/// One mapped layer in the model manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub group: SlotGroup,
}

/// Trainable-parameter count for a manifest: the sum of `r * (m + n)` over
/// the layers the placement selects.
pub fn count_lora_params(manifest: &[ManifestEntry], r: usize, placement: LoraPlacement) -> u64 {
    manifest
        .iter()
        .filter(|e| placement.selects(e.group, true))
        .map(|e| r as u64 * (e.m + e.n) as u64)
        .sum()
}

/// Training-time noise injection amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwaNoiseSpec {
    /// Relative std of the additive Gaussian weight noise. The reference is
    /// the per-channel max absolute clipped weight.
    pub weight_noise: f64,
    /// Relative std of the additive Gaussian output (ADC) noise.
    pub output_noise: f64,
    /// What `output_noise` is relative to.
    pub output_noise_ref: OutputNoiseRef,
    pub enabled: bool,
}

/// Reference magnitude for the output-noise std.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputNoiseRef {
    /// The ADC full range (`output_bound`). Output noise models converter
    /// noise, so it is skipped entirely when no converter is modeled.
    AdcRange,
    /// The realized std of the meta-path outputs on the current batch.
    BatchStd,
}

impl Default for HwaNoiseSpec {
    fn default() -> Self {
        HwaNoiseSpec {
            weight_noise: 0.067,
            output_noise: 0.04,
            output_noise_ref: OutputNoiseRef::AdcRange,
            enabled: true,
        }
    }
}

impl HwaNoiseSpec {
    pub fn disabled() -> Self {
        HwaNoiseSpec { enabled: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_noise < 0.0 || self.output_noise < 0.0 {
            return Err(Error::Config("noise amplitudes must be >= 0".into()));
        }
        Ok(())
    }
}

/// Desk-scale transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyTransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub n_classes: usize,
    pub rank: usize,
    pub lora_placement: LoraPlacement,
    /// Whether `AllLinear` placement also adapts the embedding table.
    pub lora_on_embedding: bool,
    pub lora_scaling: f64,
}

impl Default for TinyTransformerConfig {
    fn default() -> Self {
        TinyTransformerConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            vocab: 32,
            max_seq: 32,
            n_classes: 2,
            rank: 8,
            lora_placement: LoraPlacement::AllLinear,
            lora_on_embedding: true,
            lora_scaling: 1.0,
        }
    }
}

impl TinyTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.vocab == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_seq == 0 {
            return Err(Error::Config("max_seq must be >= 1".into()));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        Ok(())
    }

    /// The mapped-layer slots in model order: embedding, per-layer attention
    /// and FFN projections, classifier head.
    pub fn slots(&self) -> Vec<ManifestEntry> {
        let d = self.d_model;
        let mut v = Vec::with_capacity(2 + 6 * self.layers);
        v.push(ManifestEntry {
            name: "embed".into(),
            m: self.vocab,
            n: d,
            group: SlotGroup::Embed,
        });
        for l in 0..self.layers {
            for (suffix, m, n, group) in [
                ("q", d, d, SlotGroup::Qkv),
                ("k", d, d, SlotGroup::Qkv),
                ("v", d, d, SlotGroup::Qkv),
                ("attn_out", d, d, SlotGroup::Qkv),
                ("ffn_up", d, self.d_ff, SlotGroup::Ffn),
                ("ffn_down", self.d_ff, d, SlotGroup::Ffn),
            ] {
                v.push(ManifestEntry { name: format!("layer{l}.{suffix}"), m, n, group });
            }
        }
        v.push(ManifestEntry {
            name: "head".into(),
            m: d,
            n: self.n_classes,
            group: SlotGroup::Head,
        });
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_is_zero_at_rank_zero() {
        let manifest =
            vec![ManifestEntry { name: "l".into(), m: 512, n: 128, group: SlotGroup::Qkv }];
        assert_eq!(count_lora_params(&manifest, 0, LoraPlacement::AllLinear), 0);
    }

    #[test]
    fn single_layer_count_matches_formula() {
        let manifest =
            vec![ManifestEntry { name: "l".into(), m: 512, n: 128, group: SlotGroup::Ffn }];
        assert_eq!(count_lora_params(&manifest, 8, LoraPlacement::AllLinear), 5120);
        assert_eq!(count_lora_params(&manifest, 8, LoraPlacement::FfnOnly), 5120);
        assert_eq!(count_lora_params(&manifest, 8, LoraPlacement::QkvOnly), 0);
    }

    #[test]
    fn count_scales_exactly_linearly_in_rank() {
        let manifest = TinyTransformerConfig::default().slots();
        for placement in [LoraPlacement::AllLinear, LoraPlacement::QkvOnly, LoraPlacement::FfnOnly]
        {
            let c1 = count_lora_params(&manifest, 1, placement);
            let c16 = count_lora_params(&manifest, 16, placement);
            assert_eq!(c16, 16 * c1);
        }
    }

    #[test]
    fn manifest_roundtrips_through_json() {
        let manifest = TinyTransformerConfig::default().slots();
        let json = serde_json::to_string(&manifest).unwrap();
        let back: Vec<ManifestEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn placement_selection_respects_embedding_flag() {
        assert!(LoraPlacement::AllLinear.selects(SlotGroup::Embed, true));
        assert!(!LoraPlacement::AllLinear.selects(SlotGroup::Embed, false));
        assert!(LoraPlacement::AllLinear.selects(SlotGroup::Head, false));
        assert!(!LoraPlacement::QkvOnly.selects(SlotGroup::Head, true));
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = TinyTransformerConfig { d_model: 66, heads: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
