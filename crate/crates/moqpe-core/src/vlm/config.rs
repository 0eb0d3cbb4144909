//! Model shape and training-time switches.

use crate::error::{Error, Result};
use crate::peft::DyaMoqpeConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: u32,
    pub image: u32,
    pub encode: u32,
    pub decode: u32,
    pub eos: u32,
    pub cls: u32,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self { pad: 0, image: 1, encode: 2, decode: 3, eos: 4, cls: 5 }
    }
}

impl SpecialTokens {
    pub fn all(&self) -> [u32; 6] {
        [self.pad, self.image, self.encode, self.decode, self.eos, self.cls]
    }
}

/// Shared adapter knobs; per-layer input/output widths come from the layer
/// being wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterSettings {
    pub r_min: usize,
    pub r_max: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub lora_dropout: f64,
}

impl Default for AdapterSettings {
    fn default() -> Self {
        Self { r_min: 4, r_max: 16, num_experts: 4, top_k: 2, lora_dropout: 0.05 }
    }
}

impl AdapterSettings {
    pub fn layer_config(&self, d_in: usize, d_out: usize) -> DyaMoqpeConfig {
        DyaMoqpeConfig {
            d_in,
            d_out,
            r_min: self.r_min,
            r_max: self.r_max,
            num_experts: self.num_experts,
            top_k: self.top_k,
            lora_dropout: self.lora_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch: usize,
    pub emb_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub adapter: AdapterSettings,
    pub adapters_enabled: bool,
    pub freeze_vision: bool,
    pub lambda_lm: f64,
    /// Rank used outside training; defaults to `r_max`.
    pub inference_rank: Option<usize>,
    pub specials: SpecialTokens,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            channels: 3,
            patch: 32,
            emb_dim: 64,
            heads: 4,
            head_dim: 32,
            vocab_size: 0,
            max_seq: 48,
            n_layers: 2,
            ffn_mult: 4,
            adapter: AdapterSettings::default(),
            adapters_enabled: true,
            freeze_vision: false,
            lambda_lm: 1.0,
            inference_rank: None,
            specials: SpecialTokens::default(),
        }
    }
}

impl VlmConfig {
    pub fn n_patches(&self) -> usize {
        let per_side = self.image_size / self.patch;
        per_side * per_side
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Attention projection width `H * d_h`.
    pub fn proj_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn eval_rank(&self) -> usize {
        self.inference_rank.unwrap_or(self.adapter.r_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.channels == 0 || self.emb_dim == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.max_seq < 4 {
            return Err(Error::Config("degenerate tower configuration".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size unset; build the tokenizer first".into()));
        }
        let specials = self.specials.all();
        let mut seen = std::collections::BTreeSet::new();
        for id in specials {
            if !seen.insert(id) {
                return Err(Error::Config("special token ids must be distinct".into()));
            }
            if id as usize >= self.vocab_size {
                return Err(Error::Config(format!(
                    "special id {id} outside vocab of {}",
                    self.vocab_size
                )));
            }
        }
        if let Some(rank) = self.inference_rank {
            if rank == 0 || rank > self.adapter.r_max {
                return Err(Error::Config(format!(
                    "inference rank {rank} outside 1..={}",
                    self.adapter.r_max
                )));
            }
        }
        // Adapted projections run emb -> proj and proj -> emb.
        let narrowest = self.emb_dim.min(self.proj_dim());
        self.adapter.layer_config(narrowest, narrowest).validate()?;
        if self.lambda_lm < 0.0 {
            return Err(Error::Config("lambda_lm must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults_are_consistent() {
        let mut cfg = VlmConfig { vocab_size: 300, ..VlmConfig::default() };
        cfg.validate().unwrap();
        assert_eq!(cfg.n_patches(), 49);
        assert_eq!(cfg.patch_len(), 3072);
        assert_eq!(cfg.proj_dim(), 128);
        assert_eq!(cfg.eval_rank(), 16);
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let base = VlmConfig { vocab_size: 300, ..VlmConfig::default() };
        let mut c = base.clone();
        c.image_size = 225;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.vocab_size = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.specials.eos = c.specials.pad;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.inference_rank = Some(99);
        assert!(c.validate().is_err());
        let mut c = base;
        c.adapter.r_max = 64;
        assert!(c.validate().is_err());
    }
}
