//! The foundation-model backbone: 1D-conv patch projection, pre-norm
//! transformer encoder, a half-width transformer decoder for masked
//! reconstruction, and the pooling / projection / classification heads.

mod forward;
mod params;
mod posenc;

pub use forward::{
    classify, decode, encode, patch_embed, patchify, pool, predict_vectors, project,
    ModelGraph,
};
pub use params::{
    count_params, init_classifier, init_params, param_specs, ParamSpec, Parameters, Parts,
};
pub use posenc::sinusoidal_encoding;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{CANONICAL_LEADS, CANONICAL_SAMPLES};
use crate::error::{Error, Result};

fn default_decoder_depth() -> usize {
    2
}
fn default_mlp_ratio() -> usize {
    4
}
fn default_proj_dim() -> usize {
    128
}

/// One architecture point in the grid.
///
/// `decoder_dim` is always `dim / 2` and `seq_len` is `floor(2500 / patch)`;
/// both are derived rather than stored so the invariants hold by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per patch (grid values 250, 125, 60).
    pub patch: usize,
    /// Encoder blocks.
    pub depth: usize,
    /// Encoder embedding width.
    pub dim: usize,
    #[serde(default = "default_decoder_depth")]
    pub decoder_depth: usize,
    /// Attention heads; defaults to `dim / 64` (at least one).
    #[serde(default)]
    pub n_heads: Option<usize>,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Contrastive projection width.
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
}

impl ModelConfig {
    pub fn new(patch: usize, depth: usize, dim: usize) -> ModelConfig {
        ModelConfig {
            patch,
            depth,
            dim,
            decoder_depth: default_decoder_depth(),
            n_heads: None,
            mlp_ratio: default_mlp_ratio(),
            proj_dim: default_proj_dim(),
        }
    }

    pub fn seq_len(&self) -> usize {
        CANONICAL_SAMPLES / self.patch
    }

    pub fn decoder_dim(&self) -> usize {
        self.dim / 2
    }

    pub fn heads(&self) -> usize {
        self.n_heads.unwrap_or_else(|| (self.dim / 64).max(1))
    }

    pub fn decoder_heads(&self) -> usize {
        (self.decoder_dim() / 64).max(1)
    }

    /// Flattened samples per patch across all leads.
    pub fn patch_values(&self) -> usize {
        CANONICAL_LEADS * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch > CANONICAL_SAMPLES {
            return Err(Error::invalid(format!(
                "patch must lie in [1, {CANONICAL_SAMPLES}] (got {})",
                self.patch
            )));
        }
        if self.seq_len() < 1 {
            return Err(Error::invalid("seq_len must be at least 1"));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "dim must be a positive even number (got {})",
                self.dim
            )));
        }
        if self.dim % self.heads() != 0 {
            return Err(Error::invalid(format!(
                "dim {} is not divisible by n_heads {}",
                self.dim,
                self.heads()
            )));
        }
        if self.decoder_dim() % self.decoder_heads() != 0 {
            return Err(Error::invalid(format!(
                "decoder_dim {} is not divisible by its head count {}",
                self.decoder_dim(),
                self.decoder_heads()
            )));
        }
        if self.mlp_ratio == 0 || self.proj_dim == 0 {
            return Err(Error::invalid("mlp_ratio and proj_dim must be positive"));
        }
        Ok(())
    }
}

/// Forward-pass mode. Both modes are deterministic; the flag is part of the
/// operation contracts and guards future stochastic components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A batch of token embeddings `[batch × seq × dim]` with the sequence
/// positions they occupy (None means the full `0..seq`).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub data: Array3<f64>,
    pub positions: Option<Vec<usize>>,
}

impl TokenBatch {
    pub fn full(data: Array3<f64>) -> TokenBatch {
        TokenBatch {
            data,
            positions: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn seq(&self) -> usize {
        self.data.dim().1
    }

    pub fn dim(&self) -> usize {
        self.data.dim().2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_len_matches_grid() {
        assert_eq!(ModelConfig::new(250, 2, 256).seq_len(), 10);
        assert_eq!(ModelConfig::new(125, 2, 256).seq_len(), 20);
        assert_eq!(ModelConfig::new(60, 2, 256).seq_len(), 41);
    }

    #[test]
    fn decoder_dim_is_half() {
        for dim in [64, 256, 512, 1024] {
            let cfg = ModelConfig::new(125, 2, dim);
            assert_eq!(cfg.decoder_dim() * 2, dim);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn validate_rejects_bad_heads() {
        let cfg = ModelConfig {
            n_heads: Some(3),
            ..ModelConfig::new(125, 2, 64)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<ModelConfig>(
            r#"{"patch":125,"depth":2,"dim":64,"bogus":1}"#,
        );
        assert!(err.is_err());
        let ok: ModelConfig =
            serde_json::from_str(r#"{"patch":125,"depth":2,"dim":64}"#).unwrap();
        assert_eq!(ok.decoder_depth, 2);
        assert_eq!(ok.proj_dim, 128);
    }
}
