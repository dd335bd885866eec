use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a sparse path encoder and its reconstruction decoder.
///
/// Edge embeddings, the path token and all hidden states share the width
/// `d_model`; each head works on `d_model / heads` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Rows of the edge embedding table; edge ids index it directly.
    pub vocab: usize,
    /// Longest path (in edges) the position table covers.
    pub max_len: usize,
    /// Decoder layers; 0 builds an encoder without any decoder parameters.
    pub dec_layers: usize,
    pub ln_eps: f64,
    /// Keep the edge embedding table fixed during training.
    pub freeze_embeddings: bool,
}

impl EncoderConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, width 64, one decoder layer.
    pub fn new(vocab: usize, max_len: usize) -> Self {
        EncoderConfig {
            layers: 4,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            vocab,
            max_len,
            dec_layers: 1,
            ln_eps: 1e-5,
            freeze_embeddings: true,
        }
    }

    /// Per-head query/key/value width.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn has_decoder(&self) -> bool {
        self.dec_layers > 0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 {
            return fail("at least one encoder layer is required".into());
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive".into());
        }
        if self.vocab == 0 {
            return fail("vocabulary is empty".into());
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} is below the minimum path length 2", self.max_len));
        }
        if self.dec_layers >= self.layers {
            return fail(format!(
                "decoder ({} layers) must be shallower than the encoder ({} layers)",
                self.dec_layers, self.layers
            ));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return fail(format!("ln_eps {} must be positive", self.ln_eps));
        }
        Ok(())
    }
}
