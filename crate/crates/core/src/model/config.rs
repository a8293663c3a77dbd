use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::DEFAULT_P_MAX;

/// Hyper-parameters of [`ToyModel`](super::ToyModel).
///
/// The two flags form the ablation grid: both off is the plain encoder
/// (full attention, linear relative positions), `use_structure_mask` alone
/// prunes attention, both on is the full structure-aware encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub p_max: u32,
    pub use_structure_mask: bool,
    pub use_invariant_relpos: bool,
    pub vocab_size: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            p_max: DEFAULT_P_MAX,
            use_structure_mask: true,
            use_invariant_relpos: true,
            vocab_size: 0,
            max_decode_len: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads and d_ff must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.p_max < 1 {
            return Err(Error::InvalidPMax(self.p_max));
        }
        if self.vocab_size <= crate::linearize::vocab::EOS_ID as usize {
            return bad("vocab_size must cover the reserved tokens");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Both structure flags on.
    pub fn is_structure_aware(&self) -> bool {
        self.use_structure_mask && self.use_invariant_relpos
    }
}
