//! JSON checkpoints: config, vocabulary, input format and named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Layout;
use super::{ModelConfig, ToyModel};
use crate::error::{Error, Result};
use crate::linearize::vocab::Vocabulary;
use crate::linearize::Format;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "lattice-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub linearization: Format,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &ToyModel<T>, vocab: &Vocabulary, linearization: Format) -> Self {
        let tensors = model
            .tensors()
            .iter()
            .map(|t| NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: model.params()[t.range()].iter().map(|p| p.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            vocab: vocab.tokens().to_vec(),
            linearization,
            tensors,
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<(ToyModel<T>, Vocabulary, Format)> {
        let bad = |m: String| Err(Error::InvalidCheckpoint(m));
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported format {} v{}", self.format, self.version));
        }
        self.config.validate()?;
        let vocab = Vocabulary::from_tokens(self.vocab)?;
        if vocab.len() != self.config.vocab_size {
            return bad(format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                self.config.vocab_size
            ));
        }
        let layout = Layout::new(&self.config);
        if layout.tensors.len() != self.tensors.len() {
            return bad(format!("expected {} tensors, found {}", layout.tensors.len(), self.tensors.len()));
        }
        let mut params = vec![T::zero(); layout.total];
        for (spec, t) in layout.tensors.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.data.len() != spec.len() {
                return bad(format!("tensor {} does not match slot {} {:?}", t.name, spec.name, spec.shape));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return bad(format!("tensor {} holds non-finite values", t.name));
            }
            for (dst, &x) in params[spec.range()].iter_mut().zip(&t.data) {
                *dst = T::lit(x);
            }
        }
        let model = ToyModel {
            config: self.config,
            layout,
            params,
        };
        Ok((model, vocab, self.linearization))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
