//! A small pre-norm encoder-decoder trained with teacher-forced NLL.
//!
//! The encoder optionally restricts attention to structurally related tokens
//! and indexes its relative-position bias by the invariant position matrix.
//! The decoder uses causal self-attention with clamped linear positions and
//! unbiased cross-attention.

mod checkpoint;
mod config;
mod decode;
mod forward;
pub(crate) mod ops;
mod params;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use decode::Hypothesis;
pub use ops::Matrix;
pub use params::TensorSpec;
pub use train::Adam;

use params::Layout;

use crate::error::{Error, Result};
use crate::linearize::LinearizedSequence;
use crate::scalar::Scalar;
use crate::structure::{build_mask, build_relpos, RelPosMatrix, StructureMask};

/// Encoder-side view of a linearized table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub tokens: Vec<u32>,
    pub mask: StructureMask,
    pub relpos: RelPosMatrix,
}

impl EncoderInput {
    pub fn new(seq: &LinearizedSequence, p_max: u32) -> Result<Self> {
        Ok(EncoderInput {
            tokens: seq.token_ids.clone(),
            mask: build_mask(seq),
            relpos: build_relpos(seq, p_max)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Reorders tokens so that new position `k` holds old token `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        assert_eq!(perm.len(), n, "permutation length");
        EncoderInput {
            tokens: perm.iter().map(|&i| self.tokens[i]).collect(),
            mask: StructureMask::from_fn(n, |a, b| self.mask.get(perm[a], perm[b])),
            relpos: RelPosMatrix::from_fn(n, self.relpos.p_max(), |a, b| self.relpos.get(perm[a], perm[b])),
        }
    }
}

/// One source/target pair; `target_ids` is framed as `[BOS] .. [EOS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: EncoderInput,
    pub target_ids: Vec<u32>,
}

impl TrainingExample {
    pub fn new(input: EncoderInput, target_ids: Vec<u32>) -> Result<Self> {
        if target_ids.len() < 2 {
            return Err(Error::DimensionMismatch(
                "target must hold BOS and at least one more token".into(),
            ));
        }
        Ok(TrainingExample { input, target_ids })
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> ToyModel<T> {
    /// Freshly initialised model; parameters depend only on the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, params) = Layout::init_params(&config);
        Ok(ToyModel { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.params[range])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Contextual vectors, one row per input token.
    pub fn encode(&self, input: &EncoderInput) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let (data, _) = self.encoder_forward(input);
        Ok(Matrix {
            rows: input.len(),
            cols: self.config.d_model,
            data,
        })
    }

    /// Encoder attention probabilities per layer, each `heads x n x n`.
    pub fn encoder_attention(&self, input: &EncoderInput) -> Result<Vec<Vec<T>>> {
        self.check_input(input)?;
        Ok(self.encoder_attention_probs(input))
    }

    /// Raw output logits (`prefix.len() x vocab`) for a decoder prefix.
    pub fn decoder_logits(&self, input: &EncoderInput, prefix: &[u32]) -> Result<Matrix<T>> {
        self.check_input(input)?;
        self.check_tokens(prefix)?;
        let (enc, _) = self.encoder_forward(input);
        let (hid, _) = self.decoder_forward(&enc, prefix);
        Ok(Matrix {
            rows: prefix.len(),
            cols: self.config.vocab_size,
            data: self.logits(&hid),
        })
    }

    fn check_example(&self, ex: &TrainingExample) -> Result<()> {
        self.check_input(&ex.input)?;
        if ex.target_ids.len() < 2 {
            return Err(Error::DimensionMismatch("target shorter than two tokens".into()));
        }
        self.check_tokens(&ex.target_ids)
    }

    /// Summed token NLL of one example.
    pub fn example_nll(&self, ex: &TrainingExample) -> Result<T> {
        self.check_example(ex)?;
        Ok(self.sequence_nll(&ex.input, &ex.target_ids, None))
    }

    /// Mean over examples of the summed per-token negative log-likelihood.
    pub fn nll_loss(&self, batch: &[TrainingExample]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let per = self.map_examples(batch, |ex| self.sequence_nll(&ex.input, &ex.target_ids, None))?;
        let n = T::from_usize(batch.len()).unwrap();
        Ok(per.into_iter().fold(T::zero(), |a, b| a + b) / n)
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    ///
    /// Examples are processed in parallel; per-example gradients are summed
    /// in batch order so the result does not depend on the thread count.
    pub fn loss_and_grad(&self, batch: &[TrainingExample]) -> Result<(T, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let weight = T::one() / T::from_usize(batch.len()).unwrap();
        let per = self.map_examples(batch, |ex| {
            let mut g = vec![T::zero(); self.params.len()];
            let loss = self.sequence_nll(&ex.input, &ex.target_ids, Some((&mut g, weight)));
            (loss, g)
        })?;
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); self.params.len()];
        for (l, g) in per {
            loss += l;
            ops::add_assign(&mut grad, &g);
        }
        Ok((loss * weight, grad))
    }

    /// Applies `f` to each example on scoped worker threads, preserving order.
    fn map_examples<R: Send>(
        &self,
        batch: &[TrainingExample],
        f: impl Fn(&TrainingExample) -> R + Sync,
    ) -> Result<Vec<R>> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(batch.len());
        if workers <= 1 {
            return Ok(batch.iter().map(f).collect());
        }
        let chunk = batch.len().div_ceil(workers);
        let f = &f;
        let out = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        Ok(out)
    }

    /// One Adam step with constant `lr`; returns the loss before the update.
    pub fn train_step(&mut self, opt: &mut Adam<T>, batch: &[TrainingExample], lr: T) -> Result<T> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(loss.as_f64()));
        }
        opt.step(&mut self.params, &grad, lr)?;
        Ok(loss)
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Scalar>(&self) -> ToyModel<U> {
        ToyModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
        }
    }
}
