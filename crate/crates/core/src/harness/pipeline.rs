//! Training orchestration, decoding and the robustness protocol.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bleu::bleu4;
use super::dataset::{augment_dataset, perturb_dataset, Example};
use crate::error::{Error, Result};
use crate::linearize::vocab::{target_ids, Vocabulary};
use crate::linearize::{truncate, Format, DEFAULT_MAX_LEN};
use crate::model::{Adam, EncoderInput, ModelConfig, ToyModel, TrainingExample};
use crate::scalar::Scalar;

/// Vocabulary over every title, cell and target in `examples`.
pub fn build_vocabulary(examples: &[Example]) -> Vocabulary {
    let mut texts: Vec<&str> = Vec::new();
    for ex in examples {
        texts.push(ex.table.page_title());
        texts.push(ex.table.section_title());
        texts.extend(ex.table.rows().iter().flatten().map(|c| c.content.as_str()));
        texts.push(&ex.target);
    }
    Vocabulary::build(texts)
}

pub fn encoder_input(ex: &Example, vocab: &Vocabulary, format: Format, p_max: u32, max_len: usize) -> Result<EncoderInput> {
    let seq = truncate(&format.linearize(&ex.table, vocab)?, max_len);
    EncoderInput::new(&seq, p_max)
}

pub fn prepare_examples(
    examples: &[Example],
    vocab: &Vocabulary,
    format: Format,
    p_max: u32,
    max_len: usize,
) -> Result<Vec<TrainingExample>> {
    examples
        .iter()
        .map(|ex| {
            let input = encoder_input(ex, vocab, format, p_max, max_len)?;
            TrainingExample::new(input, target_ids(&ex.target, vocab))
        })
        .collect()
}

/// Named points of the ablation and robustness grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Row-major cell order, full attention, linear positions.
    Baseline,
    /// Row-major order trained on eightfold augmented tables.
    DataAug,
    /// Canonical order with row/column ids erased, flags off.
    Agnostic,
    /// Canonical order with the structure mask and linear positions.
    AttOnly,
    /// Canonical order with the structure mask and invariant positions.
    Lattice,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Baseline,
        Preset::DataAug,
        Preset::Agnostic,
        Preset::AttOnly,
        Preset::Lattice,
    ];

    pub fn format(self) -> Format {
        match self {
            Preset::Baseline | Preset::DataAug => Format::Indexed,
            Preset::Agnostic => Format::Agnostic,
            Preset::AttOnly | Preset::Lattice => Format::Totto,
        }
    }

    /// `(use_structure_mask, use_invariant_relpos)`
    pub fn flags(self) -> (bool, bool) {
        match self {
            Preset::Baseline | Preset::DataAug | Preset::Agnostic => (false, false),
            Preset::AttOnly => (true, false),
            Preset::Lattice => (true, true),
        }
    }

    pub fn augments(self) -> bool {
        self == Preset::DataAug
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        (cfg.use_structure_mask, cfg.use_invariant_relpos) = self.flags();
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Baseline => "baseline",
            Preset::DataAug => "data-aug",
            Preset::Agnostic => "agnostic",
            Preset::AttOnly => "att-only",
            Preset::Lattice => "lattice",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the batch order.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 1000,
            batch_size: 8,
            lr: 2e-4,
            seed: 0,
        }
    }
}

/// Runs `opts.steps` Adam steps over shuffled mini-batches and returns the
/// per-step losses. `on_step(step, loss)` is called after every step.
pub fn train<T: Scalar>(
    model: &mut ToyModel<T>,
    data: &[TrainingExample],
    opts: &TrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() || opts.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = Adam::new(model.n_params());
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(opts.steps);
    let mut batch = Vec::with_capacity(opts.batch_size);
    for step in 0..opts.steps {
        batch.clear();
        while batch.len() < opts.batch_size.min(data.len()) {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(data[order.pop().expect("refilled")].clone());
        }
        let loss = model.train_step(&mut opt, &batch, T::lit(opts.lr))?.as_f64();
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub beam: usize,
    pub max_len: usize,
    pub max_input_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            max_len: 128,
            max_input_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Decodes each table into a detokenized sentence.
pub fn decode_dataset<T: Scalar>(
    model: &ToyModel<T>,
    vocab: &Vocabulary,
    format: Format,
    examples: &[Example],
    opts: DecodeOptions,
) -> Result<Vec<String>> {
    let p_max = model.config().p_max;
    examples
        .iter()
        .map(|ex| {
            let input = encoder_input(ex, vocab, format, p_max, opts.max_input_len)?;
            let ids = if opts.beam <= 1 {
                model.greedy_search(&input, opts.max_len)?.tokens
            } else {
                model.beam_decode(&input, opts.beam, opts.max_len)?
            };
            Ok(vocab.detokenize(&ids))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub reference: String,
    pub origin: String,
    pub transform: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu_origin: f64,
    pub bleu_transform: f64,
    /// `bleu_transform - bleu_origin`
    pub delta: f64,
    /// Whether per-example equality was required (layout-invariant input).
    pub equality_asserted: bool,
    /// Indices whose two generations differ.
    pub mismatches: Vec<usize>,
    pub generations: Vec<Generation>,
}

impl EvalReport {
    /// False only when equality was asserted and some pair differs.
    pub fn invariants_hold(&self) -> bool {
        !self.equality_asserted || self.mismatches.is_empty()
    }
}

/// Decodes `dev` and its perturbed copy and compares BLEU.
pub fn run_robustness_eval<T: Scalar>(
    model: &ToyModel<T>,
    vocab: &Vocabulary,
    format: Format,
    dev: &[Example],
    seed: u64,
    opts: DecodeOptions,
) -> Result<EvalReport> {
    let perturbed = perturb_dataset(dev, seed);
    let origin = decode_dataset(model, vocab, format, dev, opts)?;
    let transform = decode_dataset(model, vocab, format, &perturbed, opts)?;
    let refs: Vec<&str> = dev.iter().map(|e| e.target.as_str()).collect();
    let refs: Vec<String> = refs.iter().map(|r| normalise(r)).collect();
    let bleu_origin = bleu4(&origin, &refs)?;
    let bleu_transform = bleu4(&transform, &refs)?;
    let mismatches = origin
        .iter()
        .zip(&transform)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect();
    let generations = refs
        .into_iter()
        .zip(origin.into_iter().zip(transform))
        .map(|(reference, (origin, transform))| Generation {
            reference,
            origin,
            transform,
        })
        .collect();
    Ok(EvalReport {
        bleu_origin,
        bleu_transform,
        delta: bleu_transform - bleu_origin,
        equality_asserted: format.is_layout_invariant(),
        mismatches,
        generations,
    })
}

/// The token-level form of a reference, matching detokenized output.
pub fn normalise(s: &str) -> String {
    crate::linearize::vocab::split_words(s).join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: Preset,
    pub final_loss: f64,
    pub report: EvalReport,
}

/// Trains one model per preset on `train_set` and evaluates on `test_set`.
///
/// All presets share the vocabulary, architecture, initial seed and batch
/// order; only the input format, flags and augmentation differ.
pub fn run_ablation(
    presets: &[Preset],
    train_set: &[Example],
    test_set: &[Example],
    base: &ModelConfig,
    train_opts: &TrainOptions,
    decode: DecodeOptions,
    eval_seed: u64,
    mut log: impl FnMut(Preset, usize, f64),
) -> Result<Vec<AblationRow>> {
    let mut all = train_set.to_vec();
    all.extend_from_slice(test_set);
    let vocab = build_vocabulary(&all);
    presets
        .iter()
        .map(|&preset| {
            let mut cfg = base.clone();
            cfg.vocab_size = vocab.len();
            preset.apply(&mut cfg);
            let source = if preset.augments() {
                augment_dataset(train_set, train_opts.seed)
            } else {
                train_set.to_vec()
            };
            let data = prepare_examples(&source, &vocab, preset.format(), cfg.p_max, decode.max_input_len)?;
            let mut model = ToyModel::<f32>::new(cfg)?;
            let losses = train(&mut model, &data, train_opts, |s, l| log(preset, s, l))?;
            let report = run_robustness_eval(&model, &vocab, preset.format(), test_set, eval_seed, decode)?;
            Ok(AblationRow {
                preset,
                final_loss: losses.last().copied().unwrap_or(f64::NAN),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{generate_corpus, CorpusSpec};

    #[test]
    fn preset_names_roundtrip() {
        for p in Preset::ALL {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn invariant_formats_give_zero_delta_even_untrained() {
        let dev = generate_corpus(&CorpusSpec {
            n_tables: 12,
            seed: 2,
            ..CorpusSpec::default()
        })
        .unwrap();
        let vocab = build_vocabulary(&dev);
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            d_ff: 16,
            vocab_size: vocab.len(),
            seed: 1,
            ..ModelConfig::default()
        };
        let model = ToyModel::<f32>::new(cfg).unwrap();
        let opts = DecodeOptions {
            max_len: 6,
            ..DecodeOptions::default()
        };
        let rep = run_robustness_eval(&model, &vocab, Format::Totto, &dev, 7, opts).unwrap();
        assert!(rep.equality_asserted);
        assert!(rep.mismatches.is_empty());
        assert_eq!(rep.delta, 0.0);
    }

    #[test]
    fn short_training_lowers_loss() {
        let data = generate_corpus(&CorpusSpec {
            n_tables: 16,
            seed: 3,
            ..CorpusSpec::default()
        })
        .unwrap();
        let vocab = build_vocabulary(&data);
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        };
        let prepared = prepare_examples(&data, &vocab, Format::Totto, cfg.p_max, DEFAULT_MAX_LEN).unwrap();
        let mut model = ToyModel::<f32>::new(cfg).unwrap();
        let opts = TrainOptions {
            steps: 200,
            lr: 3e-3,
            ..TrainOptions::default()
        };
        let losses = train(&mut model, &prepared, &opts, |_, _| {}).unwrap();
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }
}
