//! Corpus generation, dataset IO, scoring and the evaluation protocol.

pub mod bleu;
pub mod corpus;
pub mod dataset;
pub mod pipeline;

pub use bleu::bleu4;
pub use corpus::{generate_corpus, CorpusSpec, Family};
pub use dataset::{augment_dataset, load_jsonl, perturb_dataset, read_jsonl, save_jsonl, write_jsonl, Example};
pub use pipeline::{
    build_vocabulary, decode_dataset, encoder_input, prepare_examples, run_ablation, run_robustness_eval, train,
    AblationRow, DecodeOptions, EvalReport, Generation, Preset, TrainOptions,
};
