use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lattice::harness::{
    augment_dataset, build_vocabulary, decode_dataset, generate_corpus, load_jsonl, perturb_dataset,
    prepare_examples, run_ablation, run_robustness_eval, save_jsonl, train, CorpusSpec, DecodeOptions, Family,
    Preset, TrainOptions,
};
use lattice::linearize::vocab::Vocabulary;
use lattice::linearize::{truncate, Format, DEFAULT_MAX_LEN};
use lattice::model::{Checkpoint, ModelConfig};
use lattice::structure::{build_mask, build_relpos, StructureExport, DEFAULT_P_MAX};
use lattice::Model;

#[derive(Parser)]
#[command(name = "lattice", version, about = "Structure-aware table-to-text toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL corpus
    GenCorpus(GenCorpus),
    /// Expand every example into its eight layouts
    Augment(Transform),
    /// Transpose and shuffle every table once
    Perturb(Transform),
    /// Print linearized token sequences as JSONL
    Linearize(Linearize),
    /// Print attention masks and relative positions as JSONL
    ExportStructure(ExportStructure),
    /// Train a model and write a checkpoint
    Train(Train),
    /// Decode a dataset with a checkpoint
    Decode(Decode),
    /// Compare BLEU on original and perturbed tables
    EvalRobustness(EvalRobustness),
    /// Train and evaluate the preset grid
    Ablate(Ablate),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Totto,
    Hitab,
    Agnostic,
    Indexed,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Totto => Format::Totto,
            FormatArg::Hitab => Format::Hitab,
            FormatArg::Agnostic => Format::Agnostic,
            FormatArg::Indexed => Format::Indexed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Films,
    Medals,
    Mixed,
}

#[derive(Args)]
struct GenCorpus {
    #[arg(long, default_value_t = 100)]
    n_tables: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::Mixed)]
    family: FamilyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Transform {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VocabArgs {
    /// One token per line; built from the input when absent
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl VocabArgs {
    fn load(&self, examples: &[lattice::harness::Example]) -> Result<Vocabulary> {
        match &self.vocab {
            Some(p) => Ok(Vocabulary::from_lines(&fs::read_to_string(p)?)?),
            None => Ok(build_vocabulary(examples)),
        }
    }
}

#[derive(Args)]
struct Linearize {
    #[arg(value_enum)]
    format: FormatArg,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args)]
struct ExportStructure {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Totto)]
    format: FormatArg,
    #[arg(long, default_value_t = DEFAULT_P_MAX)]
    p_max: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Encoder and decoder layers each
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_P_MAX)]
    p_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.heads,
            n_enc_layers: self.layers,
            n_dec_layers: self.layers,
            d_ff: self.d_ff.unwrap_or(2 * self.d_model),
            p_max: self.p_max,
            vocab_size,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Print the running loss every N steps (0 disables)
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opts: TrainArgs,
    /// Input tokens kept per table
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    att: Switch,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pos: Switch,
    #[arg(long, value_enum, default_value_t = FormatArg::Totto)]
    format: FormatArg,
    /// Train on the eightfold augmented set
    #[arg(long)]
    augment: bool,
    /// Extra files whose words join the vocabulary (e.g. the dev set)
    #[arg(long)]
    vocab_from: Vec<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct DecodeArgs {
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long = "max-decode-len", default_value_t = 128)]
    max_decode_len: usize,
    /// Input tokens kept per table
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
}

impl DecodeArgs {
    fn options(self) -> DecodeOptions {
        DecodeOptions {
            beam: self.beam,
            max_len: self.max_decode_len,
            max_input_len: self.max_len,
        }
    }
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct EvalRobustness {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full JSON report including generations
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "baseline,att-only,lattice")]
    presets: Vec<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opts: TrainArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<Vec<lattice::harness::Example>> {
    load_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn announce_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Command::GenCorpus(a) => {
            announce_seed(a.seed);
            let spec = CorpusSpec {
                n_tables: a.n_tables,
                family: match a.family {
                    FamilyArg::Films => Family::Films,
                    FamilyArg::Medals => Family::Medals,
                    FamilyArg::Mixed => Family::Mixed,
                },
                seed: a.seed,
                ..CorpusSpec::default()
            };
            save_jsonl(&a.out, &generate_corpus(&spec)?)?;
        }
        Command::Augment(a) => {
            announce_seed(a.seed);
            save_jsonl(&a.out, &augment_dataset(&load(&a.input)?, a.seed))?;
        }
        Command::Perturb(a) => {
            announce_seed(a.seed);
            save_jsonl(&a.out, &perturb_dataset(&load(&a.input)?, a.seed))?;
        }
        Command::Linearize(a) => {
            let data = load(&a.input)?;
            let vocab = a.vocab.load(&data)?;
            let mut w = output(&a.out)?;
            for ex in &data {
                let seq = truncate(&Format::from(a.format).linearize(&ex.table, &vocab)?, a.max_len);
                serde_json::to_writer(&mut w, &seq)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Command::ExportStructure(a) => {
            let data = load(&a.input)?;
            let vocab = a.vocab.load(&data)?;
            let mut w = output(&a.out)?;
            for ex in &data {
                let seq = truncate(&Format::from(a.format).linearize(&ex.table, &vocab)?, a.max_len);
                let export = StructureExport::new(&build_mask(&seq), &build_relpos(&seq, a.p_max)?)?;
                serde_json::to_writer(&mut w, &export)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Command::Train(a) => {
            announce_seed(a.model.seed);
            let train_set = load(&a.train)?;
            let mut vocab_src = train_set.clone();
            for p in &a.vocab_from {
                vocab_src.extend(load(p)?);
            }
            let vocab = build_vocabulary(&vocab_src);
            let mut cfg = a.model.config(vocab.len());
            cfg.use_structure_mask = a.att.on();
            cfg.use_invariant_relpos = a.pos.on();
            let format = Format::from(a.format);
            let source = if a.augment {
                augment_dataset(&train_set, a.model.seed)
            } else {
                train_set
            };
            let data = prepare_examples(&source, &vocab, format, cfg.p_max, a.max_len)?;
            eprintln!(
                "{} examples, vocabulary {}, format {format}, att {}, pos {}",
                data.len(),
                vocab.len(),
                cfg.use_structure_mask,
                cfg.use_invariant_relpos
            );
            let mut model = Model::new(cfg)?;
            let opts = TrainOptions {
                steps: a.opts.steps,
                batch_size: a.opts.batch,
                lr: a.opts.lr,
                seed: a.model.seed,
            };
            let every = a.opts.log_every;
            train(&mut model, &data, &opts, |s, l| {
                if every > 0 && (s + 1) % every == 0 {
                    eprintln!("step {:>6}  loss {l:.4}", s + 1);
                }
            })?;
            Checkpoint::from_model(&model, &vocab, format).save(&a.out)?;
            eprintln!("wrote {}", a.out.display());
        }
        Command::Decode(a) => {
            let (model, vocab, format) = Checkpoint::load(&a.checkpoint)?.into_model::<f32>()?;
            let data = load(&a.input)?;
            let out = decode_dataset(&model, &vocab, format, &data, a.decode.options())?;
            let mut w = output(&a.out)?;
            for line in out {
                writeln!(w, "{line}")?;
            }
            w.flush()?;
        }
        Command::EvalRobustness(a) => {
            announce_seed(a.seed);
            let (model, vocab, format) = Checkpoint::load(&a.checkpoint)?.into_model::<f32>()?;
            let dev = load(&a.dev)?;
            let rep = run_robustness_eval(&model, &vocab, format, &dev, a.seed, a.decode.options())?;
            println!(
                "origin {:.2}  transform {:.2}  delta {:+.2}  mismatches {}",
                rep.bleu_origin,
                rep.bleu_transform,
                rep.delta,
                rep.mismatches.len()
            );
            if let Some(p) = &a.out {
                fs::write(p, serde_json::to_vec_pretty(&rep)?)?;
            }
            if !rep.invariants_hold() {
                eprintln!("generation changed under perturbation for examples {:?}", rep.mismatches);
                return Ok(false);
            }
        }
        Command::Ablate(a) => {
            announce_seed(a.model.seed);
            let presets = a
                .presets
                .iter()
                .map(|s| s.parse::<Preset>())
                .collect::<Result<Vec<_>, _>>()?;
            if presets.is_empty() {
                bail!("no presets given");
            }
            let train_set = load(&a.train)?;
            let test_set = load(&a.test)?;
            let opts = TrainOptions {
                steps: a.opts.steps,
                batch_size: a.opts.batch,
                lr: a.opts.lr,
                seed: a.model.seed,
            };
            let every = a.opts.log_every;
            let rows = run_ablation(
                &presets,
                &train_set,
                &test_set,
                &a.model.config(0),
                &opts,
                a.decode.options(),
                a.model.seed,
                |p, s, l| {
                    if every > 0 && (s + 1) % every == 0 {
                        eprintln!("{p:<9} step {:>6}  loss {l:.4}", s + 1);
                    }
                },
            )?;
            println!("{:<9} {:>8} {:>10} {:>8} {:>10}", "preset", "origin", "transform", "delta", "mismatch");
            let mut ok = true;
            for r in &rows {
                let rep = &r.report;
                println!(
                    "{:<9} {:>8.2} {:>10.2} {:>+8.2} {:>10}",
                    r.preset.to_string(),
                    rep.bleu_origin,
                    rep.bleu_transform,
                    rep.delta,
                    if rep.equality_asserted { rep.mismatches.len().to_string() } else { "-".into() }
                );
                ok &= rep.invariants_hold();
            }
            if let Some(p) = &a.out {
                fs::write(p, serde_json::to_vec_pretty(&rows)?)?;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
