//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so the report is always printed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use lattice::harness::{
    bleu4, build_vocabulary, generate_corpus, prepare_examples, run_ablation, AblationRow, CorpusSpec,
    DecodeOptions, Preset, TrainOptions,
};
use lattice::linearize::vocab::{Vocabulary, BOS_ID, EOS_ID};
use lattice::linearize::{Format, FieldKind, LinearizedSequence, DEFAULT_MAX_LEN};
use lattice::model::{EncoderInput, ModelConfig, TrainingExample};
use lattice::structure::{build_mask, build_relpos};
use lattice::table::enumerate_augmentations;
use lattice::{Error, Model, ModelF64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

/// Every token pair allowed by the mask must match the cell-level relation
/// computed straight from the table.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut entries = 0usize;
    for k in 0..200 {
        let t = common::random_table(&mut rng, 6, 6);
        let vocab = build_vocabulary(&[lattice::harness::Example {
            table: t.clone(),
            target: String::new(),
        }]);
        let seq = lattice::linearize::linearize_totto(&t, &vocab).map_err(|e| e.to_string())?;
        let mask = build_mask(&seq);
        // each cell field names exactly one highlighted coordinate
        let coord_of = |f: usize| -> Option<(usize, usize)> {
            match &seq.fields[f].kind {
                FieldKind::Metadata => None,
                FieldKind::Cell { row_ids, col_ids, .. } => {
                    assert_eq!((row_ids.len(), col_ids.len()), (1, 1));
                    Some((*row_ids.iter().next().unwrap(), *col_ids.iter().next().unwrap()))
                }
            }
        };
        let mut seen: Vec<(usize, usize)> = (0..seq.fields.len()).filter_map(coord_of).collect();
        seen.sort();
        let expected: Vec<(usize, usize)> = t.highlighted().iter().copied().collect();
        ensure!(seen == expected, "table {k}: fields {seen:?} vs highlights {expected:?}");
        for i in 0..seq.len() {
            for j in 0..seq.len() {
                let (fi, fj) = (seq.field_of[i], seq.field_of[j]);
                let want = match (coord_of(fi), coord_of(fj)) {
                    (None, _) | (_, None) => true,
                    (Some(a), Some(b)) => fi == fj || a.0 == b.0 || a.1 == b.1,
                };
                ensure!(mask.get(i, j) == want, "table {k}: entry ({i},{j})");
                entries += 1;
            }
        }
    }
    Ok(format!("200 tables, {entries} entries identical"))
}

fn input(seq: &LinearizedSequence, p_max: u32) -> EncoderInput {
    EncoderInput::new(seq, p_max).unwrap()
}

/// Token streams, masks, relpos and greedy decodes are identical across the
/// eight augmentations of every table.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tables: Vec<_> = (0..100).map(|_| common::random_table(&mut rng, 6, 6)).collect();
    let vocab = build_vocabulary(
        &tables
            .iter()
            .map(|t| lattice::harness::Example {
                table: t.clone(),
                target: String::new(),
            })
            .collect::<Vec<_>>(),
    );
    let models: Vec<Model> = (0..2)
        .map(|seed| {
            Model::new(ModelConfig {
                d_model: 16,
                n_heads: 2,
                d_ff: 32,
                vocab_size: vocab.len(),
                max_decode_len: 10,
                seed,
                ..ModelConfig::default()
            })
            .unwrap()
        })
        .collect();
    let p_max = models[0].config().p_max;
    let mut decodes = 0;
    let (mut cand_o, mut cand_t, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for (k, t) in tables.iter().enumerate() {
        let augs = enumerate_augmentations(t, k as u64);
        for format in [Format::Totto, Format::Hitab, Format::Agnostic] {
            let base = format.linearize(t, &vocab).map_err(|e| e.to_string())?;
            let (m0, r0) = (build_mask(&base), build_relpos(&base, p_max).unwrap());
            for (g, a) in augs.iter().enumerate() {
                let s = format.linearize(a, &vocab).map_err(|e| e.to_string())?;
                ensure!(s.token_ids == base.token_ids, "table {k} aug {g} {format}: tokens differ");
                ensure!(build_mask(&s) == m0, "table {k} aug {g} {format}: mask differs");
                ensure!(build_relpos(&s, p_max).unwrap() == r0, "table {k} aug {g} {format}: relpos differs");
            }
        }
        let base = input(&Format::Totto.linearize(t, &vocab).unwrap(), p_max);
        for m in &models {
            let want = m.greedy_decode(&base).unwrap();
            for (g, a) in augs.iter().enumerate().skip(1) {
                let x = input(&Format::Totto.linearize(a, &vocab).unwrap(), p_max);
                let got = m.greedy_decode(&x).unwrap();
                ensure!(got == want, "table {k} aug {g}: decode differs");
                cand_o.push(vocab.detokenize(&want));
                cand_t.push(vocab.detokenize(&got));
                refs.push(t.page_title().to_string());
                decodes += 1;
            }
        }
    }
    let delta = bleu4(&cand_t, &refs).unwrap() - bleu4(&cand_o, &refs).unwrap();
    ensure!(delta == 0.0, "delta {delta}");
    Ok(format!("100 tables x 8 layouts x 3 formats identical; {decodes} decodes equal; delta = 0"))
}

fn grid() -> &'static Vec<AblationRow> {
    static GRID: std::sync::OnceLock<Vec<AblationRow>> = std::sync::OnceLock::new();
    GRID.get_or_init(|| {
        let train = generate_corpus(&CorpusSpec {
            n_tables: 2000,
            seed: 1,
            ..CorpusSpec::default()
        })
        .unwrap();
        let test = generate_corpus(&CorpusSpec {
            n_tables: 200,
            seed: 2,
            ..CorpusSpec::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            ..ModelConfig::default()
        };
        let opts = TrainOptions {
            steps: 5000,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
        };
        let decode = DecodeOptions {
            beam: 1,
            max_len: 60,
            max_input_len: DEFAULT_MAX_LEN,
        };
        run_ablation(
            &[Preset::Baseline, Preset::AttOnly, Preset::Lattice],
            &train,
            &test,
            &cfg,
            &opts,
            decode,
            7,
            |_, _, _| {},
        )
        .unwrap()
    })
}

fn row(p: Preset) -> &'static AblationRow {
    grid().iter().find(|r| r.preset == p).unwrap()
}

fn criterion_3() -> Outcome {
    let (b, l) = (&row(Preset::Baseline).report, &row(Preset::Lattice).report);
    let summary = format!(
        "baseline {:.2} -> {:.2} (delta {:+.2}); lattice {:.2} -> {:.2} (delta {:+.2}, {} mismatches)",
        b.bleu_origin,
        b.bleu_transform,
        b.delta,
        l.bleu_origin,
        l.bleu_transform,
        l.delta,
        l.mismatches.len()
    );
    ensure!(b.delta < 0.0, "baseline delta not negative: {summary}");
    ensure!(l.delta == 0.0 && l.mismatches.is_empty(), "lattice not invariant: {summary}");
    Ok(summary)
}

fn criterion_4() -> Outcome {
    let b = &row(Preset::Baseline).report;
    let a = &row(Preset::AttOnly).report;
    let l = &row(Preset::Lattice).report;
    let summary = format!(
        "transform: baseline {:.2}, att-only {:.2}, att+pos {:.2}; origin: {:.2}, {:.2}, {:.2}",
        b.bleu_transform, a.bleu_transform, l.bleu_transform, b.bleu_origin, a.bleu_origin, l.bleu_origin
    );
    ensure!(a.bleu_transform >= b.bleu_transform, "att-only below baseline: {summary}");
    ensure!(l.bleu_transform >= b.bleu_transform, "att+pos below baseline: {summary}");
    Ok(summary)
}

fn corpus_example(vocab: &Vocabulary, ex: &lattice::harness::Example, p_max: u32) -> TrainingExample {
    prepare_examples(std::slice::from_ref(ex), vocab, Format::Totto, p_max, DEFAULT_MAX_LEN)
        .unwrap()
        .remove(0)
}

fn criterion_5() -> Outcome {
    let data = generate_corpus(&CorpusSpec {
        n_tables: 2,
        seed: 5,
        ..CorpusSpec::default()
    })
    .unwrap();
    let vocab = build_vocabulary(&data);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for flags in [false, true] {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 16,
            p_max: 6,
            use_structure_mask: flags,
            use_invariant_relpos: flags,
            vocab_size: vocab.len(),
            max_decode_len: 8,
            seed: 13,
        };
        let mut m = ModelF64::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        // move zero-initialised biases and unit gains off their special values
        for p in m.params_mut() {
            *p += rng.gen_range(-0.1..0.1);
        }
        let batch: Vec<_> = data.iter().map(|e| corpus_example(&vocab, e, 6)).collect();
        let (_, grad) = m.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        for spec in m.tensors().to_vec() {
            for _ in 0..20 {
                let k = spec.offset + rng.gen_range(0..spec.len());
                let orig = m.params()[k];
                m.params_mut()[k] = orig + h;
                let up = m.nll_loss(&batch).unwrap();
                m.params_mut()[k] = orig - h;
                let down = m.nll_loss(&batch).unwrap();
                m.params_mut()[k] = orig;
                let num = (up - down) / (2.0 * h);
                let rel = (num - grad[k]).abs() / num.abs().max(grad[k].abs()).max(1e-6);
                ensure!(
                    rel < 1e-4,
                    "{} (flags {flags}): analytic {} numeric {num} rel {rel:.2e}",
                    spec.name,
                    grad[k]
                );
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} coordinates, worst relative error {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    // zero final decoder gain: every logit is 0, so each step costs ln V
    let v = 57;
    let mut m = ModelF64::new(ModelConfig {
        d_model: 16,
        n_heads: 2,
        vocab_size: v,
        ..ModelConfig::default()
    })
    .unwrap();
    m.tensor_mut("dec.norm").unwrap().fill(0.0);
    let n = 4;
    let x = EncoderInput {
        tokens: vec![20, 21, 22, 23],
        mask: lattice::structure::StructureMask::full(n),
        relpos: lattice::structure::RelPosMatrix::linear(n, m.config().p_max).unwrap(),
    };
    let ex = TrainingExample::new(x, vec![BOS_ID, EOS_ID]).unwrap();
    let loss = m.nll_loss(&[ex]).unwrap();
    let lnv = (v as f64).ln();
    ensure!((loss - lnv).abs() < 1e-6, "uniform loss {loss} vs ln V {lnv}");

    let data = generate_corpus(&CorpusSpec {
        n_tables: 64,
        seed: 6,
        ..CorpusSpec::default()
    })
    .unwrap();
    let vocab = build_vocabulary(&data);
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let prepared = prepare_examples(&data, &vocab, Format::Totto, cfg.p_max, DEFAULT_MAX_LEN).unwrap();
    let mut model = Model::new(cfg).unwrap();
    let mut opt = lattice::Optimizer::new(model.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut full = f64::INFINITY;
    let mut steps = 0;
    while steps < 3000 {
        for _ in 0..100 {
            let batch: Vec<_> = (0..8).map(|_| prepared[rng.gen_range(0..prepared.len())].clone()).collect();
            model.train_step(&mut opt, &batch, 2e-3).unwrap();
        }
        steps += 100;
        full = model.nll_loss(&prepared).unwrap() as f64;
        if full < 0.1 {
            break;
        }
    }
    ensure!(full < 0.1, "64-example loss {full:.4} after {steps} steps");
    Ok(format!("uniform loss - ln V = {:.1e}; 64-example loss {full:.4} after {steps} steps", loss - lnv))
}

fn criterion_7() -> Outcome {
    let data = generate_corpus(&CorpusSpec {
        n_tables: 30,
        seed: 7,
        ..CorpusSpec::default()
    })
    .unwrap();
    let vocab = build_vocabulary(&data);
    let m = Model::new(ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: vocab.len(),
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut worst_sum = 0.0f64;
    let mut worst_causal = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for ex in &data {
        let te = corpus_example(&vocab, ex, m.config().p_max);
        let n = te.input.len();
        for layer in m.encoder_attention(&te.input).unwrap() {
            for (r, probs) in layer.chunks(n).enumerate() {
                let i = r % n;
                let s: f64 = probs.iter().map(|&p| p as f64).sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
                for (j, &p) in probs.iter().enumerate() {
                    ensure!(te.input.mask.get(i, j) || p == 0.0, "masked pair ({i},{j}) has weight {p}");
                }
            }
        }
        let prefix = &te.target_ids[..te.target_ids.len() - 1];
        let base = m.decoder_logits(&te.input, prefix).unwrap();
        for t in 0..prefix.len() {
            let mut other = prefix.to_vec();
            for tok in other.iter_mut().skip(t + 1) {
                *tok = rng.gen_range(0..vocab.len() as u32);
            }
            let alt = m.decoder_logits(&te.input, &other).unwrap();
            for s in 0..=t {
                for (a, b) in base.row(s).iter().zip(alt.row(s)) {
                    worst_causal = worst_causal.max((a - b).abs() as f64);
                }
            }
        }
    }
    ensure!(worst_sum <= 1e-6, "row sum off by {worst_sum:.2e}");
    ensure!(worst_causal < 1e-6, "future tokens leak: {worst_causal:.2e}");
    Ok(format!("max |row sum - 1| = {worst_sum:.1e}; max causal diff = {worst_causal:.1e}"))
}

fn criterion_8() -> Outcome {
    let refs = ["boris petrov starred in hollow river as captain .", "peru won 7 gold medals at the 1961 asian games ."];
    let exact = bleu4(&refs, &refs).unwrap();
    ensure!(exact == 100.0, "exact match gave {exact}");
    let fixture = bleu4(&["the the the the"], &["the cat sat"]).unwrap();
    // clipped unigram 1/4; 2-, 3-, 4-gram precisions smoothed to 0.1/3, 0.1/2, 0.1/1; no brevity penalty
    let oracle = 100.0 * (0.25f64 * (0.1 / 3.0) * (0.1 / 2.0) * (0.1 / 1.0)).powf(0.25);
    ensure!((fixture - oracle).abs() < 1e-6, "fixture {fixture} vs {oracle}");
    let mismatch = bleu4(&["a"], &["a", "b"]);
    ensure!(matches!(mismatch, Err(Error::LengthMismatch { .. })), "length mismatch accepted");
    Ok(format!("exact 100.0; fixture {fixture:.6}; mismatch rejected"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("mask oracle equivalence", criterion_1),
        ("exact equivariance", criterion_2),
        ("directional robustness", criterion_3),
        ("ablation direction", criterion_4),
        ("gradient correctness", criterion_5),
        ("loss analytics", criterion_6),
        ("softmax and causality", criterion_7),
        ("bleu-4 unit suite", criterion_8),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.1}s) {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1}s) {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
