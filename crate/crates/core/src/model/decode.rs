//! Greedy and beam decoding.
//!
//! The decoder is re-run over the whole prefix at every step. Targets are
//! short, so this costs little and keeps a single forward code path.

use std::cmp::Ordering;

use super::ops::log_softmax_row;
use super::{EncoderInput, ToyModel};
use crate::error::Result;
use crate::linearize::vocab::{BOS_ID, EOS_ID};
use crate::scalar::Scalar;

/// A decoded sequence without BOS/EOS framing.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    /// Whether generation stopped on EOS (rather than the length limit).
    pub finished: bool,
    /// Summed log-probability, EOS included when finished.
    pub log_prob: f64,
}

impl Hypothesis {
    /// Number of scored steps.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Length-normalised log-probability (0 for an empty hypothesis).
    pub fn score(&self) -> f64 {
        match self.steps() {
            0 => 0.0,
            n => self.log_prob / n as f64,
        }
    }
}

struct Live {
    prefix: Vec<u32>,
    log_prob: f64,
}

struct Candidate {
    parent: usize,
    token: u32,
    log_prob: f64,
    logit: f64,
    steps: usize,
}

impl Candidate {
    fn score(&self) -> f64 {
        self.log_prob / self.steps as f64
    }

    /// Higher score first, then higher raw logit, then lower token id.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score()
            .total_cmp(&self.score())
            .then(other.logit.total_cmp(&self.logit))
            .then(self.token.cmp(&other.token))
    }
}

impl<T: Scalar> ToyModel<T> {
    fn next_logits(&self, enc: &[T], prefix: &[u32]) -> Vec<T> {
        let v = self.config.vocab_size;
        let (hid, _) = self.decoder_forward(enc, prefix);
        let d = self.config.d_model;
        let last = &hid[(prefix.len() - 1) * d..];
        let logits = self.logits(last);
        debug_assert_eq!(logits.len(), v);
        logits
    }

    /// Argmax decoding up to `config.max_decode_len` steps.
    pub fn greedy_decode(&self, input: &EncoderInput) -> Result<Vec<u32>> {
        Ok(self.greedy_search(input, self.config.max_decode_len)?.tokens)
    }

    /// Greedy decoding with its score; ties go to the lowest token id.
    pub fn greedy_search(&self, input: &EncoderInput, max_len: usize) -> Result<Hypothesis> {
        self.check_input(input)?;
        let (enc, _) = self.encoder_forward(input);
        let mut prefix = vec![BOS_ID];
        let mut log_prob = 0.0;
        let mut finished = false;
        for _ in 0..max_len {
            let mut logits = self.next_logits(&enc, &prefix);
            let mut best = 0;
            for (k, l) in logits.iter().enumerate() {
                if *l > logits[best] {
                    best = k;
                }
            }
            log_softmax_row(&mut logits);
            log_prob += logits[best].as_f64();
            if best as u32 == EOS_ID {
                finished = true;
                break;
            }
            prefix.push(best as u32);
        }
        prefix.remove(0);
        Ok(Hypothesis {
            tokens: prefix,
            finished,
            log_prob,
        })
    }

    /// Beam search tokens; `beam = 1` reproduces [`greedy_decode`](Self::greedy_decode).
    pub fn beam_decode(&self, input: &EncoderInput, beam: usize, max_len: usize) -> Result<Vec<u32>> {
        Ok(self.beam_search(input, beam, max_len)?.tokens)
    }

    /// Length-normalised beam search.
    ///
    /// The greedy hypothesis always competes in the final selection, so the
    /// returned score is never below the greedy score.
    pub fn beam_search(&self, input: &EncoderInput, beam: usize, max_len: usize) -> Result<Hypothesis> {
        let beam = beam.max(1);
        let greedy = self.greedy_search(input, max_len)?;
        let (enc, _) = self.encoder_forward(input);
        let mut live = vec![Live {
            prefix: vec![BOS_ID],
            log_prob: 0.0,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        for step in 1..=max_len {
            let mut cands = Vec::new();
            for (parent, h) in live.iter().enumerate() {
                let logits = self.next_logits(&enc, &h.prefix);
                let mut logp = logits.clone();
                log_softmax_row(&mut logp);
                for (tok, (&l, &lp)) in logits.iter().zip(&logp).enumerate() {
                    cands.push(Candidate {
                        parent,
                        token: tok as u32,
                        log_prob: h.log_prob + lp.as_f64(),
                        logit: l.as_f64(),
                        steps: step,
                    });
                }
            }
            cands.sort_by(|a, b| a.rank(b));
            let mut next = Vec::with_capacity(beam);
            for c in cands.into_iter().take(beam) {
                let mut prefix = live[c.parent].prefix.clone();
                if c.token == EOS_ID {
                    prefix.remove(0);
                    done.push(Hypothesis {
                        tokens: prefix,
                        finished: true,
                        log_prob: c.log_prob,
                    });
                } else {
                    prefix.push(c.token);
                    next.push(Live {
                        prefix,
                        log_prob: c.log_prob,
                    });
                }
            }
            live = next;
            if live.is_empty() {
                break;
            }
        }
        done.extend(live.into_iter().map(|mut h| {
            h.prefix.remove(0);
            Hypothesis {
                tokens: h.prefix,
                finished: false,
                log_prob: h.log_prob,
            }
        }));
        done.push(greedy);
        // first maximum wins, so beam hypotheses precede the greedy fallback
        let mut best = 0;
        for (k, h) in done.iter().enumerate() {
            if h.score() > done[best].score() {
                best = k;
            }
        }
        Ok(done.swap_remove(best))
    }

    /// Teacher-forced score of a hypothesis, recomputed from scratch.
    pub fn score_hypothesis(&self, input: &EncoderInput, tokens: &[u32], finished: bool) -> Result<Hypothesis> {
        self.check_input(input)?;
        let mut target = vec![BOS_ID];
        target.extend_from_slice(tokens);
        if finished {
            target.push(EOS_ID);
        }
        self.check_tokens(&target)?;
        let log_prob = if target.len() < 2 {
            0.0
        } else {
            -self.sequence_nll(input, &target, None).as_f64()
        };
        Ok(Hypothesis {
            tokens: tokens.to_vec(),
            finished,
            log_prob,
        })
    }
}
