//! Corpus-level BLEU-4 over whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Numerator used for an n-gram order with no matches.
pub const SMOOTHING_EPS: f64 = 0.1;
pub const MAX_ORDER: usize = 4;

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram totals per order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_pair(&mut self, candidate: &str, reference: &str) {
        let c: Vec<&str> = candidate.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        self.cand_len += c.len();
        self.ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(&r, n);
            for (g, k) in ngram_counts(&c, n) {
                self.matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            self.totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }

    /// Score in `[0, 100]`.
    ///
    /// Orders without any candidate n-gram are left out of the geometric
    /// mean; orders with n-grams but no match use `SMOOTHING_EPS / total`.
    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let logs: Vec<f64> = (0..MAX_ORDER)
            .filter(|&k| self.totals[k] > 0)
            .map(|k| {
                let num = match self.matches[k] {
                    0 => SMOOTHING_EPS,
                    m => m as f64,
                };
                (num / self.totals[k] as f64).ln()
            })
            .collect();
        let log_p = logs.iter().sum::<f64>() / logs.len() as f64;
        let (c, r) = (self.cand_len as f64, self.ref_len as f64);
        let log_bp = if c > r { 0.0 } else { 1.0 - r / c };
        100.0 * (log_p + log_bp).exp()
    }
}

/// Corpus BLEU-4 of `candidates` against one reference each.
pub fn bleu4<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::LengthMismatch {
            candidates: 0,
            references: 0,
        });
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add_pair(c.as_ref(), r.as_ref());
    }
    Ok(stats.score())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_is_100() {
        let s = ["the cat sat on the mat", "a b", "x"];
        assert!((bleu4(&s, &s).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn clipped_fixture() {
        // unigram "the" clipped to one match out of four; no higher-order match
        let expected = 100.0 * (0.25f64 * (0.1 / 3.0) * (0.1 / 2.0) * 0.1).powf(0.25);
        let got = bleu4(&["the the the the"], &["the cat sat"]).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu4(&[""], &["a b c"]).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(matches!(
            bleu4(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { candidates: 1, references: 2 })
        ));
    }

    #[test]
    fn deletion_never_increases_exact_match_score() {
        let r = "anna weber starred in silent harbor as nurse in 1987 .";
        let toks: Vec<&str> = r.split_whitespace().collect();
        let mut prev = bleu4(&[r], &[r]).unwrap();
        for k in (0..toks.len()).rev() {
            let c = toks[..k].join(" ");
            let s = bleu4(&[c.as_str()], &[r]).unwrap();
            assert!(s <= prev + 1e-12);
            prev = s;
        }
    }
}
