//! Pruned attention graph and cell-invariant relative positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{Field, LinearizedSequence};

pub const DEFAULT_P_MAX: u32 = 128;

/// Row-major `n x n` attention permissions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureMask {
    n: usize,
    allowed: Vec<bool>,
}

impl StructureMask {
    pub fn full(n: usize) -> Self {
        StructureMask {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..n * n).map(|k| f(k / n, k % n)).collect();
        StructureMask { n, allowed }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

/// Row-major `n x n` relative positions, each in `0..=p_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelPosMatrix {
    n: usize,
    p: Vec<u32>,
    p_max: u32,
}

impl RelPosMatrix {
    /// `min(|i - j|, p_max)` for every pair: plain linear distance.
    pub fn linear(n: usize, p_max: u32) -> Result<Self> {
        check_p_max(p_max)?;
        Ok(Self::from_fn(n, p_max, |i, j| clamp_distance(i, j, p_max)))
    }

    pub(crate) fn from_fn(n: usize, p_max: u32, f: impl Fn(usize, usize) -> u32) -> Self {
        let p = (0..n * n).map(|k| f(k / n, k % n)).collect();
        RelPosMatrix { n, p, p_max }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_max(&self) -> u32 {
        self.p_max
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.p[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.p
    }
}

fn check_p_max(p_max: u32) -> Result<()> {
    if p_max < 1 {
        Err(Error::InvalidPMax(p_max))
    } else {
        Ok(())
    }
}

#[inline]
fn clamp_distance(i: usize, j: usize, p_max: u32) -> u32 {
    (i.abs_diff(j)).min(p_max as usize) as u32
}

fn fields_attend(a: &Field, b: &Field) -> bool {
    a.field_id == b.field_id || a.is_metadata() || b.is_metadata() || a.shares_line_with(b)
}

/// Attention is kept within a field, within and to/from metadata, and between
/// cells sharing a row or column.
pub fn build_mask(seq: &LinearizedSequence) -> StructureMask {
    let nf = seq.fields.len();
    let field_ok: Vec<bool> = (0..nf * nf)
        .map(|k| fields_attend(&seq.fields[k / nf], &seq.fields[k % nf]))
        .collect();
    StructureMask::from_fn(seq.len(), |i, j| field_ok[seq.field_of[i] * nf + seq.field_of[j]])
}

/// Clamped distance inside a field (all metadata counts as one field),
/// `p_max` across fields.
pub fn build_relpos(seq: &LinearizedSequence, p_max: u32) -> Result<RelPosMatrix> {
    check_p_max(p_max)?;
    Ok(RelPosMatrix::from_fn(seq.len(), p_max, |i, j| {
        let (fi, fj) = (seq.field_of_token(i), seq.field_of_token(j));
        if fi.field_id == fj.field_id || (fi.is_metadata() && fj.is_metadata()) {
            clamp_distance(i, j, p_max)
        } else {
            p_max
        }
    }))
}

/// Finds `pi` with `seq_b[pi[i]] == seq_a[i]` that maps whole fields onto
/// fields of the same kind and token content, preserves the within-field
/// token order and preserves shared-line relations between cell fields.
pub fn induced_permutation(seq_a: &LinearizedSequence, seq_b: &LinearizedSequence) -> Option<Vec<usize>> {
    if seq_a.len() != seq_b.len() || seq_a.fields.len() != seq_b.fields.len() {
        return None;
    }
    let spans_a = seq_a.field_spans();
    let spans_b = seq_b.field_spans();
    let tokens_of = |seq: &LinearizedSequence, f: usize| -> Vec<u32> {
        (0..seq.len()).filter(|&i| seq.field_of[i] == f).map(|i| seq.token_ids[i]).collect()
    };
    let contig = |seq: &LinearizedSequence, spans: &[std::ops::Range<usize>]| {
        spans.iter().enumerate().all(|(f, s)| seq.field_of[s.clone()].iter().all(|&x| x == f))
    };
    if !contig(seq_a, &spans_a) || !contig(seq_b, &spans_b) {
        return None;
    }
    let nf = seq_a.fields.len();
    let toks_a: Vec<Vec<u32>> = (0..nf).map(|f| tokens_of(seq_a, f)).collect();
    let toks_b: Vec<Vec<u32>> = (0..nf).map(|f| tokens_of(seq_b, f)).collect();
    let candidates: Vec<Vec<usize>> = (0..nf)
        .map(|fa| {
            (0..nf)
                .filter(|&fb| {
                    toks_a[fa] == toks_b[fb]
                        && seq_a.fields[fa].is_metadata() == seq_b.fields[fb].is_metadata()
                })
                .collect()
        })
        .collect();

    let mut assign = vec![usize::MAX; nf];
    let mut used = vec![false; nf];
    if !assign_fields(seq_a, seq_b, &candidates, 0, &mut assign, &mut used) {
        return None;
    }
    let mut pi = vec![0; seq_a.len()];
    for (fa, &fb) in assign.iter().enumerate() {
        for (ia, ib) in spans_a[fa].clone().zip(spans_b[fb].clone()) {
            pi[ia] = ib;
        }
    }
    Some(pi)
}

fn assign_fields(
    a: &LinearizedSequence,
    b: &LinearizedSequence,
    candidates: &[Vec<usize>],
    fa: usize,
    assign: &mut [usize],
    used: &mut [bool],
) -> bool {
    if fa == candidates.len() {
        return true;
    }
    for &fb in &candidates[fa] {
        if used[fb] {
            continue;
        }
        let consistent = (0..fa).all(|prev| {
            a.fields[prev].shares_line_with(&a.fields[fa]) == b.fields[assign[prev]].shares_line_with(&b.fields[fb])
        });
        if !consistent {
            continue;
        }
        assign[fa] = fb;
        used[fb] = true;
        if assign_fields(a, b, candidates, fa + 1, assign, used) {
            return true;
        }
        used[fb] = false;
    }
    assign[fa] = usize::MAX;
    false
}

/// JSON export consumed by external runtimes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureExport {
    pub n: usize,
    pub allowed: Vec<u8>,
    pub p: Vec<u32>,
    pub p_max: u32,
}

impl StructureExport {
    pub fn new(mask: &StructureMask, relpos: &RelPosMatrix) -> Result<Self> {
        if mask.n() != relpos.n() {
            return Err(Error::DimensionMismatch(format!(
                "mask is {0}x{0}, relpos is {1}x{1}",
                mask.n(),
                relpos.n()
            )));
        }
        Ok(StructureExport {
            n: mask.n(),
            allowed: mask.as_slice().iter().map(|&a| a as u8).collect(),
            p: relpos.as_slice().to_vec(),
            p_max: relpos.p_max(),
        })
    }
}
