//! Forward and backward passes of the encoder-decoder.
//!
//! Everything operates on flat row-major buffers; caches keep exactly what
//! the backward pass needs. Masked attention entries are excluded from the
//! softmax outright, so their probabilities and gradients are exactly zero.

use super::ops::*;
use super::params::{AttnSlots, FfnSlots};
use super::{EncoderInput, ToyModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::structure::StructureMask;

/// Which key positions each query may see, and the relative-position bias.
pub(crate) struct Pattern<'a> {
    mask: Option<&'a StructureMask>,
    causal: bool,
    /// `nq x nk` bias-table indices and the bias tensor slot.
    rel: Option<(&'a [u32], usize)>,
}

impl Pattern<'_> {
    #[inline]
    fn allowed(&self, i: usize, j: usize) -> bool {
        (!self.causal || j <= i) && self.mask.map_or(true, |m| m.get(i, j))
    }
}

pub(crate) struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads x nq x nk`
    probs: Vec<T>,
    ctx: Vec<T>,
}

pub(crate) struct EncLayerCache<T> {
    x_in: Vec<T>,
    inv_attn: Vec<T>,
    a_attn: Vec<T>,
    attn: AttnCache<T>,
    x_mid: Vec<T>,
    inv_ffn: Vec<T>,
    a_ffn: Vec<T>,
    hidden: Vec<T>,
}

pub(crate) struct EncCache<T> {
    layers: Vec<EncLayerCache<T>>,
    x_final: Vec<T>,
    inv_final: Vec<T>,
    rel: Vec<u32>,
}

pub(crate) struct DecLayerCache<T> {
    x_in: Vec<T>,
    inv_self: Vec<T>,
    a_self: Vec<T>,
    self_attn: AttnCache<T>,
    x_mid1: Vec<T>,
    inv_cross: Vec<T>,
    a_cross: Vec<T>,
    cross_attn: AttnCache<T>,
    x_mid2: Vec<T>,
    inv_ffn: Vec<T>,
    a_ffn: Vec<T>,
    hidden: Vec<T>,
}

pub(crate) struct DecCache<T> {
    layers: Vec<DecLayerCache<T>>,
    x_final: Vec<T>,
    inv_final: Vec<T>,
    rel: Vec<u32>,
}

impl<T: Scalar> ToyModel<T> {
    #[inline]
    pub(crate) fn p(&self, slot: usize) -> &[T] {
        &self.params[self.layout.range(slot)]
    }

    fn attn_forward(
        &self,
        w: AttnSlots,
        xq: &[T],
        xkv: &[T],
        pat: &Pattern<'_>,
    ) -> (Vec<T>, AttnCache<T>) {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let (nq, nk) = (xq.len() / d, xkv.len() / d);
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let q = matmul(xq, self.p(w.q), nq, d, d);
        let k = matmul(xkv, self.p(w.k), nk, d, d);
        let v = matmul(xkv, self.p(w.v), nk, d, d);
        let mut probs = vec![T::zero(); heads * nq * nk];
        let mut ctx = vec![T::zero(); nq * d];
        let bias = pat.rel.map(|(idx, slot)| (idx, self.p(slot)));
        let table = self.config.p_max as usize + 1;
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..nq {
                let row = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let qi = &q[i * d..][hs.clone()];
                let mut max = T::neg_infinity();
                for j in 0..nk {
                    if !pat.allowed(i, j) {
                        continue;
                    }
                    let mut s = dot(qi, &k[j * d..][hs.clone()]) * scale;
                    if let Some((idx, b)) = bias {
                        s += b[h * table + idx[i * nk + j] as usize];
                    }
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = T::zero();
                for j in 0..nk {
                    if pat.allowed(i, j) {
                        let e = (row[j] - max).exp();
                        row[j] = e;
                        sum += e;
                    }
                }
                let ci = &mut ctx[i * d..][hs.clone()];
                for j in 0..nk {
                    if pat.allowed(i, j) {
                        row[j] /= sum;
                        let pij = row[j];
                        for (c, &vv) in ci.iter_mut().zip(&v[j * d..][hs.clone()]) {
                            *c += pij * vv;
                        }
                    }
                }
            }
        }
        let out = matmul(&ctx, self.p(w.o), nq, d, d);
        (out, AttnCache { q, k, v, probs, ctx })
    }

    /// Returns `(dxq, dxkv)`.
    #[allow(clippy::too_many_arguments)]
    fn attn_backward(
        &self,
        w: AttnSlots,
        pat: &Pattern<'_>,
        c: &AttnCache<T>,
        xq: &[T],
        xkv: &[T],
        dout: &[T],
        grads: &mut [T],
    ) -> (Vec<T>, Vec<T>) {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let (nq, nk) = (xq.len() / d, xkv.len() / d);
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let table = self.config.p_max as usize + 1;
        let r = |s: usize| self.layout.range(s);

        matmul_tn_acc(&c.ctx, dout, &mut grads[r(w.o)], nq, d, d);
        let dctx = matmul_nt(dout, self.p(w.o), nq, d, d);

        let mut dq = vec![T::zero(); nq * d];
        let mut dk = vec![T::zero(); nk * d];
        let mut dv = vec![T::zero(); nk * d];
        let mut dp = vec![T::zero(); nk];
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..nq {
                let row = &c.probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let dci = &dctx[i * d..][hs.clone()];
                let mut weighted = T::zero();
                for j in 0..nk {
                    if pat.allowed(i, j) {
                        dp[j] = dot(dci, &c.v[j * d..][hs.clone()]);
                        weighted += row[j] * dp[j];
                    }
                }
                for j in 0..nk {
                    if !pat.allowed(i, j) {
                        continue;
                    }
                    let pij = row[j];
                    let ds = pij * (dp[j] - weighted);
                    for (dvv, &g) in dv[j * d..][hs.clone()].iter_mut().zip(dci) {
                        *dvv += pij * g;
                    }
                    let dss = ds * scale;
                    for t in hs.clone() {
                        dq[i * d + t] += dss * c.k[j * d + t];
                        dk[j * d + t] += dss * c.q[i * d + t];
                    }
                    if let Some((idx, slot)) = pat.rel {
                        let off = self.layout.tensors[slot].offset;
                        grads[off + h * table + idx[i * nk + j] as usize] += ds;
                    }
                }
            }
        }
        matmul_tn_acc(xq, &dq, &mut grads[r(w.q)], nq, d, d);
        matmul_tn_acc(xkv, &dk, &mut grads[r(w.k)], nk, d, d);
        matmul_tn_acc(xkv, &dv, &mut grads[r(w.v)], nk, d, d);
        let dxq = matmul_nt(&dq, self.p(w.q), nq, d, d);
        let mut dxkv = matmul_nt(&dk, self.p(w.k), nk, d, d);
        matmul_nt_acc(&dv, self.p(w.v), &mut dxkv, nk, d, d);
        (dxq, dxkv)
    }

    /// Returns the output and the post-ReLU hidden activations.
    fn ffn_forward(&self, f: FfnSlots, a: &[T]) -> (Vec<T>, Vec<T>) {
        let d = self.config.d_model;
        let ff = self.config.d_ff;
        let n = a.len() / d;
        let mut hidden = matmul(a, self.p(f.w_in), n, d, ff);
        for x in hidden.iter_mut() {
            *x = x.max(T::zero());
        }
        let out = matmul(&hidden, self.p(f.w_out), n, ff, d);
        (out, hidden)
    }

    fn ffn_backward(&self, f: FfnSlots, a: &[T], hidden: &[T], dout: &[T], grads: &mut [T]) -> Vec<T> {
        let d = self.config.d_model;
        let ff = self.config.d_ff;
        let n = a.len() / d;
        matmul_tn_acc(hidden, dout, &mut grads[self.layout.range(f.w_out)], n, ff, d);
        let mut dh = matmul_nt(dout, self.p(f.w_out), n, d, ff);
        for (g, &h) in dh.iter_mut().zip(hidden) {
            if h <= T::zero() {
                *g = T::zero();
            }
        }
        matmul_tn_acc(a, &dh, &mut grads[self.layout.range(f.w_in)], n, d, ff);
        matmul_nt(&dh, self.p(f.w_in), n, ff, d)
    }

    fn embed_rows(&self, tokens: &[u32]) -> Vec<T> {
        let d = self.config.d_model;
        let e = self.p(self.layout.embed);
        tokens
            .iter()
            .flat_map(|&t| e[t as usize * d..(t as usize + 1) * d].iter().copied())
            .collect()
    }

    fn embed_backward(&self, tokens: &[u32], dx: &[T], grads: &mut [T]) {
        let d = self.config.d_model;
        let g = &mut grads[self.layout.range(self.layout.embed)];
        for (i, &t) in tokens.iter().enumerate() {
            add_assign(&mut g[t as usize * d..(t as usize + 1) * d], &dx[i * d..(i + 1) * d]);
        }
    }

    pub(crate) fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let n = input.tokens.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty encoder input".into()));
        }
        if input.mask.n() != n || input.relpos.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} tokens, mask {}x{0}, relpos {}x{1}",
                input.mask.n(),
                input.relpos.n()
            )));
        }
        if input.relpos.p_max() != self.config.p_max {
            return Err(Error::DimensionMismatch(format!(
                "relpos p_max {} but model p_max {}",
                input.relpos.p_max(),
                self.config.p_max
            )));
        }
        self.check_tokens(&input.tokens)
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::DimensionMismatch(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn encoder_rel(&self, input: &EncoderInput) -> Vec<u32> {
        let n = input.tokens.len();
        let p_max = self.config.p_max as usize;
        if self.config.use_invariant_relpos {
            input.relpos.as_slice().to_vec()
        } else {
            (0..n * n).map(|k| (k / n).abs_diff(k % n).min(p_max) as u32).collect()
        }
    }

    pub(crate) fn encoder_forward(&self, input: &EncoderInput) -> (Vec<T>, EncCache<T>) {
        let d = self.config.d_model;
        let rel = self.encoder_rel(input);
        let pat = Pattern {
            mask: self.config.use_structure_mask.then_some(&input.mask),
            causal: false,
            rel: Some((&rel, self.layout.enc_rel_bias)),
        };
        let mut x = self.embed_rows(&input.tokens);
        let mut layers = Vec::with_capacity(self.layout.enc.len());
        for l in &self.layout.enc {
            let (a_attn, inv_attn) = rms_norm(&x, self.p(l.norm_attn), d);
            let (out, attn) = self.attn_forward(l.attn, &a_attn, &a_attn, &pat);
            let x_mid = added(&x, &out);
            let (a_ffn, inv_ffn) = rms_norm(&x_mid, self.p(l.norm_ffn), d);
            let (f, hidden) = self.ffn_forward(l.ffn, &a_ffn);
            let x_out = added(&x_mid, &f);
            layers.push(EncLayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                inv_attn,
                a_attn,
                attn,
                x_mid,
                inv_ffn,
                a_ffn,
                hidden,
            });
        }
        let (out, inv_final) = rms_norm(&x, self.p(self.layout.enc_norm), d);
        let cache = EncCache {
            layers,
            x_final: x,
            inv_final,
            rel,
        };
        (out, cache)
    }

    pub(crate) fn encoder_backward(&self, input: &EncoderInput, c: &EncCache<T>, d_out: &[T], grads: &mut [T]) {
        let d = self.config.d_model;
        let pat = Pattern {
            mask: self.config.use_structure_mask.then_some(&input.mask),
            causal: false,
            rel: Some((&c.rel, self.layout.enc_rel_bias)),
        };
        let norm = self.layout.enc_norm;
        let mut dx = rms_norm_backward(
            d_out,
            &c.x_final,
            self.p(norm),
            &c.inv_final,
            d,
            &mut grads[self.layout.range(norm)],
        );
        for (l, lc) in self.layout.enc.iter().zip(&c.layers).rev() {
            let da_ffn = self.ffn_backward(l.ffn, &lc.a_ffn, &lc.hidden, &dx, grads);
            let dn = rms_norm_backward(
                &da_ffn,
                &lc.x_mid,
                self.p(l.norm_ffn),
                &lc.inv_ffn,
                d,
                &mut grads[self.layout.range(l.norm_ffn)],
            );
            add_assign(&mut dx, &dn);
            let (dq, dkv) = self.attn_backward(l.attn, &pat, &lc.attn, &lc.a_attn, &lc.a_attn, &dx, grads);
            let da = added(&dq, &dkv);
            let dn = rms_norm_backward(
                &da,
                &lc.x_in,
                self.p(l.norm_attn),
                &lc.inv_attn,
                d,
                &mut grads[self.layout.range(l.norm_attn)],
            );
            add_assign(&mut dx, &dn);
        }
        self.embed_backward(&input.tokens, &dx, grads);
    }

    fn decoder_rel(&self, m: usize) -> Vec<u32> {
        let p_max = self.config.p_max as usize;
        (0..m * m).map(|k| (k / m).abs_diff(k % m).min(p_max) as u32).collect()
    }

    /// Decoder hidden states (after the final norm) for `prefix`.
    pub(crate) fn decoder_forward(&self, enc: &[T], prefix: &[u32]) -> (Vec<T>, DecCache<T>) {
        let d = self.config.d_model;
        let rel = self.decoder_rel(prefix.len());
        let self_pat = Pattern {
            mask: None,
            causal: true,
            rel: Some((&rel, self.layout.dec_rel_bias)),
        };
        let cross_pat = Pattern {
            mask: None,
            causal: false,
            rel: None,
        };
        let mut x = self.embed_rows(prefix);
        let mut layers = Vec::with_capacity(self.layout.dec.len());
        for l in &self.layout.dec {
            let (a_self, inv_self) = rms_norm(&x, self.p(l.norm_self), d);
            let (o1, self_attn) = self.attn_forward(l.self_attn, &a_self, &a_self, &self_pat);
            let x_mid1 = added(&x, &o1);
            let (a_cross, inv_cross) = rms_norm(&x_mid1, self.p(l.norm_cross), d);
            let (o2, cross_attn) = self.attn_forward(l.cross_attn, &a_cross, enc, &cross_pat);
            let x_mid2 = added(&x_mid1, &o2);
            let (a_ffn, inv_ffn) = rms_norm(&x_mid2, self.p(l.norm_ffn), d);
            let (f, hidden) = self.ffn_forward(l.ffn, &a_ffn);
            let x_out = added(&x_mid2, &f);
            layers.push(DecLayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                inv_self,
                a_self,
                self_attn,
                x_mid1,
                inv_cross,
                a_cross,
                cross_attn,
                x_mid2,
                inv_ffn,
                a_ffn,
                hidden,
            });
        }
        let (out, inv_final) = rms_norm(&x, self.p(self.layout.dec_norm), d);
        let cache = DecCache {
            layers,
            x_final: x,
            inv_final,
            rel,
        };
        (out, cache)
    }

    /// Returns the gradient with respect to the encoder output.
    pub(crate) fn decoder_backward(
        &self,
        enc: &[T],
        prefix: &[u32],
        c: &DecCache<T>,
        d_out: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let d = self.config.d_model;
        let self_pat = Pattern {
            mask: None,
            causal: true,
            rel: Some((&c.rel, self.layout.dec_rel_bias)),
        };
        let cross_pat = Pattern {
            mask: None,
            causal: false,
            rel: None,
        };
        let mut d_enc = vec![T::zero(); enc.len()];
        let norm = self.layout.dec_norm;
        let mut dx = rms_norm_backward(
            d_out,
            &c.x_final,
            self.p(norm),
            &c.inv_final,
            d,
            &mut grads[self.layout.range(norm)],
        );
        for (l, lc) in self.layout.dec.iter().zip(&c.layers).rev() {
            let da = self.ffn_backward(l.ffn, &lc.a_ffn, &lc.hidden, &dx, grads);
            let dn = rms_norm_backward(
                &da,
                &lc.x_mid2,
                self.p(l.norm_ffn),
                &lc.inv_ffn,
                d,
                &mut grads[self.layout.range(l.norm_ffn)],
            );
            add_assign(&mut dx, &dn);

            let (dq, dkv) =
                self.attn_backward(l.cross_attn, &cross_pat, &lc.cross_attn, &lc.a_cross, enc, &dx, grads);
            add_assign(&mut d_enc, &dkv);
            let dn = rms_norm_backward(
                &dq,
                &lc.x_mid1,
                self.p(l.norm_cross),
                &lc.inv_cross,
                d,
                &mut grads[self.layout.range(l.norm_cross)],
            );
            add_assign(&mut dx, &dn);

            let (dq, dkv) =
                self.attn_backward(l.self_attn, &self_pat, &lc.self_attn, &lc.a_self, &lc.a_self, &dx, grads);
            let da = added(&dq, &dkv);
            let dn = rms_norm_backward(
                &da,
                &lc.x_in,
                self.p(l.norm_self),
                &lc.inv_self,
                d,
                &mut grads[self.layout.range(l.norm_self)],
            );
            add_assign(&mut dx, &dn);
        }
        self.embed_backward(prefix, &dx, grads);
        d_enc
    }

    /// Output logits for the given decoder hidden rows (tied embeddings).
    pub(crate) fn logits(&self, hidden: &[T]) -> Vec<T> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let m = hidden.len() / d;
        let scale = self.output_scale();
        let mut out = matmul_nt(hidden, self.p(self.layout.embed), m, d, v);
        for x in out.iter_mut() {
            *x *= scale;
        }
        out
    }

    fn output_scale(&self) -> T {
        T::one() / T::from_usize(self.config.d_model).unwrap().sqrt()
    }

    /// Teacher-forced summed negative log-likelihood of `target` (which starts
    /// with BOS). When `grads` is given, accumulates `weight * dloss/dparams`.
    pub(crate) fn sequence_nll(
        &self,
        input: &EncoderInput,
        target: &[u32],
        grads: Option<(&mut [T], T)>,
    ) -> T {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let prefix = &target[..target.len() - 1];
        let labels = &target[1..];
        let m = prefix.len();
        let (enc, enc_cache) = self.encoder_forward(input);
        let (hid, dec_cache) = self.decoder_forward(&enc, prefix);
        let mut logp = self.logits(&hid);
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            log_softmax_row(&mut logp[i * v..(i + 1) * v]);
            loss -= logp[i * v + y as usize];
        }
        let Some((grads, weight)) = grads else {
            return loss;
        };
        // dlogits = weight * (softmax - onehot), then through the tied projection
        let scale = self.output_scale();
        let mut dlogits = logp;
        for (i, &y) in labels.iter().enumerate() {
            let row = &mut dlogits[i * v..(i + 1) * v];
            for x in row.iter_mut() {
                *x = x.exp() * weight * scale;
            }
            row[y as usize] -= weight * scale;
        }
        let dh = matmul(&dlogits, self.p(self.layout.embed), m, v, d);
        matmul_tn_acc(&dlogits, &hid, &mut grads[self.layout.range(self.layout.embed)], m, v, d);
        let d_enc = self.decoder_backward(&enc, prefix, &dec_cache, &dh, grads);
        self.encoder_backward(input, &enc_cache, &d_enc, grads);
        loss
    }

    /// Attention probabilities of every encoder layer, `heads x n x n` each.
    pub(crate) fn encoder_attention_probs(&self, input: &EncoderInput) -> Vec<Vec<T>> {
        let (_, cache) = self.encoder_forward(input);
        cache.layers.into_iter().map(|l| l.attn.probs).collect()
    }
}
