//! Flat parameter storage with named tensor slots.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Projection slots of one attention block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnSlots {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnSlots {
    pub w_in: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerSlots {
    pub norm_attn: usize,
    pub attn: AttnSlots,
    pub norm_ffn: usize,
    pub ffn: FfnSlots,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerSlots {
    pub norm_self: usize,
    pub self_attn: AttnSlots,
    pub norm_cross: usize,
    pub cross_attn: AttnSlots,
    pub norm_ffn: usize,
    pub ffn: FfnSlots,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub embed: usize,
    pub enc: Vec<EncLayerSlots>,
    pub enc_rel_bias: usize,
    pub enc_norm: usize,
    pub dec: Vec<DecLayerSlots>,
    pub dec_rel_bias: usize,
    pub dec_norm: usize,
    pub total: usize,
}

/// How a tensor is initialised.
#[derive(Clone, Copy)]
enum Init {
    /// Uniform with the given standard deviation.
    Uniform(f64),
    Ones,
    Zeros,
}

struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let spec = TensorSpec {
            name,
            shape,
            offset: self.total,
        };
        self.total += spec.len();
        self.tensors.push(spec);
        self.inits.push(init);
        self.tensors.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnSlots {
        let std = 1.0 / (d as f64).sqrt();
        AttnSlots {
            q: self.add(format!("{prefix}.q"), vec![d, d], Init::Uniform(std)),
            k: self.add(format!("{prefix}.k"), vec![d, d], Init::Uniform(std)),
            v: self.add(format!("{prefix}.v"), vec![d, d], Init::Uniform(std)),
            o: self.add(format!("{prefix}.o"), vec![d, d], Init::Uniform(std)),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> FfnSlots {
        FfnSlots {
            w_in: self.add(format!("{prefix}.w_in"), vec![d, ff], Init::Uniform(1.0 / (d as f64).sqrt())),
            w_out: self.add(format!("{prefix}.w_out"), vec![ff, d], Init::Uniform(1.0 / (ff as f64).sqrt())),
        }
    }
}

impl Layout {
    fn build(cfg: &ModelConfig) -> (Layout, Vec<Init>) {
        let d = cfg.d_model;
        let mut b = LayoutBuilder {
            tensors: Vec::new(),
            inits: Vec::new(),
            total: 0,
        };
        let embed = b.add("embed".into(), vec![cfg.vocab_size, d], Init::Uniform(1.0));
        let enc = (0..cfg.n_enc_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncLayerSlots {
                    norm_attn: b.add(format!("{p}.norm_attn"), vec![d], Init::Ones),
                    attn: b.attn(&format!("{p}.attn"), d),
                    norm_ffn: b.add(format!("{p}.norm_ffn"), vec![d], Init::Ones),
                    ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff),
                }
            })
            .collect();
        let bias_shape = vec![cfg.n_heads, cfg.p_max as usize + 1];
        let enc_rel_bias = b.add("enc.rel_bias".into(), bias_shape.clone(), Init::Zeros);
        let enc_norm = b.add("enc.norm".into(), vec![d], Init::Ones);
        let dec = (0..cfg.n_dec_layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecLayerSlots {
                    norm_self: b.add(format!("{p}.norm_self"), vec![d], Init::Ones),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    norm_cross: b.add(format!("{p}.norm_cross"), vec![d], Init::Ones),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    norm_ffn: b.add(format!("{p}.norm_ffn"), vec![d], Init::Ones),
                    ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff),
                }
            })
            .collect();
        let dec_rel_bias = b.add("dec.rel_bias".into(), bias_shape, Init::Zeros);
        let dec_norm = b.add("dec.norm".into(), vec![d], Init::Ones);
        let layout = Layout {
            tensors: b.tensors,
            embed,
            enc,
            enc_rel_bias,
            enc_norm,
            dec,
            dec_rel_bias,
            dec_norm,
            total: b.total,
        };
        (layout, b.inits)
    }

    pub fn new(cfg: &ModelConfig) -> Layout {
        Self::build(cfg).0
    }

    /// Parameters drawn from a ChaCha8 stream seeded with `cfg.seed`.
    pub fn init_params<T: Scalar>(cfg: &ModelConfig) -> (Layout, Vec<T>) {
        let (layout, inits) = Self::build(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![T::zero(); layout.total];
        for (spec, init) in layout.tensors.iter().zip(inits) {
            let dst = &mut params[spec.range()];
            match init {
                Init::Ones => dst.fill(T::one()),
                Init::Zeros => {}
                Init::Uniform(std) => {
                    let bound = std * 3f64.sqrt();
                    for p in dst.iter_mut() {
                        *p = T::lit(rng.gen_range(-bound..bound));
                    }
                }
            }
        }
        (layout, params)
    }

    #[inline]
    pub fn range(&self, slot: usize) -> Range<usize> {
        self.tensors[slot].range()
    }
}
