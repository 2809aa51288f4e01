//! Paged, per-head asymmetrically quantized KV cache with
//! dequantize-on-load attention.
//!
//! Each appended token vector is quantized one attention head at a time
//! (asymmetric, no clipping) and stored in fixed-size token pages. Paging
//! affects memory accounting only; attention output is identical for any
//! page size. Attention dequantizes K and V on the fly and runs the usual
//! scaled-dot-product in floating point over the tokens cached so far, so
//! causality holds by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{dequantize_value, quantize_group, Precision, QuantParams};
use crate::scalar::Scalar;
use crate::tensors::{Matrix, PackedIntTensor};

pub const DEFAULT_PAGE_SIZE: usize = 16;
pub const DEFAULT_KV_BITS: u8 = 4;

/// Modeled parameter overhead per (token, head, K-or-V): scale + zero point.
pub const PARAM_BYTES_PER_HEAD: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvCacheConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub precision: Precision,
    pub page_size: usize,
}

impl KvCacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("kv cache dims must be positive".into()));
        }
        if self.page_size == 0 {
            return Err(Error::Config("page size must be positive".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.n_heads * self.head_dim
    }
}

#[derive(Clone, Debug)]
enum TokenVec<T> {
    Quantized {
        codes: PackedIntTensor,
        params: Vec<QuantParams<T>>,
    },
    Fp(Vec<T>),
}

impl<T: Scalar> TokenVec<T> {
    fn head_values(&self, head: usize, head_dim: usize) -> Vec<T> {
        match self {
            TokenVec::Fp(v) => v[head * head_dim..(head + 1) * head_dim].to_vec(),
            TokenVec::Quantized { codes, params } => {
                let p = &params[head];
                (head * head_dim..(head + 1) * head_dim)
                    .map(|c| dequantize_value(codes.get(0, c), p))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug)]
struct StoredToken<T> {
    k: TokenVec<T>,
    v: TokenVec<T>,
}

#[derive(Clone, Debug)]
struct Page<T> {
    tokens: Vec<StoredToken<T>>,
}

#[derive(Clone, Debug)]
struct SeqStore<T> {
    pages: Vec<Page<T>>,
}

/// Attention output row: `1 x (heads * head_dim)` of finite floats.
pub type AttentionOutput<T> = Matrix<T>;

#[derive(Clone, Debug)]
pub struct QuantizedKvCache<T = f32> {
    config: KvCacheConfig,
    /// layer -> sequence -> pages
    layers: Vec<Vec<SeqStore<T>>>,
}

impl<T: Scalar> QuantizedKvCache<T> {
    pub fn new(config: KvCacheConfig, n_seqs: usize) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.n_layers)
            .map(|_| (0..n_seqs).map(|_| SeqStore { pages: Vec::new() }).collect())
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &KvCacheConfig {
        &self.config
    }

    fn seq_store(&self, layer: usize, seq: usize) -> Result<&SeqStore<T>> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::Lookup(format!("unknown layer {layer}")))?
            .get(seq)
            .ok_or_else(|| Error::Lookup(format!("unknown sequence {seq}")))
    }

    fn seq_store_mut(&mut self, layer: usize, seq: usize) -> Result<&mut SeqStore<T>> {
        self.layers
            .get_mut(layer)
            .ok_or_else(|| Error::Lookup(format!("unknown layer {layer}")))?
            .get_mut(seq)
            .ok_or_else(|| Error::Lookup(format!("unknown sequence {seq}")))
    }

    pub fn seq_len(&self, layer: usize, seq: usize) -> Result<usize> {
        Ok(self
            .seq_store(layer, seq)?
            .pages
            .iter()
            .map(|p| p.tokens.len())
            .sum())
    }

    pub fn page_count(&self, layer: usize, seq: usize) -> Result<usize> {
        Ok(self.seq_store(layer, seq)?.pages.len())
    }

    fn encode(&self, vec: &Matrix<T>) -> Result<TokenVec<T>> {
        let width = self.config.width();
        if vec.rows() != 1 || vec.cols() != width {
            return Err(Error::Shape(format!(
                "token vector must be 1x{width}, got {}x{}",
                vec.rows(),
                vec.cols()
            )));
        }
        match self.config.precision {
            Precision::Bypass => Ok(TokenVec::Fp(vec.data().to_vec())),
            Precision::Int(bits) => {
                let d = self.config.head_dim;
                let mut codes = Vec::with_capacity(width);
                let mut params = Vec::with_capacity(self.config.n_heads);
                for h in 0..self.config.n_heads {
                    let (p, q) =
                        quantize_group(&vec.data()[h * d..(h + 1) * d], bits, T::one(), false)?;
                    codes.extend(q);
                    params.push(p);
                }
                Ok(TokenVec::Quantized {
                    codes: PackedIntTensor::pack(1, width, &codes, bits, false)?,
                    params,
                })
            }
        }
    }

    /// Quantize and store one token's K and V vectors; allocates a new page
    /// when the current one is full.
    pub fn append_token(
        &mut self,
        layer: usize,
        seq: usize,
        k_vec: &Matrix<T>,
        v_vec: &Matrix<T>,
    ) -> Result<()> {
        let token = StoredToken {
            k: self.encode(k_vec)?,
            v: self.encode(v_vec)?,
        };
        let page_size = self.config.page_size;
        let store = self.seq_store_mut(layer, seq)?;
        match store.pages.last_mut() {
            Some(page) if page.tokens.len() < page_size => page.tokens.push(token),
            _ => store.pages.push(Page {
                tokens: vec![token],
            }),
        }
        Ok(())
    }

    /// Scaled-dot-product attention of `q_vec` over all cached tokens:
    /// per head, `softmax(q . K_hat / sqrt(head_dim)) . V_hat`.
    pub fn attention(&self, layer: usize, seq: usize, q_vec: &Matrix<T>) -> Result<AttentionOutput<T>> {
        let width = self.config.width();
        if q_vec.rows() != 1 || q_vec.cols() != width {
            return Err(Error::Shape(format!(
                "query must be 1x{width}, got {}x{}",
                q_vec.rows(),
                q_vec.cols()
            )));
        }
        let store = self.seq_store(layer, seq)?;
        let len: usize = store.pages.iter().map(|p| p.tokens.len()).sum();
        if len == 0 {
            return Err(Error::State(format!(
                "attention over empty sequence {seq} at layer {layer}"
            )));
        }

        let d = self.config.head_dim;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut out = Matrix::zeros(1, width);
        for h in 0..self.config.n_heads {
            let q: Vec<f64> = q_vec.data()[h * d..(h + 1) * d]
                .iter()
                .map(|v| v.widen())
                .collect();

            let mut scores = Vec::with_capacity(len);
            for page in &store.pages {
                for token in &page.tokens {
                    let kv = token.k.head_values(h, d);
                    let dot: f64 = q.iter().zip(&kv).map(|(a, b)| a * b.widen()).sum();
                    scores.push(dot * inv_sqrt_d);
                }
            }

            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }

            let mut acc = vec![0.0f64; d];
            let mut t = 0usize;
            for page in &store.pages {
                for token in &page.tokens {
                    let vv = token.v.head_values(h, d);
                    for (a, b) in acc.iter_mut().zip(&vv) {
                        *a += weights[t] * b.widen();
                    }
                    t += 1;
                }
            }
            for (j, a) in acc.iter().enumerate() {
                out.set(0, h * d + j, T::narrow(*a));
            }
        }
        Ok(out)
    }
}

/// Modeled cache footprint: packed K and V codes plus per-(token, head)
/// parameter overhead. `Precision::Bypass` models an unquantized 16-bit
/// cache with no parameters.
pub fn cache_memory_bytes(config: &KvCacheConfig, tokens: u64, precision: Precision) -> u64 {
    let heads = config.n_heads as u64;
    let layers = config.n_layers as u64;
    let dim = config.head_dim as u64;
    match precision {
        Precision::Int(bits) => {
            let code_bits = tokens * layers * heads * dim * 2 * u64::from(bits);
            code_bits.div_ceil(8) + tokens * layers * heads * 2 * PARAM_BYTES_PER_HEAD
        }
        Precision::Bypass => (tokens * layers * heads * dim * 2 * 16).div_ceil(8),
    }
}
