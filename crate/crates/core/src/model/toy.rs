//! Randomly initialized Llama-style toy model and the shared forward engine.
//!
//! Block structure: RMSNorm -> fused QKV projection -> rotary embedding ->
//! cached attention -> O projection -> residual -> RMSNorm -> gated MLP
//! (SiLU) -> residual, with a tied embedding/output head. The same engine
//! drives the FP twin and the quantized model; only the linear operators
//! differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kvcache::{KvCacheConfig, QuantizedKvCache, DEFAULT_PAGE_SIZE};
use crate::model::config::ModelConfig;
use crate::model::ops;
use crate::qgemm::{fp_oracle_gemm, quantized_linear, QuantizedLinearLayer};
use crate::quantizer::Precision;
use crate::tensors::Matrix;

/// The four quantized linear positions inside one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinearPos {
    Qkv,
    O,
    GateUp,
    Down,
}

pub const LINEAR_POSITIONS: [LinearPos; 4] =
    [LinearPos::Qkv, LinearPos::O, LinearPos::GateUp, LinearPos::Down];

impl LinearPos {
    pub fn name(&self) -> &'static str {
        match self {
            LinearPos::Qkv => "qkv",
            LinearPos::O => "o",
            LinearPos::GateUp => "gate_up",
            LinearPos::Down => "down",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            LinearPos::Qkv => 0,
            LinearPos::O => 1,
            LinearPos::GateUp => 2,
            LinearPos::Down => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpLayer {
    pub norm_attn: Vec<f32>,
    pub norm_mlp: Vec<f32>,
    /// hidden x 3*hidden
    pub qkv: Matrix<f32>,
    /// hidden x hidden
    pub o: Matrix<f32>,
    /// hidden x 2*ffn
    pub gate_up: Matrix<f32>,
    /// ffn x hidden
    pub down: Matrix<f32>,
}

impl FpLayer {
    pub fn weight(&self, pos: LinearPos) -> &Matrix<f32> {
        match pos {
            LinearPos::Qkv => &self.qkv,
            LinearPos::O => &self.o,
            LinearPos::GateUp => &self.gate_up,
            LinearPos::Down => &self.down,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpModel {
    pub config: ModelConfig,
    /// vocab x hidden; also the tied output head.
    pub embedding: Matrix<f32>,
    pub final_norm: Vec<f32>,
    pub layers: Vec<FpLayer>,
}

fn sample_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix<f32> {
    let dist = Normal::new(0.0f64, std).unwrap();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = dist.sample(rng) as f32;
    }
    m
}

/// Deterministic random init from `config.seed`.
pub fn build_toy_model(config: &ModelConfig) -> Result<FpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.hidden_dim;
    let ffn = config.ffn_dim;
    let embedding = sample_matrix(&mut rng, config.vocab_size, h, 1.0 / (h as f64).sqrt());
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(FpLayer {
            norm_attn: vec![1.0; h],
            norm_mlp: vec![1.0; h],
            qkv: sample_matrix(&mut rng, h, 3 * h, 1.0 / (h as f64).sqrt()),
            o: sample_matrix(&mut rng, h, h, 1.0 / (h as f64).sqrt()),
            gate_up: sample_matrix(&mut rng, h, 2 * ffn, 1.0 / (h as f64).sqrt()),
            down: sample_matrix(&mut rng, ffn, h, 1.0 / (ffn as f64).sqrt()),
        });
    }
    Ok(FpModel {
        config: config.clone(),
        embedding,
        final_norm: vec![1.0; h],
        layers,
    })
}

/// One block's operators, independent of how the weights are stored.
pub trait LayerForward {
    fn norm_attn(&self) -> &[f32];
    fn norm_mlp(&self) -> &[f32];
    fn apply(&self, pos: LinearPos, x: &Matrix<f32>) -> Result<Matrix<f32>>;
}

impl LayerForward for FpLayer {
    fn norm_attn(&self) -> &[f32] {
        &self.norm_attn
    }

    fn norm_mlp(&self) -> &[f32] {
        &self.norm_mlp
    }

    fn apply(&self, pos: LinearPos, x: &Matrix<f32>) -> Result<Matrix<f32>> {
        fp_oracle_gemm(x, self.weight(pos))
    }
}

/// A block whose linear operators reorder and quantize dynamically.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub norm_attn: Vec<f32>,
    pub norm_mlp: Vec<f32>,
    pub qkv: QuantizedLinearLayer<f32>,
    pub o: QuantizedLinearLayer<f32>,
    pub gate_up: QuantizedLinearLayer<f32>,
    pub down: QuantizedLinearLayer<f32>,
}

impl QuantLayer {
    pub fn linear(&self, pos: LinearPos) -> &QuantizedLinearLayer<f32> {
        match pos {
            LinearPos::Qkv => &self.qkv,
            LinearPos::O => &self.o,
            LinearPos::GateUp => &self.gate_up,
            LinearPos::Down => &self.down,
        }
    }
}

impl LayerForward for QuantLayer {
    fn norm_attn(&self) -> &[f32] {
        &self.norm_attn
    }

    fn norm_mlp(&self) -> &[f32] {
        &self.norm_mlp
    }

    fn apply(&self, pos: LinearPos, x: &Matrix<f32>) -> Result<Matrix<f32>> {
        quantized_linear(x, self.linear(pos))
    }
}

/// Activation matrices recorded at each linear input of one block.
#[derive(Default)]
pub struct LayerCapture {
    pub inputs: [Vec<Matrix<f32>>; 4],
}

impl LayerCapture {
    fn push(&mut self, pos: LinearPos, m: Matrix<f32>) {
        self.inputs[pos.index()].push(m);
    }

    pub fn at(&self, pos: LinearPos) -> &[Matrix<f32>] {
        &self.inputs[pos.index()]
    }
}

/// Run one block over `x` (rows are tokens at absolute positions starting at
/// `start_pos`), appending K/V to `cache` at `cache_layer` and attending over
/// everything cached so far, token by token.
pub fn forward_layer<L: LayerForward>(
    layer: &L,
    config: &ModelConfig,
    x: &Matrix<f32>,
    start_pos: usize,
    cache: &mut QuantizedKvCache<f32>,
    cache_layer: usize,
    seq: usize,
    mut capture: Option<&mut LayerCapture>,
) -> Result<Matrix<f32>> {
    let h = config.hidden_dim;
    let rows = x.rows();

    let a_in = ops::rmsnorm_rows(x, layer.norm_attn());
    if let Some(cap) = capture.as_deref_mut() {
        cap.push(LinearPos::Qkv, a_in.clone());
    }
    let qkv = layer.apply(LinearPos::Qkv, &a_in)?;

    let mut attn = Matrix::zeros(rows, h);
    for t in 0..rows {
        let pos = start_pos + t;
        let row = qkv.row(t);
        let mut q = Matrix::from_vec(1, h, row[0..h].to_vec())?;
        let mut k = Matrix::from_vec(1, h, row[h..2 * h].to_vec())?;
        let v = Matrix::from_vec(1, h, row[2 * h..3 * h].to_vec())?;
        ops::rope_rotate_row(q.row_mut(0), config.n_heads, config.head_dim, pos);
        ops::rope_rotate_row(k.row_mut(0), config.n_heads, config.head_dim, pos);
        cache.append_token(cache_layer, seq, &k, &v)?;
        let out = cache.attention(cache_layer, seq, &q)?;
        attn.row_mut(t).copy_from_slice(out.row(0));
    }

    if let Some(cap) = capture.as_deref_mut() {
        cap.push(LinearPos::O, attn.clone());
    }
    let o = layer.apply(LinearPos::O, &attn)?;
    let mut x = x.clone();
    ops::add_assign(&mut x, &o);

    let m_in = ops::rmsnorm_rows(&x, layer.norm_mlp());
    if let Some(cap) = capture.as_deref_mut() {
        cap.push(LinearPos::GateUp, m_in.clone());
    }
    let gu = layer.apply(LinearPos::GateUp, &m_in)?;
    let act = ops::silu_gate(&gu);
    if let Some(cap) = capture.as_deref_mut() {
        cap.push(LinearPos::Down, act.clone());
    }
    let d = layer.apply(LinearPos::Down, &act)?;
    ops::add_assign(&mut x, &d);
    Ok(x)
}

/// A model the session engine can drive.
pub trait ModelForward {
    type Layer: LayerForward;
    fn config(&self) -> &ModelConfig;
    fn embedding(&self) -> &Matrix<f32>;
    fn final_norm(&self) -> &[f32];
    fn forward_layers(&self) -> &[Self::Layer];
    fn kv_precision(&self) -> Precision;
}

impl ModelForward for FpModel {
    type Layer = FpLayer;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embedding(&self) -> &Matrix<f32> {
        &self.embedding
    }

    fn final_norm(&self) -> &[f32] {
        &self.final_norm
    }

    fn forward_layers(&self) -> &[FpLayer] {
        &self.layers
    }

    fn kv_precision(&self) -> Precision {
        Precision::Bypass
    }
}

/// One sequence's incremental state over a model.
pub struct Session<'m, M: ModelForward> {
    model: &'m M,
    cache: QuantizedKvCache<f32>,
    pos: usize,
}

impl<'m, M: ModelForward> Session<'m, M> {
    pub fn new(model: &'m M) -> Result<Self> {
        let config = model.config();
        let cache = QuantizedKvCache::new(
            KvCacheConfig {
                n_layers: config.n_layers,
                n_heads: config.n_heads,
                head_dim: config.head_dim,
                precision: model.kv_precision(),
                page_size: DEFAULT_PAGE_SIZE,
            },
            1,
        )?;
        Ok(Self {
            model,
            cache,
            pos: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }

    fn run(&mut self, tokens: &[u32]) -> Result<Matrix<f32>> {
        if tokens.is_empty() {
            return Err(Error::Argument("empty token slice".into()));
        }
        let config = self.model.config();
        let mut x = ops::embed(self.model.embedding(), tokens)?;
        for (li, layer) in self.model.forward_layers().iter().enumerate() {
            x = forward_layer(
                layer,
                config,
                &x,
                self.pos,
                &mut self.cache,
                li,
                0,
                None,
            )?;
        }
        self.pos += tokens.len();
        let normed = ops::rmsnorm_rows(&x, self.model.final_norm());
        Ok(ops::head_logits(&normed, self.model.embedding()))
    }

    /// Process a chunk of tokens; returns logits for every position.
    pub fn prefill(&mut self, tokens: &[u32]) -> Result<Matrix<f32>> {
        self.run(tokens)
    }

    /// Process one token; returns a single logits row.
    pub fn decode(&mut self, token: u32) -> Result<Matrix<f32>> {
        self.run(&[token])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let config = ModelConfig::toy(42);
        let a = build_toy_model(&config).unwrap();
        let b = build_toy_model(&config).unwrap();
        assert_eq!(a, b);
        let mut config2 = config;
        config2.seed = 43;
        let c = build_toy_model(&config2).unwrap();
        assert_ne!(a.embedding, c.embedding);
    }

    #[test]
    fn dims_enforced() {
        let mut config = ModelConfig::toy(0);
        config.hidden_dim = 64;
        config.n_heads = 4;
        config.head_dim = 16;
        assert!(build_toy_model(&config).is_ok());
        config.head_dim = 17;
        assert!(build_toy_model(&config).is_err());
    }

    #[test]
    fn forward_is_finite() {
        let config = ModelConfig::toy(7);
        let model = build_toy_model(&config).unwrap();
        let mut session = Session::new(&model).unwrap();
        let logits = session.prefill(&[0, 1, 2, 3]).unwrap();
        assert_eq!(logits.shape(), (4, config.vocab_size));
        assert!(logits.is_finite());
    }

    #[test]
    fn prefill_matches_incremental_decode() {
        let config = ModelConfig::toy(11);
        let model = build_toy_model(&config).unwrap();
        let tokens = [3u32, 1, 4, 1, 5, 9, 2, 6];

        let mut one_shot = Session::new(&model).unwrap();
        let all = one_shot.prefill(&tokens).unwrap();

        let mut incremental = Session::new(&model).unwrap();
        for (t, &tok) in tokens.iter().enumerate() {
            let row = incremental.decode(tok).unwrap();
            for v in 0..config.vocab_size {
                let d = (row.get(0, v) - all.get(t, v)).abs();
                assert!(d <= 1e-4, "position {t} vocab {v}: {d}");
            }
        }
    }
}
