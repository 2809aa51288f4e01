//! Per-operator roofline costs for the serving schemes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvcache::{cache_memory_bytes, KvCacheConfig};
use crate::perfsim::profile::{ComputePrecision, HardwareProfile};
use crate::quantizer::{effective_bits, Precision};

/// Operation count, memory traffic, and the precision the ops execute at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorCost {
    pub ops: f64,
    pub bytes: f64,
    pub precision: ComputePrecision,
}

impl OperatorCost {
    /// Arithmetic intensity, ops per byte moved.
    pub fn intensity(&self) -> f64 {
        self.ops / self.bytes
    }
}

/// `time = max(ops / peak, bytes / bandwidth)`: the dual statement of the
/// min-throughput roofline.
pub fn roofline_time(cost: &OperatorCost, hw: &HardwareProfile) -> f64 {
    let compute = cost.ops / hw.peak(cost.precision);
    let memory = cost.bytes / hw.mem_bandwidth;
    compute.max(memory)
}

/// Serving-level quantization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantScheme {
    Fp16,
    W4A16,
    W8A8,
    W4A4,
}

impl QuantScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp16" => Ok(Self::Fp16),
            "w4a16" => Ok(Self::W4A16),
            "w8a8" => Ok(Self::W8A8),
            "w4a4" => Ok(Self::W4A4),
            other => Err(Error::Argument(format!(
                "unknown scheme {other:?}, expected fp16|w4a16|w8a8|w4a4"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fp16 => "fp16",
            Self::W4A16 => "w4a16",
            Self::W8A8 => "w8a8",
            Self::W4A4 => "w4a4",
        }
    }

    /// Dense GEMMs run at the activations' precision; weight-only
    /// quantization dequantizes first and stays on the FP16 units.
    pub fn compute_precision(&self) -> ComputePrecision {
        match self {
            Self::Fp16 | Self::W4A16 => ComputePrecision::Fp16,
            Self::W8A8 => ComputePrecision::Int8,
            Self::W4A4 => ComputePrecision::Int4,
        }
    }

    pub fn kv_precision(&self) -> Precision {
        match self {
            Self::Fp16 | Self::W4A16 => Precision::Bypass,
            Self::W8A8 => Precision::Int(8),
            Self::W4A4 => Precision::Int(4),
        }
    }
}

/// Model dimensions the cost model needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub group_size: usize,
    pub outlier_count: usize,
}

impl ModelDims {
    pub fn llama7b_like() -> Self {
        Self {
            n_layers: 32,
            hidden_dim: 4096,
            n_heads: 32,
            head_dim: 128,
            ffn_dim: 11008,
            vocab_size: 32000,
            group_size: 128,
            outlier_count: 128,
        }
    }

    /// Multiply-accumulate pairs per layer over QKV, O, and the gated MLP.
    pub fn gemm_params_per_layer(&self) -> f64 {
        let h = self.hidden_dim as f64;
        let f = self.ffn_dim as f64;
        4.0 * h * h + 3.0 * h * f
    }

    pub fn dense_weight_count(&self) -> f64 {
        self.n_layers as f64 * self.gemm_params_per_layer()
    }

    fn kv_config(&self) -> KvCacheConfig {
        KvCacheConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            head_dim: self.head_dim,
            precision: Precision::Bypass,
            page_size: 16,
        }
    }

    /// Stored bits per weight element, including group-scale overhead and
    /// the INT8 outlier slice where the scheme has them.
    pub fn weight_bits_effective(&self, scheme: QuantScheme) -> f64 {
        match scheme {
            QuantScheme::Fp16 => 16.0,
            QuantScheme::W4A16 => 4.0 + 16.0 / self.group_size as f64,
            QuantScheme::W8A8 => 8.0,
            QuantScheme::W4A4 => {
                effective_bits(self.hidden_dim, self.outlier_count, 4, 8, self.group_size)
            }
        }
    }

    /// Bits per activation element as they enter the dense GEMMs.
    pub fn activation_bits_effective(&self, scheme: QuantScheme) -> f64 {
        match scheme {
            QuantScheme::Fp16 | QuantScheme::W4A16 => 16.0,
            QuantScheme::W8A8 => 8.0,
            QuantScheme::W4A4 => {
                effective_bits(self.hidden_dim, self.outlier_count, 4, 8, self.group_size)
            }
        }
    }
}

/// KV-cache bytes per token (all layers, K and V, parameter overhead
/// included when quantized).
pub fn kv_bytes_per_token(dims: &ModelDims, scheme: QuantScheme) -> f64 {
    cache_memory_bytes(&dims.kv_config(), 1, scheme.kv_precision()) as f64
}

/// Dense weights resident in memory, plus the FP16 embedding/head.
pub fn weight_footprint_bytes(dims: &ModelDims, scheme: QuantScheme) -> f64 {
    let dense = dims.dense_weight_count() * dims.weight_bits_effective(scheme) / 8.0;
    let head = (dims.vocab_size * dims.hidden_dim) as f64 * 2.0;
    dense + head
}

/// Batched QKV/O/MLP GEMMs over the whole model for one step.
pub fn dense_cost(batch: usize, dims: &ModelDims, scheme: QuantScheme) -> OperatorCost {
    let params = dims.dense_weight_count();
    let ops = 2.0 * batch as f64 * params;
    let weight_bytes = params * dims.weight_bits_effective(scheme) / 8.0;
    let h = dims.hidden_dim as f64;
    let f = dims.ffn_dim as f64;
    // in + out rows of each GEMM: qkv 4h, o 2h, gate_up h + 2f, down f + h.
    let act_elems = batch as f64 * dims.n_layers as f64 * (8.0 * h + 3.0 * f);
    let act_bytes = act_elems * dims.activation_bits_effective(scheme) / 8.0;
    OperatorCost {
        ops,
        bytes: weight_bytes + act_bytes,
        precision: scheme.compute_precision(),
    }
}

/// Decode self-attention over a cached context: bytes are dominated by KV
/// reads; compute always runs on the FP16 units (dequantize-on-load).
pub fn attention_cost(
    batch: usize,
    context: usize,
    dims: &ModelDims,
    scheme: QuantScheme,
) -> OperatorCost {
    let per_token_reads = batch as f64 * context as f64;
    let ops = 2.0
        * per_token_reads
        * (dims.n_heads * dims.head_dim) as f64
        * 2.0
        * dims.n_layers as f64;
    let bytes = per_token_reads * kv_bytes_per_token(dims, scheme);
    OperatorCost {
        ops,
        bytes,
        precision: ComputePrecision::Fp16,
    }
}

/// Elementwise passes per layer the "other" bucket accounts for (norms,
/// residuals, rotary, activation gating), counted as read+write traffic.
const ELEMENTWISE_PASSES: f64 = 8.0;

/// Everything outside dense and attention: output head plus elementwise ops.
pub fn other_cost(batch: usize, dims: &ModelDims, _scheme: QuantScheme) -> OperatorCost {
    let b = batch as f64;
    let h = dims.hidden_dim as f64;
    let v = dims.vocab_size as f64;
    let head_ops = 2.0 * b * h * v;
    let head_bytes = h * v * 2.0 + b * (h + v) * 2.0;
    let elem_elems = b * h * dims.n_layers as f64 * ELEMENTWISE_PASSES;
    OperatorCost {
        ops: head_ops + elem_elems,
        bytes: head_bytes + elem_elems * 2.0 * 2.0,
        precision: ComputePrecision::Fp16,
    }
}

/// Time fractions per operator class at one batch/context point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub dense: f64,
    pub attention: f64,
    pub other: f64,
}

pub fn breakdown(
    dims: &ModelDims,
    scheme: QuantScheme,
    hw: &HardwareProfile,
    batch: usize,
    context: usize,
    overhead_fraction: f64,
) -> Breakdown {
    let t_dense = roofline_time(&dense_cost(batch, dims, scheme), hw);
    let t_attn = roofline_time(&attention_cost(batch, context, dims, scheme), hw);
    let t_other = roofline_time(&other_cost(batch, dims, scheme), hw)
        + overhead_fraction * (t_dense + t_attn);
    let total = t_dense + t_attn + t_other;
    Breakdown {
        dense: t_dense / total,
        attention: t_attn / total,
        other: t_other / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roofline_limbs() {
        let hw = HardwareProfile::a100_like();
        // Compute-bound limb: one second of FP16 work.
        let c = OperatorCost {
            ops: 312e12,
            bytes: 1.0,
            precision: ComputePrecision::Fp16,
        };
        assert_eq!(roofline_time(&c, &hw), 1.0);
        // Memory-bound limb: one second of traffic.
        let m = OperatorCost {
            ops: 1.0,
            bytes: 2.039e12,
            precision: ComputePrecision::Fp16,
        };
        assert_eq!(roofline_time(&m, &hw), 1.0);
        // At the ridge point both limbs agree.
        let ridge_intensity = hw.peak_fp16 / hw.mem_bandwidth;
        let r = OperatorCost {
            ops: ridge_intensity * 1e9,
            bytes: 1e9,
            precision: ComputePrecision::Fp16,
        };
        let t = roofline_time(&r, &hw);
        assert!((t - r.ops / hw.peak_fp16).abs() <= t * 1e-12);
        assert!((t - r.bytes / hw.mem_bandwidth).abs() <= t * 1e-12);
    }

    #[test]
    fn roofline_monotone_in_peaks() {
        let mut hw = HardwareProfile::a100_like();
        let c = OperatorCost {
            ops: 1e15,
            bytes: 1e12,
            precision: ComputePrecision::Fp16,
        };
        let t0 = roofline_time(&c, &hw);
        hw.peak_fp16 *= 2.0;
        hw.peak_int8 *= 2.0;
        hw.peak_int4 *= 2.0;
        hw.mem_bandwidth *= 2.0;
        assert!(roofline_time(&c, &hw) <= t0);
    }

    #[test]
    fn weight_only_shares_ops_and_peak_with_fp16() {
        let dims = ModelDims::llama7b_like();
        let a = dense_cost(64, &dims, QuantScheme::Fp16);
        let b = dense_cost(64, &dims, QuantScheme::W4A16);
        assert_eq!(a.ops, b.ops);
        assert_eq!(a.precision, b.precision);
        assert!(b.bytes < a.bytes);
    }

    #[test]
    fn intensity_grows_with_batch() {
        let dims = ModelDims::llama7b_like();
        let small = dense_cost(1, &dims, QuantScheme::Fp16);
        let large = dense_cost(256, &dims, QuantScheme::Fp16);
        assert!(large.intensity() > small.intensity() * 50.0);
    }

    #[test]
    fn zero_context_attention_is_free() {
        let dims = ModelDims::llama7b_like();
        let hw = HardwareProfile::a100_like();
        let c = attention_cost(8, 0, &dims, QuantScheme::Fp16);
        assert_eq!(roofline_time(&c, &hw), 0.0);
    }

    #[test]
    fn halving_kv_bits_halves_kv_code_bytes() {
        let dims = ModelDims::llama7b_like();
        let b8 = kv_bytes_per_token(&dims, QuantScheme::W8A8);
        let b4 = kv_bytes_per_token(&dims, QuantScheme::W4A4);
        // Code payload halves exactly; the shared parameter overhead makes
        // the total slightly above half.
        let h = (dims.n_layers * dims.n_heads * dims.hidden_dim / dims.n_heads) as f64;
        let codes8 = h * 2.0;
        let codes4 = h;
        let params = b8 - codes8;
        assert_eq!(b4, codes4 + params);
        let speedup = b8 / b4;
        assert!(speedup > 1.8 && speedup <= 2.0, "kv byte ratio {speedup}");
    }

    #[test]
    fn attention_fraction_grows_with_context() {
        let dims = ModelDims::llama7b_like();
        let hw = HardwareProfile::a100_like();
        let mut prev = 0.0;
        for context in [64, 256, 1024, 4096] {
            let b = breakdown(&dims, QuantScheme::Fp16, &hw, 32, context, 0.005);
            assert!(b.attention > prev, "attention fraction must grow");
            prev = b.attention;
        }
    }

    #[test]
    fn fractions_sum_to_one() {
        let dims = ModelDims::llama7b_like();
        let hw = HardwareProfile::a100_like();
        let b = breakdown(&dims, QuantScheme::W4A4, &hw, 64, 1024, 0.005);
        assert!((b.dense + b.attention + b.other - 1.0).abs() < 1e-9);
    }
}
