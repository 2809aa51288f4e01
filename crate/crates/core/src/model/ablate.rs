//! Cumulative ablation over the quantization techniques, in fixed row order:
//! round-to-nearest W4A4, outlier channels kept in FP, outliers at INT8,
//! group quantization, clipping, Hessian-compensated weights, quantized KV.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::eval::perplexity;
use crate::model::quantize::{quantize_model, QuantizeOptions};
use crate::model::toy::FpModel;
use crate::qgemm::OutlierMode;
use crate::quantizer::{ClipConfig, GroupScheme, Precision};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub perplexity: f64,
    /// Change versus the previous row (negative is an improvement).
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Give the model the channel structure real activations have: log-normal
/// per-channel scale spread plus a few channels boosted far above the rest.
///
/// The injection is function-preserving up to FP rounding: each boosted norm
/// gain (hidden axis) or up-projection column (FFN axis) is compensated by
/// the matching input rows of the following weight matrix, so the FP model
/// computes the same function while its quantized activations face genuine
/// outliers.
pub fn inject_channel_structure(
    model: &mut FpModel,
    outlier_channels: usize,
    outlier_gain: f32,
    scale_sigma: f64,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = model.config.hidden_dim;
    let ffn = model.config.ffn_dim;

    let mut hidden_mult = smooth_scale_profile(&mut rng, h, scale_sigma);
    for _ in 0..outlier_channels.min(h) {
        let c = rng.gen_range(0..h);
        hidden_mult[c] *= outlier_gain;
    }
    let mut ffn_mult = smooth_scale_profile(&mut rng, ffn, scale_sigma);
    for _ in 0..outlier_channels.min(ffn) {
        let c = rng.gen_range(0..ffn);
        ffn_mult[c] *= outlier_gain;
    }

    for layer in &mut model.layers {
        for c in 0..h {
            layer.norm_attn[c] *= hidden_mult[c];
            for v in layer.qkv.row_mut(c) {
                *v /= hidden_mult[c];
            }
            layer.norm_mlp[c] *= hidden_mult[c];
            for v in layer.gate_up.row_mut(c) {
                *v /= hidden_mult[c];
            }
        }
        // FFN axis: scale the up-projection output, compensate in down rows.
        for r in 0..layer.gate_up.rows() {
            let row = layer.gate_up.row_mut(r);
            for c in 0..ffn {
                row[ffn + c] *= ffn_mult[c];
            }
        }
        for c in 0..ffn {
            for v in layer.down.row_mut(c) {
                *v /= ffn_mult[c];
            }
        }
    }
}

/// Synthetic token stream with learnable bigram structure: the successor of
/// each token is an affine map of it, with occasional jitter.
pub fn synthetic_token_stream(vocab: usize, len: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(len);
    let mut cur = rng.gen_range(0..vocab as u32);
    for _ in 0..len {
        tokens.push(cur);
        let jitter = if rng.gen_bool(0.15) { 1 } else { 0 };
        cur = ((cur as usize * 7 + 11 + jitter) % vocab) as u32;
    }
    tokens
}

/// A trained, outlier-injected model plus matched calibration/eval streams.
pub struct AblationFixture {
    pub model: FpModel,
    pub calib: Vec<Vec<u32>>,
    pub eval: Vec<u32>,
}

pub fn build_ablation_fixture(
    config: &crate::model::config::ModelConfig,
    seed: u64,
    train_steps: usize,
) -> Result<AblationFixture> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut model = crate::model::toy::build_toy_model(&cfg)?;
    let train: Vec<Vec<u32>> = (0..8)
        .map(|i| synthetic_token_stream(cfg.vocab_size, 96, seed.wrapping_add(1 + i)))
        .collect();
    crate::model::train::train_fp_multi(&mut model, &train, train_steps, 0.015)?;
    inject_channel_structure(&mut model, 8, 30.0, 0.8, seed.wrapping_add(2));

    let calib = (0..6)
        .map(|i| synthetic_token_stream(cfg.vocab_size, 16, seed.wrapping_add(10 + i)))
        .collect();
    let eval = synthetic_token_stream(cfg.vocab_size, 384, seed.wrapping_add(99));
    Ok(AblationFixture {
        model,
        calib,
        eval,
    })
}

/// Exponential of a normalized random walk: channel scales vary by orders
/// of magnitude but smoothly in channel index, so contiguous groups see
/// genuinely different ranges.
fn smooth_scale_profile(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> Vec<f32> {
    let step = Normal::new(0.0f64, 1.0).unwrap();
    let mut walk = Vec::with_capacity(len);
    let mut acc = 0.0f64;
    for _ in 0..len {
        acc += step.sample(rng);
        walk.push(acc);
    }
    let mean = walk.iter().sum::<f64>() / len as f64;
    let var = walk.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / len as f64;
    let std = var.sqrt().max(1e-9);
    walk.iter()
        .map(|w| (sigma * (w - mean) / std).exp() as f32)
        .collect()
}

struct Step {
    label: &'static str,
    config: ModelConfig,
    options: QuantizeOptions,
}

fn ablation_steps(base: &ModelConfig) -> Vec<Step> {
    let no_clip = ClipConfig {
        clip_activation: 1.0,
        clip_weight: 1.0,
    };
    let rtn = QuantizeOptions {
        outlier_mode: OutlierMode::None,
        use_gptq: false,
        ..QuantizeOptions::default()
    };

    let mut steps = Vec::new();

    let mut c = base.clone();
    c.outlier_count = 0;
    c.scheme = GroupScheme::per_token();
    c.clip = no_clip;
    c.bits.kv = Precision::Bypass;
    steps.push(Step {
        label: "w4a4-rtn",
        config: c.clone(),
        options: rtn,
    });

    c.outlier_count = base.outlier_count;
    steps.push(Step {
        label: "+fp-outliers",
        config: c.clone(),
        options: QuantizeOptions {
            outlier_mode: OutlierMode::Fp,
            ..rtn
        },
    });

    let int8 = QuantizeOptions {
        outlier_mode: OutlierMode::Int(8),
        ..rtn
    };
    steps.push(Step {
        label: "+int8-outliers",
        config: c.clone(),
        options: int8,
    });

    c.scheme = base.scheme;
    steps.push(Step {
        label: "+group",
        config: c.clone(),
        options: int8,
    });

    c.clip = base.clip;
    steps.push(Step {
        label: "+clipping",
        config: c.clone(),
        options: int8,
    });

    steps.push(Step {
        label: "+gptq",
        config: c.clone(),
        options: QuantizeOptions {
            use_gptq: true,
            ..int8
        },
    });

    c.bits.kv = base.bits.kv;
    steps.push(Step {
        label: "+kv-quant",
        config: c,
        options: QuantizeOptions {
            use_gptq: true,
            ..int8
        },
    });

    steps
}

/// Quantize the model once per technique step and report perplexities in
/// fixed order, starting from the FP baseline.
pub fn ablation_suite(
    fp: &FpModel,
    calib: &[Vec<u32>],
    eval_tokens: &[u32],
) -> Result<AblationReport> {
    let fp_ppl = perplexity(fp, eval_tokens)?;
    let mut rows = vec![AblationRow {
        label: "fp32-baseline".into(),
        perplexity: fp_ppl,
        delta: 0.0,
    }];

    let mut prev = fp_ppl;
    for step in ablation_steps(&fp.config) {
        let mut model = fp.clone();
        model.config = step.config.clone();
        let bundle = quantize_model(&model, calib, &step.options)?;
        let ppl = perplexity(&bundle, eval_tokens)?;
        rows.push(AblationRow {
            label: step.label.into(),
            perplexity: ppl,
            delta: ppl - prev,
        });
        prev = ppl;
    }

    Ok(AblationReport { rows })
}

pub const ABLATION_ROW_ORDER: [&str; 8] = [
    "fp32-baseline",
    "w4a4-rtn",
    "+fp-outliers",
    "+int8-outliers",
    "+group",
    "+clipping",
    "+gptq",
    "+kv-quant",
];
