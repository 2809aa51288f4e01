//! Offline model quantization: calibration capture, reorder plans, clip
//! factors, Hessian accumulation, and weight rounding, layer by layer.
//!
//! Layers quantize sequentially in depth order. In the default progressive
//! mode, the calibration activations for layer `i` come from a forward pass
//! whose first `i` layers are already quantized, so weight compensation sees
//! the same inputs inference will produce. `FpActivations` captures from the
//! unquantized twin instead (and is what precomputed calibration artifacts
//! provide).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gptq::{accumulate_hessian, gptq_quantize_weight_mixed, CalibrationHessian};
use crate::kvcache::{KvCacheConfig, QuantizedKvCache, DEFAULT_PAGE_SIZE};
use crate::model::bundle::{BundleMetadata, ModelBundle};
use crate::model::config::ModelConfig;
use crate::model::ops;
use crate::model::toy::{
    forward_layer, FpModel, LayerCapture, LinearPos, QuantLayer, LINEAR_POSITIONS,
};
use crate::qgemm::{
    build_mixed_weight_rtn, LayerWeights, OutlierMode, QuantizedLinearLayer,
    DEFAULT_OUTLIER_BITS,
};
use crate::quantizer::{
    default_clip_grid, grid_search_clip, Granularity, GroupAxis, GroupScheme, Precision,
};
use crate::reorder::{calibrate_outliers, reorder_weight_rows, ReorderPlan};
use crate::tensors::Matrix;
use crate::util::token_stream_hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureMode {
    /// Capture each layer's inputs from the partially quantized model.
    Progressive,
    /// Capture every layer's inputs from the FP twin.
    FpActivations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Use the configured clip factors as-is.
    Fixed,
    /// Grid-search activation and weight clip factors per position.
    GridSearch,
}

#[derive(Clone, Copy, Debug)]
pub struct QuantizeOptions {
    /// Storage for outlier channels when `outlier_count > 0`.
    pub outlier_mode: OutlierMode,
    /// Hessian-compensated weight rounding instead of plain round-to-nearest.
    pub use_gptq: bool,
    pub capture: CaptureMode,
    pub clip_mode: ClipMode,
    pub damping: f64,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self {
            outlier_mode: OutlierMode::Int(DEFAULT_OUTLIER_BITS),
            use_gptq: true,
            capture: CaptureMode::Progressive,
            clip_mode: ClipMode::Fixed,
            damping: crate::gptq::DEFAULT_DAMPING,
        }
    }
}

/// Activation scheme (groups along rows) and weight scheme (groups along
/// columns) implied by the configured granularity.
pub fn position_schemes(config: &ModelConfig) -> (GroupScheme, GroupScheme) {
    match config.scheme.granularity {
        Granularity::PerGroup => (config.scheme, config.scheme),
        _ => (GroupScheme::per_token(), GroupScheme::per_channel()),
    }
}

/// Calibration artifacts for one linear position.
#[derive(Clone, Debug)]
pub struct PositionCalibration {
    pub plan: ReorderPlan,
    pub hessian: Option<CalibrationHessian<f32>>,
    pub clip_activation: f32,
    pub clip_weight: f32,
}

/// Per-layer calibration artifacts in `LINEAR_POSITIONS` order.
#[derive(Clone, Debug)]
pub struct CalibrationArtifacts {
    pub layers: Vec<Vec<PositionCalibration>>,
    pub token_hash: String,
}

fn outlier_count_for(config: &ModelConfig, pos: LinearPos) -> usize {
    // The down projection reads the FFN axis; everything else reads hidden.
    let _ = pos;
    config.outlier_count
}

/// Run `calib` through the first `li` layers (quantized when a prefix is
/// given, FP otherwise), then record layer `li`'s linear inputs while it
/// executes in FP.
fn capture_layer_inputs(
    fp: &FpModel,
    quant_prefix: Option<&[QuantLayer]>,
    li: usize,
    calib: &[Vec<u32>],
) -> Result<LayerCapture> {
    let config = &fp.config;
    if let Some(prefix) = quant_prefix {
        if prefix.len() < li {
            return Err(Error::State(format!(
                "progressive capture needs {li} quantized layers, have {}",
                prefix.len()
            )));
        }
    }
    let prefix_precision = match quant_prefix {
        Some(_) => config.bits.kv,
        None => Precision::Bypass,
    };
    let mut capture = LayerCapture::default();
    for seq in calib {
        if seq.is_empty() {
            return Err(Error::Argument("empty calibration sequence".into()));
        }
        let mut prefix_cache = QuantizedKvCache::new(
            KvCacheConfig {
                n_layers: li.max(1),
                n_heads: config.n_heads,
                head_dim: config.head_dim,
                precision: prefix_precision,
                page_size: DEFAULT_PAGE_SIZE,
            },
            1,
        )?;
        let mut fp_cache = QuantizedKvCache::new(
            KvCacheConfig {
                n_layers: 1,
                n_heads: config.n_heads,
                head_dim: config.head_dim,
                precision: Precision::Bypass,
                page_size: DEFAULT_PAGE_SIZE,
            },
            1,
        )?;
        let mut x = ops::embed(&fp.embedding, seq)?;
        for l in 0..li {
            x = match quant_prefix {
                Some(prefix) => {
                    forward_layer(&prefix[l], config, &x, 0, &mut prefix_cache, l, 0, None)?
                }
                None => {
                    forward_layer(&fp.layers[l], config, &x, 0, &mut prefix_cache, l, 0, None)?
                }
            };
        }
        forward_layer(
            &fp.layers[li],
            config,
            &x,
            0,
            &mut fp_cache,
            0,
            0,
            Some(&mut capture),
        )?;
    }
    Ok(capture)
}

fn calibrate_position(
    config: &ModelConfig,
    options: &QuantizeOptions,
    pos: LinearPos,
    weight: &Matrix<f32>,
    activations: &[Matrix<f32>],
    act_bits: Option<u8>,
    weight_bits: Option<u8>,
) -> Result<PositionCalibration> {
    let k = outlier_count_for(config, pos);
    let plan = calibrate_outliers(activations, k)?;
    let (act_scheme, weight_scheme) = position_schemes(config);

    let mut clip_activation = config.clip.clip_activation;
    let mut clip_weight = config.clip.clip_weight;
    if options.clip_mode == ClipMode::GridSearch {
        let grid = default_clip_grid();
        if let Some(bits) = act_bits {
            // Search on the reordered normal block, the tensor the runtime
            // actually quantizes dynamically.
            let normal: Vec<Matrix<f32>> = activations
                .iter()
                .map(|m| {
                    crate::reorder::reorder_activation_cols(m, &plan)
                        .map(|r| r.slice_cols(0, plan.normal_count()))
                })
                .collect::<Result<_>>()?;
            clip_activation =
                grid_search_clip(&normal, bits, act_scheme, GroupAxis::Rows, true, &grid)?;
        }
        if let Some(bits) = weight_bits {
            let normal = reorder_weight_rows(weight, &plan)?.slice_rows(0, plan.normal_count());
            clip_weight =
                grid_search_clip(&[normal], bits, weight_scheme, GroupAxis::Cols, true, &grid)?;
        }
    }

    let hessian = if options.use_gptq && weight_bits.is_some() {
        Some(accumulate_hessian(activations, options.damping)?)
    } else {
        None
    };

    Ok(PositionCalibration {
        plan,
        hessian,
        clip_activation,
        clip_weight,
    })
}

/// Build one quantized linear operator from its calibration artifacts.
pub fn build_linear(
    config: &ModelConfig,
    options: &QuantizeOptions,
    calib: &PositionCalibration,
    weight: &Matrix<f32>,
) -> Result<QuantizedLinearLayer<f32>> {
    let (act_scheme, weight_scheme) = position_schemes(config);
    let plan = calib.plan.clone();
    let reordered = reorder_weight_rows(weight, &plan)?;
    let split = plan.normal_count();

    let outlier_mode = if plan.outlier_count == 0 {
        OutlierMode::None
    } else {
        options.outlier_mode
    };

    let weights = match config.bits.weight {
        Precision::Bypass => LayerWeights::Bypass(reordered),
        Precision::Int(bits) => {
            let mixed = if options.use_gptq {
                let hessian = calib
                    .hessian
                    .as_ref()
                    .ok_or_else(|| Error::State("missing calibration Hessian".into()))?
                    .reordered(&plan)?;
                gptq_quantize_weight_mixed(
                    &reordered,
                    &hessian,
                    weight_scheme,
                    bits,
                    outlier_mode,
                    split,
                    calib.clip_weight,
                )?
            } else {
                build_mixed_weight_rtn(
                    &reordered,
                    weight_scheme,
                    bits,
                    outlier_mode,
                    split,
                    calib.clip_weight,
                )?
            };
            LayerWeights::Quantized(mixed)
        }
    };

    Ok(QuantizedLinearLayer {
        plan,
        weight: weights,
        scheme: act_scheme,
        clip: calib.clip_activation,
        activation_bits: config.bits.activation,
        outlier_bits: match options.outlier_mode {
            OutlierMode::Int(b) => b,
            _ => DEFAULT_OUTLIER_BITS,
        },
    })
}

/// Quantize `fp` against a calibration token stream.
pub fn quantize_model(
    fp: &FpModel,
    calib: &[Vec<u32>],
    options: &QuantizeOptions,
) -> Result<ModelBundle> {
    let artifacts = run_calibration(fp, calib, options)?;
    quantize_with_artifacts(fp, &artifacts, options)
}

/// Capture activations and derive plans/Hessians/clips for every layer.
pub fn run_calibration(
    fp: &FpModel,
    calib: &[Vec<u32>],
    options: &QuantizeOptions,
) -> Result<CalibrationArtifacts> {
    fp.config.validate()?;
    if calib.is_empty() {
        return Err(Error::Argument("empty calibration stream".into()));
    }
    let act_bits = fp.config.bits.activation.bits();
    let weight_bits = fp.config.bits.weight.bits();

    let mut layers = Vec::with_capacity(fp.config.n_layers);
    let mut quant_prefix: Vec<QuantLayer> = Vec::new();
    for li in 0..fp.config.n_layers {
        let prefix = match options.capture {
            CaptureMode::Progressive => Some(quant_prefix.as_slice()),
            CaptureMode::FpActivations => None,
        };
        let capture = capture_layer_inputs(fp, prefix, li, calib)?;

        let mut positions = Vec::with_capacity(4);
        for pos in LINEAR_POSITIONS {
            positions.push(calibrate_position(
                &fp.config,
                options,
                pos,
                fp.layers[li].weight(pos),
                capture.at(pos),
                act_bits,
                weight_bits,
            )?);
        }

        // Progressive capture needs the quantized layer to run the next
        // layer's forward; build it now either way so both paths share code.
        if options.capture == CaptureMode::Progressive && li + 1 < fp.config.n_layers {
            let layer = build_quant_layer(fp, options, li, &positions)?;
            quant_prefix.push(layer);
        }
        layers.push(positions);
    }

    let all_tokens: Vec<u32> = calib.iter().flatten().copied().collect();
    Ok(CalibrationArtifacts {
        layers,
        token_hash: token_stream_hash(&all_tokens),
    })
}

fn build_quant_layer(
    fp: &FpModel,
    options: &QuantizeOptions,
    li: usize,
    positions: &[PositionCalibration],
) -> Result<QuantLayer> {
    let layer = &fp.layers[li];
    Ok(QuantLayer {
        norm_attn: layer.norm_attn.clone(),
        norm_mlp: layer.norm_mlp.clone(),
        qkv: build_linear(&fp.config, options, &positions[0], &layer.qkv)?,
        o: build_linear(&fp.config, options, &positions[1], &layer.o)?,
        gate_up: build_linear(&fp.config, options, &positions[2], &layer.gate_up)?,
        down: build_linear(&fp.config, options, &positions[3], &layer.down)?,
    })
}

/// Package a bundle from precomputed calibration artifacts.
pub fn quantize_with_artifacts(
    fp: &FpModel,
    artifacts: &CalibrationArtifacts,
    options: &QuantizeOptions,
) -> Result<ModelBundle> {
    if artifacts.layers.len() != fp.config.n_layers {
        return Err(Error::Shape(format!(
            "calibration covers {} layers, model has {}",
            artifacts.layers.len(),
            fp.config.n_layers
        )));
    }
    let mut layers = Vec::with_capacity(fp.config.n_layers);
    for li in 0..fp.config.n_layers {
        layers.push(build_quant_layer(fp, options, li, &artifacts.layers[li])?);
    }
    Ok(ModelBundle {
        config: fp.config.clone(),
        fp: fp.clone(),
        layers,
        metadata: BundleMetadata {
            calibration_hash: artifacts.token_hash.clone(),
            capture_mode: format!("{:?}", options.capture),
            clip_mode: format!("{:?}", options.clip_mode),
            use_gptq: options.use_gptq,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}
