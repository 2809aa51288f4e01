//! Quantized model bundle: FP twin, reorder plans, quantized weights, KV
//! config, and metadata, serialized as a directory of JSON and tensor files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::toy::{FpLayer, FpModel, LinearPos, ModelForward, QuantLayer, LINEAR_POSITIONS};
use crate::qgemm::{LayerWeights, MixedQuantWeight, OutlierBlock, QuantizedLinearLayer};
use crate::quantizer::{GroupAxis, GroupScheme, Precision, QuantParams, QuantizedTensor};
use crate::reorder::ReorderPlan;
use crate::tensors::{self, Matrix};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub calibration_hash: String,
    pub capture_mode: String,
    pub clip_mode: String,
    pub use_gptq: bool,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub fp: FpModel,
    pub layers: Vec<QuantLayer>,
    pub metadata: BundleMetadata,
}

impl ModelForward for ModelBundle {
    type Layer = QuantLayer;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embedding(&self) -> &Matrix<f32> {
        &self.fp.embedding
    }

    fn final_norm(&self) -> &[f32] {
        &self.fp.final_norm
    }

    fn forward_layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    fn kv_precision(&self) -> Precision {
        self.config.bits.kv
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigJson {
    config: ModelConfig,
    metadata: BundleMetadata,
}

#[derive(Serialize, Deserialize)]
struct BlockJson {
    params: Vec<QuantParams<f32>>,
    scheme: GroupScheme,
    axis: GroupAxis,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
enum OutlierJson {
    Empty,
    Int { block: BlockJson },
    Fp,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
enum WeightJson {
    Bypass,
    Quantized {
        normal: BlockJson,
        outlier: OutlierJson,
    },
}

#[derive(Serialize, Deserialize)]
struct LinearJson {
    scheme: GroupScheme,
    clip: f32,
    activation_bits: Precision,
    outlier_bits: u8,
    weight: WeightJson,
}

fn vec_to_row(v: &[f32]) -> Matrix<f32> {
    Matrix::from_vec(1, v.len(), v.to_vec()).unwrap()
}

fn row_to_vec(m: Matrix<f32>) -> Vec<f32> {
    m.data().to_vec()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'d> Deserialize<'d>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn save_linear(dir: &Path, linear: &QuantizedLinearLayer<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("plan.json"), &linear.plan)?;
    let weight = match &linear.weight {
        LayerWeights::Bypass(m) => {
            tensors::save_matrix(dir.join("normal.tnsr"), m)?;
            WeightJson::Bypass
        }
        LayerWeights::Quantized(w) => {
            tensors::save_packed(dir.join("normal.tnsr"), &w.normal.codes)?;
            let outlier = match &w.outlier {
                OutlierBlock::Empty => OutlierJson::Empty,
                OutlierBlock::Int(t) => {
                    tensors::save_packed(dir.join("outlier.tnsr"), &t.codes)?;
                    OutlierJson::Int {
                        block: BlockJson {
                            params: t.params.clone(),
                            scheme: t.scheme,
                            axis: t.axis,
                        },
                    }
                }
                OutlierBlock::Fp(m) => {
                    tensors::save_matrix(dir.join("outlier.tnsr"), m)?;
                    OutlierJson::Fp
                }
            };
            WeightJson::Quantized {
                normal: BlockJson {
                    params: w.normal.params.clone(),
                    scheme: w.normal.scheme,
                    axis: w.normal.axis,
                },
                outlier,
            }
        }
    };
    write_json(
        &dir.join("linear.json"),
        &LinearJson {
            scheme: linear.scheme,
            clip: linear.clip,
            activation_bits: linear.activation_bits,
            outlier_bits: linear.outlier_bits,
            weight,
        },
    )
}

fn load_linear(dir: &Path) -> Result<QuantizedLinearLayer<f32>> {
    let plan: ReorderPlan = read_json(&dir.join("plan.json"))?;
    plan.validate()?;
    let json: LinearJson = read_json(&dir.join("linear.json"))?;
    let weight = match json.weight {
        WeightJson::Bypass => LayerWeights::Bypass(tensors::load_matrix(dir.join("normal.tnsr"))?),
        WeightJson::Quantized { normal, outlier } => {
            let codes = tensors::load_packed(dir.join("normal.tnsr"))?;
            let normal_block = QuantizedTensor {
                codes,
                params: normal.params,
                scheme: normal.scheme,
                axis: normal.axis,
            };
            let outlier_block = match outlier {
                OutlierJson::Empty => OutlierBlock::Empty,
                OutlierJson::Int { block } => OutlierBlock::Int(QuantizedTensor {
                    codes: tensors::load_packed(dir.join("outlier.tnsr"))?,
                    params: block.params,
                    scheme: block.scheme,
                    axis: block.axis,
                }),
                OutlierJson::Fp => {
                    OutlierBlock::Fp(tensors::load_matrix(dir.join("outlier.tnsr"))?)
                }
            };
            LayerWeights::Quantized(MixedQuantWeight {
                normal: normal_block,
                outlier: outlier_block,
            })
        }
    };
    Ok(QuantizedLinearLayer {
        plan,
        weight,
        scheme: json.scheme,
        clip: json.clip,
        activation_bits: json.activation_bits,
        outlier_bits: json.outlier_bits,
    })
}

impl ModelBundle {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(
            &dir.join("config.json"),
            &ConfigJson {
                config: self.config.clone(),
                metadata: self.metadata.clone(),
            },
        )?;

        let fp_dir = dir.join("fp");
        fs::create_dir_all(&fp_dir)?;
        tensors::save_matrix(fp_dir.join("embedding.tnsr"), &self.fp.embedding)?;
        tensors::save_matrix(fp_dir.join("final_norm.tnsr"), &vec_to_row(&self.fp.final_norm))?;
        for (i, layer) in self.fp.layers.iter().enumerate() {
            let ld = fp_dir.join(format!("layer{i}"));
            fs::create_dir_all(&ld)?;
            tensors::save_matrix(ld.join("norm_attn.tnsr"), &vec_to_row(&layer.norm_attn))?;
            tensors::save_matrix(ld.join("norm_mlp.tnsr"), &vec_to_row(&layer.norm_mlp))?;
            for pos in LINEAR_POSITIONS {
                tensors::save_matrix(ld.join(format!("{}.tnsr", pos.name())), layer.weight(pos))?;
            }
        }

        for (i, layer) in self.layers.iter().enumerate() {
            let ld = dir.join("quant").join(format!("layer{i}"));
            for pos in LINEAR_POSITIONS {
                save_linear(&ld.join(pos.name()), layer.linear(pos))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ConfigJson { config, metadata } = read_json(&dir.join("config.json"))?;
        config.validate()?;

        let fp_dir = dir.join("fp");
        let embedding = tensors::load_matrix(fp_dir.join("embedding.tnsr"))?;
        let final_norm = row_to_vec(tensors::load_matrix(fp_dir.join("final_norm.tnsr"))?);
        let mut fp_layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let ld = fp_dir.join(format!("layer{i}"));
            fp_layers.push(FpLayer {
                norm_attn: row_to_vec(tensors::load_matrix(ld.join("norm_attn.tnsr"))?),
                norm_mlp: row_to_vec(tensors::load_matrix(ld.join("norm_mlp.tnsr"))?),
                qkv: tensors::load_matrix(ld.join("qkv.tnsr"))?,
                o: tensors::load_matrix(ld.join("o.tnsr"))?,
                gate_up: tensors::load_matrix(ld.join("gate_up.tnsr"))?,
                down: tensors::load_matrix(ld.join("down.tnsr"))?,
            });
        }
        let fp = FpModel {
            config: config.clone(),
            embedding,
            final_norm,
            layers: fp_layers,
        };

        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let ld = dir.join("quant").join(format!("layer{i}"));
            let load_pos = |pos: LinearPos| -> Result<QuantizedLinearLayer<f32>> {
                load_linear(&ld.join(pos.name()))
            };
            layers.push(QuantLayer {
                norm_attn: fp.layers[i].norm_attn.clone(),
                norm_mlp: fp.layers[i].norm_mlp.clone(),
                qkv: load_pos(LinearPos::Qkv)?,
                o: load_pos(LinearPos::O)?,
                gate_up: load_pos(LinearPos::GateUp)?,
                down: load_pos(LinearPos::Down)?,
            });
        }

        Ok(ModelBundle {
            config,
            fp,
            layers,
            metadata,
        })
    }
}

/// Either input the CLI accepts as a model source.
pub fn resolve_model_source(path: &Path) -> Result<(FpModel, Option<ModelBundle>)> {
    if path.is_dir() {
        let bundle = ModelBundle::load(path)?;
        Ok((bundle.fp.clone(), Some(bundle)))
    } else if path.is_file() {
        let config: ModelConfig = read_json(&PathBuf::from(path))?;
        let fp = crate::model::toy::build_toy_model(&config)?;
        Ok((fp, None))
    } else {
        Err(Error::Argument(format!(
            "model source {} is neither a bundle directory nor a config file",
            path.display()
        )))
    }
}
