//! Toy Llama-shaped transformer: FP twin, offline quantization pipeline,
//! quantized inference, perplexity evaluation, training, and the ablation
//! harness.

pub mod ablate;
pub mod bundle;
pub mod config;
pub mod eval;
pub mod ops;
pub mod quantize;
pub mod toy;
pub mod train;

pub use ablate::{
    ablation_suite, build_ablation_fixture, inject_channel_structure, synthetic_token_stream,
    AblationFixture, AblationReport, AblationRow,
};
pub use bundle::{resolve_model_source, BundleMetadata, ModelBundle};
pub use config::{ModelConfig, QuantBits};
pub use eval::{full_logits, mean_kl_divergence, perplexity, perplexity_from_logits};
pub use quantize::{
    position_schemes, quantize_model, quantize_with_artifacts, run_calibration,
    CalibrationArtifacts, CaptureMode, ClipMode, PositionCalibration, QuantizeOptions,
};
pub use toy::{
    build_toy_model, FpLayer, FpModel, LayerForward, LinearPos, ModelForward, QuantLayer,
    Session, LINEAR_POSITIONS,
};
pub use train::{train_fp, train_fp_multi, TrainReport};
