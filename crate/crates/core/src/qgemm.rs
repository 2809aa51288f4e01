//! Mixed-precision group GEMM reference and its floating-point oracle.
//!
//! The quantized path computes, per output element and per channel group, an
//! exact integer dot product, scales it by the pair of group scales, and
//! accumulates the scaled terms in FP32 in ascending channel order. The
//! outlier tail contributes the same way with its own codes and scales (or
//! exactly, when the outlier block is kept in floating point).

use crate::error::{Error, Result};
use crate::quantizer::{quantize_matrix, GroupAxis, GroupScheme, Precision, QuantizedTensor};
use crate::reorder::{fused_reorder_quantize, outlier_scheme, ReorderPlan};
use crate::scalar::Scalar;
use crate::tensors::Matrix;

/// How the outlier tail of a mixed tensor is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutlierMode {
    /// No outlier channels (k = 0).
    None,
    /// Outliers quantized at the given bit width (8 by default).
    Int(u8),
    /// Outliers kept in floating point.
    Fp,
}

pub const DEFAULT_OUTLIER_BITS: u8 = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum OutlierBlock<T = f32> {
    Empty,
    Int(QuantizedTensor<T>),
    Fp(Matrix<T>),
}

impl<T: Scalar> OutlierBlock<T> {
    fn rows(&self) -> usize {
        match self {
            OutlierBlock::Empty => 0,
            OutlierBlock::Int(t) => t.rows(),
            OutlierBlock::Fp(m) => m.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            OutlierBlock::Empty => 0,
            OutlierBlock::Int(t) => t.cols(),
            OutlierBlock::Fp(m) => m.cols(),
        }
    }
}

/// Activation after fused reorder + dynamic quantization: normal block at the
/// low bit width (per-token groups along each row), outlier tail separate.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedQuantActivation<T = f32> {
    pub normal: QuantizedTensor<T>,
    pub outlier: OutlierBlock<T>,
}

impl<T: Scalar> MixedQuantActivation<T> {
    pub fn hidden_dim(&self) -> usize {
        self.normal.cols() + self.outlier.cols()
    }

    pub fn rows(&self) -> usize {
        self.normal.rows()
    }
}

/// Statically quantized weight with the same channel split on the row
/// (input-channel) axis.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedQuantWeight<T = f32> {
    pub normal: QuantizedTensor<T>,
    pub outlier: OutlierBlock<T>,
}

impl<T: Scalar> MixedQuantWeight<T> {
    pub fn hidden_dim(&self) -> usize {
        self.normal.rows() + self.outlier.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.normal.cols()
    }
}

/// Round-to-nearest mixed weight: rows `[0, split)` at `normal_bits`, rows
/// `[split, ..)` per `outlier_mode`. `w` must already be reordered.
pub fn build_mixed_weight_rtn<T: Scalar>(
    w: &Matrix<T>,
    scheme: GroupScheme,
    normal_bits: u8,
    outlier_mode: OutlierMode,
    split: usize,
    clip: T,
) -> Result<MixedQuantWeight<T>> {
    if split > w.rows() {
        return Err(Error::Shape(format!(
            "split {} exceeds weight rows {}",
            split,
            w.rows()
        )));
    }
    let k = w.rows() - split;
    let normal_m = w.slice_rows(0, split);
    let normal = quantize_matrix(&normal_m, scheme, GroupAxis::Cols, normal_bits, clip, true)?;
    let outlier = if k == 0 {
        OutlierBlock::Empty
    } else {
        let tail = w.slice_rows(split, k);
        match outlier_mode {
            OutlierMode::None => {
                return Err(Error::Shape(
                    "nonzero outlier rows but outlier mode is none".into(),
                ))
            }
            OutlierMode::Fp => OutlierBlock::Fp(tail),
            OutlierMode::Int(bits) => OutlierBlock::Int(quantize_matrix(
                &tail,
                outlier_scheme(scheme, k),
                GroupAxis::Cols,
                bits,
                clip,
                true,
            )?),
        }
    };
    Ok(MixedQuantWeight { normal, outlier })
}

/// Plain triple-loop matmul oracle, k-inner, f64 accumulator, one rounding
/// per output element.
pub fn fp_oracle_gemm<T: Scalar>(a: &Matrix<T>, w: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "gemm inner dims differ: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), w.cols());
    for i in 0..a.rows() {
        let arow = a.row(i);
        for n in 0..w.cols() {
            let mut acc = 0.0f64;
            for (k, av) in arow.iter().enumerate() {
                acc += av.widen() * w.get(k, n).widen();
            }
            out.set(i, n, T::narrow(acc));
        }
    }
    Ok(out)
}

fn check_symmetric<T: Scalar>(t: &QuantizedTensor<T>, side: &str) -> Result<()> {
    if t.params.iter().any(|p| !p.symmetric) {
        return Err(Error::Argument(format!(
            "group_gemm requires symmetric {side} codes"
        )));
    }
    Ok(())
}

/// Fused mixed-precision group GEMM.
///
/// Requires identical channel splits and aligned group boundaries between
/// `a`'s columns and `w`'s rows. The inner per-group dot product is exact
/// integer arithmetic; the scaled group terms accumulate in FP32, groups in
/// ascending channel order, outlier region last.
pub fn group_gemm<T: Scalar>(
    a: &MixedQuantActivation<T>,
    w: &MixedQuantWeight<T>,
) -> Result<Matrix<T>> {
    if a.normal.cols() != w.normal.rows() || a.outlier.cols() != w.outlier.rows() {
        return Err(Error::Shape(format!(
            "channel splits differ: activation {}+{}, weight {}+{}",
            a.normal.cols(),
            a.outlier.cols(),
            w.normal.rows(),
            w.outlier.rows()
        )));
    }
    if a.normal.axis != GroupAxis::Rows || w.normal.axis != GroupAxis::Cols {
        return Err(Error::Shape(
            "activation groups must run along rows and weight groups along columns".into(),
        ));
    }
    let a_spans = a.normal.channel_spans();
    let w_spans = w.normal.channel_spans();
    if a_spans != w_spans {
        return Err(Error::Shape(format!(
            "misaligned group boundaries: activation {a_spans:?} vs weight {w_spans:?}"
        )));
    }
    check_symmetric(&a.normal, "activation")?;
    check_symmetric(&w.normal, "weight")?;

    let rows = a.rows();
    let cols = w.out_dim();
    let hidden = a.normal.cols();
    let a_codes = a.normal.codes.unpack();
    let w_codes = w.normal.codes.unpack();

    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for n in 0..cols {
            let mut acc = T::zero();
            for (g, (start, width)) in a_spans.iter().enumerate() {
                let mut isum: i64 = 0;
                for j in *start..start + width {
                    isum += i64::from(a_codes[i * hidden + j]) * i64::from(w_codes[j * cols + n]);
                }
                let sa = a.normal.group_params(i, g).scale;
                let sw = w.normal.group_params(n, g).scale;
                acc += sa * sw * T::from_i64(isum).unwrap();
            }
            out.set(i, n, acc);
        }
    }

    match (&a.outlier, &w.outlier) {
        (OutlierBlock::Empty, OutlierBlock::Empty) => {}
        (OutlierBlock::Int(at), OutlierBlock::Int(wt)) => {
            check_symmetric(at, "outlier activation")?;
            check_symmetric(wt, "outlier weight")?;
            let spans_a = at.channel_spans();
            if spans_a != wt.channel_spans() {
                return Err(Error::Shape("misaligned outlier group boundaries".into()));
            }
            let k = at.cols();
            let ac = at.codes.unpack();
            let wc = wt.codes.unpack();
            for i in 0..rows {
                for n in 0..cols {
                    let mut acc = out.get(i, n);
                    for (g, (start, width)) in spans_a.iter().enumerate() {
                        let mut isum: i64 = 0;
                        for j in *start..start + width {
                            isum += i64::from(ac[i * k + j]) * i64::from(wc[j * cols + n]);
                        }
                        let sa = at.group_params(i, g).scale;
                        let sw = wt.group_params(n, g).scale;
                        acc += sa * sw * T::from_i64(isum).unwrap();
                    }
                    out.set(i, n, acc);
                }
            }
        }
        (OutlierBlock::Fp(am), OutlierBlock::Fp(wm)) => {
            for i in 0..rows {
                let arow = am.row(i);
                for n in 0..cols {
                    let mut acc = out.get(i, n);
                    let mut partial = 0.0f64;
                    for (j, av) in arow.iter().enumerate() {
                        partial += av.widen() * wm.get(j, n).widen();
                    }
                    acc += T::narrow(partial);
                    out.set(i, n, acc);
                }
            }
        }
        _ => {
            return Err(Error::Shape(
                "activation and weight outlier blocks have different storage kinds".into(),
            ))
        }
    }

    Ok(out)
}

/// Weight storage for one linear operator.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights<T = f32> {
    /// Reordered FP weight; the layer multiplies exactly.
    Bypass(Matrix<T>),
    Quantized(MixedQuantWeight<T>),
}

/// One quantized linear operator: reorder plan, static weight, and the
/// dynamic-quantization settings applied to each incoming activation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLinearLayer<T = f32> {
    pub plan: ReorderPlan,
    pub weight: LayerWeights<T>,
    pub scheme: GroupScheme,
    pub clip: T,
    pub activation_bits: Precision,
    pub outlier_bits: u8,
}

impl<T: Scalar> QuantizedLinearLayer<T> {
    pub fn in_dim(&self) -> usize {
        self.plan.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        match &self.weight {
            LayerWeights::Bypass(m) => m.cols(),
            LayerWeights::Quantized(w) => w.out_dim(),
        }
    }

    fn activation_outlier_mode(&self) -> Result<OutlierMode> {
        match &self.weight {
            LayerWeights::Bypass(_) => Ok(OutlierMode::None),
            LayerWeights::Quantized(w) => match &w.outlier {
                OutlierBlock::Empty => Ok(OutlierMode::None),
                OutlierBlock::Int(_) => Ok(OutlierMode::Int(self.outlier_bits)),
                OutlierBlock::Fp(_) => Ok(OutlierMode::Fp),
            },
        }
    }
}

/// Fused reorder -> dynamic quantize -> group GEMM. Output is FP32-class.
pub fn quantized_linear<T: Scalar>(
    x: &Matrix<T>,
    layer: &QuantizedLinearLayer<T>,
) -> Result<Matrix<T>> {
    if x.cols() != layer.plan.hidden_dim {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {}",
            x.cols(),
            layer.plan.hidden_dim
        )));
    }
    match (&layer.activation_bits, &layer.weight) {
        (Precision::Bypass, LayerWeights::Bypass(wm)) => {
            let reordered = crate::reorder::reorder_activation_cols(x, &layer.plan)?;
            fp_oracle_gemm(&reordered, wm)
        }
        (Precision::Int(bits), LayerWeights::Quantized(w)) => {
            let mode = layer.activation_outlier_mode()?;
            let a = fused_reorder_quantize(x, &layer.plan, *bits, mode, layer.scheme, layer.clip)?;
            group_gemm(&a, w)
        }
        // Weight-only quantization: dequantize before the FP multiply.
        (Precision::Bypass, LayerWeights::Quantized(w)) => {
            let reordered = crate::reorder::reorder_activation_cols(x, &layer.plan)?;
            let w_norm = w.normal.dequantize();
            let w_full = match &w.outlier {
                OutlierBlock::Empty => w_norm,
                OutlierBlock::Int(t) => Matrix::vcat(&w_norm, &t.dequantize())?,
                OutlierBlock::Fp(m) => Matrix::vcat(&w_norm, m)?,
            };
            fp_oracle_gemm(&reordered, &w_full)
        }
        _ => Err(Error::Argument(
            "quantized activations require quantized weights".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::QuantParams;
    use crate::tensors::PackedIntTensor;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> Matrix<f32> {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
    }

    fn all_ones_quantized(rows: usize, cols: usize, axis: GroupAxis) -> QuantizedTensor<f32> {
        let codes = vec![1i32; rows * cols];
        let vectors = match axis {
            GroupAxis::Rows => rows,
            GroupAxis::Cols => cols,
        };
        QuantizedTensor {
            codes: PackedIntTensor::pack(rows, cols, &codes, 8, true).unwrap(),
            params: vec![
                QuantParams {
                    scale: 1.0,
                    zero_point: 0,
                    bit_width: 8,
                    symmetric: true
                };
                vectors
            ],
            scheme: GroupScheme::per_group(128),
            axis,
        }
    }

    #[test]
    fn unit_codes_count_channels() {
        let a = MixedQuantActivation {
            normal: all_ones_quantized(1, 128, GroupAxis::Rows),
            outlier: OutlierBlock::Empty,
        };
        let w = MixedQuantWeight {
            normal: all_ones_quantized(128, 1, GroupAxis::Cols),
            outlier: OutlierBlock::Empty,
        };
        let out = group_gemm(&a, &w).unwrap();
        assert_eq!(out.get(0, 0), 128.0);
    }

    #[test]
    fn oracle_identity_and_scalar() {
        let m = Matrix::<f32>::from_fn(3, 3, |r, c| (r * 3 + c) as f32);
        let id = Matrix::<f32>::identity(3);
        assert_eq!(fp_oracle_gemm(&id, &m).unwrap(), m);

        let a = Matrix::<f32>::from_vec(1, 1, vec![3.0]).unwrap();
        let b = Matrix::<f32>::from_vec(1, 1, vec![-2.0]).unwrap();
        assert_eq!(fp_oracle_gemm(&a, &b).unwrap().get(0, 0), -6.0);

        // (A*I)*B == A*B bit-exactly.
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 5, 2);
        let ai = fp_oracle_gemm(&a, &Matrix::identity(5)).unwrap();
        let left = fp_oracle_gemm(&ai, &b).unwrap();
        let right = fp_oracle_gemm(&a, &b).unwrap();
        assert_eq!(left, right);
    }

    #[test]
    fn oracle_shape_error() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(4, 2);
        assert!(matches!(fp_oracle_gemm(&a, &b), Err(Error::Shape(_))));
    }

    fn quantize_pair(
        x: &Matrix<f32>,
        w: &Matrix<f32>,
        g: usize,
        bits: u8,
        k: usize,
    ) -> (MixedQuantActivation<f32>, MixedQuantWeight<f32>) {
        let plan = crate::reorder::calibrate_outliers(&[x.clone()], k).unwrap();
        let scheme = GroupScheme::per_group(g);
        let a = fused_reorder_quantize(x, &plan, bits, OutlierMode::Int(8), scheme, 1.0).unwrap();
        let wr = crate::reorder::reorder_weight_rows(w, &plan).unwrap();
        let mw = build_mixed_weight_rtn(
            &wr,
            scheme,
            bits,
            if k == 0 {
                OutlierMode::None
            } else {
                OutlierMode::Int(8)
            },
            plan.normal_count(),
            1.0,
        )
        .unwrap();
        (a, mw)
    }

    fn dequantized_oracle(a: &MixedQuantActivation<f32>, w: &MixedQuantWeight<f32>) -> Matrix<f32> {
        let a_norm = a.normal.dequantize();
        let w_norm = w.normal.dequantize();
        let (a_full, w_full) = match (&a.outlier, &w.outlier) {
            (OutlierBlock::Empty, OutlierBlock::Empty) => (a_norm, w_norm),
            (OutlierBlock::Int(at), OutlierBlock::Int(wt)) => (
                Matrix::hcat(&a_norm, &at.dequantize()).unwrap(),
                Matrix::vcat(&w_norm, &wt.dequantize()).unwrap(),
            ),
            (OutlierBlock::Fp(am), OutlierBlock::Fp(wm)) => (
                Matrix::hcat(&a_norm, am).unwrap(),
                Matrix::vcat(&w_norm, wm).unwrap(),
            ),
            _ => panic!("mismatched outlier kinds"),
        };
        fp_oracle_gemm(&a_full, &w_full).unwrap()
    }

    #[test]
    fn matches_dequantize_then_matmul_no_outliers() {
        let mut rng = StdRng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 4, 256);
        let w = random_matrix(&mut rng, 256, 8);
        let (a, mw) = quantize_pair(&x, &w, 128, 8, 0);
        let fused = group_gemm(&a, &mw).unwrap();
        let oracle = dequantized_oracle(&a, &mw);
        let rel = Matrix::rel_frobenius_distance(&fused, &oracle);
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn matches_dequantize_then_matmul_with_outliers() {
        let mut rng = StdRng::seed_from_u64(13);
        let x = random_matrix(&mut rng, 3, 384);
        let w = random_matrix(&mut rng, 384, 5);
        let (a, mw) = quantize_pair(&x, &w, 128, 4, 128);
        let fused = group_gemm(&a, &mw).unwrap();
        let oracle = dequantized_oracle(&a, &mw);
        let rel = Matrix::rel_frobenius_distance(&fused, &oracle);
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn scale_bilinearity() {
        let mut rng = StdRng::seed_from_u64(17);
        let x = random_matrix(&mut rng, 2, 64);
        let w = random_matrix(&mut rng, 64, 3);
        let (mut a, mw) = quantize_pair(&x, &w, 32, 4, 0);
        let base = group_gemm(&a, &mw).unwrap();
        for p in &mut a.normal.params {
            p.scale *= 2.0;
        }
        let doubled = group_gemm(&a, &mw).unwrap();
        for (d, b) in doubled.data().iter().zip(base.data()) {
            assert_eq!(*d, b * 2.0);
        }
    }

    #[test]
    fn misaligned_groups_rejected() {
        let mut rng = StdRng::seed_from_u64(19);
        let x = random_matrix(&mut rng, 2, 64);
        let w = random_matrix(&mut rng, 64, 3);
        let plan = ReorderPlan::identity(64);
        let a = fused_reorder_quantize(
            &x,
            &plan,
            4,
            OutlierMode::None,
            GroupScheme::per_group(32),
            1.0,
        )
        .unwrap();
        let mw =
            build_mixed_weight_rtn(&w, GroupScheme::per_group(16), 4, OutlierMode::None, 64, 1.0)
                .unwrap();
        assert!(matches!(group_gemm(&a, &mw), Err(Error::Shape(_))));
    }

    #[test]
    fn bypass_linear_matches_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        let x = random_matrix(&mut rng, 3, 32);
        let w = random_matrix(&mut rng, 32, 6);
        let plan = crate::reorder::calibrate_outliers(&[x.clone()], 8).unwrap();
        let layer = QuantizedLinearLayer {
            plan: plan.clone(),
            weight: LayerWeights::Bypass(crate::reorder::reorder_weight_rows(&w, &plan).unwrap()),
            scheme: GroupScheme::per_group(8),
            clip: 1.0,
            activation_bits: Precision::Bypass,
            outlier_bits: 8,
        };
        let got = quantized_linear(&x, &layer).unwrap();
        let want = fp_oracle_gemm(&x, &w).unwrap();
        let rel = Matrix::rel_frobenius_distance(&got, &want);
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let w = Matrix::<f32>::from_fn(16, 4, |r, c| ((r + c) as f32).sin());
        let plan = ReorderPlan::identity(16);
        let mw = build_mixed_weight_rtn(&w, GroupScheme::per_group(8), 4, OutlierMode::None, 16, 1.0)
            .unwrap();
        let layer = QuantizedLinearLayer {
            plan,
            weight: LayerWeights::Quantized(mw),
            scheme: GroupScheme::per_group(8),
            clip: 1.0,
            activation_bits: Precision::Int(4),
            outlier_bits: 8,
        };
        let x = Matrix::<f32>::zeros(2, 16);
        let out = quantized_linear(&x, &layer).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }
}
