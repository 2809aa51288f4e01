//! Error-compensated weight quantization against a calibration Hessian.
//!
//! Weights are processed one input channel at a time in ascending order; the
//! rounding error of each channel propagates into the not-yet-quantized
//! channels through the upper Cholesky factor of the inverse Hessian. Group
//! scales are frozen from the current (already compensated) values when each
//! group is first entered. With a diagonal Hessian the compensation vanishes
//! and the result is code-identical to round-to-nearest.

use crate::error::{Error, Result};
use crate::qgemm::{MixedQuantWeight, OutlierBlock, OutlierMode};
use crate::quantizer::{
    dequantize_value, quantize_value, symmetric_params, GroupAxis, GroupScheme, Granularity,
    QuantParams, QuantizedTensor,
};
use crate::reorder::{outlier_scheme, ReorderPlan};
use crate::scalar::Scalar;
use crate::tensors::{Matrix, PackedIntTensor};

pub const DEFAULT_DAMPING: f64 = 0.01;

/// Damped second-moment matrix of calibration activations.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationHessian<T = f32> {
    dim: usize,
    matrix: Matrix<T>,
    damping: f64,
}

impl<T: Scalar> CalibrationHessian<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    /// Permute rows and columns so the Hessian matches reordered weights.
    pub fn reordered(&self, plan: &ReorderPlan) -> Result<Self> {
        if plan.hidden_dim != self.dim {
            return Err(Error::Shape(format!(
                "plan dim {} != hessian dim {}",
                plan.hidden_dim, self.dim
            )));
        }
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.set(i, j, self.matrix.get(plan.permutation[i], plan.permutation[j]));
            }
        }
        Ok(Self {
            dim: self.dim,
            matrix: m,
            damping: self.damping,
        })
    }
}

/// `H = sum_t x_t x_t^T` over all calibration rows, plus `lambda * mean(diag)`
/// on the diagonal, added once at the end.
pub fn accumulate_hessian<T: Scalar>(
    activations: &[Matrix<T>],
    lambda: f64,
) -> Result<CalibrationHessian<T>> {
    if activations.is_empty() || activations.iter().all(|m| m.rows() == 0) {
        return Err(Error::Argument("no calibration tokens".into()));
    }
    let dim = activations[0].cols();
    for m in activations {
        if m.cols() != dim {
            return Err(Error::Shape(format!(
                "activation dims differ: {} vs {}",
                m.cols(),
                dim
            )));
        }
    }

    let mut h = vec![0.0f64; dim * dim];
    for m in activations {
        for r in 0..m.rows() {
            let row = m.row(r);
            for i in 0..dim {
                let xi = row[i].widen();
                for j in i..dim {
                    h[i * dim + j] += xi * row[j].widen();
                }
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            h[i * dim + j] = h[j * dim + i];
        }
    }

    let mean_diag = (0..dim).map(|i| h[i * dim + i]).sum::<f64>() / dim as f64;
    let damp = lambda * mean_diag;
    for i in 0..dim {
        h[i * dim + i] += damp;
    }

    let matrix = Matrix::from_vec(dim, dim, h.iter().map(|&v| T::narrow(v)).collect())?;
    Ok(CalibrationHessian {
        dim,
        matrix,
        damping: damp,
    })
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
fn cholesky_lower<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m.get(i, j);
            for k in 0..j {
                sum = sum - l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= T::zero() {
                    return Err(Error::Numerical(
                        "Cholesky failed: matrix not positive-definite; increase damping".into(),
                    ));
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        inv.set(col, col, T::one() / l.get(col, col));
        for i in col + 1..n {
            let mut sum = T::zero();
            for k in col..i {
                sum = sum + l.get(i, k) * inv.get(k, col);
            }
            inv.set(i, col, -sum / l.get(i, i));
        }
    }
    inv
}

/// Upper Cholesky factor `U` of the inverse Hessian (`H^-1 = U^T U`); the
/// compensation coefficients of the column-wise sweep.
fn inverse_cholesky_upper<T: Scalar>(h: &Matrix<T>) -> Result<Matrix<T>> {
    let l = cholesky_lower(h)?;
    let linv = invert_lower(&l);
    let n = h.rows();
    // H^-1 = L^-T L^-1.
    let mut hinv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut sum = T::zero();
            for k in i.max(j)..n {
                sum = sum + linv.get(k, i) * linv.get(k, j);
            }
            hinv.set(i, j, sum);
        }
    }
    let g = cholesky_lower(&hinv)?;
    let mut u = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            u.set(j, i, g.get(i, j));
        }
    }
    Ok(u)
}

struct SweepBlock {
    start: usize,
    end: usize,
    bits: u8,
    spans: Vec<(usize, usize)>,
}

/// Shared sweep: quantize rows of `w` in ascending order, propagating error
/// into later rows. Blocks carry their own bit width and group spans; a block
/// with `bits == 0` stays in floating point (no rounding, no error).
fn sweep<T: Scalar>(
    w: &Matrix<T>,
    h: &CalibrationHessian<T>,
    blocks: &[SweepBlock],
    clip: T,
    per_tensor: bool,
) -> Result<(Matrix<T>, Vec<Vec<i32>>, Vec<Vec<QuantParams<T>>>)> {
    let (rows, cols) = w.shape();
    if rows != h.dim {
        return Err(Error::Shape(format!(
            "weight input dim {} != hessian dim {}",
            rows, h.dim
        )));
    }
    let u = inverse_cholesky_upper(&h.matrix)?;

    let mut work = w.clone();
    let mut codes: Vec<Vec<i32>> = blocks.iter().map(|_| Vec::new()).collect();
    let mut params: Vec<Vec<QuantParams<T>>> = blocks.iter().map(|_| Vec::new()).collect();

    for (bi, block) in blocks.iter().enumerate() {
        if block.bits == 0 {
            continue;
        }
        let block_rows = block.end - block.start;
        codes[bi] = vec![0i32; block_rows * cols];
        if per_tensor {
            // One parameter set over the whole block, frozen at block entry.
            let snapshot: Vec<T> = (block.start..block.end)
                .flat_map(|r| work.row(r).to_vec())
                .collect();
            params[bi].push(symmetric_params(&snapshot, block.bits, clip)?);
        } else {
            params[bi] = vec![
                QuantParams {
                    scale: T::one(),
                    zero_point: 0,
                    bit_width: block.bits,
                    symmetric: true,
                };
                cols * block.spans.len()
            ];
        }

        for local in 0..block_rows {
            let k = block.start + local;
            // Freeze group scales from current values at group entry.
            if !per_tensor {
                if let Some(gi) = block.spans.iter().position(|(s, _)| *s == local) {
                    let (start, width) = block.spans[gi];
                    for n in 0..cols {
                        let vals: Vec<T> = (start..start + width)
                            .map(|r| work.get(block.start + r, n))
                            .collect();
                        params[bi][n * block.spans.len() + gi] =
                            symmetric_params(&vals, block.bits, clip)?;
                    }
                }
            }

            let gi = block
                .spans
                .iter()
                .position(|(s, wd)| *s <= local && local < s + wd)
                .unwrap();
            let d = u.get(k, k);
            for n in 0..cols {
                let p = if per_tensor {
                    params[bi][0]
                } else {
                    params[bi][n * block.spans.len() + gi]
                };
                let v = work.get(k, n);
                let q = quantize_value(v, &p);
                codes[bi][local * cols + n] = q;
                let vq = dequantize_value(q, &p);
                let err = (v - vq) / d;
                for j in k + 1..rows {
                    let upd = work.get(j, n) - err * u.get(k, j);
                    work.set(j, n, upd);
                }
                work.set(k, n, vq);
            }
        }
    }
    Ok((work, codes, params))
}

fn scheme_spans(scheme: GroupScheme, len: usize) -> Result<Vec<(usize, usize)>> {
    match scheme.granularity {
        Granularity::PerTensor => Ok(vec![(0, len)]),
        _ => scheme.group_spans(len),
    }
}

/// Quantize a weight matrix (input channels on rows) column-group-wise with
/// Hessian error compensation. The result has the same layout as
/// `quantize_matrix(w, scheme, GroupAxis::Cols, ...)`.
pub fn gptq_quantize_weight<T: Scalar>(
    w: &Matrix<T>,
    h: &CalibrationHessian<T>,
    scheme: GroupScheme,
    bits: u8,
    clip: T,
) -> Result<QuantizedTensor<T>> {
    let (rows, cols) = w.shape();
    let per_tensor = scheme.granularity == Granularity::PerTensor;
    let blocks = vec![SweepBlock {
        start: 0,
        end: rows,
        bits,
        spans: scheme_spans(scheme, rows)?,
    }];
    let (_, mut codes, mut params) = sweep(w, h, &blocks, clip, per_tensor)?;
    Ok(QuantizedTensor {
        codes: PackedIntTensor::pack(rows, cols, &codes.remove(0), bits, true)?,
        params: params.remove(0),
        scheme,
        axis: GroupAxis::Cols,
    })
}

/// Mixed-precision variant for the reordered split: rows `[0, split)` at
/// `normal_bits`, the outlier tail per `outlier_mode`. Error from the normal
/// block propagates into the tail; a floating-point tail absorbs it exactly.
pub fn gptq_quantize_weight_mixed<T: Scalar>(
    w: &Matrix<T>,
    h: &CalibrationHessian<T>,
    scheme: GroupScheme,
    normal_bits: u8,
    outlier_mode: OutlierMode,
    split: usize,
    clip: T,
) -> Result<MixedQuantWeight<T>> {
    let (rows, cols) = w.shape();
    if split > rows {
        return Err(Error::Shape(format!(
            "split {split} exceeds weight rows {rows}"
        )));
    }
    let k = rows - split;
    let per_tensor = scheme.granularity == Granularity::PerTensor;

    let mut blocks = vec![SweepBlock {
        start: 0,
        end: split,
        bits: normal_bits,
        spans: scheme_spans(scheme, split)?,
    }];
    let tail_bits = match (k, outlier_mode) {
        (0, _) => None,
        (_, OutlierMode::None) => {
            return Err(Error::Shape(
                "nonzero outlier rows but outlier mode is none".into(),
            ))
        }
        (_, OutlierMode::Fp) => Some(0),
        (_, OutlierMode::Int(b)) => Some(b),
    };
    if let Some(bits) = tail_bits {
        blocks.push(SweepBlock {
            start: split,
            end: rows,
            bits,
            spans: scheme_spans(outlier_scheme(scheme, k), k)?,
        });
    }

    let (work, mut codes, mut params) = sweep(w, h, &blocks, clip, per_tensor)?;

    let normal = QuantizedTensor {
        codes: PackedIntTensor::pack(split, cols, &codes.remove(0), normal_bits, true)?,
        params: params.remove(0),
        scheme,
        axis: GroupAxis::Cols,
    };
    let outlier = match tail_bits {
        None => OutlierBlock::Empty,
        Some(0) => OutlierBlock::Fp(work.slice_rows(split, k)),
        Some(bits) => OutlierBlock::Int(QuantizedTensor {
            codes: PackedIntTensor::pack(k, cols, &codes.remove(0), bits, true)?,
            params: params.remove(0),
            scheme: outlier_scheme(scheme, k),
            axis: GroupAxis::Cols,
        }),
    };
    Ok(MixedQuantWeight { normal, outlier })
}

/// Calibration proxy loss `|XW - XW_hat|_F^2` expressed through the raw
/// (undamped) second-moment matrix: `trace(D^T H D)` with `D = W - W_hat`.
pub fn proxy_loss<T: Scalar>(w: &Matrix<T>, w_hat: &Matrix<T>, h_raw: &Matrix<T>) -> f64 {
    let (rows, cols) = w.shape();
    let mut loss = 0.0f64;
    for n in 0..cols {
        for i in 0..rows {
            let di = w.get(i, n).widen() - w_hat.get(i, n).widen();
            if di == 0.0 {
                continue;
            }
            for j in 0..rows {
                let dj = w.get(j, n).widen() - w_hat.get(j, n).widen();
                loss += di * h_raw.get(i, j).widen() * dj;
            }
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::quantize_matrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_token_outer_product_plus_damping() {
        let x = Matrix::<f32>::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let h = accumulate_hessian(&[x], 0.01).unwrap();
        // mean diag of [[1,0],[0,0]] is 0.5, damping 0.005.
        assert!((h.matrix().get(0, 0) - 1.005).abs() < 1e-7);
        assert!((h.matrix().get(1, 1) - 0.005).abs() < 1e-7);
        assert_eq!(h.matrix().get(0, 1), 0.0);
    }

    #[test]
    fn identical_tokens_scale_linearly() {
        let x = Matrix::<f32>::from_vec(1, 2, vec![0.5, -1.0]).unwrap();
        let x3 = Matrix::from_vec(
            3,
            2,
            vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0],
        )
        .unwrap();
        let h1 = accumulate_hessian(&[x], 0.0).unwrap();
        let h3 = accumulate_hessian(&[x3], 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((h3.matrix().get(i, j) - 3.0 * h1.matrix().get(i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_tokens_rejected() {
        assert!(accumulate_hessian::<f32>(&[], 0.01).is_err());
        let empty = Matrix::<f32>::zeros(0, 4);
        assert!(accumulate_hessian(&[empty], 0.01).is_err());
    }

    #[test]
    fn diagonal_hessian_reduces_to_rtn() {
        let mut rng = StdRng::seed_from_u64(31);
        // Diagonal Hessian: one distinct activation per channel position.
        let dim = 8;
        let acts: Vec<Matrix<f32>> = (0..dim)
            .map(|i| {
                Matrix::from_fn(1, dim, |_, c| if c == i { 1.0 + i as f32 * 0.25 } else { 0.0 })
            })
            .collect();
        let h = accumulate_hessian(&acts, 0.01).unwrap();
        let w = Matrix::<f32>::from_fn(dim, 3, |_, _| rng.gen_range(-1.0f32..1.0));

        let scheme = GroupScheme::per_group(4);
        let gptq = gptq_quantize_weight(&w, &h, scheme, 4, 1.0).unwrap();
        let rtn = quantize_matrix(&w, scheme, GroupAxis::Cols, 4, 1.0, true).unwrap();
        assert_eq!(gptq.codes, rtn.codes);
        assert_eq!(gptq.params, rtn.params);
    }

    #[test]
    fn correlated_toy_beats_rtn() {
        // Calibration rows whose second moment is [[1, 0.9], [0.9, 1.0]].
        let x = Matrix::<f32>::from_vec(
            2,
            2,
            vec![1.0, 0.9, 0.0, (1.0f32 - 0.81).sqrt()],
        )
        .unwrap();
        let h_raw = accumulate_hessian(&[x.clone()], 0.0).unwrap();
        let h = accumulate_hessian(&[x], 0.01).unwrap();

        let w = Matrix::<f32>::from_vec(2, 2, vec![0.37, -1.21, 0.83, 0.44]).unwrap();
        let scheme = GroupScheme::per_channel();
        let gptq = gptq_quantize_weight(&w, &h, scheme, 3, 1.0).unwrap();
        let rtn = quantize_matrix(&w, scheme, GroupAxis::Cols, 3, 1.0, true).unwrap();

        let loss_gptq = proxy_loss(&w, &gptq.dequantize(), h_raw.matrix());
        let loss_rtn = proxy_loss(&w, &rtn.dequantize(), h_raw.matrix());
        assert!(
            loss_gptq < loss_rtn,
            "gptq loss {loss_gptq} should beat rtn {loss_rtn}"
        );
    }

    #[test]
    fn cholesky_failure_reports_damping_hint() {
        let m = Matrix::<f32>::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let h = CalibrationHessian {
            dim: 2,
            matrix: m,
            damping: 0.0,
        };
        let w = Matrix::<f32>::zeros(2, 1);
        let err = gptq_quantize_weight(&w, &h, GroupScheme::per_channel(), 4, 1.0).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("damping")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reordered_hessian_permutes_both_axes() {
        let x = Matrix::<f32>::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let h = accumulate_hessian(&[x], 0.0).unwrap();
        let plan = ReorderPlan {
            hidden_dim: 3,
            outlier_count: 1,
            permutation: vec![0, 2, 1],
        };
        let hr = h.reordered(&plan).unwrap();
        assert_eq!(hr.matrix().get(1, 1), h.matrix().get(2, 2));
        assert_eq!(hr.matrix().get(0, 1), h.matrix().get(0, 2));
    }
}
