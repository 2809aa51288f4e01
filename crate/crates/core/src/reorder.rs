//! Outlier-channel identification and reordering.
//!
//! Calibration scores each channel by its square sum over all calibration
//! rows and moves the top-k channels to the tail of the matrix, so the
//! mixed-precision split becomes a contiguous slice. Weights are reordered
//! once offline along their input-channel axis; activations are reordered on
//! the fly and quantized in the same pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qgemm::{MixedQuantActivation, OutlierBlock, OutlierMode};
use crate::quantizer::{quantize_matrix, GroupAxis, GroupScheme};
use crate::scalar::Scalar;
use crate::tensors::Matrix;

/// Channel permutation placing outliers last. `permutation[j]` is the source
/// channel for destination position `j`; the final `outlier_count` entries
/// are the selected outlier channels in ascending original index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderPlan {
    pub hidden_dim: usize,
    pub outlier_count: usize,
    pub permutation: Vec<usize>,
}

pub const DEFAULT_OUTLIER_COUNT: usize = 128;

impl ReorderPlan {
    pub fn identity(hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            outlier_count: 0,
            permutation: (0..hidden_dim).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.permutation.len() != self.hidden_dim {
            return Err(Error::Shape(format!(
                "permutation length {} != hidden dim {}",
                self.permutation.len(),
                self.hidden_dim
            )));
        }
        if self.outlier_count > self.hidden_dim {
            return Err(Error::Shape(format!(
                "outlier count {} exceeds hidden dim {}",
                self.outlier_count, self.hidden_dim
            )));
        }
        let mut seen = vec![false; self.hidden_dim];
        for &p in &self.permutation {
            if p >= self.hidden_dim || seen[p] {
                return Err(Error::Shape("permutation is not a bijection".into()));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Source channels mapped to the outlier tail.
    pub fn outlier_channels(&self) -> &[usize] {
        &self.permutation[self.hidden_dim - self.outlier_count..]
    }

    pub fn normal_count(&self) -> usize {
        self.hidden_dim - self.outlier_count
    }

    pub fn inverse(&self) -> ReorderPlan {
        let mut inv = vec![0usize; self.hidden_dim];
        for (dst, &src) in self.permutation.iter().enumerate() {
            inv[src] = dst;
        }
        ReorderPlan {
            hidden_dim: self.hidden_dim,
            outlier_count: 0,
            permutation: inv,
        }
    }
}

/// Score channels by pooled square sum and build the reorder plan.
///
/// Non-outlier channels keep their relative order; outliers are sorted by
/// ascending original index. Ties in score resolve to the lower index.
pub fn calibrate_outliers<T: Scalar>(
    activations: &[Matrix<T>],
    outlier_count: usize,
) -> Result<ReorderPlan> {
    if activations.is_empty() {
        return Err(Error::Argument("no calibration activations".into()));
    }
    let hidden_dim = activations[0].cols();
    for m in activations {
        if m.cols() != hidden_dim {
            return Err(Error::Shape(format!(
                "calibration channel counts differ: {} vs {}",
                m.cols(),
                hidden_dim
            )));
        }
    }
    if outlier_count > hidden_dim {
        return Err(Error::Shape(format!(
            "outlier count {outlier_count} exceeds hidden dim {hidden_dim}"
        )));
    }

    let mut scores = vec![0.0f64; hidden_dim];
    for m in activations {
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                let x = v.widen();
                scores[c] += x * x;
            }
        }
    }

    let mut order: Vec<usize> = (0..hidden_dim).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut is_outlier = vec![false; hidden_dim];
    for &c in order.iter().take(outlier_count) {
        is_outlier[c] = true;
    }

    let mut permutation: Vec<usize> = (0..hidden_dim).filter(|&c| !is_outlier[c]).collect();
    permutation.extend((0..hidden_dim).filter(|&c| is_outlier[c]));
    Ok(ReorderPlan {
        hidden_dim,
        outlier_count,
        permutation,
    })
}

/// Column `j` of the output is column `permutation[j]` of the input.
pub fn reorder_activation_cols<T: Scalar>(m: &Matrix<T>, plan: &ReorderPlan) -> Result<Matrix<T>> {
    if m.cols() != plan.hidden_dim {
        return Err(Error::Shape(format!(
            "activation has {} channels, plan expects {}",
            m.cols(),
            plan.hidden_dim
        )));
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let src = m.row(r);
        let dst = out.row_mut(r);
        for (j, &p) in plan.permutation.iter().enumerate() {
            dst[j] = src[p];
        }
    }
    Ok(out)
}

/// Row `j` of the output is row `permutation[j]` of the input.
pub fn reorder_weight_rows<T: Scalar>(w: &Matrix<T>, plan: &ReorderPlan) -> Result<Matrix<T>> {
    if w.rows() != plan.hidden_dim {
        return Err(Error::Shape(format!(
            "weight has {} input channels, plan expects {}",
            w.rows(),
            plan.hidden_dim
        )));
    }
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for (j, &p) in plan.permutation.iter().enumerate() {
        out.row_mut(j).copy_from_slice(w.row(p));
    }
    Ok(out)
}

/// Group scheme for the outlier block: group size is `min(g, k)`.
pub fn outlier_scheme(scheme: GroupScheme, outlier_count: usize) -> GroupScheme {
    match scheme.granularity {
        crate::quantizer::Granularity::PerGroup => {
            GroupScheme::per_group(scheme.group_size.min(outlier_count))
        }
        _ => scheme,
    }
}

/// Reorder `m`'s channels and quantize both blocks in one pass, computing
/// dynamic parameters from `m` itself. The normal block is symmetric at
/// `normal_bits` under `scheme`; the outlier tail follows `outlier_mode`.
pub fn fused_reorder_quantize<T: Scalar>(
    m: &Matrix<T>,
    plan: &ReorderPlan,
    normal_bits: u8,
    outlier_mode: OutlierMode,
    scheme: GroupScheme,
    clip: T,
) -> Result<MixedQuantActivation<T>> {
    let reordered = reorder_activation_cols(m, plan)?;
    let k = plan.outlier_count;
    let normal_cols = plan.normal_count();
    let normal_m = reordered.slice_cols(0, normal_cols);
    let normal = quantize_matrix(&normal_m, scheme, GroupAxis::Rows, normal_bits, clip, true)?;

    let outlier = if k == 0 {
        OutlierBlock::Empty
    } else {
        let outlier_m = reordered.slice_cols(normal_cols, k);
        match outlier_mode {
            OutlierMode::None => {
                return Err(Error::Shape(
                    "plan selects outliers but outlier mode is none".into(),
                ))
            }
            OutlierMode::Fp => OutlierBlock::Fp(outlier_m),
            OutlierMode::Int(bits) => OutlierBlock::Int(quantize_matrix(
                &outlier_m,
                outlier_scheme(scheme, k),
                GroupAxis::Rows,
                bits,
                clip,
                true,
            )?),
        }
    };

    Ok(MixedQuantActivation { normal, outlier })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::quantization_mse;

    #[test]
    fn square_sum_scoring_picks_largest_channel() {
        let m = Matrix::<f32>::from_vec(1, 3, vec![1.0, 10.0, 1.0]).unwrap();
        let plan = calibrate_outliers(&[m], 1).unwrap();
        assert_eq!(plan.permutation, vec![0, 2, 1]);
        assert_eq!(plan.outlier_channels(), &[1]);
    }

    #[test]
    fn zero_outliers_gives_identity() {
        let m = Matrix::<f32>::from_vec(2, 4, vec![1.0; 8]).unwrap();
        let plan = calibrate_outliers(&[m], 0).unwrap();
        assert_eq!(plan, ReorderPlan::identity(4));
    }

    #[test]
    fn ties_select_lower_index() {
        let m = Matrix::<f32>::from_vec(1, 3, vec![2.0, 2.0, 1.0]).unwrap();
        let plan = calibrate_outliers(&[m], 1).unwrap();
        assert_eq!(plan.outlier_channels(), &[0]);
        assert_eq!(plan.permutation, vec![1, 2, 0]);
    }

    #[test]
    fn mismatched_channel_counts_rejected() {
        let a = Matrix::<f32>::zeros(1, 3);
        let b = Matrix::<f32>::zeros(1, 4);
        assert!(matches!(
            calibrate_outliers(&[a, b], 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn column_reorder_by_definition() {
        let m = Matrix::<f32>::from_vec(1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        let plan = ReorderPlan {
            hidden_dim: 3,
            outlier_count: 1,
            permutation: vec![0, 2, 1],
        };
        let r = reorder_activation_cols(&m, &plan).unwrap();
        assert_eq!(r.data(), &[10.0, 30.0, 20.0]);

        let identity = ReorderPlan::identity(3);
        assert_eq!(reorder_activation_cols(&m, &identity).unwrap(), m);

        let back = reorder_activation_cols(&r, &plan.inverse()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn row_reorder_and_inverse() {
        let w = Matrix::<f32>::from_fn(4, 2, |r, c| (r * 2 + c) as f32);
        let plan = ReorderPlan {
            hidden_dim: 4,
            outlier_count: 2,
            permutation: vec![1, 3, 0, 2],
        };
        let rw = reorder_weight_rows(&w, &plan).unwrap();
        assert_eq!(rw.row(0), w.row(1));
        assert_eq!(rw.row(3), w.row(2));
        let back = reorder_weight_rows(&rw, &plan.inverse()).unwrap();
        assert_eq!(back, w);
        assert_eq!(reorder_weight_rows(&w, &ReorderPlan::identity(4)).unwrap(), w);
    }

    #[test]
    fn fused_with_no_outliers_matches_plain_quantization() {
        let m = Matrix::<f32>::from_fn(2, 8, |r, c| ((r * 8 + c) as f32).sin());
        let plan = ReorderPlan::identity(8);
        let mixed = fused_reorder_quantize(
            &m,
            &plan,
            4,
            OutlierMode::Int(8),
            GroupScheme::per_group(4),
            1.0,
        )
        .unwrap();
        assert!(matches!(mixed.outlier, OutlierBlock::Empty));
        let plain =
            quantize_matrix(&m, GroupScheme::per_group(4), GroupAxis::Rows, 4, 1.0, true).unwrap();
        assert_eq!(mixed.normal.codes, plain.codes);
        assert_eq!(mixed.normal.params, plain.params);
    }

    #[test]
    fn mixed_precision_beats_uniform_low_bit_on_outlier_channel() {
        // One huge channel; quantizing it at 8-bit separately must lower the
        // normal-block error versus uniform 4-bit over everything.
        let m = Matrix::<f32>::from_fn(4, 8, |r, c| {
            let base = ((r * 8 + c) as f32 * 0.7).sin();
            if c == 3 {
                base * 100.0
            } else {
                base
            }
        });
        let plan = calibrate_outliers(&[m.clone()], 1).unwrap();
        assert_eq!(plan.outlier_channels(), &[3]);

        let scheme = GroupScheme::per_token();
        let uniform_mse = quantization_mse(&m, scheme, GroupAxis::Rows, 4, 1.0, true).unwrap();

        let reordered = reorder_activation_cols(&m, &plan).unwrap();
        let normal = reordered.slice_cols(0, 7);
        let normal_mse = quantization_mse(&normal, scheme, GroupAxis::Rows, 4, 1.0, true).unwrap();
        assert!(
            normal_mse < uniform_mse,
            "normal-block mse {normal_mse} should beat uniform {uniform_mse}"
        );
    }

    #[test]
    fn group_counts_after_split() {
        let m = Matrix::<f32>::from_fn(1, 256, |_, c| (c as f32 * 0.1).cos());
        let plan = calibrate_outliers(&[m.clone()], 128).unwrap();
        let mixed = fused_reorder_quantize(
            &m,
            &plan,
            4,
            OutlierMode::Int(8),
            GroupScheme::per_group(128),
            1.0,
        )
        .unwrap();
        assert_eq!(mixed.normal.params.len(), 1);
        match &mixed.outlier {
            OutlierBlock::Int(t) => assert_eq!(t.params.len(), 1),
            other => panic!("expected int outlier block, got {other:?}"),
        }
    }
}
