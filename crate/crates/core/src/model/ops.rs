//! Elementwise blocks of the transformer: RMSNorm, rotary embedding, SiLU
//! gating, and the tied-head logit projection. All row reductions accumulate
//! in f64, so results do not depend on batching.

use crate::error::Result;
use crate::tensors::Matrix;

pub const RMSNORM_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10000.0;

/// Per-row RMS normalization with per-channel gains.
pub fn rmsnorm_rows(x: &Matrix<f32>, gains: &[f32]) -> Matrix<f32> {
    debug_assert_eq!(x.cols(), gains.len());
    let h = x.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let ss: f64 = row.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let inv = 1.0 / (ss / h + RMSNORM_EPS).sqrt();
        let dst = out.row_mut(r);
        for (c, v) in row.iter().enumerate() {
            dst[c] = ((*v as f64) * inv * gains[c] as f64) as f32;
        }
    }
    out
}

fn rope_apply(row: &mut [f32], n_heads: usize, head_dim: usize, pos: usize, sign: f64) {
    debug_assert_eq!(row.len(), n_heads * head_dim);
    let half = head_dim / 2;
    for h in 0..n_heads {
        let base = h * head_dim;
        for j in 0..half {
            let theta = ROPE_BASE.powf(-2.0 * j as f64 / head_dim as f64);
            let angle = sign * pos as f64 * theta;
            let (sin, cos) = angle.sin_cos();
            let a = row[base + 2 * j] as f64;
            let b = row[base + 2 * j + 1] as f64;
            row[base + 2 * j] = (a * cos - b * sin) as f32;
            row[base + 2 * j + 1] = (a * sin + b * cos) as f32;
        }
    }
}

/// Rotate adjacent pairs of each head's slice by the position-dependent
/// angle; applied to query and key rows before caching.
pub fn rope_rotate_row(row: &mut [f32], n_heads: usize, head_dim: usize, pos: usize) {
    rope_apply(row, n_heads, head_dim, pos, 1.0);
}

/// Inverse rotation; the adjoint of [`rope_rotate_row`].
pub fn rope_rotate_row_inverse(row: &mut [f32], n_heads: usize, head_dim: usize, pos: usize) {
    rope_apply(row, n_heads, head_dim, pos, -1.0);
}

pub fn silu(x: f32) -> f32 {
    let xf = x as f64;
    (xf / (1.0 + (-xf).exp())) as f32
}

/// `silu(gate) * up` columnwise, where `gu` holds gate and up halves.
pub fn silu_gate(gu: &Matrix<f32>) -> Matrix<f32> {
    let ffn = gu.cols() / 2;
    let mut out = Matrix::zeros(gu.rows(), ffn);
    for r in 0..gu.rows() {
        let row = gu.row(r);
        let dst = out.row_mut(r);
        for c in 0..ffn {
            dst[c] = silu(row[c]) * row[ffn + c];
        }
    }
    out
}

pub fn add_assign(x: &mut Matrix<f32>, y: &Matrix<f32>) {
    debug_assert_eq!(x.shape(), y.shape());
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += *b;
    }
}

/// Embedding lookup; rows of `embedding` are token vectors.
pub fn embed(embedding: &Matrix<f32>, tokens: &[u32]) -> Result<Matrix<f32>> {
    let mut out = Matrix::zeros(tokens.len(), embedding.cols());
    for (r, &t) in tokens.iter().enumerate() {
        if t as usize >= embedding.rows() {
            return Err(crate::error::Error::Argument(format!(
                "token {t} outside vocab of {}",
                embedding.rows()
            )));
        }
        out.row_mut(r).copy_from_slice(embedding.row(t as usize));
    }
    Ok(out)
}

/// Tied output head: `logits[t, v] = x_t . embedding_v`.
pub fn head_logits(x: &Matrix<f32>, embedding: &Matrix<f32>) -> Matrix<f32> {
    debug_assert_eq!(x.cols(), embedding.cols());
    let mut out = Matrix::zeros(x.rows(), embedding.rows());
    for t in 0..x.rows() {
        let row = x.row(t);
        for v in 0..embedding.rows() {
            let emb = embedding.row(v);
            let mut acc = 0.0f64;
            for (a, b) in row.iter().zip(emb) {
                acc += (*a as f64) * (*b as f64);
            }
            out.set(t, v, acc as f32);
        }
    }
    out
}

/// Row softmax in f64.
pub fn softmax_row_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut w: Vec<f64> = logits.iter().map(|l| ((*l as f64) - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// log(sum(exp(row))) in f64.
pub fn log_sum_exp(logits: &[f32]) -> f64 {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|l| ((*l as f64) - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsnorm_unit_rows() {
        let x = Matrix::from_vec(1, 4, vec![3.0, -3.0, 3.0, -3.0]).unwrap();
        let out = rmsnorm_rows(&x, &[1.0; 4]);
        for v in out.data() {
            assert!((v.abs() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rope_preserves_norm_and_position_zero() {
        let mut row = vec![0.3f32, -0.7, 1.1, 0.2];
        let orig = row.clone();
        rope_rotate_row(&mut row, 1, 4, 0);
        assert_eq!(row, orig);
        rope_rotate_row(&mut row, 1, 4, 5);
        let n0: f32 = orig.iter().map(|v| v * v).sum();
        let n1: f32 = row.iter().map(|v| v * v).sum();
        assert!((n0 - n1).abs() < 1e-5);
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax_row_f64(&[0.1, -2.0, 3.5, 0.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
