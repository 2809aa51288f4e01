//! Perplexity and distribution-distance measurement.

use crate::error::{Error, Result};
use crate::model::ops::{log_sum_exp, softmax_row_f64};
use crate::model::toy::{ModelForward, Session};
use crate::tensors::Matrix;

/// Teacher-forced logits for every position of `tokens` (one full-sequence
/// prefill).
pub fn full_logits<M: ModelForward>(model: &M, tokens: &[u32]) -> Result<Matrix<f32>> {
    let mut session = Session::new(model)?;
    session.prefill(tokens)
}

/// `exp(mean nll)` of next-token predictions; position `t` predicts token
/// `t + 1`.
pub fn perplexity_from_logits(logits: &Matrix<f32>, tokens: &[u32]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::Argument(format!(
            "perplexity needs at least 2 tokens, got {}",
            tokens.len()
        )));
    }
    if logits.rows() < tokens.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} tokens",
            logits.rows(),
            tokens.len()
        )));
    }
    let mut nll = 0.0f64;
    let count = tokens.len() - 1;
    for t in 0..count {
        let row = logits.row(t);
        let target = tokens[t + 1] as usize;
        if target >= logits.cols() {
            return Err(Error::Argument(format!(
                "token {target} outside vocab of {}",
                logits.cols()
            )));
        }
        nll += log_sum_exp(row) - row[target] as f64;
    }
    Ok((nll / count as f64).exp())
}

pub fn perplexity<M: ModelForward>(model: &M, tokens: &[u32]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::Argument(format!(
            "perplexity needs at least 2 tokens, got {}",
            tokens.len()
        )));
    }
    let logits = full_logits(model, tokens)?;
    perplexity_from_logits(&logits, tokens)
}

/// Mean KL(p || q) between row-wise next-token distributions.
pub fn mean_kl_divergence(p_logits: &Matrix<f32>, q_logits: &Matrix<f32>) -> f64 {
    assert_eq!(p_logits.shape(), q_logits.shape());
    let mut total = 0.0f64;
    for r in 0..p_logits.rows() {
        let p = softmax_row_f64(p_logits.row(r));
        let lse_q = log_sum_exp(q_logits.row(r));
        let q_log: Vec<f64> = q_logits
            .row(r)
            .iter()
            .map(|l| *l as f64 - lse_q)
            .collect();
        for (i, pi) in p.iter().enumerate() {
            if *pi > 0.0 {
                total += pi * (pi.ln() - q_log[i]);
            }
        }
    }
    total / p_logits.rows() as f64
}
