//! Minimal trainer for the FP toy model: hand-written backprop through the
//! full block (RMSNorm, fused QKV, rotary embedding, causal attention, gated
//! MLP, tied head) and an Adam loop. Used to overfit synthetic patterns for
//! evaluation sanity runs; not a general training framework.

use crate::error::{Error, Result};
use crate::model::ops;
use crate::model::toy::FpModel;
use crate::tensors::Matrix;

type Mat = Matrix<f32>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    crate::qgemm::fp_oracle_gemm(a, b).unwrap()
}

/// `a^T b` without materializing the transpose.
fn matmul_ta(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.cols(), b.cols());
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            let mut acc = 0.0f64;
            for k in 0..a.rows() {
                acc += a.get(k, i) as f64 * b.get(k, j) as f64;
            }
            out.set(i, j, acc as f32);
        }
    }
    out
}

/// `a b^T` without materializing the transpose.
fn matmul_tb(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let mut acc = 0.0f64;
            for k in 0..a.cols() {
                acc += a.get(i, k) as f64 * b.get(j, k) as f64;
            }
            out.set(i, j, acc as f32);
        }
    }
    out
}

fn head_slice(m: &Mat, head: usize, head_dim: usize) -> Mat {
    m.slice_cols(head * head_dim, head_dim)
}

struct LayerTape {
    x_in: Mat,
    inv_rms_a: Vec<f64>,
    a_in: Mat,
    q_rot: Mat,
    k_rot: Mat,
    v: Mat,
    /// Softmax probabilities per head, causal zeros above the diagonal.
    probs: Vec<Mat>,
    attn: Mat,
    x_mid: Mat,
    inv_rms_m: Vec<f64>,
    m_in: Mat,
    gu: Mat,
    act: Mat,
}

struct Tape {
    layers: Vec<LayerTape>,
    x_final: Mat,
    inv_rms_f: Vec<f64>,
    x_norm: Mat,
    logits: Mat,
}

fn rmsnorm_with_tape(x: &Mat, gains: &[f32]) -> (Mat, Vec<f64>) {
    let h = x.cols() as f64;
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut inv = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let ss: f64 = row.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let r_inv = 1.0 / (ss / h + ops::RMSNORM_EPS).sqrt();
        inv.push(r_inv);
        let dst = out.row_mut(r);
        for (c, v) in row.iter().enumerate() {
            dst[c] = ((*v as f64) * r_inv * gains[c] as f64) as f32;
        }
    }
    (out, inv)
}

/// dL/dx and dL/dgains for `y = gains * x * inv_rms(x)`.
fn rmsnorm_backward(
    x: &Mat,
    gains: &[f32],
    inv_rms: &[f64],
    dy: &Mat,
    dgains: &mut [f32],
) -> Mat {
    let h = x.cols() as f64;
    let mut dx = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let rv = inv_rms[r];
        let mut dot = 0.0f64;
        for c in 0..x.cols() {
            let d = dyr[c] as f64 * gains[c] as f64;
            dot += d * xr[c] as f64;
            dgains[c] += (dyr[c] as f64 * xr[c] as f64 * rv) as f32;
        }
        let coef = dot * rv * rv * rv / h;
        let dst = dx.row_mut(r);
        for c in 0..x.cols() {
            let d = dyr[c] as f64 * gains[c] as f64;
            dst[c] = (d * rv - xr[c] as f64 * coef) as f32;
        }
    }
    dx
}

fn forward_with_tape(model: &FpModel, tokens: &[u32]) -> Result<Tape> {
    let config = &model.config;
    let h = config.hidden_dim;
    let d = config.head_dim;
    let t_len = tokens.len();
    let scale = 1.0 / (d as f64).sqrt();

    let mut x = ops::embed(&model.embedding, tokens)?;
    let mut layers = Vec::with_capacity(config.n_layers);

    for layer in &model.layers {
        let x_in = x.clone();
        let (a_in, inv_rms_a) = rmsnorm_with_tape(&x_in, &layer.norm_attn);
        let qkv = matmul(&a_in, &layer.qkv);

        let mut q_pre = Mat::zeros(t_len, h);
        let mut k_pre = Mat::zeros(t_len, h);
        let mut v = Mat::zeros(t_len, h);
        for t in 0..t_len {
            let row = qkv.row(t);
            q_pre.row_mut(t).copy_from_slice(&row[0..h]);
            k_pre.row_mut(t).copy_from_slice(&row[h..2 * h]);
            v.row_mut(t).copy_from_slice(&row[2 * h..3 * h]);
        }
        let mut q_rot = q_pre.clone();
        let mut k_rot = k_pre.clone();
        for t in 0..t_len {
            ops::rope_rotate_row(q_rot.row_mut(t), config.n_heads, d, t);
            ops::rope_rotate_row(k_rot.row_mut(t), config.n_heads, d, t);
        }

        let mut probs = Vec::with_capacity(config.n_heads);
        let mut attn = Mat::zeros(t_len, h);
        for head in 0..config.n_heads {
            let qh = head_slice(&q_rot, head, d);
            let kh = head_slice(&k_rot, head, d);
            let vh = head_slice(&v, head, d);
            let mut p = Mat::zeros(t_len, t_len);
            for i in 0..t_len {
                let mut scores = vec![f64::NEG_INFINITY; t_len];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let mut dot = 0.0f64;
                    for c in 0..d {
                        dot += qh.get(i, c) as f64 * kh.get(j, c) as f64;
                    }
                    scores[j] = dot * scale;
                    max = max.max(scores[j]);
                }
                let mut sum = 0.0f64;
                for s in scores.iter().take(i + 1) {
                    sum += (s - max).exp();
                }
                for j in 0..=i {
                    p.set(i, j, ((scores[j] - max).exp() / sum) as f32);
                }
            }
            let out_h = matmul(&p, &vh);
            for t in 0..t_len {
                attn.row_mut(t)[head * d..(head + 1) * d].copy_from_slice(out_h.row(t));
            }
            probs.push(p);
        }

        let o_out = matmul(&attn, &layer.o);
        let mut x_mid = x_in.clone();
        ops::add_assign(&mut x_mid, &o_out);

        let (m_in, inv_rms_m) = rmsnorm_with_tape(&x_mid, &layer.norm_mlp);
        let gu = matmul(&m_in, &layer.gate_up);
        let act = ops::silu_gate(&gu);
        let d_out = matmul(&act, &layer.down);
        let mut x_next = x_mid.clone();
        ops::add_assign(&mut x_next, &d_out);

        layers.push(LayerTape {
            x_in,
            inv_rms_a,
            a_in,
            q_rot,
            k_rot,
            v,
            probs,
            attn,
            x_mid,
            inv_rms_m,
            m_in,
            gu,
            act,
        });
        x = x_next;
    }

    let x_final = x;
    let (x_norm, inv_rms_f) = rmsnorm_with_tape(&x_final, &model.final_norm);
    let logits = ops::head_logits(&x_norm, &model.embedding);
    Ok(Tape {
        layers,
        x_final,
        inv_rms_f,
        x_norm,
        logits,
    })
}

struct GradLayer {
    norm_attn: Vec<f32>,
    norm_mlp: Vec<f32>,
    qkv: Mat,
    o: Mat,
    gate_up: Mat,
    down: Mat,
}

struct Grads {
    embedding: Mat,
    final_norm: Vec<f32>,
    layers: Vec<GradLayer>,
}

impl Grads {
    fn zeros_like(model: &FpModel) -> Self {
        Self {
            embedding: Mat::zeros(model.embedding.rows(), model.embedding.cols()),
            final_norm: vec![0.0; model.final_norm.len()],
            layers: model
                .layers
                .iter()
                .map(|l| GradLayer {
                    norm_attn: vec![0.0; l.norm_attn.len()],
                    norm_mlp: vec![0.0; l.norm_mlp.len()],
                    qkv: Mat::zeros(l.qkv.rows(), l.qkv.cols()),
                    o: Mat::zeros(l.o.rows(), l.o.cols()),
                    gate_up: Mat::zeros(l.gate_up.rows(), l.gate_up.cols()),
                    down: Mat::zeros(l.down.rows(), l.down.cols()),
                })
                .collect(),
        }
    }
}

/// Mean next-token cross-entropy and its gradients.
fn loss_and_grads(model: &FpModel, tokens: &[u32]) -> Result<(f64, Grads)> {
    if tokens.len() < 2 {
        return Err(Error::Argument("training needs at least 2 tokens".into()));
    }
    let tape = forward_with_tape(model, tokens)?;
    let config = &model.config;
    let t_len = tokens.len();
    let count = (t_len - 1) as f64;
    let d = config.head_dim;
    let h = config.hidden_dim;
    let scale = 1.0 / (d as f64).sqrt();

    let mut loss = 0.0f64;
    let mut dlogits = Mat::zeros(t_len, config.vocab_size);
    for t in 0..t_len - 1 {
        let row = tape.logits.row(t);
        let target = tokens[t + 1] as usize;
        let probs = ops::softmax_row_f64(row);
        loss += ops::log_sum_exp(row) - row[target] as f64;
        let dst = dlogits.row_mut(t);
        for (v, p) in probs.iter().enumerate() {
            let indicator = if v == target { 1.0 } else { 0.0 };
            dst[v] = ((p - indicator) / count) as f32;
        }
    }
    loss /= count;

    let mut grads = Grads::zeros_like(model);

    // Head: logits = x_norm . E^T.
    let dx_norm = matmul(&dlogits, &model.embedding);
    let de_head = matmul_ta(&dlogits, &tape.x_norm);
    ops::add_assign(&mut grads.embedding, &de_head);

    let mut dx = rmsnorm_backward(
        &tape.x_final,
        &model.final_norm,
        &tape.inv_rms_f,
        &dx_norm,
        &mut grads.final_norm,
    );

    for (li, layer) in model.layers.iter().enumerate().rev() {
        let tape_l = &tape.layers[li];
        let gl = &mut grads.layers[li];

        // x_next = x_mid + act . W_down
        let dd_out = dx.clone();
        let mut dx_mid = dx;
        let dwdown = matmul_ta(&tape_l.act, &dd_out);
        ops::add_assign(&mut gl.down, &dwdown);
        let dact = matmul_tb(&dd_out, &layer.down);

        // act = silu(gate) * up
        let ffn = config.ffn_dim;
        let mut dgu = Mat::zeros(t_len, 2 * ffn);
        for t in 0..t_len {
            let gu_row = tape_l.gu.row(t);
            let dact_row = dact.row(t);
            let dst = dgu.row_mut(t);
            for c in 0..ffn {
                let g = gu_row[c] as f64;
                let u = gu_row[ffn + c] as f64;
                let da = dact_row[c] as f64;
                let sig = 1.0 / (1.0 + (-g).exp());
                let silu_g = g * sig;
                let dsilu = sig * (1.0 + g * (1.0 - sig));
                dst[c] = (da * u * dsilu) as f32;
                dst[ffn + c] = (da * silu_g) as f32;
            }
        }

        let dwgu = matmul_ta(&tape_l.m_in, &dgu);
        ops::add_assign(&mut gl.gate_up, &dwgu);
        let dm_in = matmul_tb(&dgu, &layer.gate_up);

        let dx_from_norm = rmsnorm_backward(
            &tape_l.x_mid,
            &layer.norm_mlp,
            &tape_l.inv_rms_m,
            &dm_in,
            &mut gl.norm_mlp,
        );
        ops::add_assign(&mut dx_mid, &dx_from_norm);

        // x_mid = x_in + attn . W_o
        let do_out = dx_mid.clone();
        let mut dx_in = dx_mid;
        let dwo = matmul_ta(&tape_l.attn, &do_out);
        ops::add_assign(&mut gl.o, &dwo);
        let dattn = matmul_tb(&do_out, &layer.o);

        // Attention backward per head.
        let mut dq_rot = Mat::zeros(t_len, h);
        let mut dk_rot = Mat::zeros(t_len, h);
        let mut dv = Mat::zeros(t_len, h);
        for head in 0..config.n_heads {
            let p = &tape_l.probs[head];
            let vh = head_slice(&tape_l.v, head, d);
            let qh = head_slice(&tape_l.q_rot, head, d);
            let kh = head_slice(&tape_l.k_rot, head, d);
            let dattn_h = head_slice(&dattn, head, d);

            let dvh = matmul_ta(p, &dattn_h);
            let dp = matmul_tb(&dattn_h, &vh);
            // Softmax jacobian: ds = p * (dp - rowsum(dp * p)).
            let mut ds = Mat::zeros(t_len, t_len);
            for i in 0..t_len {
                let mut dot = 0.0f64;
                for j in 0..=i {
                    dot += dp.get(i, j) as f64 * p.get(i, j) as f64;
                }
                for j in 0..=i {
                    let val = p.get(i, j) as f64 * (dp.get(i, j) as f64 - dot);
                    ds.set(i, j, (val * scale) as f32);
                }
            }
            let dqh = matmul(&ds, &kh);
            let dkh = matmul_ta(&ds, &qh);
            for t in 0..t_len {
                dq_rot.row_mut(t)[head * d..(head + 1) * d].copy_from_slice(dqh.row(t));
                dk_rot.row_mut(t)[head * d..(head + 1) * d].copy_from_slice(dkh.row(t));
                dv.row_mut(t)[head * d..(head + 1) * d].copy_from_slice(dvh.row(t));
            }
        }

        // RoPE adjoint.
        let mut dq_pre = dq_rot;
        let mut dk_pre = dk_rot;
        for t in 0..t_len {
            ops::rope_rotate_row_inverse(dq_pre.row_mut(t), config.n_heads, d, t);
            ops::rope_rotate_row_inverse(dk_pre.row_mut(t), config.n_heads, d, t);
        }

        let mut dqkv = Mat::zeros(t_len, 3 * h);
        for t in 0..t_len {
            let dst = dqkv.row_mut(t);
            dst[0..h].copy_from_slice(dq_pre.row(t));
            dst[h..2 * h].copy_from_slice(dk_pre.row(t));
            dst[2 * h..3 * h].copy_from_slice(dv.row(t));
        }

        let dwqkv = matmul_ta(&tape_l.a_in, &dqkv);
        ops::add_assign(&mut gl.qkv, &dwqkv);
        let da_in = matmul_tb(&dqkv, &layer.qkv);

        let dx_from_attn_norm = rmsnorm_backward(
            &tape_l.x_in,
            &layer.norm_attn,
            &tape_l.inv_rms_a,
            &da_in,
            &mut gl.norm_attn,
        );
        ops::add_assign(&mut dx_in, &dx_from_attn_norm);
        dx = dx_in;
    }

    // Tied embedding input path.
    for (t, &tok) in tokens.iter().enumerate() {
        let src = dx.row(t).to_vec();
        let dst = grads.embedding.row_mut(tok as usize);
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    Ok((loss, grads))
}

struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

fn param_views<'a>(model: &'a mut FpModel) -> Vec<&'a mut [f32]> {
    let mut views: Vec<&mut [f32]> = Vec::new();
    views.push(model.embedding.data_mut());
    views.push(model.final_norm.as_mut_slice());
    for layer in &mut model.layers {
        views.push(layer.norm_attn.as_mut_slice());
        views.push(layer.norm_mlp.as_mut_slice());
        views.push(layer.qkv.data_mut());
        views.push(layer.o.data_mut());
        views.push(layer.gate_up.data_mut());
        views.push(layer.down.data_mut());
    }
    views
}

fn grad_views<'a>(grads: &'a Grads) -> Vec<&'a [f32]> {
    let mut views: Vec<&[f32]> = Vec::new();
    views.push(grads.embedding.data());
    views.push(&grads.final_norm);
    for layer in &grads.layers {
        views.push(&layer.norm_attn);
        views.push(&layer.norm_mlp);
        views.push(layer.qkv.data());
        views.push(layer.o.data());
        views.push(layer.gate_up.data());
        views.push(layer.down.data());
    }
    views
}

#[derive(Clone, Copy, Debug)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Adam on mean next-token cross-entropy over `tokens`.
pub fn train_fp(model: &mut FpModel, tokens: &[u32], steps: usize, lr: f32) -> Result<TrainReport> {
    train_fp_multi(model, std::slice::from_ref(&tokens.to_vec()), steps, lr)
}

/// Adam cycling over several sequences, one per step; learning must fit all
/// of them, which favors the shared transition structure over memorizing any
/// single stream.
pub fn train_fp_multi(
    model: &mut FpModel,
    sequences: &[Vec<u32>],
    steps: usize,
    lr: f32,
) -> Result<TrainReport> {
    if sequences.is_empty() {
        return Err(Error::Argument("no training sequences".into()));
    }
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut state = AdamState {
        m: grad_views(&Grads::zeros_like(model))
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect(),
        v: grad_views(&Grads::zeros_like(model))
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect(),
        step: 0,
    };

    let mut initial_loss = None;
    let mut final_loss = 0.0;
    for step in 0..steps {
        let tokens = &sequences[step % sequences.len()];
        let (loss, grads) = loss_and_grads(model, tokens)?;
        initial_loss.get_or_insert(loss);
        final_loss = loss;
        state.step += 1;
        let bias1 = 1.0 - BETA1.powi(state.step as i32);
        let bias2 = 1.0 - BETA2.powi(state.step as i32);

        let gviews = grad_views(&grads);
        let pviews = param_views(model);
        for ((param, grad), (m, v)) in pviews
            .into_iter()
            .zip(gviews)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * g;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = (mi / bias1) / ((vi / bias2).sqrt() + EPS);
                param[i] -= (lr as f64 * update) as f32;
            }
        }
    }

    Ok(TrainReport {
        initial_loss: initial_loss.unwrap_or(0.0),
        final_loss,
        steps,
    })
}

/// Loss without touching the model, for tests.
pub fn eval_loss(model: &FpModel, tokens: &[u32]) -> Result<f64> {
    Ok(loss_and_grads(model, tokens)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::toy::build_toy_model;

    fn micro_config() -> ModelConfig {
        let mut c = ModelConfig::toy(5);
        c.n_layers = 1;
        c.hidden_dim = 8;
        c.n_heads = 2;
        c.head_dim = 4;
        c.ffn_dim = 8;
        c.vocab_size = 6;
        c.outlier_count = 0;
        c.scheme = crate::quantizer::GroupScheme::per_group(4);
        c
    }

    #[test]
    fn tape_forward_matches_session_forward() {
        let config = micro_config();
        let model = build_toy_model(&config).unwrap();
        let tokens = [1u32, 2, 3, 4, 0];
        let tape = forward_with_tape(&model, &tokens).unwrap();
        let session_logits = crate::model::eval::full_logits(&model, &tokens).unwrap();
        for t in 0..tokens.len() {
            for v in 0..config.vocab_size {
                let d = (tape.logits.get(t, v) - session_logits.get(t, v)).abs();
                assert!(d < 2e-4, "logit mismatch at ({t}, {v}): {d}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = micro_config();
        let mut model = build_toy_model(&config).unwrap();
        let tokens = [1u32, 2, 3, 4, 0, 5];
        let (_, grads) = loss_and_grads(&model, &tokens).unwrap();

        // Spot-check a spread of coordinates in every parameter family.
        let checks: Vec<(usize, usize)> = vec![
            (0, 3),   // embedding
            (1, 2),   // final norm
            (2, 1),   // norm_attn
            (3, 5),   // norm_mlp
            (4, 17),  // qkv
            (5, 9),   // o
            (6, 40),  // gate_up
            (7, 21),  // down
        ];
        let h = 1e-2f32;
        for (tensor_idx, elem) in checks {
            let analytic = grad_views(&grads)[tensor_idx][elem] as f64;
            let base = {
                let views = param_views(&mut model);
                views[tensor_idx][elem]
            };
            {
                let mut views = param_views(&mut model);
                views[tensor_idx][elem] = base + h;
            }
            let up = eval_loss(&model, &tokens).unwrap();
            {
                let mut views = param_views(&mut model);
                views[tensor_idx][elem] = base - h;
            }
            let down = eval_loss(&model, &tokens).unwrap();
            {
                let mut views = param_views(&mut model);
                views[tensor_idx][elem] = base;
            }
            let numeric = (up - down) / (2.0 * h as f64);
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            let rel = (analytic - numeric).abs() / denom;
            assert!(
                rel < 0.05,
                "tensor {tensor_idx} elem {elem}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn overfits_repeating_pattern() {
        let config = micro_config();
        let mut model = build_toy_model(&config).unwrap();
        // Period-three cycle: the next token is a function of the current one.
        let tokens: Vec<u32> = (0..24).map(|i| [1u32, 4, 2][i % 3]).collect();
        let report = train_fp(&mut model, &tokens, 200, 0.02).unwrap();
        assert!(
            report.final_loss < report.initial_loss,
            "training did not reduce loss: {report:?}"
        );
        let ppl = crate::model::eval::perplexity(&model, &tokens).unwrap();
        assert!(ppl < 1.5, "overfit perplexity {ppl} should approach 1");
    }
}
