//! Continuous-batching serving simulator over the analytic roofline costs.
//!
//! Requests are served FCFS. Each loop iteration is one model step: requests
//! still in prefill contribute their whole prompt to the dense rows and emit
//! their first token; decoding requests contribute one row each and read
//! their full context from the KV cache. Finished requests leave at the end
//! of the step and queued requests join whenever the batch cap and the
//! memory reservation (weights plus full prompt+decode KV) allow, so the
//! high-water mark can never exceed capacity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfsim::cost::{
    attention_cost, dense_cost, kv_bytes_per_token, other_cost, roofline_time,
    weight_footprint_bytes, Breakdown, ModelDims, OperatorCost, QuantScheme,
};
use crate::perfsim::profile::HardwareProfile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub arrival: f64,
    pub prompt_len: usize,
    pub decode_len: usize,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_len == 0 || self.decode_len == 0 {
            return Err(Error::Config("request lengths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthDist {
    Fixed { len: usize },
    LogNormal { median: f64, sigma: f64 },
}

impl LengthDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            LengthDist::Fixed { len } => (*len).max(1),
            LengthDist::LogNormal { median, sigma } => {
                let d = LogNormal::new(median.ln(), *sigma).unwrap();
                (d.sample(rng).round() as usize).max(1)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalPattern {
    /// Saturating workload: everything queued at t = 0.
    AllAtZero,
    /// Poisson arrivals at `rate` requests per second.
    Poisson { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub n_requests: usize,
    pub arrival: ArrivalPattern,
    pub prompt: LengthDist,
    pub decode: LengthDist,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            n_requests: 64,
            arrival: ArrivalPattern::AllAtZero,
            prompt: LengthDist::LogNormal {
                median: 128.0,
                sigma: 0.5,
            },
            decode: LengthDist::LogNormal {
                median: 256.0,
                sigma: 0.5,
            },
            seed: 0,
        }
    }
}

pub fn generate_trace(config: &TraceConfig) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clock = 0.0f64;
    (0..config.n_requests)
        .map(|_| {
            let arrival = match config.arrival {
                ArrivalPattern::AllAtZero => 0.0,
                ArrivalPattern::Poisson { rate } => {
                    clock += Exp::new(rate).unwrap().sample(&mut rng);
                    clock
                }
            };
            Request {
                arrival,
                prompt_len: config.prompt.sample(&mut rng),
                decode_len: config.decode.sample(&mut rng),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServingConfig {
    pub dims: ModelDims,
    pub scheme: QuantScheme,
    pub batch_cap: usize,
    /// Context length used by point queries (roofline/breakdown reports).
    pub context_len: usize,
    /// Fixed fraction of runtime modeling quantize/reorder/dequantize work.
    pub overhead_fraction: f64,
}

impl ServingConfig {
    pub fn new(dims: ModelDims, scheme: QuantScheme) -> Self {
        Self {
            dims,
            scheme,
            batch_cap: 64,
            context_len: 1024,
            overhead_fraction: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_cap == 0 {
            return Err(Error::Config("batch cap must be >= 1".into()));
        }
        if !(self.overhead_fraction >= 0.0 && self.overhead_fraction < 1.0) {
            return Err(Error::Config("overhead fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub clock: f64,
    pub batch: usize,
    pub step_time: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServingReport {
    pub scheme: QuantScheme,
    pub throughput_tokens_per_s: f64,
    pub mean_decode_latency_s: f64,
    pub mem_high_water_bytes: f64,
    pub weight_bytes: f64,
    pub completed: usize,
    pub total_tokens: usize,
    pub elapsed_s: f64,
    pub max_concurrent: usize,
    pub breakdown: Breakdown,
    pub steps: Vec<StepRecord>,
}

struct Inflight {
    prompt_len: usize,
    decode_len: usize,
    decoded: usize,
    reserved: f64,
}

/// Largest concurrent batch whose weights plus fully reserved KV fit
/// `capacity` for a representative request shape.
pub fn max_feasible_batch(
    dims: &ModelDims,
    scheme: QuantScheme,
    capacity: f64,
    prompt_len: usize,
    decode_len: usize,
) -> Result<usize> {
    let weights = weight_footprint_bytes(dims, scheme);
    let per_request = kv_bytes_per_token(dims, scheme) * (prompt_len + decode_len) as f64;
    let available = capacity - weights;
    if available < per_request {
        return Err(Error::Infeasible(format!(
            "model weights ({weights:.3e} B) plus one request ({per_request:.3e} B) exceed {capacity:.3e} B"
        )));
    }
    Ok((available / per_request).floor() as usize)
}

pub fn simulate_serving(
    config: &ServingConfig,
    hw: &HardwareProfile,
    trace: &[Request],
    horizon: f64,
) -> Result<ServingReport> {
    config.validate()?;
    hw.validate()?;
    if trace.is_empty() {
        return Err(Error::Argument("empty request trace".into()));
    }
    for r in trace {
        r.validate()?;
    }

    let dims = &config.dims;
    let scheme = config.scheme;
    let weights = weight_footprint_bytes(dims, scheme);
    let kv_tok = kv_bytes_per_token(dims, scheme);
    let capacity = hw.mem_capacity;

    let mut queue: Vec<Request> = trace.to_vec();
    queue.sort_by(|a, b| a.arrival.partial_cmp(&b.arrival).unwrap());
    let first_need = weights + kv_tok * (queue[0].prompt_len + queue[0].decode_len) as f64;
    if first_need > capacity {
        return Err(Error::Infeasible(format!(
            "first request needs {first_need:.3e} B of {capacity:.3e} B capacity"
        )));
    }

    let total_requests = queue.len();
    let mut next = 0usize;
    let mut inflight: Vec<Inflight> = Vec::new();
    let mut reserved = weights;
    let mut clock = 0.0f64;
    let mut completed = 0usize;
    let mut total_tokens = 0usize;
    let mut latency_weighted = 0.0f64;
    let mut high_water = weights;
    let mut max_concurrent = 0usize;
    let mut t_dense_total = 0.0f64;
    let mut t_attn_total = 0.0f64;
    let mut t_other_total = 0.0f64;
    let mut steps = Vec::new();

    while completed < total_requests && clock < horizon {
        // Continuous batching refill.
        while next < total_requests && inflight.len() < config.batch_cap {
            let r = &queue[next];
            if r.arrival > clock {
                break;
            }
            let need = kv_tok * (r.prompt_len + r.decode_len) as f64;
            if reserved + need > capacity {
                break;
            }
            reserved += need;
            inflight.push(Inflight {
                prompt_len: r.prompt_len,
                decode_len: r.decode_len,
                decoded: 0,
                reserved: need,
            });
            next += 1;
        }
        if inflight.is_empty() {
            if next < total_requests {
                // Idle until the next arrival.
                clock = clock.max(queue[next].arrival);
                continue;
            }
            break;
        }
        max_concurrent = max_concurrent.max(inflight.len());

        // Cost of this step at the current batch composition.
        let mut dense_rows = 0usize;
        let mut attn = OperatorCost {
            ops: 0.0,
            bytes: 0.0,
            precision: crate::perfsim::profile::ComputePrecision::Fp16,
        };
        for r in &inflight {
            if r.decoded == 0 {
                dense_rows += r.prompt_len;
                // Causal prefill reads t cached tokens for position t.
                let reads = r.prompt_len * (r.prompt_len + 1) / 2;
                let c = attention_cost(1, reads, dims, scheme);
                attn.ops += c.ops;
                attn.bytes += c.bytes;
            } else {
                dense_rows += 1;
                let context = r.prompt_len + r.decoded;
                let c = attention_cost(1, context, dims, scheme);
                attn.ops += c.ops;
                attn.bytes += c.bytes;
            }
        }
        let t_dense = roofline_time(&dense_cost(dense_rows, dims, scheme), hw);
        let t_attn = roofline_time(&attn, hw);
        let t_other = roofline_time(&other_cost(dense_rows, dims, scheme), hw);
        let step_time =
            (t_dense + t_attn + t_other) * (1.0 + config.overhead_fraction) / hw.efficiency;
        t_dense_total += t_dense;
        t_attn_total += t_attn;
        t_other_total += t_other + config.overhead_fraction * (t_dense + t_attn + t_other);

        // Every in-flight request emits one token this step.
        let tokens = inflight.len();
        total_tokens += tokens;
        latency_weighted += step_time * tokens as f64;
        clock += step_time;
        steps.push(StepRecord {
            clock,
            batch: tokens,
            step_time,
            tokens,
        });

        // Peak usage during the step, before finished requests release.
        let mut actual = weights;
        for r in &mut inflight {
            r.decoded += 1;
            actual += kv_tok * (r.prompt_len + r.decoded.min(r.decode_len)) as f64;
        }
        high_water = high_water.max(actual);
        assert!(
            high_water <= capacity,
            "memory high water {high_water} exceeds capacity {capacity}"
        );
        inflight.retain(|r| {
            if r.decoded >= r.decode_len {
                completed += 1;
                reserved -= r.reserved;
                false
            } else {
                true
            }
        });
        // Request conservation: every admitted request is either done or in
        // flight; the rest are still queued.
        assert_eq!(next, completed + inflight.len());
        assert_eq!(
            total_requests,
            completed + inflight.len() + (total_requests - next)
        );
    }

    let elapsed = clock;
    let breakdown = {
        let total = t_dense_total + t_attn_total + t_other_total;
        Breakdown {
            dense: t_dense_total / total,
            attention: t_attn_total / total,
            other: t_other_total / total,
        }
    };
    Ok(ServingReport {
        scheme,
        throughput_tokens_per_s: total_tokens as f64 / elapsed,
        mean_decode_latency_s: latency_weighted / total_tokens as f64,
        mem_high_water_bytes: high_water,
        weight_bytes: weights,
        completed,
        total_tokens,
        elapsed_s: elapsed,
        max_concurrent,
        breakdown,
        steps,
    })
}
