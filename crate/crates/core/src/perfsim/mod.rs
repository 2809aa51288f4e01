//! Roofline cost model and continuous-batching serving simulator.

mod cost;
mod profile;
mod sim;

pub use cost::{
    attention_cost, breakdown, dense_cost, kv_bytes_per_token, other_cost, roofline_time,
    weight_footprint_bytes, Breakdown, ModelDims, OperatorCost, QuantScheme,
};
pub use profile::{default_efficiency, ComputePrecision, HardwareProfile};
pub use sim::{
    generate_trace, max_feasible_batch, simulate_serving, ArrivalPattern, LengthDist, Request,
    ServingConfig, ServingReport, StepRecord, TraceConfig,
};
