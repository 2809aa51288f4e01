//! Hardware description for the roofline model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComputePrecision {
    Fp16,
    Int8,
    Int4,
}

/// Peak throughput per precision, memory bandwidth, and capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    /// ops/s at FP16, INT8, INT4 tensor precision.
    pub peak_fp16: f64,
    pub peak_int8: f64,
    pub peak_int4: f64,
    /// bytes/s
    pub mem_bandwidth: f64,
    /// bytes
    pub mem_capacity: f64,
    /// Fraction of peak the simulator assumes real kernels attain.
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

pub fn default_efficiency() -> f64 {
    0.6
}

impl HardwareProfile {
    /// Datacenter-accelerator-like default: 312 TFLOPS FP16, 624 TOPS INT8,
    /// 1248 TOPS INT4, ~2 TB/s, 80 GB.
    pub fn a100_like() -> Self {
        Self {
            name: "a100-like".into(),
            peak_fp16: 312e12,
            peak_int8: 624e12,
            peak_int4: 1248e12,
            mem_bandwidth: 2.039e12,
            mem_capacity: 80e9,
            efficiency: default_efficiency(),
        }
    }

    pub fn peak(&self, precision: ComputePrecision) -> f64 {
        match precision {
            ComputePrecision::Fp16 => self.peak_fp16,
            ComputePrecision::Int8 => self.peak_int8,
            ComputePrecision::Int4 => self.peak_int4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.peak_fp16,
            self.peak_int8,
            self.peak_int4,
            self.mem_bandwidth,
            self.mem_capacity,
            self.efficiency,
        ];
        if fields.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(
                "hardware profile fields must be positive".into(),
            ));
        }
        if !(self.peak_int4 >= self.peak_int8 && self.peak_int8 >= self.peak_fp16) {
            return Err(Error::Config(
                "expected peak(INT4) >= peak(INT8) >= peak(FP16)".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_is_valid() {
        assert!(HardwareProfile::a100_like().validate().is_ok());
    }

    #[test]
    fn inverted_peaks_rejected() {
        let mut hw = HardwareProfile::a100_like();
        hw.peak_int4 = hw.peak_fp16 / 2.0;
        assert!(hw.validate().is_err());
    }
}
