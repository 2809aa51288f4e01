//! Toy transformer configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{ClipConfig, Granularity, GroupScheme, Precision};

/// Bit widths for the three quantized tensor families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantBits {
    pub weight: Precision,
    pub activation: Precision,
    pub kv: Precision,
}

impl QuantBits {
    pub fn w4a4() -> Self {
        Self {
            weight: Precision::Int(4),
            activation: Precision::Int(4),
            kv: Precision::Int(4),
        }
    }

    pub fn w3a3() -> Self {
        Self {
            weight: Precision::Int(3),
            activation: Precision::Int(3),
            kv: Precision::Int(4),
        }
    }

    pub fn w8a8() -> Self {
        Self {
            weight: Precision::Int(8),
            activation: Precision::Int(8),
            kv: Precision::Int(8),
        }
    }

    /// Weight-only quantization: activations and cache stay in FP.
    pub fn w4a16() -> Self {
        Self {
            weight: Precision::Int(4),
            activation: Precision::Bypass,
            kv: Precision::Bypass,
        }
    }

    pub fn bypass() -> Self {
        Self {
            weight: Precision::Bypass,
            activation: Precision::Bypass,
            kv: Precision::Bypass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub scheme: GroupScheme,
    pub outlier_count: usize,
    pub bits: QuantBits,
    pub clip: ClipConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default used by tests and the CLI.
    pub fn toy(seed: u64) -> Self {
        Self {
            n_layers: 2,
            hidden_dim: 64,
            n_heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            vocab_size: 64,
            scheme: GroupScheme::per_group(16),
            outlier_count: 16,
            bits: QuantBits::w4a4(),
            clip: ClipConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_layers,
            self.hidden_dim,
            self.n_heads,
            self.head_dim,
            self.ffn_dim,
            self.vocab_size,
        ];
        if positive.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dims must be >= 1".into()));
        }
        if self.hidden_dim != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} != n_heads {} * head_dim {}",
                self.hidden_dim, self.n_heads, self.head_dim
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::Config(
                "head_dim must be even for rotary embedding".into(),
            ));
        }
        self.clip.validate()?;
        let k = self.outlier_count;
        for (name, dim) in [("hidden_dim", self.hidden_dim), ("ffn_dim", self.ffn_dim)] {
            if k >= dim && k != 0 {
                return Err(Error::Config(format!(
                    "outlier count {k} must be below {name} {dim}"
                )));
            }
            if self.scheme.granularity == Granularity::PerGroup {
                let g = self.scheme.group_size;
                if g == 0 || (dim - k) % g != 0 {
                    return Err(Error::Config(format!(
                        "group size {g} must divide {name} - outliers = {}",
                        dim - k
                    )));
                }
                if k > 0 && k >= g && k % g != 0 {
                    return Err(Error::Config(format!(
                        "group size {g} must divide outlier count {k}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        assert!(ModelConfig::toy(0).validate().is_ok());
    }

    #[test]
    fn head_dim_mismatch_rejected() {
        let mut c = ModelConfig::toy(0);
        c.head_dim = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn indivisible_groups_rejected() {
        let mut c = ModelConfig::toy(0);
        c.hidden_dim = 256;
        c.n_heads = 16;
        c.head_dim = 16;
        c.outlier_count = 32;
        c.scheme = GroupScheme::per_group(64);
        // 64 does not divide 256 - 32.
        assert!(c.validate().is_err());
        c.scheme = GroupScheme::per_group(32);
        c.ffn_dim = 512 - 32 + 32; // 512: 32 divides 480
        assert!(c.validate().is_ok());
    }
}
