use serde::{Deserialize, Serialize};

use super::EncoderConfig;
use crate::error::{Error, Result};

/// Closed-form work and memory counts of one forward over `n` tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n: usize,
    /// `n² · n_heads`: entries of one layer's score tensor.
    pub scores_per_layer: u64,
    /// `n² · n_heads · n_layers`.
    pub attention_scores: u64,
    /// Score and weighted-sum multiply–accumulates, `2 · n² · d` per layer.
    pub attention_macs: u64,
    /// Projection and MLP multiply–accumulates, `n · (4 + 2·mlp_ratio) · d²` per layer.
    pub linear_macs: u64,
    pub total_macs: u64,
    /// Largest single activation if scores are materialized: `max(n²·heads, n·mlp_ratio·d)`.
    pub peak_activation_elements: u64,
}

pub fn attention_cost(n: usize, config: &EncoderConfig) -> Result<CostReport> {
    if n == 0 {
        return Err(Error::Config("token count must be at least 1".into()));
    }
    let (n64, d, h, l, r) = (
        n as u64,
        config.d as u64,
        config.n_heads as u64,
        config.n_layers as u64,
        config.mlp_ratio as u64,
    );
    let scores_per_layer = n64 * n64 * h;
    let attention_macs = 2 * n64 * n64 * d * l;
    let linear_macs = n64 * (4 + 2 * r) * d * d * l;
    Ok(CostReport {
        n,
        scores_per_layer,
        attention_scores: scores_per_layer * l,
        attention_macs,
        linear_macs,
        total_macs: attention_macs + linear_macs,
        peak_activation_elements: scores_per_layer.max(n64 * r * d),
    })
}

impl CostReport {
    /// Ratio of attention score work against `other`.
    pub fn attention_ratio(&self, other: &CostReport) -> f64 {
        self.attention_scores as f64 / other.attention_scores as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token() {
        let c = EncoderConfig::base();
        let r = attention_cost(1, &c).unwrap();
        assert_eq!(r.attention_scores, 12 * 12);
        assert!(attention_cost(0, &c).is_err());
    }

    #[test]
    fn quadratic_ratios() {
        let c = EncoderConfig::toy(8);
        let full = attention_cost(1190, &c).unwrap();
        let p = attention_cost(474, &c).unwrap();
        assert!((p.attention_ratio(&full) - (474.0f64 / 1190.0).powi(2)).abs() < 1e-15);
        assert!((p.attention_ratio(&full) - 0.1587).abs() < 1e-4);
        let five = attention_cost(2388, &c).unwrap();
        assert!((five.attention_ratio(&full) - 4.03).abs() < 0.01);
    }
}
