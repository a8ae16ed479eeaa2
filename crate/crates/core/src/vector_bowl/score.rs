//! Reciprocal-distance label weighting and confidence decay.
//!
//! ```text
//! w_i    = (1 / (d_i + ε)) / Σ_j (1 / (d_j + ε))
//! l_raw  = Σ_i l_i · w_i
//! l_conf = exp(−λ · d_0)
//! ```
//!
//! All `d` are squared Euclidean distances, `d_0` the smallest.

use serde::{Deserialize, Serialize};

use super::BowlError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowlConfig {
    pub k: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub confidence_decay_enabled: bool,
}

impl Default for BowlConfig {
    fn default() -> Self {
        BowlConfig {
            k: 12,
            epsilon: 1e-8,
            lambda: 0.5,
            confidence_decay_enabled: true,
        }
    }
}

impl BowlConfig {
    pub fn validate(&self) -> Result<(), BowlError> {
        if self.k == 0 {
            return Err(BowlError::Config("k must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(BowlError::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(BowlError::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        Ok(())
    }

    /// Confidence decay switched off.
    pub fn without_decay(self) -> Self {
        BowlConfig {
            confidence_decay_enabled: false,
            ..self
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        BowlConfig {
            lambda,
            confidence_decay_enabled: true,
            ..self
        }
    }

    pub fn confidence(&self, d0: f64) -> f64 {
        if self.confidence_decay_enabled {
            confidence(d0, self.lambda)
        } else {
            1.0
        }
    }
}

/// Normalized reciprocal weights for squared distances `distances`.
pub fn reciprocal_weights(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let inverse: Vec<f64> = distances.iter().map(|d| 1.0 / (d + epsilon)).collect();
    let total: f64 = inverse.iter().sum();
    inverse.into_iter().map(|w| w / total).collect()
}

/// Weighted label sum over neighbours given as `(squared_distance, label)`.
///
/// Computed as a ratio of reciprocal sums so that unanimous labels give
/// exactly 0 or 1.
pub fn weighted_label(neighbors: &[(f64, f64)], epsilon: f64) -> f64 {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for &(d, label) in neighbors {
        let w = 1.0 / (d + epsilon);
        numerator += label * w;
        denominator += w;
    }
    (numerator / denominator).clamp(0.0, 1.0)
}

/// `exp(−λ · d0)`; exactly 1 at `d0 = 0`.
pub fn confidence(d0: f64, lambda: f64) -> f64 {
    (-lambda * d0).exp()
}
