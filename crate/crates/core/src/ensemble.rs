//! Confidence-weighted combination of the bowl and verdict analyzers.
//!
//! ```text
//! l_ensemble = l_raw · l_conf · f(l_conf) + l_gpt · (1 − f(l_conf))
//! f(c)       = coefficient · c^exponent          (default 0.8 · √c)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("{name} must be in [0, 1], got {value}")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("invalid ensemble config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub coefficient: f64,
    pub exponent: f64,
    pub decision_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            coefficient: 0.8,
            exponent: 0.5,
            decision_threshold: 0.5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(0.0..=1.0).contains(&self.coefficient) {
            return Err(EnsembleError::Config(format!(
                "coefficient {} not in [0, 1]",
                self.coefficient
            )));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(EnsembleError::Config(format!(
                "exponent {} must be positive",
                self.exponent
            )));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(EnsembleError::Config(format!(
                "decision threshold {} not in (0, 1)",
                self.decision_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ensemble,
    /// The bowl was empty; only the verdict analyzer contributed.
    GptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub l_ensemble: f64,
    pub is_phishing: bool,
    pub l_raw: f64,
    pub l_conf: f64,
    pub l_gpt: f64,
    pub mode: Mode,
}

/// `coefficient × l_conf^exponent`.
pub fn weight_policy(l_conf: f64, config: &EnsembleConfig) -> f64 {
    if l_conf <= 0.0 {
        return 0.0;
    }
    config.coefficient * l_conf.powf(config.exponent)
}

fn check_unit(name: &'static str, value: f64) -> Result<(), EnsembleError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(EnsembleError::OutOfUnitRange { name, value })
    }
}

pub fn combine(
    l_raw: f64,
    l_conf: f64,
    l_gpt: f64,
    config: &EnsembleConfig,
) -> Result<Classification, EnsembleError> {
    check_unit("l_raw", l_raw)?;
    check_unit("l_conf", l_conf)?;
    check_unit("l_gpt", l_gpt)?;
    let f = weight_policy(l_conf, config);
    let l_ensemble = (l_raw * l_conf * f + l_gpt * (1.0 - f)).clamp(0.0, 1.0);
    Ok(Classification {
        l_ensemble,
        is_phishing: l_ensemble >= config.decision_threshold,
        l_raw,
        l_conf,
        l_gpt,
        mode: Mode::Ensemble,
    })
}

/// Cold-bowl fallback: confidence is taken as zero so the verdict label passes through.
pub fn combine_cold(l_gpt: f64, config: &EnsembleConfig) -> Result<Classification, EnsembleError> {
    let mut c = combine(0.0, 0.0, l_gpt, config)?;
    c.mode = Mode::GptOnly;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct scalar evaluation, independent of `combine`.
    fn oracle(l_raw: f64, l_conf: f64, l_gpt: f64) -> f64 {
        let f = 0.8 * l_conf.sqrt();
        l_raw * l_conf * f + l_gpt * (1.0 - f)
    }

    #[test]
    fn policy_examples() {
        let cfg = EnsembleConfig::default();
        assert_eq!(weight_policy(0.0, &cfg), 0.0);
        assert_eq!(weight_policy(1.0, &cfg), 0.8);
        assert!((weight_policy(0.25, &cfg) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn combine_examples() {
        let cfg = EnsembleConfig::default();
        let c = combine(1.0, 1.0, 0.0, &cfg).unwrap();
        assert!((c.l_ensemble - 0.8).abs() < 1e-12);
        assert!(c.is_phishing);
        assert_eq!(combine(0.3, 0.0, 0.42, &cfg).unwrap().l_ensemble, 0.42);
        assert_eq!(combine(1.0, 1.0, 1.0, &cfg).unwrap().l_ensemble, 1.0);

        let conf = (-1.0f64).exp();
        let c = combine(0.75, conf, 0.9, &cfg).unwrap();
        assert!((c.l_ensemble - oracle(0.75, conf, 0.9)).abs() < 1e-12);
        assert!((c.l_ensemble - 0.597_176_021_095_961_8).abs() < 1e-12, "{}", c.l_ensemble);
    }

    #[test]
    fn cold_mode_passes_verdict_through() {
        let cfg = EnsembleConfig::default();
        let c = combine_cold(0.0, &cfg).unwrap();
        assert_eq!(c.mode, Mode::GptOnly);
        assert!(!c.is_phishing);
        assert_eq!(combine_cold(0.7, &cfg).unwrap().l_ensemble, 0.7);
    }

    #[test]
    fn rejects_out_of_range() {
        let cfg = EnsembleConfig::default();
        assert!(matches!(
            combine(1.1, 0.5, 0.5, &cfg),
            Err(EnsembleError::OutOfUnitRange { name: "l_raw", .. })
        ));
        assert!(combine(0.5, f64::NAN, 0.5, &cfg).is_err());
        assert!(EnsembleConfig { coefficient: 1.5, ..cfg }.validate().is_err());
        assert!(cfg.validate().is_ok());
    }

    proptest! {
        #[test]
        fn stays_in_unit_range(r in 0.0f64..=1.0, c in 0.0f64..=1.0, g in 0.0f64..=1.0) {
            let cfg = EnsembleConfig::default();
            let out = combine(r, c, g, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.l_ensemble));
            prop_assert!((out.l_ensemble - oracle(r, c, g)).abs() < 1e-12);
            prop_assert_eq!(out.is_phishing, out.l_ensemble >= 0.5);
        }

        #[test]
        fn monotone_in_raw_and_gpt(
            r in 0.0f64..=1.0, dr in 0.0f64..=1.0, c in 0.0f64..=1.0,
            g in 0.0f64..=1.0, dg in 0.0f64..=1.0,
        ) {
            let cfg = EnsembleConfig::default();
            let base = combine(r, c, g, &cfg).unwrap().l_ensemble;
            let r2 = (r + dr).min(1.0);
            let g2 = (g + dg).min(1.0);
            prop_assert!(combine(r2, c, g, &cfg).unwrap().l_ensemble >= base - 1e-15);
            prop_assert!(combine(r, c, g2, &cfg).unwrap().l_ensemble >= base - 1e-15);
        }

        #[test]
        fn full_confidence_leaves_fixed_verdict_share(r in 0.0f64..=1.0, g in 0.0f64..=1.0) {
            let cfg = EnsembleConfig::default();
            let out = combine(r, 1.0, g, &cfg).unwrap().l_ensemble;
            prop_assert!((out - (0.8 * r + 0.2 * g)).abs() < 1e-12);
        }
    }
}
