use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::learners::{default_blip_library, default_outcome_library, LearnerSpec};

/// Where the rule's blip model comes from under cross-fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlipFit {
    /// Refit on each fold's training rows; the fold's threshold comes from its
    /// training-set blip distribution.
    #[default]
    PerFold,
    /// One fit on all rows; a single threshold from the full-sample blips.
    Shared,
}

/// Estimation settings shared by the value, MSM and ICER pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub outcome_library: Vec<LearnerSpec>,
    pub blip_library: Vec<LearnerSpec>,
    /// Outer cross-fitting folds.
    pub folds: usize,
    /// Folds inside each stacked regression.
    pub sl_folds: usize,
    /// Known randomization probability P(A = 1).
    pub g_known: Option<f64>,
    /// Fit a main-terms logistic propensity even when `g_known` is set.
    pub estimate_g: bool,
    pub g_min: f64,
    pub seed: u64,
    pub blip_fit: BlipFit,
    pub confidence: f64,
    /// Smallest |effect difference| on the [0, 1] outcome scale for which an
    /// ICER is reported.
    pub den_epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            outcome_library: default_outcome_library(),
            blip_library: default_blip_library(),
            folds: 10,
            sl_folds: 10,
            g_known: None,
            estimate_g: true,
            g_min: 0.01,
            seed: 0,
            blip_fit: BlipFit::PerFold,
            confidence: 0.95,
            den_epsilon: 1e-4,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("folds", format!("must be at least 2, got {}", self.folds)));
        }
        if self.sl_folds < 2 {
            return Err(Error::invalid("sl_folds", format!("must be at least 2, got {}", self.sl_folds)));
        }
        if self.outcome_library.is_empty() {
            return Err(Error::invalid("outcome_library", "must not be empty"));
        }
        if !self.blip_library.contains(&LearnerSpec::Mean) {
            return Err(Error::invalid("blip_library", "must include the `mean` learner"));
        }
        if let Some(g) = self.g_known {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::invalid("g_known", format!("must lie in (0, 1), got {g}")));
            }
        }
        if !(0.0..0.5).contains(&self.g_min) {
            return Err(Error::invalid("g_min", format!("must lie in [0, 0.5), got {}", self.g_min)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("confidence", format!("must lie in (0, 1), got {}", self.confidence)));
        }
        if !(self.den_epsilon >= 0.0) {
            return Err(Error::invalid("den_epsilon", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        z_for(self.confidence)
    }
}

/// Two-sided normal critical value; 1.959964 at 0.95.
pub fn z_for(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + confidence / 2.0)
}
