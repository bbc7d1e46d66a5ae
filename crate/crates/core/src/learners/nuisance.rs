use serde::{Deserialize, Serialize};

use super::{expand_library, fit_ensemble, Ensemble, LearnerSpec, Rows, Task};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::Folds;
use crate::glm::{fit_logistic, Design, Link, LinearPredictor, Term};

/// Outcome predictions are kept inside this band so their logits stay finite.
pub const OUTCOME_CLIP: f64 = 1e-6;

/// Stacked estimate of E[Y | A, W] on the [0, 1] outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub ensemble: Ensemble,
}

impl OutcomeModel {
    pub fn predict(&self, a: u8, w: &[f64]) -> f64 {
        self.ensemble
            .predict(a as f64, w)
            .clamp(OUTCOME_CLIP, 1.0 - OUTCOME_CLIP)
    }
}

/// Stacks the outcome library with `folds`-fold CV (folds stratified by A).
/// Outcomes must already be on [0, 1].
pub fn fit_outcome(
    ds: &Dataset,
    library: &[LearnerSpec],
    folds: usize,
    seed: u64,
) -> Result<OutcomeModel> {
    if folds < 2 || ds.len() < folds {
        return Err(Error::invalid(
            "folds",
            format!("need n >= folds >= 2 (n = {}, folds = {folds})", ds.len()),
        ));
    }
    let (lo, hi) = ds.y_bounds();
    if lo < 0.0 || hi > 1.0 {
        return Err(Error::InvalidData(
            "outcome regression expects outcomes scaled to [0, 1]".into(),
        ));
    }
    let candidates = expand_library(library, ds.covariate_names())?;
    let treatments = ds.treatments();
    let folds = Folds::stratified(&treatments, folds, seed)?;
    let rows = Rows {
        a: treatments.iter().map(|&a| a as f64).collect(),
        w: ds.observations().iter().map(|o| o.w.as_slice()).collect(),
        y: ds.outcomes(),
    };
    let ensemble = fit_ensemble(Task::Outcome, &candidates, &rows, &folds, ds.n_covariates())?;
    Ok(OutcomeModel { ensemble })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    KnownConstant(f64),
    Estimated(LinearPredictor),
}

/// Treatment mechanism g(1 | W), truncated to `[g_min, 1 - g_min]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub mode: PropensityMode,
    pub g_min: f64,
    #[serde(default)]
    pub warning: Option<String>,
}

impl PropensityModel {
    pub fn known(value: f64, g_min: f64) -> Result<Self> {
        check_probability("g_known", value)?;
        check_g_min(g_min)?;
        Ok(Self {
            mode: PropensityMode::KnownConstant(value),
            g_min,
            warning: None,
        })
    }

    /// g(1 | w)
    pub fn predict(&self, w: &[f64]) -> f64 {
        let raw = match &self.mode {
            PropensityMode::KnownConstant(p) => *p,
            PropensityMode::Estimated(lp) => lp.predict(0.0, w),
        };
        raw.clamp(self.g_min, 1.0 - self.g_min)
    }

    /// g(a | w)
    pub fn prob(&self, a: u8, w: &[f64]) -> f64 {
        let g1 = self.predict(w);
        if a == 1 {
            g1
        } else {
            1.0 - g1
        }
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(name, format!("must lie in (0, 1), got {p}")));
    }
    Ok(())
}

fn check_g_min(g_min: f64) -> Result<()> {
    if !(0.0..0.5).contains(&g_min) {
        return Err(Error::invalid("g_min", format!("must lie in [0, 0.5), got {g_min}")));
    }
    Ok(())
}

/// With `known_value` and `estimate == false` the known constant is used as is.
/// Otherwise a main-terms logistic regression of A on W is fitted; under
/// separation the fit is abandoned for the known value (or the treated
/// fraction) and a warning is recorded.
pub fn fit_propensity(
    ds: &Dataset,
    known_value: Option<f64>,
    estimate: bool,
    g_min: f64,
) -> Result<PropensityModel> {
    check_g_min(g_min)?;
    if let Some(p) = known_value {
        check_probability("g_known", p)?;
        if !estimate {
            return PropensityModel::known(p, g_min);
        }
    }
    ds.require_both_arms()?;
    let (_, n1) = ds.arm_counts();
    let treated_fraction = n1 as f64 / ds.len() as f64;
    let fallback = known_value.unwrap_or(treated_fraction);

    let terms: Vec<Term> = (0..ds.n_covariates()).map(Term::Covariate).collect();
    let design = Design::build(&terms, ds.observations().iter().map(|o| (0.0, o.w.as_slice())));
    let y: Vec<f64> = ds.treatments().iter().map(|&a| a as f64).collect();
    let revert = |reason: &str| PropensityModel {
        mode: PropensityMode::KnownConstant(fallback),
        g_min,
        warning: Some(format!("propensity fit abandoned ({reason}); using {fallback}")),
    };
    let fit = match fit_logistic(&design, &y) {
        Ok(f) => f,
        Err(_) => return Ok(revert("singular design")),
    };
    let lp = LinearPredictor {
        terms,
        coef: fit.coef,
        link: Link::Logit,
    };
    let separated = !fit.converged
        || ds.observations().iter().any(|o| {
            let p = lp.predict(0.0, &o.w);
            !(1e-8..=1.0 - 1e-8).contains(&p)
        });
    if separated {
        return Ok(revert("perfect separation"));
    }
    Ok(PropensityModel {
        mode: PropensityMode::Estimated(lp),
        g_min,
        warning: None,
    })
}
