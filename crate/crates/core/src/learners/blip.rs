use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{expand_library, fit_ensemble, Ensemble, LearnerSpec, OutcomeModel, PropensityModel, Rows, Task};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::Folds;

/// Doubly-robust blip transform
/// `D = (2A - 1) / g(A|W) * (Y - Q(A,W)) + Q(1,W) - Q(0,W)`.
pub fn make_pseudo_outcome(ds: &Dataset, q: &OutcomeModel, g: &PropensityModel) -> Vec<f64> {
    ds.observations()
        .iter()
        .map(|o| {
            let sign = if o.a == 1 { 1.0 } else { -1.0 };
            let q1 = q.predict(1, &o.w);
            let q0 = q.predict(0, &o.w);
            let qa = if o.a == 1 { q1 } else { q0 };
            sign / g.prob(o.a, &o.w) * (o.y - qa) + q1 - q0
        })
        .collect()
}

/// Stacked estimate of the blip E[Y | A=1, W] - E[Y | A=0, W].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipModel {
    pub covariate_names: Vec<String>,
    pub ensemble: Ensemble,
}

impl BlipModel {
    pub fn predict(&self, w: &[f64]) -> f64 {
        self.ensemble.predict(0.0, w)
    }

    pub fn predict_all(&self, ds: &Dataset) -> Vec<f64> {
        ds.observations().iter().map(|o| self.predict(&o.w)).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.ensemble.weights
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("blip model serializes");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
    }
}

/// Regresses the pseudo-outcome on W with each library candidate and weights
/// them by simplex least squares on cross-validated squared error.
pub fn fit_blip(
    ds: &Dataset,
    q: &OutcomeModel,
    g: &PropensityModel,
    library: &[LearnerSpec],
    folds: usize,
    seed: u64,
) -> Result<BlipModel> {
    if folds < 2 || ds.len() < folds {
        return Err(Error::invalid(
            "folds",
            format!("need n >= folds >= 2 (n = {}, folds = {folds})", ds.len()),
        ));
    }
    if !library.contains(&LearnerSpec::Mean) {
        return Err(Error::invalid("blip_library", "must include the `mean` learner"));
    }
    let candidates = expand_library(library, ds.covariate_names())?;
    let folds = Folds::stratified(&ds.treatments(), folds, seed)?;
    let rows = Rows {
        a: vec![0.0; ds.len()],
        w: ds.observations().iter().map(|o| o.w.as_slice()).collect(),
        y: make_pseudo_outcome(ds, q, g),
    };
    let ensemble = fit_ensemble(Task::Blip, &candidates, &rows, &folds, ds.n_covariates())?;
    Ok(BlipModel {
        covariate_names: ds.covariate_names().to_vec(),
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::glm::{Link, LinearPredictor, Term};
    use crate::learners::{FittedCandidate, PropensityModel};

    /// Outcome model returning fixed arm probabilities.
    fn fixed_outcome(p0: f64, p1: f64) -> OutcomeModel {
        let lp = LinearPredictor {
            terms: vec![Term::Treatment],
            coef: vec![crate::glm::logit(p0), crate::glm::logit(p1) - crate::glm::logit(p0)],
            link: Link::Logit,
        };
        OutcomeModel {
            ensemble: Ensemble {
                names: vec!["fixed".into()],
                weights: vec![1.0],
                cv_risks: vec![0.0],
                ensemble_cv_risk: 0.0,
                fits: vec![Some(FittedCandidate { predictor: lp, fallback: false })],
                warnings: vec![],
            },
        }
    }

    #[test]
    fn single_row_hand_arithmetic() {
        let ds = Dataset::new(
            vec![Observation { w: vec![0.0], a: 1, y: 1.0, c: None }],
            vec!["w".into()],
            None,
            None,
        )
        .unwrap();
        let q = fixed_outcome(0.5, 0.5);
        let g = PropensityModel::known(0.5, 0.01).unwrap();
        let d = make_pseudo_outcome(&ds, &q, &g);
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_term_vanishes_when_outcome_matches_prediction() {
        let q = fixed_outcome(0.25, 0.75);
        let ds = Dataset::new(
            vec![
                Observation { w: vec![0.0], a: 1, y: 0.75, c: None },
                Observation { w: vec![1.0], a: 0, y: 0.25, c: None },
            ],
            vec!["w".into()],
            None,
            Some((0.0, 1.0)),
        )
        .unwrap();
        let g = PropensityModel::known(0.3, 0.01).unwrap();
        for d in make_pseudo_outcome(&ds, &q, &g) {
            assert!((d - 0.5).abs() < 1e-9);
        }
    }
}
