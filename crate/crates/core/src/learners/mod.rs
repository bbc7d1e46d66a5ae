//! Candidate regressions and cross-validated stacking.
//!
//! Every candidate is a GLM over a fixed set of [`Term`]s: the intercept-only
//! mean, main terms, one model per covariate, and forward stepwise selection
//! by AIC. Outcome candidates use a logit link, blip candidates the identity
//! link. [`fit_ensemble`] collects out-of-fold predictions,
//! weights the candidates by simplex-constrained least squares and refits the
//! weighted ones on all rows.

mod blip;
mod nuisance;
pub mod simplex;
mod subgroup;

pub use blip::{fit_blip, make_pseudo_outcome, BlipModel};
pub use nuisance::{fit_outcome, fit_propensity, OutcomeModel, PropensityMode, PropensityModel};
pub use subgroup::{subgroup_scan, LevelEffect, SubgroupResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::Folds;
use crate::glm::{fit_logistic, fit_ols, Design, Link, LinearPredictor, Term};

pub const STEPWISE_MAX_TERMS: usize = 5;

/// Library entry as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerSpec {
    Mean,
    MainTerms,
    /// Expands to one single-covariate model per covariate.
    Univariate,
    StepwiseAic,
}

pub fn default_outcome_library() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::Mean,
        LearnerSpec::MainTerms,
        LearnerSpec::Univariate,
        LearnerSpec::StepwiseAic,
    ]
}

pub fn default_blip_library() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::Mean,
        LearnerSpec::MainTerms,
        LearnerSpec::Univariate,
        LearnerSpec::StepwiseAic,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Task {
    /// E[Y | A, W] with logit link; A enters every model.
    Outcome,
    /// Pseudo-outcome on W with identity link.
    Blip,
}

impl Task {
    fn link(self) -> Link {
        match self {
            Task::Blip => Link::Identity,
            _ => Link::Logit,
        }
    }

    fn base_terms(self) -> Vec<Term> {
        match self {
            Task::Outcome => vec![Term::Treatment],
            _ => Vec::new(),
        }
    }

    fn covariate_terms(self, j: usize) -> Vec<Term> {
        match self {
            Task::Outcome => vec![Term::Covariate(j), Term::Interaction(j)],
            _ => vec![Term::Covariate(j)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CandidateKind {
    Mean,
    MainTerms,
    Univariate(usize),
    StepwiseAic,
}

pub(crate) fn expand_library(
    library: &[LearnerSpec],
    covariate_names: &[String],
) -> Result<Vec<(String, CandidateKind)>> {
    if library.is_empty() {
        return Err(Error::invalid("library", "learner library is empty"));
    }
    let mut out = Vec::new();
    for spec in library {
        match spec {
            LearnerSpec::Mean => out.push(("mean".to_string(), CandidateKind::Mean)),
            LearnerSpec::MainTerms => out.push(("main_terms".to_string(), CandidateKind::MainTerms)),
            LearnerSpec::Univariate => {
                for (j, name) in covariate_names.iter().enumerate() {
                    out.push((format!("univariate:{name}"), CandidateKind::Univariate(j)));
                }
            }
            LearnerSpec::StepwiseAic => {
                out.push(("stepwise_aic".to_string(), CandidateKind::StepwiseAic))
            }
        }
    }
    Ok(out)
}

/// Training rows for one regression.
pub(crate) struct Rows<'a> {
    pub a: Vec<f64>,
    pub w: Vec<&'a [f64]>,
    pub y: Vec<f64>,
}

impl<'a> Rows<'a> {
    pub fn subset(&self, idx: &[usize]) -> Rows<'a> {
        Rows {
            a: idx.iter().map(|&i| self.a[i]).collect(),
            w: idx.iter().map(|&i| self.w[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    fn design(&self, terms: &[Term]) -> Design {
        Design::build(terms, self.a.iter().copied().zip(self.w.iter().copied()))
    }
}

struct GlmFit {
    predictor: LinearPredictor,
    aic: f64,
}

fn fit_terms(task: Task, rows: &Rows, terms: &[Term]) -> Result<GlmFit> {
    let design = rows.design(terms);
    let n = rows.y.len() as f64;
    let p = design.p as f64;
    let (coef, aic) = match task.link() {
        Link::Identity => {
            let fit = fit_ols(&design, &rows.y)?;
            let aic = n * (fit.rss.max(1e-300) / n).ln() + 2.0 * (p + 1.0);
            (fit.coef, aic)
        }
        Link::Logit => {
            let fit = fit_logistic(&design, &rows.y)?;
            (fit.coef, fit.deviance + 2.0 * p)
        }
    };
    Ok(GlmFit {
        predictor: LinearPredictor {
            terms: terms.to_vec(),
            coef,
            link: task.link(),
        },
        aic,
    })
}

fn mean_predictor(task: Task, rows: &Rows) -> LinearPredictor {
    let mean = rows.y.iter().sum::<f64>() / rows.y.len() as f64;
    LinearPredictor::constant(mean, task.link())
}

/// A fitted candidate; `fallback` marks a singular design replaced by the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCandidate {
    pub predictor: LinearPredictor,
    pub fallback: bool,
}

fn fit_candidate(task: Task, kind: &CandidateKind, rows: &Rows, p: usize) -> FittedCandidate {
    let attempt = match kind {
        CandidateKind::Mean => Ok(mean_predictor(task, rows)),
        CandidateKind::MainTerms => {
            let mut terms = task.base_terms();
            terms.extend((0..p).map(Term::Covariate));
            if task == Task::Outcome {
                terms.extend((0..p).map(Term::Interaction));
            }
            fit_terms(task, rows, &terms).map(|f| f.predictor)
        }
        CandidateKind::Univariate(j) => {
            let mut terms = task.base_terms();
            terms.extend(task.covariate_terms(*j));
            fit_terms(task, rows, &terms).map(|f| f.predictor)
        }
        CandidateKind::StepwiseAic => stepwise(task, rows, p),
    };
    match attempt {
        Ok(predictor) => FittedCandidate {
            predictor,
            fallback: false,
        },
        Err(_) => FittedCandidate {
            predictor: mean_predictor(task, rows),
            fallback: true,
        },
    }
}

/// Forward selection from the task's base terms, adding the single term that
/// lowers AIC most, up to [`STEPWISE_MAX_TERMS`] additions.
fn stepwise(task: Task, rows: &Rows, p: usize) -> Result<LinearPredictor> {
    let mut current = task.base_terms();
    let mut best = fit_terms(task, rows, &current)?;
    let mut pool: Vec<Term> = (0..p).flat_map(|j| task.covariate_terms(j)).collect();
    for _ in 0..STEPWISE_MAX_TERMS {
        let mut step: Option<(usize, GlmFit)> = None;
        for (idx, term) in pool.iter().enumerate() {
            let mut trial = current.clone();
            trial.push(*term);
            let Ok(fit) = fit_terms(task, rows, &trial) else {
                continue;
            };
            let better = match &step {
                Some((_, s)) => fit.aic < s.aic,
                None => true,
            };
            if better {
                step = Some((idx, fit));
            }
        }
        match step {
            Some((idx, fit)) if fit.aic < best.aic - 1e-9 => {
                current.push(pool.remove(idx));
                best = fit;
            }
            _ => break,
        }
    }
    Ok(best.predictor)
}

/// Convex combination of candidates chosen by cross-validated squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    /// Out-of-fold MSE of each candidate.
    pub cv_risks: Vec<f64>,
    /// Out-of-fold MSE of the weighted combination.
    pub ensemble_cv_risk: f64,
    /// Full-data fits; `None` for candidates with zero weight.
    pub fits: Vec<Option<FittedCandidate>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Ensemble {
    pub fn predict(&self, a: f64, w: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.fits)
            .filter(|(wt, _)| **wt > 0.0)
            .map(|(wt, fit)| wt * fit.as_ref().expect("weighted candidate fitted").predictor.predict(a, w))
            .sum()
    }
}

pub(crate) fn fit_ensemble(
    task: Task,
    candidates: &[(String, CandidateKind)],
    rows: &Rows,
    folds: &Folds,
    n_covariates: usize,
) -> Result<Ensemble> {
    let n = rows.y.len();
    let k = candidates.len();
    let per_fold: Vec<(Vec<usize>, Vec<Vec<f64>>, Vec<bool>)> = (0..folds.k())
        .into_par_iter()
        .map(|v| {
            let (train, valid) = folds.split(v);
            let train_rows = rows.subset(&train);
            let mut preds = Vec::with_capacity(k);
            let mut fallbacks = Vec::with_capacity(k);
            for (_, kind) in candidates {
                let fit = fit_candidate(task, kind, &train_rows, n_covariates);
                preds.push(
                    valid
                        .iter()
                        .map(|&i| fit.predictor.predict(rows.a[i], rows.w[i]))
                        .collect(),
                );
                fallbacks.push(fit.fallback);
            }
            (valid, preds, fallbacks)
        })
        .collect();

    let mut z = vec![vec![0.0; n]; k];
    let mut warnings = Vec::new();
    for (v, (valid, preds, fallbacks)) in per_fold.iter().enumerate() {
        for c in 0..k {
            for (r, &i) in valid.iter().enumerate() {
                z[c][i] = preds[c][r];
            }
            if fallbacks[c] {
                warnings.push(format!(
                    "{}: singular design in fold {v}, fell back to mean",
                    candidates[c].0
                ));
            }
        }
    }
    let cv_risks: Vec<f64> = z
        .iter()
        .map(|col| col.iter().zip(&rows.y).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let weights = simplex::simplex_least_squares(&z, &rows.y);
    let ensemble_cv_risk = simplex::stacked_risk(&z, &rows.y, &weights);

    let fits: Vec<Option<FittedCandidate>> = candidates
        .par_iter()
        .zip(weights.par_iter())
        .map(|((_, kind), &wt)| (wt > 0.0).then(|| fit_candidate(task, kind, rows, n_covariates)))
        .collect();
    for ((name, _), fit) in candidates.iter().zip(&fits) {
        if matches!(fit, Some(f) if f.fallback) {
            warnings.push(format!("{name}: singular design on full data, fell back to mean"));
        }
    }
    Ok(Ensemble {
        names: candidates.iter().map(|(n, _)| n.clone()).collect(),
        weights,
        cv_risks,
        ensemble_cv_risk,
        fits,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_expansion_names_each_covariate() {
        let names = vec!["x".to_string(), "z".to_string()];
        let lib = expand_library(&default_blip_library(), &names).unwrap();
        let labels: Vec<&str> = lib.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            labels,
            ["mean", "main_terms", "univariate:x", "univariate:z", "stepwise_aic"]
        );
        assert!(expand_library(&[], &names).is_err());
    }

    #[test]
    fn library_spec_json_names() {
        let lib: Vec<LearnerSpec> =
            serde_json::from_str(r#"["mean","main_terms","univariate","stepwise_aic"]"#).unwrap();
        assert_eq!(lib, default_outcome_library());
    }

    #[test]
    fn stepwise_picks_the_signal_covariate() {
        let w: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i % 7) as f64, ((i * 13) % 5) as f64, (i % 2) as f64])
            .collect();
        let rows = Rows {
            a: vec![0.0; 200],
            w: w.iter().map(Vec::as_slice).collect(),
            y: w.iter().map(|x| 1.0 + 2.0 * x[1]).collect(),
        };
        let fit = stepwise(Task::Blip, &rows, 3).unwrap();
        assert_eq!(fit.terms[0], Term::Covariate(1));
    }
}
