//! Cross-fitted nuisances and rules for CV-TMLE.
//!
//! Each outer fold fits the outcome regression, propensity, blip model (and
//! optionally a cost regression) on its training rows and predicts on its
//! validation rows. The training-set blip distribution of each fold fixes that
//! fold's threshold for any kappa, so one [`CrossFit`] serves a whole grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BlipFit, EstimatorConfig};
use crate::data::{scale_outcome, Dataset, OutcomeScale, ScaledDataset};
use crate::error::{Error, Result};
use crate::folds::{derive_seed, stream, Folds};
use crate::learners::{fit_blip, fit_outcome, fit_propensity, BlipModel, OutcomeModel, PropensityModel};
use crate::rc_rule::{solve_threshold, BlipDistribution, RuleKind, ThresholdSolution};
use crate::tmle::{difference, target, Assignment, Difference, RowPredictions, Target, ValueEstimate};

/// Which outcome a value estimate is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Outcome,
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    TreatAll,
    TreatNone,
    Kappa(f64),
}

impl Comparator {
    pub fn target(self) -> Target {
        match self {
            Comparator::TreatAll => Target::TreatAll,
            Comparator::TreatNone => Target::TreatNone,
            Comparator::Kappa(kappa) => Target::Policy { kappa },
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossFit {
    rows: RowPredictions,
    cost_rows: Option<RowPredictions>,
    scale: OutcomeScale,
    cost_scale: Option<OutcomeScale>,
    fold: Vec<usize>,
    blip: Vec<f64>,
    /// Training-set blip distribution per fold.
    distributions: Vec<BlipDistribution>,
    z: f64,
    pub warnings: Vec<String>,
}

struct FoldFit {
    valid: Vec<usize>,
    q1: Vec<f64>,
    q0: Vec<f64>,
    g1: Vec<f64>,
    blip: Vec<f64>,
    cost: Option<(Vec<f64>, Vec<f64>)>,
    distribution: BlipDistribution,
    warnings: Vec<String>,
}

fn fold_fit(
    sd: &ScaledDataset,
    cost: Option<&Dataset>,
    folds: &Folds,
    v: usize,
    cfg: &EstimatorConfig,
) -> Result<FoldFit> {
    let (train_idx, valid) = folds.split(v);
    let train = sd.data.subset(&train_idx);
    train.require_both_arms()?;
    let sl_seed = derive_seed(cfg.seed, stream::SUPER_LEARNER, v as u64);
    let q = fit_outcome(&train, &cfg.outcome_library, cfg.sl_folds, sl_seed)?;
    let g = fit_propensity(&train, cfg.g_known, cfg.estimate_g, cfg.g_min)?;
    let blip_seed = derive_seed(cfg.seed, stream::FOLD_FIT, v as u64);
    let model = fit_blip(&train, &q, &g, &cfg.blip_library, cfg.sl_folds, blip_seed)?;
    let distribution = BlipDistribution::from_values(&model.predict_all(&train))?;

    let obs = sd.data.observations();
    let predict = |q: &OutcomeModel, a: u8| -> Vec<f64> {
        valid.iter().map(|&i| q.predict(a, &obs[i].w)).collect()
    };
    let cost = match cost {
        Some(cds) => {
            let qc = fit_outcome(&cds.subset(&train_idx), &cfg.outcome_library, cfg.sl_folds, sl_seed)?;
            Some((predict(&qc, 1), predict(&qc, 0)))
        }
        None => None,
    };
    let mut warnings: Vec<String> = q.ensemble.warnings.iter().map(|w| format!("fold {v} outcome: {w}")).collect();
    warnings.extend(model.ensemble.warnings.iter().map(|w| format!("fold {v} blip: {w}")));
    warnings.extend(g.warning.iter().map(|w| format!("fold {v}: {w}")));
    Ok(FoldFit {
        q1: predict(&q, 1),
        q0: predict(&q, 0),
        g1: valid.iter().map(|&i| g.predict(&obs[i].w)).collect(),
        blip: valid.iter().map(|&i| model.predict(&obs[i].w)).collect(),
        cost,
        distribution,
        warnings,
        valid,
    })
}

/// Nuisances and blip fitted on every row; the blip is on the [0, 1] outcome
/// scale.
#[derive(Debug, Clone)]
pub struct FullDataFit {
    pub scale: OutcomeScale,
    pub outcome: OutcomeModel,
    pub propensity: PropensityModel,
    pub blip: BlipModel,
}

fn fit_full(sd: &ScaledDataset, cfg: &EstimatorConfig) -> Result<FullDataFit> {
    let seed = derive_seed(cfg.seed, stream::FOLD_FIT, u64::MAX);
    let outcome = fit_outcome(&sd.data, &cfg.outcome_library, cfg.sl_folds, seed)?;
    let propensity = fit_propensity(&sd.data, cfg.g_known, cfg.estimate_g, cfg.g_min)?;
    let blip = fit_blip(&sd.data, &outcome, &propensity, &cfg.blip_library, cfg.sl_folds, seed)?;
    Ok(FullDataFit {
        scale: sd.scale,
        outcome,
        propensity,
        blip,
    })
}

/// Full-data fit used to report a single deployable rule.
pub fn fit_full_data(ds: &Dataset, cfg: &EstimatorConfig) -> Result<FullDataFit> {
    cfg.validate()?;
    ds.require_both_arms()?;
    fit_full(&scale_outcome(ds)?, cfg)
}

impl CrossFit {
    /// Fits every fold. With `with_cost` the dataset must carry costs, which
    /// are regressed on (A, W) after scaling to [0, 1].
    pub fn fit(ds: &Dataset, cfg: &EstimatorConfig, with_cost: bool) -> Result<Self> {
        cfg.validate()?;
        ds.require_both_arms()?;
        let sd = scale_outcome(ds)?;
        let cost = if with_cost {
            Some(ds.cost_as_outcome()?)
        } else {
            None
        };
        let n = ds.len();
        let treatments = ds.treatments();
        let folds = Folds::stratified(
            &treatments,
            cfg.folds,
            derive_seed(cfg.seed, stream::OUTER_FOLDS, 0),
        )?;
        let fits: Vec<FoldFit> = (0..folds.k())
            .into_par_iter()
            .map(|v| fold_fit(&sd, cost.as_ref().map(|c| &c.0), &folds, v, cfg))
            .collect::<Result<_>>()?;

        let mut rows = RowPredictions {
            y: sd.data.outcomes(),
            a: treatments,
            q1: vec![0.0; n],
            q0: vec![0.0; n],
            g1: vec![0.0; n],
        };
        let mut cost_rows = cost.as_ref().map(|(cds, _)| RowPredictions {
            y: cds.outcomes(),
            a: rows.a.clone(),
            q1: vec![0.0; n],
            q0: vec![0.0; n],
            g1: vec![0.0; n],
        });
        let mut blip = vec![0.0; n];
        let mut distributions = Vec::with_capacity(fits.len());
        let shared = match cfg.blip_fit {
            BlipFit::PerFold => None,
            BlipFit::Shared => {
                let full = fit_full(&sd, cfg)?;
                let values = full.blip.predict_all(&sd.data);
                Some((BlipDistribution::from_values(&values)?, values))
            }
        };
        let mut warnings = Vec::new();
        for f in fits {
            for (r, &i) in f.valid.iter().enumerate() {
                rows.q1[i] = f.q1[r];
                rows.q0[i] = f.q0[r];
                rows.g1[i] = f.g1[r];
                blip[i] = f.blip[r];
                if let (Some(cr), Some((c1, c0))) = (cost_rows.as_mut(), f.cost.as_ref()) {
                    cr.q1[i] = c1[r];
                    cr.q0[i] = c0[r];
                    cr.g1[i] = f.g1[r];
                }
            }
            distributions.push(f.distribution);
            warnings.extend(f.warnings);
        }
        if let Some((dist, values)) = shared {
            blip = values;
            distributions = vec![dist; distributions.len()];
        }
        Ok(Self {
            rows,
            cost_rows,
            scale: sd.scale,
            cost_scale: cost.map(|c| c.1),
            fold: folds.assignment().to_vec(),
            blip,
            distributions,
            z: cfg.z(),
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_cost(&self) -> bool {
        self.cost_rows.is_some()
    }

    pub fn outcome_scale(&self) -> OutcomeScale {
        self.scale
    }

    pub fn treatments(&self) -> &[u8] {
        &self.rows.a
    }

    /// Cross-fitted blip predictions.
    pub fn blips(&self) -> &[f64] {
        &self.blip
    }

    pub fn thresholds(&self, kappa: f64) -> Result<Vec<ThresholdSolution>> {
        self.distributions
            .iter()
            .map(|d| solve_threshold(d, kappa))
            .collect()
    }

    /// Per-row treatment probabilities and thresholds of `t` on validation rows.
    pub fn assignment(&self, t: Target) -> Result<Assignment> {
        match t {
            Target::Policy { kappa } => {
                let sols = self.thresholds(kappa)?;
                let p1 = (0..self.len())
                    .map(|i| sols[self.fold[i]].treatment_probability(self.blip[i], RuleKind::Stochastic))
                    .collect();
                let tau = (0..self.len()).map(|i| sols[self.fold[i]].tau).collect();
                Ok(Assignment { target: t, kappa, p1, tau })
            }
            _ => Ok(Assignment::fixed(t, self.len())),
        }
    }

    fn rows_for(&self, m: Measure) -> Result<(&RowPredictions, OutcomeScale)> {
        match m {
            Measure::Outcome => Ok((&self.rows, self.scale)),
            Measure::Cost => match (&self.cost_rows, self.cost_scale) {
                (Some(r), Some(s)) => Ok((r, s)),
                _ => Err(Error::InvalidData("cross-fit was built without costs".into())),
            },
        }
    }

    /// CV-TMLE with one pooled fluctuation over all validation rows.
    pub fn estimate(&self, t: Target, m: Measure) -> Result<ValueEstimate> {
        let (rows, scale) = self.rows_for(m)?;
        target(rows, &self.assignment(t)?, scale, self.z, true)
    }

    pub fn value(&self, kappa: f64) -> Result<ValueEstimate> {
        self.estimate(Target::Policy { kappa }, Measure::Outcome)
    }

    pub fn value_curve(&self, grid: &[f64]) -> Result<Vec<ValueEstimate>> {
        grid.iter().map(|&k| self.value(k)).collect()
    }

    pub fn contrast(&self, kappa: f64, comparator: Comparator) -> Result<Difference> {
        let a = self.value(kappa)?;
        let b = self.estimate(comparator.target(), Measure::Outcome)?;
        difference(&a, &b, self.z)
    }

    /// Value at `kappa` minus the chord (1 - kappa) E[Y_0] + kappa E[Y_1].
    pub fn chord_contrast(&self, kappa: f64) -> Result<Difference> {
        let v = self.value(kappa)?;
        let none = self.estimate(Target::TreatNone, Measure::Outcome)?;
        let all = self.estimate(Target::TreatAll, Measure::Outcome)?;
        let eif = (0..v.eif.len())
            .map(|i| v.eif[i] - (1.0 - kappa) * none.eif[i] - kappa * all.eif[i])
            .collect();
        let chord = (1.0 - kappa) * none.psi + kappa * all.psi;
        Difference::from_eif(v.target.label(), format!("chord({kappa})"), v.psi - chord, eif, self.z)
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// The same cross-fitted predictions and fold rules on resampled rows
    /// (repeats allowed); used by the fixed-rule bootstrap.
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            rows: self.rows.subset(idx),
            cost_rows: self.cost_rows.as_ref().map(|r| r.subset(idx)),
            scale: self.scale,
            cost_scale: self.cost_scale,
            fold: idx.iter().map(|&i| self.fold[i]).collect(),
            blip: idx.iter().map(|&i| self.blip[i]).collect(),
            distributions: self.distributions.clone(),
            z: self.z,
            warnings: Vec::new(),
        }
    }
}

/// CV-TMLE of the value of the resource-constrained rule at `kappa`.
pub fn cv_tmle_value(ds: &Dataset, kappa: f64, cfg: &EstimatorConfig) -> Result<ValueEstimate> {
    CrossFit::fit(ds, cfg, false)?.value(kappa)
}

/// CV-TMLE contrast of the rule at `kappa` with a comparator, sharing folds
/// and nuisances.
pub fn contrast(
    ds: &Dataset,
    kappa: f64,
    comparator: Comparator,
    cfg: &EstimatorConfig,
) -> Result<Difference> {
    CrossFit::fit(ds, cfg, false)?.contrast(kappa, comparator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, CostRule, DgpKind, DgpSpec};
    use crate::learners::LearnerSpec;

    fn lean() -> EstimatorConfig {
        EstimatorConfig {
            outcome_library: vec![LearnerSpec::Mean, LearnerSpec::MainTerms],
            blip_library: vec![LearnerSpec::Mean, LearnerSpec::MainTerms],
            folds: 5,
            sl_folds: 5,
            g_known: Some(0.5),
            estimate_g: false,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = generate(&DgpSpec::adaptr_like(4), 600).unwrap();
        let a = CrossFit::fit(&ds, &lean(), false).unwrap().value(0.4).unwrap();
        let b = CrossFit::fit(&ds, &lean(), false).unwrap().value(0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_kappas_match_static_rules_bitwise() {
        let ds = generate(&DgpSpec::new(DgpKind::ConstantBlip { blip: 0.2 }, 5), 800).unwrap();
        let cf = CrossFit::fit(&ds, &lean(), false).unwrap();
        assert!(cf.blips().iter().all(|&b| b > 0.0));
        let k0 = cf.value(0.0).unwrap();
        let none = cf.estimate(Target::TreatNone, Measure::Outcome).unwrap();
        assert_eq!(k0.psi.to_bits(), none.psi.to_bits());
        assert_eq!(k0.eif, none.eif);
        let k1 = cf.value(1.0).unwrap();
        let all = cf.estimate(Target::TreatAll, Measure::Outcome).unwrap();
        assert_eq!(k1.psi.to_bits(), all.psi.to_bits());
        assert_eq!(k1.se.to_bits(), all.se.to_bits());
    }

    #[test]
    fn self_contrast_is_zero() {
        let ds = generate(&DgpSpec::adaptr_like(6), 400).unwrap();
        let cf = CrossFit::fit(&ds, &lean(), false).unwrap();
        let d = cf.contrast(0.3, Comparator::Kappa(0.3)).unwrap();
        assert_eq!(d.estimate, 0.0);
        assert_eq!(d.ci, (0.0, 0.0));
    }

    #[test]
    fn shared_blip_uses_one_threshold() {
        let ds = generate(&DgpSpec::adaptr_like(2), 600).unwrap();
        let cfg = EstimatorConfig { blip_fit: BlipFit::Shared, ..lean() };
        let cf = CrossFit::fit(&ds, &cfg, false).unwrap();
        let sols = cf.thresholds(0.4).unwrap();
        assert!(sols.windows(2).all(|w| w[0] == w[1]));
        let v = cf.value(0.4).unwrap();
        assert!((v.pct_treated - 40.0).abs() <= 100.0 / 600.0 + 1e-9);
    }

    #[test]
    fn cost_requires_cost_column() {
        let ds = generate(&DgpSpec::adaptr_like(6), 300).unwrap();
        assert!(CrossFit::fit(&ds, &lean(), true).is_err());
        let cf = CrossFit::fit(&ds, &lean(), false).unwrap();
        assert!(cf.estimate(Target::TreatAll, Measure::Cost).is_err());
        let ds = generate(&DgpSpec::adaptr_like(6).with_cost(CostRule::default()), 300).unwrap();
        let cf = CrossFit::fit(&ds, &lean(), true).unwrap();
        let c = cf.estimate(Target::TreatAll, Measure::Cost).unwrap();
        assert!((c.psi - 52.60).abs() < 1e-3, "{}", c.psi);
    }

    #[test]
    fn resample_identity_reproduces_estimate() {
        let ds = generate(&DgpSpec::adaptr_like(8), 500).unwrap();
        let cf = CrossFit::fit(&ds, &lean(), false).unwrap();
        let idx: Vec<usize> = (0..cf.len()).collect();
        assert_eq!(cf.value(0.5).unwrap(), cf.resample(&idx).value(0.5).unwrap());
    }
}
