//! Resource-constrained treatment rules: blip survival function, threshold
//! search, and the stochastic tie-breaking rule.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::BlipModel;

/// Blip predictions within this distance are one atom of the distribution.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Slack for comparing sums of `1/n` masses against kappa.
const MASS_SLACK: f64 = 1e-12;

/// Fraction of `blips` strictly greater than `tau`.
pub fn survival(blips: &[f64], tau: f64) -> f64 {
    if blips.is_empty() {
        return 0.0;
    }
    blips.iter().filter(|&&b| b > tau).count() as f64 / blips.len() as f64
}

/// Discrete blip distribution: atoms in ascending order with probability masses.
#[derive(Debug, Clone, PartialEq)]
pub struct BlipDistribution {
    atoms: Vec<(f64, f64)>,
}

impl BlipDistribution {
    /// Empirical distribution, grouping values within [`TIE_TOLERANCE`] of the
    /// smallest member of their group.
    pub fn from_values(blips: &[f64]) -> Result<Self> {
        if blips.is_empty() {
            return Err(Error::InvalidData("no blip values".into()));
        }
        if blips.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidData("non-finite blip value".into()));
        }
        let mut sorted = blips.to_vec();
        sorted.sort_by(f64::total_cmp);
        let unit = 1.0 / sorted.len() as f64;
        let mut atoms: Vec<(f64, usize)> = Vec::new();
        for b in sorted {
            match atoms.last_mut() {
                Some((v, count)) if b - *v <= TIE_TOLERANCE => *count += 1,
                _ => atoms.push((b, 1)),
            }
        }
        Ok(Self {
            atoms: atoms.into_iter().map(|(v, c)| (v, c as f64 * unit)).collect(),
        })
    }

    /// From `(value, mass)` pairs; masses are renormalized to sum to one.
    pub fn from_masses(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidData("empty mass function".into()));
        }
        if pairs.iter().any(|&(v, m)| !v.is_finite() || !m.is_finite() || m < 0.0) {
            return Err(Error::InvalidData("mass function needs finite values and nonnegative masses".into()));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(Error::InvalidData("mass function has zero total mass".into()));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (v, m) in sorted {
            match atoms.last_mut() {
                Some((av, am)) if v - *av <= TIE_TOLERANCE => *am += m / total,
                _ => atoms.push((v, m / total)),
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Mass strictly above `tau` (atoms within tolerance of `tau` excluded).
    pub fn survival(&self, tau: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(v, _)| *v > tau + TIE_TOLERANCE)
            .map(|(_, m)| m)
            .sum()
    }

    /// Mass of the atom at `tau`, or zero.
    pub fn mass_at(&self, tau: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(v, _)| (*v - tau).abs() <= TIE_TOLERANCE)
            .map(|(_, m)| m)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub kappa: f64,
    /// `-inf` when the constraint never binds.
    pub eta: f64,
    pub tau: f64,
    pub s_at_tau: f64,
    pub tie_mass: f64,
    pub tie_prob: f64,
}

impl ThresholdSolution {
    pub fn expected_treated(&self) -> f64 {
        self.s_at_tau + self.tie_prob * self.tie_mass
    }

    /// g(1 | w) for a unit whose blip is `blip`.
    pub fn treatment_probability(&self, blip: f64, kind: RuleKind) -> f64 {
        if blip > self.tau + TIE_TOLERANCE {
            1.0
        } else if (blip - self.tau).abs() <= TIE_TOLERANCE && self.tau > 0.0 {
            match kind {
                RuleKind::Stochastic => self.tie_prob,
                RuleKind::Deterministic => 0.0,
            }
        } else {
            0.0
        }
    }
}

/// eta = inf{t : S(t) <= kappa}, tau = max(eta, 0), and the tie probability
/// that spends the remaining budget on the atom at tau.
pub fn solve_threshold(dist: &BlipDistribution, kappa: f64) -> Result<ThresholdSolution> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::invalid("kappa", format!("must lie in [0, 1], got {kappa}")));
    }
    let atoms = dist.atoms();
    // S below the smallest atom is the total mass, 1
    let eta = if 1.0 <= kappa + MASS_SLACK {
        f64::NEG_INFINITY
    } else {
        let mut above = 0.0;
        let mut eta = atoms[atoms.len() - 1].0;
        // descending scan: S(v_j) is the mass of atoms after j
        for j in (0..atoms.len()).rev() {
            if above <= kappa + MASS_SLACK {
                eta = atoms[j].0;
            } else {
                break;
            }
            above += atoms[j].1;
        }
        eta
    };
    let tau = eta.max(0.0);
    let s_at_tau = dist.survival(tau);
    let tie_mass = dist.mass_at(tau);
    let tie_prob = if tau > 0.0 && tie_mass > 0.0 {
        ((kappa - s_at_tau) / tie_mass).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(ThresholdSolution {
        kappa,
        eta,
        tau,
        s_at_tau,
        tie_mass,
        tie_prob,
    })
}

/// A fitted blip model together with its threshold at one kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct RulePolicy {
    pub kind: RuleKind,
    pub threshold: ThresholdSolution,
    pub model: BlipModel,
}

impl RulePolicy {
    pub fn kappa(&self) -> f64 {
        self.threshold.kappa
    }

    pub fn tau(&self) -> f64 {
        self.threshold.tau
    }

    /// g(1 | w)
    pub fn assign(&self, w: &[f64]) -> f64 {
        self.threshold
            .treatment_probability(self.model.predict(w), self.kind)
    }

    pub fn assign_all(&self, ds: &Dataset) -> Vec<f64> {
        ds.observations().iter().map(|o| self.assign(&o.w)).collect()
    }

    pub fn summary(&self, ds: &Dataset) -> RuleSummary {
        RuleSummary::new(&self.threshold, &self.assign_all(ds))
    }
}

/// Solves the threshold on the in-sample blip distribution of `ds`.
pub fn build_policy(model: &BlipModel, ds: &Dataset, kappa: f64) -> Result<RulePolicy> {
    if ds.is_empty() {
        return Err(Error::InvalidData("empty dataset".into()));
    }
    let dist = BlipDistribution::from_values(&model.predict_all(ds))?;
    Ok(RulePolicy {
        kind: RuleKind::Stochastic,
        threshold: solve_threshold(&dist, kappa)?,
        model: model.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub kappa: f64,
    pub tau: f64,
    /// `None` stands for minus infinity.
    pub eta: Option<f64>,
    pub s_at_tau: f64,
    pub tie_mass: f64,
    pub tie_prob: f64,
    pub pct_treated: f64,
    pub pct_stochastic: f64,
}

impl RuleSummary {
    pub fn new(t: &ThresholdSolution, assigned: &[f64]) -> Self {
        let n = assigned.len().max(1) as f64;
        Self {
            kappa: t.kappa,
            tau: t.tau,
            eta: t.eta.is_finite().then_some(t.eta),
            s_at_tau: t.s_at_tau,
            tie_mass: t.tie_mass,
            tie_prob: t.tie_prob,
            pct_treated: 100.0 * assigned.iter().sum::<f64>() / n,
            pct_stochastic: 100.0 * assigned.iter().filter(|&&p| p > 0.0 && p < 1.0).count() as f64 / n,
        }
    }
}
