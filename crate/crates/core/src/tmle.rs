//! Targeted estimation of the value of a (possibly stochastic) treatment rule.
//!
//! All estimators reduce to [`target`]: per-row outcome predictions under both
//! arms, the propensity, and the rule's treatment probabilities go in; an
//! intercept-only logistic fluctuation weighted by the clever covariate is
//! fitted, and the plug-in and its influence function come out.

use serde::{Deserialize, Serialize};

use crate::config::z_for;
use crate::data::{OutcomeScale, ScaledDataset};
use crate::error::{Error, Result};
use crate::glm::{expit, logit};
use crate::learners::{OutcomeModel, PropensityModel};
use crate::rc_rule::RulePolicy;

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;

/// What a value estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Target {
    Policy { kappa: f64 },
    TreatAll,
    TreatNone,
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Policy { kappa } => format!("kappa={kappa}"),
            Target::TreatAll => "treat_all".into(),
            Target::TreatNone => "treat_none".into(),
        }
    }
}

/// Per-row inputs on the [0, 1] outcome scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowPredictions {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub q1: Vec<f64>,
    pub q0: Vec<f64>,
    /// g(1 | W), already truncated.
    pub g1: Vec<f64>,
}

impl RowPredictions {
    pub fn from_models(sd: &ScaledDataset, q: &OutcomeModel, g: &PropensityModel) -> Self {
        let obs = sd.data.observations();
        Self {
            y: obs.iter().map(|o| o.y).collect(),
            a: obs.iter().map(|o| o.a).collect(),
            q1: obs.iter().map(|o| q.predict(1, &o.w)).collect(),
            q0: obs.iter().map(|o| q.predict(0, &o.w)).collect(),
            g1: obs.iter().map(|o| g.predict(&o.w)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            q1: idx.iter().map(|&i| self.q1[i]).collect(),
            q0: idx.iter().map(|&i| self.q0[i]).collect(),
            g1: idx.iter().map(|&i| self.g1[i]).collect(),
        }
    }
}

/// A rule's treatment probabilities g~(1 | W_i) together with the threshold
/// entering the penalty term of the influence function.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub target: Target,
    pub kappa: f64,
    pub p1: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Assignment {
    /// Static rule; it goes through the same arithmetic as a policy whose
    /// threshold is zero.
    pub fn fixed(target: Target, n: usize) -> Self {
        let (p, kappa) = match target {
            Target::TreatAll => (1.0, 1.0),
            Target::TreatNone => (0.0, 0.0),
            Target::Policy { .. } => panic!("fixed assignment needs a static target"),
        };
        Self {
            target,
            kappa,
            p1: vec![p; n],
            tau: vec![0.0; n],
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            target: self.target,
            kappa: self.kappa,
            p1: idx.iter().map(|&i| self.p1[i]).collect(),
            tau: idx.iter().map(|&i| self.tau[i]).collect(),
        }
    }
}

/// Per-row influence-function pieces on the original outcome scale; their
/// row-wise sum is the influence value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EifComponents {
    /// H_i (Y_i - Q*(A_i, W_i))
    pub residual: Vec<f64>,
    /// sum_a Q*(a, W_i) g~(a | W_i)
    pub plug_in: Vec<f64>,
    /// -psi
    pub centering: Vec<f64>,
    /// -tau (g~(1 | W_i) - kappa)
    pub penalty: Vec<f64>,
}

impl EifComponents {
    pub fn total(&self) -> Vec<f64> {
        (0..self.residual.len())
            .map(|i| self.residual[i] + self.plug_in[i] + self.centering[i] + self.penalty[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub target: Target,
    pub psi: f64,
    /// sigma_n / sqrt(n)
    pub se: f64,
    pub ci: (f64, f64),
    pub n: usize,
    pub cv: bool,
    /// Mean threshold over folds; `None` for static rules.
    pub tau: Option<f64>,
    pub pct_treated: f64,
    pub pct_stochastic: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// (1/n) sum H_i (Y_i - Q*(A_i, W_i)) on the [0, 1] scale after fluctuation.
    pub score_residual: f64,
    #[serde(skip)]
    pub eif: Vec<f64>,
    #[serde(skip)]
    pub components: EifComponents,
}

impl ValueEstimate {
    pub fn kappa(&self) -> Option<f64> {
        match self.target {
            Target::Policy { kappa } => Some(kappa),
            _ => None,
        }
    }
}

struct Fluctuation {
    epsilon: f64,
    iterations: usize,
}

fn weighted_loglik(h: &[f64], y: &[f64], offset: &[f64], eps: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..h.len() {
        if h[i] == 0.0 {
            continue;
        }
        let p = expit(offset[i] + eps);
        ll += h[i] * (y[i] * p.max(1e-300).ln() + (1.0 - y[i]) * (1.0 - p).max(1e-300).ln());
    }
    ll
}

/// Intercept-only logistic regression of y on `offset` with weights `h`,
/// solved by Newton's method with step halving.
fn fluctuate(h: &[f64], y: &[f64], offset: &[f64]) -> Result<Fluctuation> {
    let n = h.len() as f64;
    if h.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidData("clever covariate is zero for every row".into()));
    }
    let mut eps = 0.0;
    let mut ll = weighted_loglik(h, y, offset, eps);
    for it in 0..NEWTON_MAX_ITER {
        let (mut grad, mut info) = (0.0, 0.0);
        for i in 0..h.len() {
            let p = expit(offset[i] + eps);
            grad += h[i] * (y[i] - p);
            info += h[i] * p * (1.0 - p);
        }
        if (grad / n).abs() < NEWTON_TOLERANCE {
            // one more step costs little and leaves the score at rounding level
            if info > 0.0 {
                let polished = eps + grad / info;
                let g2: f64 = (0..h.len()).map(|i| h[i] * (y[i] - expit(offset[i] + polished))).sum();
                if g2.abs() < grad.abs() {
                    eps = polished;
                }
            }
            return Ok(Fluctuation {
                epsilon: eps,
                iterations: it,
            });
        }
        if !(info > 0.0) {
            break;
        }
        let mut step = grad / info;
        let mut accepted = false;
        for _ in 0..50 {
            let trial = weighted_loglik(h, y, offset, eps + step);
            if trial >= ll - 1e-12 * ll.abs() {
                eps += step;
                ll = trial;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "fluctuation",
        iterations: NEWTON_MAX_ITER,
    })
}

/// Fluctuates, plugs in and assembles the influence function. `scale` maps
/// the [0, 1] results back to outcome units.
pub fn target(
    rows: &RowPredictions,
    assign: &Assignment,
    scale: OutcomeScale,
    z: f64,
    cv: bool,
) -> Result<ValueEstimate> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidData("no rows to target".into()));
    }
    if assign.p1.len() != n || assign.tau.len() != n {
        return Err(Error::InvalidData("assignment length does not match rows".into()));
    }
    let h: Vec<f64> = (0..n)
        .map(|i| {
            if rows.a[i] == 1 {
                assign.p1[i] / rows.g1[i]
            } else {
                (1.0 - assign.p1[i]) / (1.0 - rows.g1[i])
            }
        })
        .collect();
    let offset: Vec<f64> = (0..n)
        .map(|i| logit(if rows.a[i] == 1 { rows.q1[i] } else { rows.q0[i] }))
        .collect();
    let fl = fluctuate(&h, &rows.y, &offset)?;
    let eps = fl.epsilon;

    let mut residual = Vec::with_capacity(n);
    let mut plug_unit = Vec::with_capacity(n);
    let mut score = 0.0;
    for i in 0..n {
        let q1 = expit(logit(rows.q1[i]) + eps);
        let q0 = expit(logit(rows.q0[i]) + eps);
        let qa = if rows.a[i] == 1 { q1 } else { q0 };
        let r = h[i] * (rows.y[i] - qa);
        score += r;
        residual.push(r);
        plug_unit.push(q1 * assign.p1[i] + q0 * (1.0 - assign.p1[i]));
    }
    let psi_unit = plug_unit.iter().sum::<f64>() / n as f64;
    let width = scale.width();
    let psi = scale.from_unit(psi_unit);
    let components = EifComponents {
        residual: residual.iter().map(|r| r * width).collect(),
        plug_in: plug_unit.iter().map(|&p| scale.from_unit(p)).collect(),
        centering: vec![-psi; n],
        penalty: (0..n)
            .map(|i| -assign.tau[i] * (assign.p1[i] - assign.kappa) * width)
            .collect(),
    };
    let eif = components.total();
    let se = (eif.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt() / (n as f64).sqrt();
    let is_policy = matches!(assign.target, Target::Policy { .. });
    Ok(ValueEstimate {
        target: assign.target,
        psi,
        se,
        ci: (psi - z * se, psi + z * se),
        n,
        cv,
        tau: is_policy.then(|| assign.tau.iter().sum::<f64>() / n as f64),
        pct_treated: 100.0 * assign.p1.iter().sum::<f64>() / n as f64,
        pct_stochastic: 100.0 * assign.p1.iter().filter(|&&p| p > 0.0 && p < 1.0).count() as f64
            / n as f64,
        epsilon: eps,
        iterations: fl.iterations,
        score_residual: score / n as f64,
        eif,
        components,
    })
}

fn check_compatible(sd: &ScaledDataset, policy: &RulePolicy) -> Result<()> {
    if policy.model.covariate_names != sd.data.covariate_names() {
        return Err(Error::InvalidData(format!(
            "rule was fitted on covariates {:?}, data has {:?}",
            policy.model.covariate_names,
            sd.data.covariate_names()
        )));
    }
    Ok(())
}

/// TMLE of the value of `policy` with nuisances fitted on the same data.
pub fn tmle_value(
    sd: &ScaledDataset,
    policy: &RulePolicy,
    q: &OutcomeModel,
    g: &PropensityModel,
) -> Result<ValueEstimate> {
    check_compatible(sd, policy)?;
    let rows = RowPredictions::from_models(sd, q, g);
    let n = rows.len();
    let assign = Assignment {
        target: Target::Policy {
            kappa: policy.kappa(),
        },
        kappa: policy.kappa(),
        p1: policy.assign_all(&sd.data),
        tau: vec![policy.tau(); n],
    };
    target(&rows, &assign, sd.scale, z_for(0.95), false)
}

/// TMLE of E[Y_1] (`TreatAll`) or E[Y_0] (`TreatNone`).
pub fn tmle_static(
    sd: &ScaledDataset,
    rule: Target,
    q: &OutcomeModel,
    g: &PropensityModel,
) -> Result<ValueEstimate> {
    if matches!(rule, Target::Policy { .. }) {
        return Err(Error::invalid("rule", "expected treat_all or treat_none"));
    }
    let rows = RowPredictions::from_models(sd, q, g);
    let assign = Assignment::fixed(rule, rows.len());
    target(&rows, &assign, sd.scale, z_for(0.95), false)
}

/// Difference of two value estimates on the same rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub minuend: String,
    pub subtrahend: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    #[serde(skip)]
    pub eif: Vec<f64>,
}

impl Difference {
    /// Wald interval from an estimate and its influence function.
    pub fn from_eif(minuend: String, subtrahend: String, estimate: f64, eif: Vec<f64>, z: f64) -> Result<Self> {
        if eif.is_empty() {
            return Err(Error::InvalidData("contrast over zero rows".into()));
        }
        let n = eif.len() as f64;
        let se = (eif.iter().map(|d| d * d).sum::<f64>() / n).sqrt() / n.sqrt();
        Ok(Self {
            minuend,
            subtrahend,
            estimate,
            se,
            ci: (estimate - z * se, estimate + z * se),
            eif,
        })
    }
}

/// `a - b` with influence function D_a - D_b.
pub fn difference(a: &ValueEstimate, b: &ValueEstimate, z: f64) -> Result<Difference> {
    if a.eif.len() != b.eif.len() {
        return Err(Error::InvalidData(
            "contrast needs estimates over the same rows".into(),
        ));
    }
    let eif: Vec<f64> = a.eif.iter().zip(&b.eif).map(|(x, y)| x - y).collect();
    Difference::from_eif(a.target.label(), b.target.label(), a.psi - b.psi, eif, z)
}
