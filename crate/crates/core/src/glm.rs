//! Least squares and (quasi-)binomial logistic regression on small designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regressor built from treatment `a` and covariates `w`. The intercept is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Treatment,
    Covariate(usize),
    Interaction(usize),
}

impl Term {
    #[inline]
    pub fn value(&self, a: f64, w: &[f64]) -> f64 {
        match *self {
            Term::Treatment => a,
            Term::Covariate(j) => w[j],
            Term::Interaction(j) => a * w[j],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Intercept plus coefficients on `terms`, mapped through `link`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub terms: Vec<Term>,
    /// `coef[0]` is the intercept.
    pub coef: Vec<f64>,
    pub link: Link,
}

impl LinearPredictor {
    pub fn constant(value: f64, link: Link) -> Self {
        let coef = match link {
            Link::Identity => value,
            Link::Logit => logit(value.clamp(1e-12, 1.0 - 1e-12)),
        };
        Self {
            terms: Vec::new(),
            coef: vec![coef],
            link,
        }
    }

    pub fn linear(&self, a: f64, w: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coef[1..])
            .fold(self.coef[0], |acc, (t, b)| acc + b * t.value(a, w))
    }

    pub fn predict(&self, a: f64, w: &[f64]) -> f64 {
        let eta = self.linear(a, w);
        match self.link {
            Link::Identity => eta,
            Link::Logit => expit(eta),
        }
    }
}

/// Row-major design matrix with a leading intercept column.
pub struct Design {
    pub n: usize,
    pub p: usize,
    x: Vec<f64>,
}

impl Design {
    pub fn build<'a, I>(terms: &[Term], rows: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a [f64])>,
    {
        let p = terms.len() + 1;
        let mut x = Vec::new();
        let mut n = 0;
        for (a, w) in rows {
            x.push(1.0);
            x.extend(terms.iter().map(|t| t.value(a, w)));
            n += 1;
        }
        Self { n, p, x }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Solves `(X'WX) b = X'W z` by Cholesky, reporting near-singular systems.
fn weighted_normal_solve(design: &Design, weights: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let p = design.p;
    let mut xtx = vec![0.0; p * p];
    let mut xtz = vec![0.0; p];
    for i in 0..design.n {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        let r = design.row(i);
        for j in 0..p {
            let v = wi * r[j];
            xtz[j] += v * z[i];
            for k in j..p {
                xtx[j * p + k] += v * r[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            xtx[j * p + k] = xtx[k * p + j];
        }
    }
    let m = DMatrix::from_row_slice(p, p, &xtx);
    let max_diag = (0..p).map(|j| m[(j, j)]).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return Err(Error::Singular);
    }
    let chol = m.cholesky().ok_or(Error::Singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-10 * max_diag {
        return Err(Error::Singular);
    }
    let b = chol.solve(&DVector::from_vec(xtz));
    Ok(b.iter().copied().collect())
}

pub struct OlsFit {
    pub coef: Vec<f64>,
    pub rss: f64,
}

pub fn fit_ols(design: &Design, y: &[f64]) -> Result<OlsFit> {
    let ones = vec![1.0; design.n];
    let coef = weighted_normal_solve(design, &ones, y)?;
    let rss = (0..design.n)
        .map(|i| {
            let fitted: f64 = design.row(i).iter().zip(&coef).map(|(x, b)| x * b).sum();
            (y[i] - fitted).powi(2)
        })
        .sum();
    Ok(OlsFit { coef, rss })
}

pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub deviance: f64,
    pub converged: bool,
}

const ETA_CAP: f64 = 30.0;

fn binomial_deviance(y: &[f64], mu: &[f64]) -> f64 {
    let term = |t: f64, m: f64| if t > 0.0 { t * (t / m).ln() } else { 0.0 };
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&t, &m)| {
            let m = m.clamp(1e-300, 1.0 - 1e-16);
            term(t, m) + term(1.0 - t, 1.0 - m)
        })
        .sum::<f64>()
}

/// IRLS for a logistic mean with outcomes in [0, 1] (quasi-binomial when not 0/1).
/// Separated data stop at the iteration cap with `converged = false`.
pub fn fit_logistic(design: &Design, y: &[f64]) -> Result<LogisticFit> {
    let n = design.n;
    let p = design.p;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut coef = vec![0.0; p];
    coef[0] = logit(ybar.clamp(1e-6, 1.0 - 1e-6));
    let linear = |coef: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let eta: f64 = design.row(i).iter().zip(coef).map(|(x, b)| x * b).sum();
                eta.clamp(-ETA_CAP, ETA_CAP)
            })
            .collect()
    };
    let mut eta = linear(&coef);
    let mut mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut dev = binomial_deviance(y, &mu);
    let mut converged = false;
    let mut weights = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..50 {
        for i in 0..n {
            let v = (mu[i] * (1.0 - mu[i])).max(1e-10);
            weights[i] = v;
            z[i] = eta[i] + (y[i] - mu[i]) / v;
        }
        let proposal = weighted_normal_solve(design, &weights, &z)?;
        // step-halving on deviance
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let trial: Vec<f64> = coef
                .iter()
                .zip(&proposal)
                .map(|(c, p)| c + step * (p - c))
                .collect();
            let trial_eta = linear(&trial);
            let trial_mu: Vec<f64> = trial_eta.iter().map(|&e| expit(e)).collect();
            let trial_dev = binomial_deviance(y, &trial_mu);
            if trial_dev <= dev + 1e-12 * (1.0 + dev.abs()) {
                accepted = Some((trial, trial_eta, trial_mu, trial_dev));
                break;
            }
            step *= 0.5;
        }
        let Some((c, e, m, d)) = accepted else {
            converged = true;
            break;
        };
        let change = (dev - d).abs();
        coef = c;
        eta = e;
        mu = m;
        dev = d;
        if change < 1e-10 * (dev.abs() + 0.1) {
            converged = true;
            break;
        }
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(LogisticFit {
        coef,
        deviance: dev,
        converged,
    })
}
