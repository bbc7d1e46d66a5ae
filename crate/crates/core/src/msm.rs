//! Linear working model of value against the budget kappa, compared with the
//! chord from E[Y_0] to E[Y_1] (random allocation of the same budget).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EstimatorConfig;
use crate::crossfit::{CrossFit, Measure};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::{derive_seed, rng, stream};
use crate::tmle::{Target, ValueEstimate};

pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, kappa: f64) -> f64 {
        self.intercept + self.slope * kappa
    }
}

/// Exact unweighted least squares of value on kappa.
pub fn fit_msm(points: &[(f64, f64)]) -> Result<Line> {
    fit_msm_weighted(points, &vec![1.0; points.len()])
}

/// Weighted least squares; weights must be positive.
pub fn fit_msm_weighted(points: &[(f64, f64)], weights: &[f64]) -> Result<Line> {
    if points.len() != weights.len() {
        return Err(Error::invalid("weights", "length differs from the number of points"));
    }
    if points.iter().any(|(k, v)| !k.is_finite() || !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in working-model input".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights", "must be positive and finite"));
    }
    let sw: f64 = weights.iter().sum();
    let kbar = points.iter().zip(weights).map(|((k, _), w)| w * k).sum::<f64>() / sw;
    let vbar = points.iter().zip(weights).map(|((_, v), w)| w * v).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(weights).map(|((k, _), w)| w * (k - kbar).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(weights)
        .map(|((k, v), w)| w * (k - kbar) * (v - vbar))
        .sum();
    let distinct = points.iter().any(|(k, _)| (k - points[0].0).abs() > 0.0);
    if !distinct || !(sxx > 0.0) {
        return Err(Error::InvalidData(
            "working model needs at least two distinct kappa values".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(Line {
        intercept: vbar - slope * kbar,
        slope,
    })
}

/// Chord through the treat-none and treat-all values.
pub fn chord(treat_none: f64, treat_all: f64) -> Line {
    Line {
        intercept: treat_none,
        slope: treat_all - treat_none,
    }
}

/// Type-7 (linear interpolation) sample quantile; `values` need not be sorted.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    /// Refit nuisances, blips and rules on every resample.
    Refit,
    /// Keep the full-data cross-fitted predictions and rules; resample rows
    /// and re-target only.
    FixedRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmOptions {
    pub replicates: usize,
    pub mode: BootstrapMode,
    /// Weight each kappa by 1 / se^2.
    pub weighted: bool,
    pub level: f64,
}

impl Default for MsmOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            mode: BootstrapMode::Refit,
            weighted: false,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn covers(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub beta0: Interval,
    pub beta1: Interval,
    pub contrast_intercept: Interval,
    pub contrast_slope: Interval,
    pub replicates: usize,
    pub mode: BootstrapMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmFit {
    pub kappas: Vec<f64>,
    pub values: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub chord: Line,
    /// (beta0 - chord intercept, beta1 - chord slope)
    pub contrast: (f64, f64),
    pub boot_ci: Option<BootstrapCi>,
    #[serde(skip)]
    pub estimates: Vec<ValueEstimate>,
}

impl MsmFit {
    pub fn fitted(&self, kappa: f64) -> f64 {
        self.beta0 + self.beta1 * kappa
    }
}

/// One replicate's summary: (beta0, beta1, contrast intercept, contrast slope).
type Summary = [f64; 4];

fn summarize(cf: &CrossFit, grid: &[f64], weighted: bool) -> Result<(Summary, Vec<ValueEstimate>, Line)> {
    let estimates = cf.value_curve(grid)?;
    let none = cf.estimate(Target::TreatNone, Measure::Outcome)?;
    let all = cf.estimate(Target::TreatAll, Measure::Outcome)?;
    let points: Vec<(f64, f64)> = grid.iter().zip(&estimates).map(|(&k, e)| (k, e.psi)).collect();
    let line = if weighted {
        let w: Vec<f64> = estimates.iter().map(|e| 1.0 / e.se.max(1e-12).powi(2)).collect();
        fit_msm_weighted(&points, &w)?
    } else {
        fit_msm(&points)?
    };
    let ch = chord(none.psi, all.psi);
    Ok((
        [line.intercept, line.slope, line.intercept - ch.intercept, line.slope - ch.slope],
        estimates,
        ch,
    ))
}

fn draw_indices(n: usize, a: &[u8], seed: u64, replicate: usize) -> Result<Vec<usize>> {
    let mut r = rng(derive_seed(seed, stream::BOOTSTRAP, replicate as u64));
    for _ in 0..MAX_REDRAWS {
        let idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
        let treated = idx.iter().filter(|&&i| a[i] == 1).count();
        if treated > 0 && treated < n {
            return Ok(idx);
        }
    }
    Err(Error::BootstrapSingleArm {
        replicate,
        attempts: MAX_REDRAWS,
    })
}

/// Point fit from full-data CV-TMLE values plus nonparametric bootstrap
/// percentile intervals. `replicates = 0` skips the bootstrap.
pub fn msm_with_bootstrap(
    ds: &Dataset,
    grid: &[f64],
    cfg: &EstimatorConfig,
    opts: &MsmOptions,
) -> Result<MsmFit> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::invalid("level", "must lie in (0, 1)"));
    }
    let cf = CrossFit::fit(ds, cfg, false)?;
    let (point, estimates, ch) = summarize(&cf, grid, opts.weighted)?;
    let n = ds.len();
    let a = ds.treatments();

    let boot_ci = if opts.replicates > 0 {
        let reps: Vec<Summary> = (0..opts.replicates)
            .into_par_iter()
            .map(|b| -> Result<Summary> {
                let idx = draw_indices(n, &a, cfg.seed, b)?;
                match opts.mode {
                    BootstrapMode::FixedRule => Ok(summarize(&cf.resample(&idx), grid, opts.weighted)?.0),
                    BootstrapMode::Refit => {
                        let sample = ds.subset(&idx);
                        let rcfg = EstimatorConfig {
                            seed: derive_seed(cfg.seed, stream::BOOTSTRAP_FIT, b as u64),
                            ..cfg.clone()
                        };
                        let rcf = CrossFit::fit(&sample, &rcfg, false)?;
                        Ok(summarize(&rcf, grid, opts.weighted)?.0)
                    }
                }
            })
            .collect::<Result<_>>()?;
        let alpha = 1.0 - opts.level;
        let interval = |j: usize| {
            let col: Vec<f64> = reps.iter().map(|r| r[j]).collect();
            Interval {
                lower: quantile(&col, alpha / 2.0),
                upper: quantile(&col, 1.0 - alpha / 2.0),
            }
        };
        Some(BootstrapCi {
            beta0: interval(0),
            beta1: interval(1),
            contrast_intercept: interval(2),
            contrast_slope: interval(3),
            replicates: opts.replicates,
            mode: opts.mode,
        })
    } else {
        None
    };
    Ok(MsmFit {
        kappas: grid.to_vec(),
        values: estimates.iter().map(|e| e.psi).collect(),
        beta0: point[0],
        beta1: point[1],
        chord: ch,
        contrast: (point[2], point[3]),
        boot_ci,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = grid().iter().map(|&k| (k, 0.66 + 0.10 * k)).collect();
        let l = fit_msm(&pts).unwrap();
        assert!((l.intercept - 0.66).abs() < 1e-12);
        assert!((l.slope - 0.10).abs() < 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let l = fit_msm(&[(0.0, 0.3), (1.0, 0.8)]).unwrap();
        assert!((l.intercept - 0.3).abs() < 1e-15);
        assert!((l.slope - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_kappas_rejected() {
        assert!(fit_msm(&[(0.5, 0.1), (0.5, 0.2)]).is_err());
        assert!(fit_msm(&[(0.5, 0.1)]).is_err());
    }

    #[test]
    fn chord_endpoints() {
        let c = chord(0.61, 0.7);
        assert_eq!(c.at(0.0), 0.61);
        assert_eq!(c.intercept + c.slope, 0.61 + (0.7 - 0.61));
    }

    #[test]
    fn type7_quantile() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert!((quantile(&x, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&x, 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    proptest! {
        #[test]
        fn residuals_orthogonal(values in prop::collection::vec(-1.0f64..1.0, 11)) {
            let pts: Vec<(f64, f64)> = grid().into_iter().zip(values).collect();
            let l = fit_msm(&pts).unwrap();
            let r: Vec<f64> = pts.iter().map(|(k, v)| v - l.at(*k)).collect();
            prop_assert!(r.iter().sum::<f64>().abs() < 1e-10);
            prop_assert!(pts.iter().zip(&r).map(|((k, _), e)| k * e).sum::<f64>().abs() < 1e-10);
        }

        #[test]
        fn quantiles_monotone(x in prop::collection::vec(-10.0f64..10.0, 1..50), p in 0.0f64..1.0, q in 0.0f64..1.0) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(quantile(&x, lo) <= quantile(&x, hi));
        }
    }
}
