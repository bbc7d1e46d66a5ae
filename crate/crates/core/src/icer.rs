//! Incremental cost-effectiveness of a constrained rule against a comparator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EstimatorConfig;
use crate::crossfit::{Comparator, CrossFit, Measure};
use crate::data::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::tmle::{Target, ValueEstimate};

/// Units of the effectiveness difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffectUnits {
    /// Percentage points for binary outcomes, raw units otherwise.
    #[default]
    PercentagePoints,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcerComponents {
    pub outcome_policy: ValueEstimate,
    pub outcome_comparator: ValueEstimate,
    pub cost_policy: ValueEstimate,
    pub cost_comparator: ValueEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcerEstimate {
    pub kappa: f64,
    pub comparator: Comparator,
    /// Expected incremental cost.
    pub numerator: f64,
    /// Expected incremental effect in `units`.
    pub denominator: f64,
    pub units: EffectUnits,
    /// `None` when the effect difference is within the instability guard.
    pub ratio: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub unstable: bool,
    pub components: IcerComponents,
    #[serde(skip)]
    pub ic: Vec<f64>,
}

pub fn icer_ratio(numerator: f64, denominator: f64) -> f64 {
    numerator / denominator
}

/// Assembles the ratio and its delta-method influence function from the four
/// component estimates. `den_epsilon` applies to the effect difference on the
/// [0, 1] scale, `outcome_width` being the width of the outcome's bounds.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    kappa: f64,
    comparator: Comparator,
    components: IcerComponents,
    units: EffectUnits,
    factor: f64,
    outcome_width: f64,
    den_epsilon: f64,
    z: f64,
) -> Result<IcerEstimate> {
    let c = &components;
    let n = c.outcome_policy.eif.len();
    if [&c.outcome_comparator, &c.cost_policy, &c.cost_comparator]
        .iter()
        .any(|e| e.eif.len() != n)
        || n == 0
    {
        return Err(Error::InvalidData("ICER components cover different rows".into()));
    }
    let numerator = c.cost_policy.psi - c.cost_comparator.psi;
    let effect = c.outcome_policy.psi - c.outcome_comparator.psi;
    let denominator = effect * factor;
    let unstable = (effect / outcome_width).abs() <= den_epsilon;
    let (ratio, se, ci, ic) = if unstable {
        (None, None, None, Vec::new())
    } else {
        let ratio = icer_ratio(numerator, denominator);
        let ic: Vec<f64> = (0..n)
            .map(|i| {
                let ic_num = c.cost_policy.eif[i] - c.cost_comparator.eif[i];
                let ic_den = (c.outcome_policy.eif[i] - c.outcome_comparator.eif[i]) * factor;
                (ic_num - ratio * ic_den) / denominator
            })
            .collect();
        let se = (ic.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt() / (n as f64).sqrt();
        (Some(ratio), Some(se), Some((ratio - z * se, ratio + z * se)), ic)
    };
    Ok(IcerEstimate {
        kappa,
        comparator,
        numerator,
        denominator,
        units,
        ratio,
        se,
        ci,
        unstable,
        components,
        ic,
    })
}

fn units_factor(kind: OutcomeKind, units: EffectUnits) -> (EffectUnits, f64) {
    match (kind, units) {
        (OutcomeKind::Binary, EffectUnits::PercentagePoints) => (EffectUnits::PercentagePoints, 100.0),
        _ => (EffectUnits::Raw, 1.0),
    }
}

/// ICER at one kappa from a cross-fit built with costs.
pub fn icer_from_crossfit(
    cf: &CrossFit,
    kind: OutcomeKind,
    kappa: f64,
    comparator: Comparator,
    units: EffectUnits,
    den_epsilon: f64,
) -> Result<IcerEstimate> {
    let policy = Target::Policy { kappa };
    let comp = comparator.target();
    let components = IcerComponents {
        outcome_policy: cf.estimate(policy, Measure::Outcome)?,
        outcome_comparator: cf.estimate(comp, Measure::Outcome)?,
        cost_policy: cf.estimate(policy, Measure::Cost)?,
        cost_comparator: cf.estimate(comp, Measure::Cost)?,
    };
    let (units, factor) = units_factor(kind, units);
    assemble(
        kappa,
        comparator,
        components,
        units,
        factor,
        cf.outcome_scale().width(),
        den_epsilon,
        cf.z(),
    )
}

pub fn icer(
    ds: &Dataset,
    kappa: f64,
    comparator: Comparator,
    cfg: &EstimatorConfig,
    units: EffectUnits,
) -> Result<IcerEstimate> {
    let cf = CrossFit::fit(ds, cfg, true)?;
    icer_from_crossfit(&cf, ds.outcome_kind(), kappa, comparator, units, cfg.den_epsilon)
}

/// Point on the cost-effectiveness plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub kappa: f64,
    pub denominator: f64,
    pub numerator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcerCurve {
    pub estimates: Vec<IcerEstimate>,
    pub plane: Vec<PlanePoint>,
}

pub fn icer_curve(
    ds: &Dataset,
    grid: &[f64],
    comparator: Comparator,
    cfg: &EstimatorConfig,
    units: EffectUnits,
) -> Result<IcerCurve> {
    let cf = CrossFit::fit(ds, cfg, true)?;
    let estimates: Vec<IcerEstimate> = grid
        .par_iter()
        .map(|&k| icer_from_crossfit(&cf, ds.outcome_kind(), k, comparator, units, cfg.den_epsilon))
        .collect::<Result<_>>()?;
    let plane = estimates
        .iter()
        .map(|e| PlanePoint {
            kappa: e.kappa,
            denominator: e.denominator,
            numerator: e.numerator,
        })
        .collect();
    Ok(IcerCurve { estimates, plane })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeScale;
    use crate::tmle::{target, Assignment, RowPredictions};
    use proptest::prelude::*;

    const Z: f64 = 1.959964;

    #[test]
    fn published_ratios() {
        assert!((icer_ratio(52.60, 9.74) - 5.40).abs() < 0.01);
        assert!((icer_ratio(5.18, 2.73) - 1.90).abs() < 0.01);
        assert_eq!(icer_ratio(0.0, 3.0), 0.0);
    }

    /// Four components built from a random two-arm sample; the cost is
    /// `unit * A` with a known scale.
    fn components(seed: u64, unit: f64, p1: f64) -> IcerComponents {
        use rand::Rng;
        let mut r = crate::folds::rng(seed);
        let n = 400;
        let mut rows = RowPredictions::default();
        let mut cost = RowPredictions::default();
        for _ in 0..n {
            let a = r.gen_bool(0.5) as u8;
            let p = 0.5 + 0.1 * a as f64;
            rows.y.push(r.gen_bool(p) as u8 as f64);
            rows.a.push(a);
            rows.q1.push(0.58);
            rows.q0.push(0.51);
            rows.g1.push(0.5);
            cost.y.push(a as f64);
            cost.a.push(a);
            cost.q1.push(1.0 - 1e-6);
            cost.q0.push(1e-6);
            cost.g1.push(0.5);
        }
        let policy = Assignment {
            target: Target::Policy { kappa: p1 },
            kappa: p1,
            p1: vec![p1; n],
            tau: vec![0.0; n],
        };
        let none = Assignment::fixed(Target::TreatNone, n);
        let cs = OutcomeScale::new(0.0, unit).unwrap();
        IcerComponents {
            outcome_policy: target(&rows, &policy, OutcomeScale::unit(), Z, true).unwrap(),
            outcome_comparator: target(&rows, &none, OutcomeScale::unit(), Z, true).unwrap(),
            cost_policy: target(&cost, &policy, cs, Z, true).unwrap(),
            cost_comparator: target(&cost, &none, cs, Z, true).unwrap(),
        }
    }

    fn build(c: IcerComponents) -> IcerEstimate {
        assemble(0.5, Comparator::TreatNone, c, EffectUnits::PercentagePoints, 100.0, 1.0, 1e-4, Z).unwrap()
    }

    #[test]
    fn comparator_equal_to_policy_is_unstable() {
        let mut c = components(1, 52.6, 0.4);
        c.outcome_comparator = c.outcome_policy.clone();
        c.cost_comparator = c.cost_policy.clone();
        let e = build(c);
        assert!(e.unstable && e.ratio.is_none() && e.ci.is_none());
        assert_eq!(e.denominator, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ratio_ic_is_centered_and_signs_cohere(seed in any::<u64>(), p1 in 0.2f64..1.0) {
            let e = build(components(seed, 52.6, p1));
            prop_assume!(!e.unstable);
            let c = &e.components;
            prop_assert_eq!(e.numerator.signum(), (c.cost_policy.psi - c.cost_comparator.psi).signum());
            prop_assert_eq!(e.denominator.signum(), (c.outcome_policy.psi - c.outcome_comparator.psi).signum());
            prop_assert_eq!(e.ratio.unwrap(), e.numerator / e.denominator);
            // the penalty terms vanish here (tau = 0), so the IC is centered
            let mean = e.ic.iter().sum::<f64>() / e.ic.len() as f64;
            prop_assert!(mean.abs() <= 1e-8 * (1.0 + e.ratio.unwrap().abs()), "{}", mean);
        }

        #[test]
        fn cost_units_scale_linearly(seed in any::<u64>(), factor in 0.1f64..20.0) {
            let base = build(components(seed, 52.6, 0.6));
            let scaled = build(components(seed, 52.6 * factor, 0.6));
            prop_assume!(!base.unstable);
            let tol = |x: f64| 1e-9 * (1.0 + x.abs() * factor);
            prop_assert!((scaled.numerator - factor * base.numerator).abs() < tol(base.numerator));
            prop_assert_eq!(scaled.denominator, base.denominator);
            prop_assert!((scaled.ratio.unwrap() - factor * base.ratio.unwrap()).abs() < tol(base.ratio.unwrap()));
            let (lo, hi) = scaled.ci.unwrap();
            let (blo, bhi) = base.ci.unwrap();
            prop_assert!((lo - factor * blo).abs() < tol(blo));
            prop_assert!((hi - factor * bhi).abs() < tol(bhi));
        }
    }
}
