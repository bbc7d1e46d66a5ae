use rayon::prelude::*;

use rc_odtr::config::z_for;
use rc_odtr::crossfit::{Comparator, CrossFit, Measure};
use rc_odtr::data::{OutcomeKind, OutcomeScale};
use rc_odtr::dgp::{generate, oracle, CostRule, DgpKind, DgpSpec};
use rc_odtr::icer::{icer_from_crossfit, EffectUnits};
use rc_odtr::learners::LearnerSpec;
use rc_odtr::msm::{msm_with_bootstrap, BootstrapMode, MsmOptions};
use rc_odtr::rc_rule::{solve_threshold, BlipDistribution, RuleKind};
use rc_odtr::tmle::{difference, target, Assignment, RowPredictions, Target};
use rc_odtr::EstimatorConfig;

fn trial(seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        g_known: Some(0.5),
        estimate_g: false,
        seed,
        ..Default::default()
    }
}

fn lean(seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        outcome_library: vec![LearnerSpec::Mean, LearnerSpec::MainTerms],
        blip_library: vec![LearnerSpec::Mean, LearnerSpec::MainTerms, LearnerSpec::Univariate],
        folds: 5,
        sl_folds: 5,
        ..trial(seed)
    }
}

fn covers(ci: (f64, f64), x: f64) -> bool {
    ci.0 <= x && x <= ci.1
}

fn rate(hits: &[bool]) -> f64 {
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

#[test]
fn targeting_with_true_nuisances_hits_the_oracle_value() {
    let spec = DgpSpec::adaptr_like(31);
    let ds = generate(&spec, 20_000).unwrap();
    let table = spec.cell_table().unwrap().unwrap();
    let cell = |w: &[f64]| table.cells.iter().find(|c| c.levels == w).unwrap();
    let masses: Vec<(f64, f64)> = table.cells.iter().map(|c| (c.blip, c.mass)).collect();
    let sol = solve_threshold(&BlipDistribution::from_masses(&masses).unwrap(), 0.5).unwrap();
    assert!((sol.tau - 0.08).abs() < 1e-12);

    let mut rows = RowPredictions::default();
    let mut p1 = Vec::new();
    for o in ds.observations() {
        let c = cell(&o.w);
        rows.y.push(o.y);
        rows.a.push(o.a);
        rows.q0.push(c.baseline);
        rows.q1.push(c.baseline + c.blip);
        rows.g1.push(0.5);
        p1.push(sol.treatment_probability(c.blip, RuleKind::Stochastic));
    }
    let n = ds.len();
    let assign = Assignment {
        target: Target::Policy { kappa: 0.5 },
        kappa: 0.5,
        p1,
        tau: vec![sol.tau; n],
    };
    let est = target(&rows, &assign, OutcomeScale::unit(), z_for(0.95), false).unwrap();
    let truth = oracle(&spec, &[0.5]).unwrap().points[0].value;
    assert!((truth - 0.7261).abs() < 1e-3, "oracle {truth}");
    assert!((est.psi - truth).abs() <= 3.0 * est.se, "psi {} se {} truth {truth}", est.psi, est.se);
}

#[test]
fn null_effect_coverage() {
    let reps = 200u64;
    let kappas = [0.0, 0.5, 1.0];
    let hits: Vec<[bool; 3]> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = generate(&DgpSpec::new(DgpKind::NullEffect, 70_000 + r), 1000).unwrap();
            let cf = CrossFit::fit(&ds, &trial(r), false).unwrap();
            let mut h = [false; 3];
            for (j, &k) in kappas.iter().enumerate() {
                h[j] = covers(cf.value(k).unwrap().ci, 0.5);
            }
            h
        })
        .collect();
    for (j, k) in kappas.iter().enumerate() {
        let c = rate(&hits.iter().map(|h| h[j]).collect::<Vec<_>>());
        assert!((0.90..=0.98).contains(&c), "kappa {k}: coverage {c}");
    }
}

#[test]
fn adaptr_curve_coverage() {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let spec = DgpSpec::adaptr_like(0);
    let truth: Vec<f64> = oracle(&spec, &grid).unwrap().points.iter().map(|p| p.value).collect();
    assert!(truth.windows(2).all(|w| w[1] >= w[0]));
    let reps = 200u64;
    let hits: Vec<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = generate(&spec.clone().with_seed(80_000 + r), 2000).unwrap();
            let cf = CrossFit::fit(&ds, &trial(r), false).unwrap();
            grid.iter()
                .zip(&truth)
                .map(|(&k, &t)| covers(cf.value(k).unwrap().ci, t))
                .collect()
        })
        .collect();
    for (j, k) in grid.iter().enumerate() {
        let c = rate(&hits.iter().map(|h| h[j]).collect::<Vec<_>>());
        assert!(c >= 0.90, "kappa {k}: coverage {c}");
    }
}

#[test]
fn large_sample_values_and_contrast() {
    let spec = DgpSpec::adaptr_like(32);
    let report = oracle(&spec, &[0.0, 1.0]).unwrap();
    let ds = generate(&spec, 20_000).unwrap();
    let cf = CrossFit::fit(&ds, &trial(32), false).unwrap();
    let all = cf.value(1.0).unwrap();
    assert!((report.e_y1 - 0.7639).abs() < 1e-3);
    assert!((all.psi - report.e_y1).abs() <= 3.0 * all.se, "{} vs {}", all.psi, report.e_y1);
    let d = cf.contrast(1.0, Comparator::Kappa(0.0)).unwrap();
    assert!(covers(d.ci, report.ate), "{:?} vs {}", d.ci, report.ate);
    let same = cf.contrast(0.4, Comparator::Kappa(0.4)).unwrap();
    assert_eq!(same.estimate, 0.0);
    assert_eq!(same.ci, (0.0, 0.0));
}

#[test]
fn chord_contrast_coverage_without_heterogeneity() {
    let reps = 200u64;
    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = generate(&DgpSpec::new(DgpKind::ConstantBlip { blip: 0.1 }, 90_000 + r), 1000).unwrap();
            let cf = CrossFit::fit(&ds, &lean(r), false).unwrap();
            covers(cf.chord_contrast(0.5).unwrap().ci, 0.0)
        })
        .collect();
    let c = rate(&hits);
    assert!((0.90..=0.99).contains(&c), "coverage {c}");
}

#[test]
fn single_replicate_msm_is_reproducible() {
    let ds = generate(&DgpSpec::adaptr_like(33), 600).unwrap();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    for mode in [BootstrapMode::Refit, BootstrapMode::FixedRule] {
        let opts = MsmOptions { replicates: 1, mode, ..Default::default() };
        let a = msm_with_bootstrap(&ds, &grid, &lean(5), &opts).unwrap();
        let b = msm_with_bootstrap(&ds, &grid, &lean(5), &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.boot_ci.is_some());
    }
}

fn with_cost(seed: u64) -> DgpSpec {
    DgpSpec::adaptr_like(seed).with_cost(CostRule::default())
}

#[test]
fn icer_against_treat_none_at_full_budget() {
    let spec = with_cost(34);
    let report = oracle(&spec, &[1.0]).unwrap();
    let truth = report.points[0].cost_minus_treat_none.unwrap() / (100.0 * report.ate);
    assert!((truth - 5.3155).abs() < 1e-3, "oracle ratio {truth}");
    let ds = generate(&spec, 20_000).unwrap();
    let cf = CrossFit::fit(&ds, &trial(34), true).unwrap();
    let e = icer_from_crossfit(&cf, OutcomeKind::Binary, 1.0, Comparator::TreatNone, EffectUnits::PercentagePoints, 1e-4)
        .unwrap();
    let (ratio, se) = (e.ratio.unwrap(), e.se.unwrap());
    assert!((ratio - truth).abs() <= 3.0 * se, "ratio {ratio} se {se} truth {truth}");
}

#[test]
fn icer_numerators_grow_with_budget() {
    let spec = with_cost(35);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let report = oracle(&spec, &grid).unwrap();
    let oracle_num: Vec<f64> = report.points.iter().map(|p| p.cost_minus_treat_none.unwrap()).collect();
    assert!(oracle_num.windows(2).all(|w| w[1] > w[0]));
    for (p, &k) in report.points.iter().zip(&grid) {
        assert!((p.cost_minus_treat_none.unwrap() - 52.60 * k).abs() < 1e-9);
    }
    let ds = generate(&spec, 5000).unwrap();
    let cf = CrossFit::fit(&ds, &lean(35), true).unwrap();
    let none = cf.estimate(Target::TreatNone, Measure::Cost).unwrap();
    let nums: Vec<_> = grid
        .iter()
        .map(|&k| difference(&cf.estimate(Target::Policy { kappa: k }, Measure::Cost).unwrap(), &none, cf.z()).unwrap())
        .collect();
    for w in nums.windows(2) {
        let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        assert!(w[1].estimate >= w[0].estimate - 3.0 * se, "{} then {}", w[0].estimate, w[1].estimate);
    }
}

#[test]
fn icer_coverage_at_small_budget() {
    let spec = with_cost(0);
    let p = oracle(&spec, &[0.1]).unwrap().points[0].clone();
    let truth = p.cost_minus_treat_none.unwrap() / (100.0 * p.value_minus_treat_none);
    assert!((truth - 2.70).abs() < 0.01, "oracle ratio {truth}");
    let reps = 100u64;
    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = generate(&spec.clone().with_seed(95_000 + r), 5000).unwrap();
            let cf = CrossFit::fit(&ds, &lean(r), true).unwrap();
            let e = icer_from_crossfit(&cf, OutcomeKind::Binary, 0.1, Comparator::TreatNone, EffectUnits::PercentagePoints, 1e-4)
                .unwrap();
            e.ci.is_some_and(|ci| covers(ci, truth))
        })
        .collect();
    let c = rate(&hits);
    assert!(c >= 0.90, "coverage {c}");
}
