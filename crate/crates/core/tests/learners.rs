use rayon::prelude::*;

use rc_odtr::dgp::{generate, oracle, CellTable, DgpKind, DgpSpec};
use rc_odtr::learners::{
    default_outcome_library, fit_blip, fit_outcome, make_pseudo_outcome, subgroup_scan, LearnerSpec,
    PropensityModel,
};
use rc_odtr::Dataset;

fn table(spec: &DgpSpec) -> CellTable {
    spec.cell_table().unwrap().unwrap()
}

fn blip_library() -> Vec<LearnerSpec> {
    vec![LearnerSpec::Mean, LearnerSpec::MainTerms, LearnerSpec::Univariate]
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn adaptr(seed: u64, n: usize) -> (DgpSpec, Dataset) {
    let spec = DgpSpec::adaptr_like(seed);
    let ds = generate(&spec, n).unwrap();
    (spec, ds)
}

#[test]
fn outcome_regression_recovers_cell_blips() {
    let (spec, ds) = adaptr(7, 20_000);
    let q = fit_outcome(&ds, &default_outcome_library(), 10, 7).unwrap();
    for cell in table(&spec).cells {
        let est = q.predict(1, &cell.levels) - q.predict(0, &cell.levels);
        assert!(
            (est - cell.blip).abs() <= 0.02,
            "cell {:?}: estimated {est:.4}, true {}",
            cell.levels,
            cell.blip
        );
    }
}

#[test]
fn pseudo_outcome_mean_matches_ate() {
    let (spec, ds) = adaptr(3, 20_000);
    let ate = oracle(&spec, &[0.0]).unwrap().ate;
    let q = fit_outcome(&ds, &default_outcome_library(), 10, 3).unwrap();
    let g = PropensityModel::known(0.5, 0.01).unwrap();
    let (m, _) = mean_and_se(&make_pseudo_outcome(&ds, &q, &g));
    assert!((ate - 0.0989).abs() < 1e-4);
    assert!((m - ate).abs() <= 0.01, "mean pseudo-outcome {m:.4}, ATE {ate:.4}");
}

#[test]
fn pseudo_outcome_is_robust_to_a_wrong_outcome_model() {
    let (spec, ds) = adaptr(4, 20_000);
    let ate = oracle(&spec, &[0.0]).unwrap().ate;
    let q = fit_outcome(&ds, &[LearnerSpec::Mean], 5, 4).unwrap();
    let g = PropensityModel::known(0.5, 0.01).unwrap();
    let (m, se) = mean_and_se(&make_pseudo_outcome(&ds, &q, &g));
    assert!((m - ate).abs() <= 3.0 * se, "mean {m:.4} vs {ate:.4}, se {se:.4}");
}

#[test]
fn blip_metalearner_recovers_cell_blips() {
    let (spec, ds) = adaptr(5, 20_000);
    let q = fit_outcome(&ds, &default_outcome_library(), 10, 5).unwrap();
    let g = PropensityModel::known(0.5, 0.01).unwrap();
    let b = fit_blip(&ds, &q, &g, &blip_library(), 10, 5).unwrap();
    let w = b.weights();
    assert!(w.iter().all(|&x| x >= 0.0));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut misses = Vec::new();
    for cell in table(&spec).cells {
        let est = b.predict(&cell.levels);
        if (est - cell.blip).abs() > 0.02 {
            misses.push(format!("{:?}: {est:.4} vs {}", cell.levels, cell.blip));
        }
    }
    assert!(misses.is_empty(), "cells outside 0.02: {misses:?}");
}

#[test]
fn constant_blip_favours_the_mean_learner() {
    let spec = DgpSpec::new(DgpKind::ConstantBlip { blip: 0.1 }, 8);
    let ds = generate(&spec, 20_000).unwrap();
    let q = fit_outcome(&ds, &default_outcome_library(), 10, 8).unwrap();
    let g = PropensityModel::known(0.5, 0.01).unwrap();
    let b = fit_blip(&ds, &q, &g, &blip_library(), 10, 8).unwrap();
    let names = &b.ensemble.names;
    let w = b.weights();
    let mean_w = w[names.iter().position(|n| n == "mean").unwrap()];
    for (name, &wk) in names.iter().zip(w) {
        if name.starts_with("univariate:") {
            assert!(mean_w >= wk, "mean weight {mean_w} < {name} weight {wk}");
        }
    }
    for cell in table(&spec).cells {
        let est = b.predict(&cell.levels);
        assert!((est - 0.1).abs() <= 0.02, "cell {:?}: {est:.4}", cell.levels);
    }
}

fn flag_rates(kind: DgpKind, n: usize, reps: u64, offset: u64, alpha: f64) -> Vec<f64> {
    let flags: Vec<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = generate(&DgpSpec::new(kind.clone(), offset + r), n).unwrap();
            subgroup_scan(&ds, alpha).unwrap().iter().map(|s| s.flagged).collect()
        })
        .collect();
    let p = flags[0].len();
    (0..p)
        .map(|j| flags.iter().filter(|f| f[j]).count() as f64 / reps as f64)
        .collect()
}

#[test]
fn subgroup_scan_finds_the_interacting_covariate() {
    let kind = DgpKind::OneInteraction { interaction: 0.3 };
    let ds = generate(&DgpSpec::new(kind.clone(), 21), 5000).unwrap();
    let res = subgroup_scan(&ds, 0.1).unwrap();
    assert_eq!(res[0].covariate, "w1");
    assert!(res[0].p_value.unwrap() < 0.001, "{:?}", res[0].p_value);
    assert!(res[0].flagged);

    let rates = flag_rates(kind, 5000, 200, 7000, 0.1);
    assert_eq!(rates[0], 1.0);
    for (j, r) in rates.iter().enumerate().skip(1) {
        assert!((r - 0.1).abs() <= 0.05, "covariate {j}: rejection rate {r}");
    }
}

#[test]
fn subgroup_scan_has_nominal_size_under_the_null() {
    let rates = flag_rates(DgpKind::NullEffect, 1000, 1000, 9000, 0.1);
    for (j, r) in rates.iter().enumerate() {
        assert!((r - 0.1).abs() <= 0.03, "covariate {j}: rejection rate {r}");
    }
}

#[test]
fn subgroup_scan_reports_level_effects() {
    let (_, ds) = adaptr(12, 4000);
    let res = subgroup_scan(&ds, 0.1).unwrap();
    assert_eq!(res.len(), 3);
    for s in &res {
        assert_eq!(s.levels.len(), 2);
        assert_eq!(s.levels.iter().map(|l| l.n).sum::<usize>(), 4000);
        assert!(s.levels.iter().all(|l| l.effect.is_some()));
    }
}
