use rc_odtr::data::Dataset;
use rc_odtr::dgp::{generate, DgpSpec};
use rc_odtr::learners::{default_blip_library, default_outcome_library, fit_blip, fit_outcome, BlipModel, PropensityModel};
use rc_odtr::rc_rule::{build_policy, BlipDistribution, RuleKind};

fn fitted(seed: u64, n: usize) -> (Dataset, BlipModel) {
    let ds = generate(&DgpSpec::adaptr_like(seed), n).unwrap();
    let q = fit_outcome(&ds, &default_outcome_library(), 10, seed).unwrap();
    let g = PropensityModel::known(0.5, 0.01).unwrap();
    let b = fit_blip(&ds, &q, &g, &default_blip_library(), 10, seed).unwrap();
    (ds, b)
}

#[test]
fn binding_constraint_spends_the_budget() {
    let (ds, b) = fitted(13, 5000);
    assert!(b.predict_all(&ds).iter().all(|&x| x > 0.0));
    let p = build_policy(&b, &ds, 0.3).unwrap();
    assert_eq!(p.kind, RuleKind::Stochastic);
    let assigned = p.assign_all(&ds);
    let mean = assigned.iter().sum::<f64>() / ds.len() as f64;
    assert!((mean - 0.3).abs() <= 1.0 / ds.len() as f64, "mean assignment {mean}");
    assert!(assigned.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn discrete_blips_force_some_stochastic_assignment() {
    let (ds, b) = fitted(14, 5000);
    let fractions: Vec<f64> = (1..10)
        .map(|k| build_policy(&b, &ds, k as f64 / 10.0).unwrap().summary(&ds).pct_stochastic / 100.0)
        .collect();
    assert!(fractions.iter().any(|&f| f > 0.0 && f < 1.0), "{fractions:?}");
}

#[test]
fn zero_budget_treats_nobody() {
    let (ds, b) = fitted(15, 2000);
    let p = build_policy(&b, &ds, 0.0).unwrap();
    let blips = b.predict_all(&ds);
    let max = blips.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(p.tau(), max);
    assert_eq!(p.threshold.tie_prob, 0.0);
    assert!(p.assign_all(&ds).iter().all(|&x| x == 0.0));
}

#[test]
fn unconstrained_budget_treats_positive_blips() {
    let (ds, b) = fitted(16, 2000);
    let p = build_policy(&b, &ds, 1.0).unwrap();
    assert_eq!(p.tau(), 0.0);
    assert!(p.assign_all(&ds).iter().all(|&x| x == 1.0));
}

#[test]
fn assignment_follows_the_threshold() {
    let (ds, b) = fitted(17, 3000);
    let blips = b.predict_all(&ds);
    let dist = BlipDistribution::from_values(&blips).unwrap();
    for k in [0.05, 0.2, 0.45, 0.8] {
        let p = build_policy(&b, &ds, k).unwrap();
        let tau = p.tau();
        assert!(dist.survival(tau) <= k + 1e-12);
        for (o, &bl) in ds.observations().iter().zip(&blips) {
            let a = p.assign(&o.w);
            if bl > tau + 1e-9 {
                assert_eq!(a, 1.0);
            } else if bl < tau - 1e-9 {
                assert_eq!(a, 0.0);
            }
        }
    }
}
