//! Synthetic data-generating processes with closed-form truths.
//!
//! Discrete processes are tables of covariate cells, each with a probability
//! mass, a control-arm success probability and a blip. The continuous process
//! draws its blip uniformly so that ties have probability zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;

use crate::data::{Dataset, Observation, OutcomeKind};
use crate::error::{Error, Result};
use crate::folds::rng;
use crate::glm::expit;

pub const ADAPTR_COVARIATES: [&str; 3] = ["wage_work", "self_employed", "walk_5k"];
/// Cell masses in row order (wage work, self-employed, walk > 5 km).
pub const ADAPTR_MASSES: [f64; 8] = [0.2170, 0.3440, 0.0521, 0.3137, 0.0109, 0.0294, 0.0034, 0.0294];
pub const ADAPTR_BLIPS: [f64; 8] = [0.07, 0.08, 0.10, 0.11, 0.20, 0.21, 0.24, 0.25];
const ADAPTR_LEVELS: [[f64; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];
pub const ADAPTR_BASELINE: f64 = 0.665;
pub const DEFAULT_UNIT_COST: f64 = 52.60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub levels: Vec<f64>,
    pub mass: f64,
    /// E[Y | A = 0, cell]
    pub baseline: f64,
    pub blip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    pub covariate_names: Vec<String>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpKind {
    /// Eight cells calibrated to the published blip table, constant baseline 0.665.
    AdaptrLike,
    /// Same cells, one blip everywhere.
    ConstantBlip { blip: f64 },
    /// blip(w) = w1 with w1 ~ Uniform(low, high); w2 ~ Uniform(0, 1) is noise.
    ContinuousBlip { low: f64, high: f64 },
    /// Same cells, no effect, baseline 0.5.
    NullEffect,
    /// Three fair binary covariates; baseline 0.3 + 0.1 w2, blip 0.1 + interaction * w1.
    OneInteraction { interaction: f64 },
    /// Three fair binary covariates; baseline 0.5, blip 0.3 * w1.
    StrongHeterogeneity,
    Cells(CellTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySpec {
    Constant(f64),
    /// g(1 | w) = expit(intercept + coefs . w)
    Logistic { intercept: f64, coefs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRule {
    /// Cost per treated unit.
    pub unit_cost: f64,
    /// Standard deviation of additive Gaussian noise (cost floored at 0).
    #[serde(default)]
    pub noise_sd: f64,
}

impl Default for CostRule {
    fn default() -> Self {
        Self {
            unit_cost: DEFAULT_UNIT_COST,
            noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub propensity: PropensitySpec,
    pub cost: Option<CostRule>,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, seed: u64) -> Self {
        Self {
            kind,
            propensity: PropensitySpec::Constant(0.5),
            cost: None,
            seed,
        }
    }

    pub fn adaptr_like(seed: u64) -> Self {
        Self::new(DgpKind::AdaptrLike, seed)
    }

    pub fn with_cost(mut self, rule: CostRule) -> Self {
        self.cost = Some(rule);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Cell table for discrete kinds (masses renormalized), `None` for the
    /// continuous kind.
    pub fn cell_table(&self) -> Result<Option<CellTable>> {
        let binary3 = |baseline: &dyn Fn(&[f64]) -> f64, blip: &dyn Fn(&[f64]) -> f64| {
            let mut cells = Vec::new();
            for code in 0..8u32 {
                let levels: Vec<f64> = (0..3).map(|b| ((code >> b) & 1) as f64).collect();
                cells.push(Cell {
                    mass: 0.125,
                    baseline: baseline(&levels),
                    blip: blip(&levels),
                    levels,
                });
            }
            CellTable {
                covariate_names: vec!["w1".into(), "w2".into(), "w3".into()],
                cells,
            }
        };
        let adaptr = |baseline: f64, blip: Option<f64>| CellTable {
            covariate_names: ADAPTR_COVARIATES.iter().map(|s| s.to_string()).collect(),
            cells: (0..8)
                .map(|i| Cell {
                    levels: ADAPTR_LEVELS[i].to_vec(),
                    mass: ADAPTR_MASSES[i],
                    baseline,
                    blip: blip.unwrap_or(ADAPTR_BLIPS[i]),
                })
                .collect(),
        };
        let table = match &self.kind {
            DgpKind::AdaptrLike => adaptr(ADAPTR_BASELINE, None),
            DgpKind::ConstantBlip { blip } => adaptr(ADAPTR_BASELINE, Some(*blip)),
            DgpKind::NullEffect => adaptr(0.5, Some(0.0)),
            DgpKind::OneInteraction { interaction } => {
                let k = *interaction;
                binary3(&|w| 0.3 + 0.1 * w[1], &move |w| 0.1 + k * w[0])
            }
            DgpKind::StrongHeterogeneity => binary3(&|_| 0.5, &|w| 0.3 * w[0]),
            DgpKind::Cells(t) => t.clone(),
            DgpKind::ContinuousBlip { .. } => return Ok(None),
        };
        Ok(Some(normalize(table)?))
    }

    fn covariate_names(&self) -> Result<Vec<String>> {
        Ok(match self.cell_table()? {
            Some(t) => t.covariate_names,
            None => vec!["w1".into(), "w2".into()],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.covariate_names()?.len();
        if let DgpKind::ContinuousBlip { low, high } = &self.kind {
            if !(low < high) || !(0.5 + high <= 1.0) || !(0.5 + low >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "continuous blip range ({low}, {high}) invalid with baseline 0.5"
                )));
            }
        }
        match &self.propensity {
            PropensitySpec::Constant(g) if !(*g > 0.0 && *g < 1.0) => {
                return Err(Error::InvalidSpec(format!("propensity {g} outside (0, 1)")));
            }
            PropensitySpec::Logistic { coefs, .. } if coefs.len() != p => {
                return Err(Error::InvalidSpec(format!(
                    "logistic propensity has {} coefficients for {p} covariates",
                    coefs.len()
                )));
            }
            _ => {}
        }
        if let Some(cost) = &self.cost {
            if !(cost.unit_cost >= 0.0) || !(cost.noise_sd >= 0.0) {
                return Err(Error::InvalidSpec("cost rule needs nonnegative parameters".into()));
            }
        }
        Ok(())
    }

    fn propensity(&self, w: &[f64]) -> f64 {
        match &self.propensity {
            PropensitySpec::Constant(g) => *g,
            PropensitySpec::Logistic { intercept, coefs } => {
                expit(intercept + coefs.iter().zip(w).map(|(b, x)| b * x).sum::<f64>())
            }
        }
    }
}

fn normalize(mut table: CellTable) -> Result<CellTable> {
    if table.cells.is_empty() {
        return Err(Error::InvalidSpec("no cells".into()));
    }
    let p = table.covariate_names.len();
    let mut total = 0.0;
    for c in &table.cells {
        if c.levels.len() != p {
            return Err(Error::InvalidSpec("cell arity does not match covariate names".into()));
        }
        if !(c.mass >= 0.0) {
            return Err(Error::InvalidSpec(format!("negative cell mass {}", c.mass)));
        }
        let (y0, y1) = (c.baseline, c.baseline + c.blip);
        if !(0.0..=1.0).contains(&y0) || !(0.0..=1.0).contains(&y1) {
            return Err(Error::InvalidSpec(format!(
                "cell success probabilities ({y0}, {y1}) outside [0, 1]"
            )));
        }
        total += c.mass;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidSpec("cell masses sum to zero".into()));
    }
    for c in &mut table.cells {
        c.mass /= total;
    }
    Ok(table)
}

/// Draws `n` rows. Cells (or the continuous covariates) first, then
/// A ~ Bernoulli(g(1|W)), Y ~ Bernoulli(baseline + A * blip), and the cost if
/// configured.
pub fn generate(spec: &DgpSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    spec.validate()?;
    let table = spec.cell_table()?;
    let names = spec.covariate_names()?;
    let mut rng = rng(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("standard normal");
    let cumulative: Vec<f64> = table
        .as_ref()
        .map(|t| {
            t.cells
                .iter()
                .scan(0.0, |acc, c| {
                    *acc += c.mass;
                    Some(*acc)
                })
                .collect()
        })
        .unwrap_or_default();

    let mut observations = Vec::with_capacity(n);
    for _ in 0..n {
        let (w, baseline, blip) = match (&table, &spec.kind) {
            (Some(t), _) => {
                let u: f64 = rng.gen();
                let idx = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(t.cells.len() - 1);
                let cell = &t.cells[idx];
                (cell.levels.clone(), cell.baseline, cell.blip)
            }
            (None, DgpKind::ContinuousBlip { low, high }) => {
                let w1 = rng.gen_range(*low..*high);
                let w2: f64 = rng.gen();
                (vec![w1, w2], 0.5, w1)
            }
            (None, _) => unreachable!("only the continuous kind has no cell table"),
        };
        let a = rng.gen_bool(spec.propensity(&w)) as u8;
        let p = baseline + a as f64 * blip;
        let y = (rng.gen::<f64>() < p) as u8 as f64;
        let c = spec.cost.as_ref().map(|rule| {
            let base = rule.unit_cost * a as f64;
            if rule.noise_sd > 0.0 {
                (base + rule.noise_sd * rng.sample(noise)).max(0.0)
            } else {
                base
            }
        });
        observations.push(Observation { w, a, y, c });
    }
    Dataset::new(observations, names, Some(OutcomeKind::Binary), Some((0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub kappa: f64,
    /// Value of the optimal constrained stochastic rule.
    pub value: f64,
    pub tau: f64,
    pub tie_prob: f64,
    /// E[g(1|W)] under the rule.
    pub treated: f64,
    /// Random allocation of the same budget: (1 - kappa) E[Y0] + kappa E[Y1].
    pub chord: f64,
    pub value_minus_treat_all: f64,
    pub value_minus_treat_none: f64,
    /// Present when the spec has a cost rule.
    pub cost: Option<f64>,
    pub cost_minus_treat_all: Option<f64>,
    pub cost_minus_treat_none: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub e_y0: f64,
    pub e_y1: f64,
    pub ate: f64,
    pub points: Vec<OraclePoint>,
}

impl OracleReport {
    pub fn at(&self, kappa: f64) -> Option<&OraclePoint> {
        self.points.iter().find(|p| (p.kappa - kappa).abs() < 1e-12)
    }
}

/// Closed-form truth: treat cells in order of decreasing positive blip until
/// the budget is spent, splitting the marginal cell.
pub fn oracle(spec: &DgpSpec, kappa_grid: &[f64]) -> Result<OracleReport> {
    spec.validate()?;
    for &k in kappa_grid {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::invalid("kappa", format!("must lie in [0, 1], got {k}")));
        }
    }
    let unit_cost = spec.cost.as_ref().map(|c| c.unit_cost);
    let (e_y0, ate, allocate): (f64, f64, Box<dyn Fn(f64) -> (f64, f64, f64, f64)>) =
        match spec.cell_table()? {
            Some(table) => {
                let e_y0 = table.cells.iter().map(|c| c.mass * c.baseline).sum();
                let ate = table.cells.iter().map(|c| c.mass * c.blip).sum();
                let mut groups: Vec<(f64, f64)> = Vec::new();
                for c in table.cells.iter().filter(|c| c.blip > 0.0 && c.mass > 0.0) {
                    match groups.iter_mut().find(|g| g.0 == c.blip) {
                        Some(g) => g.1 += c.mass,
                        None => groups.push((c.blip, c.mass)),
                    }
                }
                groups.sort_by(|a, b| b.0.total_cmp(&a.0));
                let f = move |kappa: f64| {
                    let mut remaining = kappa;
                    let mut gain = 0.0;
                    let mut treated = 0.0;
                    for &(blip, mass) in &groups {
                        if remaining >= mass {
                            gain += mass * blip;
                            treated += mass;
                            remaining -= mass;
                        } else {
                            gain += remaining * blip;
                            treated += remaining;
                            return (gain, treated, blip, remaining / mass);
                        }
                    }
                    (gain, treated, 0.0, 0.0)
                };
                (e_y0, ate, Box::new(f))
            }
            None => {
                let DgpKind::ContinuousBlip { low, high } = spec.kind else {
                    unreachable!("only the continuous kind has no cell table")
                };
                let width = high - low;
                let positive = ((high - low.max(0.0)) / width).clamp(0.0, 1.0);
                let f = move |kappa: f64| {
                    if kappa >= 1.0 || kappa >= positive {
                        let lo = low.max(0.0);
                        (positive * (high + lo) / 2.0, positive, 0.0, 0.0)
                    } else {
                        let tau = high - kappa * width;
                        (kappa * (high + tau) / 2.0, kappa, tau, 0.0)
                    }
                };
                (0.5, (low + high) / 2.0, Box::new(f))
            }
        };
    let e_y1 = e_y0 + ate;
    let points = kappa_grid
        .iter()
        .map(|&kappa| {
            let (gain, treated, tau, tie_prob) = allocate(kappa);
            let value = e_y0 + gain;
            let cost = unit_cost.map(|u| u * treated);
            OraclePoint {
                kappa,
                value,
                tau,
                tie_prob,
                treated,
                chord: (1.0 - kappa) * e_y0 + kappa * e_y1,
                value_minus_treat_all: value - e_y1,
                value_minus_treat_none: value - e_y0,
                cost,
                cost_minus_treat_all: unit_cost.map(|u| u * treated - u),
                cost_minus_treat_none: cost,
            }
        })
        .collect();
    Ok(OracleReport {
        e_y0,
        e_y1,
        ate,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn adaptr_defaults_match_table() {
        let t = DgpSpec::adaptr_like(1).cell_table().unwrap().unwrap();
        let masses: Vec<f64> = t.cells.iter().map(|c| c.mass).collect();
        let total: f64 = ADAPTR_MASSES.iter().sum();
        for (m, raw) in masses.iter().zip(ADAPTR_MASSES) {
            assert!((m - raw / total).abs() < 1e-15);
        }
        let blips: Vec<f64> = t.cells.iter().map(|c| c.blip).collect();
        assert_eq!(blips, ADAPTR_BLIPS.to_vec());
    }

    #[test]
    fn adaptr_oracle_values() {
        let r = oracle(&DgpSpec::adaptr_like(1), &grid()).unwrap();
        // dot product of masses and blips, computed by hand
        let dot: f64 = ADAPTR_MASSES.iter().zip(ADAPTR_BLIPS).map(|(m, b)| m * b).sum::<f64>()
            / ADAPTR_MASSES.iter().sum::<f64>();
        assert!((r.ate - dot).abs() < 1e-15);
        assert!((r.ate - 0.0989).abs() < 5e-4);
        assert!((r.e_y0 - 0.665).abs() < 1e-15);
        assert!((r.at(0.0).unwrap().value - 0.665).abs() < 1e-15);
        assert!((r.at(0.1).unwrap().value - 0.6845).abs() < 1e-4);
        assert!((r.at(0.5).unwrap().value - 0.7261).abs() < 1e-4);
        assert!((r.at(1.0).unwrap().value - r.e_y1).abs() < 1e-15);
        assert!((r.at(1.0).unwrap().value - 0.7639).abs() < 1e-4);
    }

    #[test]
    fn oracle_tau_steps_at_cumulative_masses() {
        let r = oracle(&DgpSpec::adaptr_like(1), &grid()).unwrap();
        assert!((r.at(0.9).unwrap().tau - 0.07).abs() < 1e-15);
        assert!((r.at(0.9).unwrap().tie_prob - 0.5392).abs() < 1e-3);
        assert!((r.at(0.5).unwrap().tau - 0.08).abs() < 1e-15);
        assert!((r.at(0.0).unwrap().tau - 0.25).abs() < 1e-15);
        assert_eq!(r.at(1.0).unwrap().tau, 0.0);
        for w in r.points.windows(2) {
            assert!(w[1].tau <= w[0].tau);
        }
    }

    #[test]
    fn oracle_concave_and_nondecreasing() {
        let fine: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        for kind in [
            DgpKind::AdaptrLike,
            DgpKind::StrongHeterogeneity,
            DgpKind::ContinuousBlip { low: 0.01, high: 0.3 },
        ] {
            let r = oracle(&DgpSpec::new(kind, 0), &fine).unwrap();
            for w in r.points.windows(3) {
                assert!(w[1].value >= w[0].value - 1e-15);
                let slope1 = w[1].value - w[0].value;
                let slope2 = w[2].value - w[1].value;
                assert!(slope2 <= slope1 + 1e-12);
            }
        }
    }

    #[test]
    fn constant_blip_curve_is_the_chord() {
        let r = oracle(&DgpSpec::new(DgpKind::ConstantBlip { blip: 0.1 }, 0), &grid()).unwrap();
        for p in &r.points {
            assert!((p.value - (r.e_y0 + 0.1 * p.kappa)).abs() < 1e-12);
            assert!((p.value - p.chord).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_heterogeneity_half_point() {
        let r = oracle(&DgpSpec::new(DgpKind::StrongHeterogeneity, 0), &[0.5, 1.0]).unwrap();
        assert!((r.at(0.5).unwrap().value - 0.65).abs() < 1e-12);
        assert!((r.at(0.5).unwrap().chord - 0.575).abs() < 1e-12);
        assert!((r.at(1.0).unwrap().value - 0.65).abs() < 1e-12);
    }

    #[test]
    fn continuous_oracle_closed_form() {
        let r = oracle(
            &DgpSpec::new(DgpKind::ContinuousBlip { low: 0.01, high: 0.3 }, 0),
            &[0.0, 0.5, 1.0],
        )
        .unwrap();
        let tau = 0.3 - 0.5 * 0.29;
        assert!((r.at(0.5).unwrap().tau - tau).abs() < 1e-12);
        assert!((r.at(0.5).unwrap().value - (0.5 + 0.5 * (0.3 + tau) / 2.0)).abs() < 1e-12);
        assert!((r.at(1.0).unwrap().value - r.e_y1).abs() < 1e-12);
        assert_eq!(r.at(0.0).unwrap().value, 0.5);
    }

    #[test]
    fn icer_components_with_cost() {
        let spec = DgpSpec::adaptr_like(0).with_cost(CostRule::default());
        let r = oracle(&spec, &[0.1, 1.0]).unwrap();
        let p = r.at(1.0).unwrap();
        assert!((p.cost_minus_treat_none.unwrap() - 52.60).abs() < 1e-12);
        let ratio = p.cost_minus_treat_none.unwrap() / (100.0 * p.value_minus_treat_none);
        assert!((ratio - 5.32).abs() < 0.01);
        let p = r.at(0.1).unwrap();
        let ratio = p.cost_minus_treat_none.unwrap() / (100.0 * p.value_minus_treat_none);
        assert!((ratio - 2.70).abs() < 0.01);
    }

    #[test]
    fn generate_is_deterministic_and_validates() {
        let spec = DgpSpec::adaptr_like(7).with_cost(CostRule::default());
        let a = generate(&spec, 500).unwrap();
        let b = generate(&spec, 500).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&spec.clone().with_seed(8), 500).unwrap());
        assert_eq!(a.covariate_names(), &ADAPTR_COVARIATES.map(String::from));
        for o in a.observations() {
            assert_eq!(o.c, Some(52.60 * o.a as f64));
        }
        assert!(generate(&spec, 0).is_err());
        let bad = DgpSpec::new(DgpKind::ConstantBlip { blip: 0.5 }, 0);
        assert!(generate(&bad, 10).is_err());
    }

    #[test]
    fn cell_frequencies_converge() {
        let n = 100_000;
        let ds = generate(&DgpSpec::adaptr_like(3), n).unwrap();
        let table = DgpSpec::adaptr_like(3).cell_table().unwrap().unwrap();
        for cell in &table.cells {
            let count = ds.observations().iter().filter(|o| o.w == cell.levels).count();
            let freq = count as f64 / n as f64;
            let sd = (cell.mass * (1.0 - cell.mass) / n as f64).sqrt();
            assert!((freq - cell.mass).abs() <= 4.0 * sd, "{freq} vs {}", cell.mass);
        }
        let treated = ds.arm_counts().1 as f64 / n as f64;
        assert!((treated - 0.5).abs() < 0.01);
    }
}
