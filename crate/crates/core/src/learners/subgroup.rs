use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_ols, Design, Term};

/// Levels beyond this count are treated as continuous (no per-level effects).
const MAX_DISCRETE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEffect {
    pub level: f64,
    pub n: usize,
    /// Treated-minus-control difference in mean outcome; `None` if an arm is empty.
    pub effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub covariate: String,
    pub lr_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub flagged: bool,
    pub levels: Vec<LevelEffect>,
    pub note: Option<String>,
}

/// Likelihood-ratio test of the treatment-by-covariate interaction in the
/// Gaussian linear model `Y ~ A + W_j + A:W_j`, one covariate at a time.
pub fn subgroup_scan(ds: &Dataset, alpha: f64) -> Result<Vec<SubgroupResult>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if ds.len() <= 4 {
        return Err(Error::InvalidData(format!(
            "subgroup scan needs more than 4 rows, got {}",
            ds.len()
        )));
    }
    ds.require_both_arms()?;
    let chi2 = ChiSquared::new(1.0).expect("valid dof");
    let n = ds.len() as f64;
    let y = ds.outcomes();
    let rows: Vec<(f64, &[f64])> = ds
        .observations()
        .iter()
        .map(|o| (o.a as f64, o.w.as_slice()))
        .collect();

    let mut results = Vec::with_capacity(ds.n_covariates());
    for (j, name) in ds.covariate_names().iter().enumerate() {
        let mut levels: Vec<f64> = ds.observations().iter().map(|o| o.w[j]).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.len() < 2 {
            results.push(SubgroupResult {
                covariate: name.clone(),
                lr_statistic: None,
                p_value: None,
                flagged: false,
                levels: Vec::new(),
                note: Some("covariate constant in sample; skipped".into()),
            });
            continue;
        }
        let full = Design::build(
            &[Term::Treatment, Term::Covariate(j), Term::Interaction(j)],
            rows.iter().copied(),
        );
        let reduced = Design::build(&[Term::Treatment, Term::Covariate(j)], rows.iter().copied());
        let (full, reduced) = match (fit_ols(&full, &y), fit_ols(&reduced, &y)) {
            (Ok(f), Ok(r)) => (f, r),
            _ => {
                results.push(SubgroupResult {
                    covariate: name.clone(),
                    lr_statistic: None,
                    p_value: None,
                    flagged: false,
                    levels: Vec::new(),
                    note: Some("singular design (covariate confounded with treatment); skipped".into()),
                });
                continue;
            }
        };
        let stat = if full.rss > 0.0 {
            (n * (reduced.rss / full.rss).ln()).max(0.0)
        } else if reduced.rss > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let p_value = 1.0 - chi2.cdf(stat);

        let level_effects = if levels.len() <= MAX_DISCRETE_LEVELS {
            levels
                .iter()
                .map(|&level| {
                    let mut sums = [0.0; 2];
                    let mut counts = [0usize; 2];
                    for o in ds.observations().iter().filter(|o| o.w[j] == level) {
                        sums[o.a as usize] += o.y;
                        counts[o.a as usize] += 1;
                    }
                    let effect = (counts[0] > 0 && counts[1] > 0).then(|| {
                        sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64
                    });
                    LevelEffect {
                        level,
                        n: counts[0] + counts[1],
                        effect,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        results.push(SubgroupResult {
            covariate: name.clone(),
            lr_statistic: Some(stat),
            p_value: Some(p_value),
            flagged: p_value < alpha,
            levels: level_effects,
            note: None,
        });
    }
    Ok(results)
}
