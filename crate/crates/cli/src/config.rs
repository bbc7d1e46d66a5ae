use std::path::Path;

use rc_odtr::crossfit::Comparator;
use rc_odtr::config::BlipFit;
use rc_odtr::learners::LearnerSpec;
use rc_odtr::icer::EffectUnits;
use rc_odtr::msm::BootstrapMode;
use rc_odtr::EstimatorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "RC_POLICY_SEED";

/// Contents of a `--config` file. Every key is optional; flags given on the
/// command line win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub kappa_grid: Option<String>,
    pub estimator: Option<EstimatorConfig>,
    // shorthand for the common estimator keys, applied over `estimator`
    pub folds: Option<usize>,
    pub sl_folds: Option<usize>,
    pub g_known: Option<f64>,
    pub estimate_g: Option<bool>,
    pub g_min: Option<f64>,
    pub outcome_library: Option<Vec<LearnerSpec>>,
    pub blip_library: Option<Vec<LearnerSpec>>,
    pub blip_fit: Option<BlipFit>,
    pub columns: Option<Columns>,
    pub bootstrap: Option<Bootstrap>,
    pub comparator: Option<String>,
    pub units: Option<EffectUnits>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub cost: Option<String>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bootstrap {
    pub replicates: Option<usize>,
    pub mode: Option<BootstrapMode>,
    pub weighted: Option<bool>,
    pub level: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation("--config", format!("{}: {e}", path.display())))
    }
}

/// Flag value, else config value, else the environment (seed only), else 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::validation(SEED_ENV, format!("not an unsigned integer: {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// `start:end:step` inclusive of both ends, or a single value.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |reason: String| CliError::validation("--kappa-grid", reason);
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("not a number: {s:?}")))
    };
    let in_unit = |v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(bad(format!("{v} lies outside [0, 1]")))
        }
    };
    match parts.as_slice() {
        [one] => Ok(vec![in_unit(num(one)?)?]),
        [start, end, step] => {
            let (start, end, step) = (in_unit(num(start)?)?, in_unit(num(end)?)?, num(step)?);
            if end < start {
                return Err(bad(format!("end {end} is below start {start}")));
            }
            if start == end {
                return Ok(vec![start]);
            }
            if step <= 0.0 {
                return Err(bad(format!("step must be positive, got {step}")));
            }
            let steps = (end - start) / step;
            let k = steps.round();
            if (steps - k).abs() > 1e-9 {
                return Err(bad(format!("step {step} does not divide [{start}, {end}]")));
            }
            let k = k as usize;
            Ok((0..=k)
                .map(|i| {
                    if i == k {
                        end
                    } else {
                        ((start + i as f64 * step) * 1e12).round() / 1e12
                    }
                })
                .collect())
        }
        _ => Err(bad(format!("expected start:end:step, got {spec:?}"))),
    }
}

pub fn parse_comparator(s: &str) -> Result<Comparator, CliError> {
    match s.trim() {
        "treat_none" | "treat-none" | "none" => Ok(Comparator::TreatNone),
        "treat_all" | "treat-all" | "all" => Ok(Comparator::TreatAll),
        other => {
            let k = other
                .strip_prefix("kappa:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|k| (0.0..=1.0).contains(k))
                .ok_or_else(|| {
                    CliError::validation(
                        "--comparator",
                        format!("expected treat_none, treat_all or kappa:<value in [0,1]>, got {other:?}"),
                    )
                })?;
            Ok(Comparator::Kappa(k))
        }
    }
}

/// Embedded in every JSON artifact so a run can be reproduced and checked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Audit {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: serde_json::Value,
}

impl Audit {
    pub fn new<T: Serialize>(command: &str, seed: u64, config: &T) -> Self {
        let config = serde_json::json!({ "command": command, "settings": config });
        let canonical = serde_json::to_string(&config).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        Self {
            config_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }
}
