use std::io::Write;
use std::path::{Path, PathBuf};

use rc_odtr::crossfit::{Comparator, CrossFit, Measure};
use rc_odtr::data::{ingest_csv, ColumnMapping, OutcomeScale};
use rc_odtr::dgp::{generate, oracle, CostRule, DgpKind, DgpSpec, OracleReport, PropensitySpec};
use rc_odtr::icer::{icer_curve, EffectUnits};
use rc_odtr::learners::{subgroup_scan, LearnerSpec, PropensityModel, SubgroupResult};
use rc_odtr::msm::{msm_with_bootstrap, BootstrapCi, BootstrapMode, Line, MsmOptions};
use rc_odtr::rc_rule::build_policy;
use rc_odtr::tmle::{Difference, Target, ValueEstimate};
use rc_odtr::{fit_full_data, BlipFit, Dataset, EstimatorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_comparator, parse_grid, resolve_seed, Audit, FileConfig};
use crate::{CliError, DataArgs, DgpName, EstimatorArgs, PlotKind};

const DEFAULT_GRID: &str = "0:1:0.1";
const DEFAULT_COST_COLUMN: &str = "c";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("result serializes");
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn write_csv(path: Option<&Path>, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(io_err(p))?),
        None => Box::new(std::io::stdout()),
    };
    let shown = path.unwrap_or(Path::new("<stdout>"));
    let mut w = csv::Writer::from_writer(sink);
    let to_io = |e: csv::Error| CliError::Io {
        path: shown.to_path_buf(),
        source: e.into(),
    };
    w.write_record(header).map_err(to_io)?;
    for r in rows {
        w.write_record(&r).map_err(to_io)?;
    }
    w.flush().map_err(io_err(shown))
}

fn grid(flag: &Option<String>, file: &FileConfig) -> Result<Vec<f64>, CliError> {
    parse_grid(flag.as_deref().or(file.kappa_grid.as_deref()).unwrap_or(DEFAULT_GRID))
}

// ---- data and settings ----

#[derive(Debug, Clone, Serialize)]
struct DataSettings {
    sha256: String,
    columns: ColumnMapping,
}

fn header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation("--data", format!("{}: {e}", path.display())))?;
    let h = rdr
        .headers()
        .map_err(|e| CliError::validation("--data", format!("{}: {e}", path.display())))?;
    Ok(h.iter().map(str::to_string).collect())
}

/// Column roles from flags over the config file. Without an explicit list the
/// covariates are every column not used as treatment, outcome or cost.
fn load_data(args: &DataArgs, file: &FileConfig, need_cost: bool) -> Result<(Dataset, DataSettings), CliError> {
    let fc = file.columns.clone().unwrap_or_default();
    let pick = |flag: &Option<String>, cfg: &Option<String>, default: &str| {
        flag.clone().or_else(|| cfg.clone()).unwrap_or_else(|| default.to_string())
    };
    let cols = header(&args.data)?;
    let treatment = pick(&args.treatment, &fc.treatment, "a");
    let outcome = pick(&args.outcome, &fc.outcome, "y");
    let explicit_cost = args.cost.clone().or_else(|| fc.cost.clone());
    let cost_col = explicit_cost
        .clone()
        .or_else(|| cols.iter().any(|c| c == DEFAULT_COST_COLUMN).then(|| DEFAULT_COST_COLUMN.to_string()));
    for (flag, name) in [("--treatment", &treatment), ("--outcome", &outcome)] {
        if !cols.contains(name) {
            return Err(CliError::validation(flag, format!("column `{name}` not in {}", args.data.display())));
        }
    }
    if let Some(c) = &explicit_cost {
        if !cols.contains(c) {
            return Err(CliError::validation("--cost", format!("column `{c}` not in {}", args.data.display())));
        }
    }
    if need_cost && cost_col.is_none() {
        return Err(CliError::validation("--cost", "a cost column is required"));
    }
    let covariates = match args.covariates.clone().or(fc.covariates.clone()) {
        Some(list) => {
            if let Some(bad) = list.iter().find(|c| !cols.contains(c)) {
                return Err(CliError::validation(
                    "--covariates",
                    format!("column `{bad}` not in {}", args.data.display()),
                ));
            }
            list
        }
        None => cols
            .iter()
            .filter(|c| **c != treatment && **c != outcome && Some(*c) != cost_col.as_ref())
            .cloned()
            .collect(),
    };
    if covariates.is_empty() {
        return Err(CliError::validation("--covariates", "no covariate columns"));
    }
    let y_bounds = match (args.y_min.or(fc.y_min), args.y_max.or(fc.y_max)) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(CliError::validation("--y-min/--y-max", "give both bounds or neither")),
    };
    let mapping = ColumnMapping {
        treatment,
        outcome,
        covariates,
        cost: if need_cost { cost_col } else { None },
        outcome_kind: None,
        y_bounds,
    };
    let bytes = std::fs::read(&args.data).map_err(io_err(&args.data))?;
    let ds = ingest_csv(&args.data, &mapping)?;
    let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok((ds, DataSettings { sha256, columns: mapping }))
}

fn parse_names<T: for<'de> Deserialize<'de>>(flag: &str, names: &[String]) -> Result<Vec<T>, CliError> {
    names
        .iter()
        .map(|n| {
            serde_json::from_value(serde_json::Value::String(n.trim().to_string()))
                .map_err(|_| CliError::validation(flag, format!("unknown value `{n}`")))
        })
        .collect()
}

fn estimator(args: &EstimatorArgs, file: &FileConfig) -> Result<EstimatorConfig, CliError> {
    let mut cfg = file.estimator.clone().unwrap_or_default();
    // a block seed of 0 is indistinguishable from an absent one
    let block_seed = file.estimator.as_ref().map(|e| e.seed).filter(|&s| s != 0);
    cfg.seed = resolve_seed(args.seed, file.seed.or(block_seed))?;
    let top = file;
    if let Some(v) = top.folds {
        cfg.folds = v;
    }
    if let Some(v) = top.sl_folds {
        cfg.sl_folds = v;
    }
    if let Some(v) = top.g_min {
        cfg.g_min = v;
    }
    if let Some(v) = &top.outcome_library {
        cfg.outcome_library = v.clone();
    }
    if let Some(v) = &top.blip_library {
        cfg.blip_library = v.clone();
    }
    if let Some(v) = top.blip_fit {
        cfg.blip_fit = v;
    }
    if let Some(v) = args.folds {
        cfg.folds = v;
    }
    if let Some(v) = args.sl_folds {
        cfg.sl_folds = v;
    }
    // a known propensity switches off estimation unless asked for explicitly
    let explicit_estimate_g = args.estimate_g.or(top.estimate_g);
    if let Some(v) = args.g_known.or(top.g_known) {
        cfg.g_known = Some(v);
        if explicit_estimate_g.is_none() && file.estimator.is_none() {
            cfg.estimate_g = false;
        }
    }
    if let Some(v) = explicit_estimate_g {
        cfg.estimate_g = v;
    }
    if let Some(v) = args.g_min {
        cfg.g_min = v;
    }
    if let Some(v) = &args.outcome_library {
        cfg.outcome_library = parse_names::<LearnerSpec>("--outcome-library", v)?;
    }
    if let Some(v) = &args.blip_library {
        cfg.blip_library = parse_names::<LearnerSpec>("--blip-library", v)?;
    }
    if let Some(v) = &args.blip_fit {
        cfg.blip_fit = parse_names::<BlipFit>("--blip-fit", std::slice::from_ref(v))?[0];
    }
    if let Some(v) = args.confidence {
        cfg.confidence = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---- simulate ----

#[derive(Serialize)]
struct SimulateSettings<'a> {
    spec: &'a DgpSpec,
    n: usize,
    kappa_grid: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct OracleArtifact {
    audit: Audit,
    oracle: OracleReport,
}

pub fn simulate(a: crate::SimulateArgs, file: &FileConfig) -> Result<(), CliError> {
    let mut spec = match &a.dgp_spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation("--dgp-spec", format!("{}: {e}", p.display())))?;
            serde_json::from_str::<DgpSpec>(&text)
                .map_err(|e| CliError::validation("--dgp-spec", format!("{}: {e}", p.display())))?
        }
        None => {
            let kind = match a.dgp {
                DgpName::AdaptrLike => DgpKind::AdaptrLike,
                DgpName::ConstantBlip => DgpKind::ConstantBlip { blip: a.blip },
                DgpName::ContinuousBlip => DgpKind::ContinuousBlip { low: a.low, high: a.high },
                DgpName::NullEffect => DgpKind::NullEffect,
                DgpName::OneInteraction => DgpKind::OneInteraction { interaction: a.interaction },
                DgpName::StrongHeterogeneity => DgpKind::StrongHeterogeneity,
            };
            let mut s = DgpSpec::new(kind, 0);
            s.propensity = PropensitySpec::Constant(a.propensity);
            if let Some(unit_cost) = a.unit_cost {
                s.cost = Some(CostRule {
                    unit_cost,
                    noise_sd: a.cost_noise_sd,
                });
            }
            s
        }
    };
    spec.seed = match (a.seed, file.seed, &a.dgp_spec) {
        (None, None, Some(_)) => spec.seed,
        (flag, cfg, _) => resolve_seed(flag, cfg)?,
    };
    if a.n == 0 {
        return Err(CliError::validation("--n", "must be at least 1"));
    }
    let ds = generate(&spec, a.n)?;
    ds.write_csv(&a.out)?;
    let grid = match &a.oracle {
        Some(_) => Some(grid(&a.kappa_grid, file)?),
        None => None,
    };
    let settings = SimulateSettings { spec: &spec, n: a.n, kappa_grid: grid.clone() };
    let audit = Audit::new("simulate", spec.seed, &settings);
    if let (Some(path), Some(g)) = (&a.oracle, &grid) {
        let artifact = OracleArtifact {
            audit: audit.clone(),
            oracle: oracle(&spec, g)?,
        };
        write_json(Some(path), &artifact)?;
    }
    write_json(None, &serde_json::json!({ "audit": audit, "rows": ds.len(), "out": a.out }))
}

// ---- fit-rule ----

#[derive(Serialize)]
struct EstimationSettings<'a> {
    data: &'a DataSettings,
    estimator: &'a EstimatorConfig,
    kappa_grid: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
pub struct RuleRow {
    pub kappa: f64,
    /// In outcome units.
    pub tau: f64,
    pub tie_prob: f64,
    pub pct_treated: f64,
    pub pct_stochastic: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ModelArtifact {
    pub audit: Audit,
    pub n: usize,
    pub outcome_scale: OutcomeScale,
    pub propensity: PropensityModel,
    /// Blip model on the [0, 1] outcome scale.
    pub blip_model: rc_odtr::learners::BlipModel,
    /// In-sample blips in outcome units, in row order.
    pub in_sample_blips: Vec<f64>,
    pub rules: Vec<RuleRow>,
    pub warnings: Vec<String>,
}

pub fn fit_rule(a: crate::FitRuleArgs, file: &FileConfig) -> Result<(), CliError> {
    let (ds, data) = load_data(&a.data, file, false)?;
    let cfg = estimator(&a.est, file)?;
    let grid = grid(&a.kappa_grid, file)?;
    let full = fit_full_data(&ds, &cfg)?;
    let width = full.scale.width();
    let rules = grid
        .iter()
        .map(|&k| {
            let s = build_policy(&full.blip, &ds, k)?.summary(&ds);
            Ok(RuleRow {
                kappa: k,
                tau: s.tau * width,
                tie_prob: s.tie_prob,
                pct_treated: s.pct_treated,
                pct_stochastic: s.pct_stochastic,
            })
        })
        .collect::<Result<Vec<_>, rc_odtr::Error>>()?;
    let mut warnings = full.outcome.ensemble.warnings.clone();
    warnings.extend(full.blip.ensemble.warnings.iter().cloned());
    warnings.extend(full.propensity.warning.iter().cloned());
    let settings = EstimationSettings { data: &data, estimator: &cfg, kappa_grid: &grid, extra: None };
    let artifact = ModelArtifact {
        audit: Audit::new("fit-rule", cfg.seed, &settings),
        n: ds.len(),
        outcome_scale: full.scale,
        in_sample_blips: full.blip.predict_all(&ds).iter().map(|b| b * width).collect(),
        propensity: full.propensity,
        blip_model: full.blip,
        rules,
        warnings,
    };
    write_json(a.out.as_deref(), &artifact)
}

// ---- evaluate ----

#[derive(Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub ci: [f64; 2],
}

impl From<&ValueEstimate> for Interval {
    fn from(v: &ValueEstimate) -> Self {
        Self { estimate: v.psi, se: v.se, ci: [v.ci.0, v.ci.1] }
    }
}

impl From<&Difference> for Interval {
    fn from(d: &Difference) -> Self {
        Self { estimate: d.estimate, se: d.se, ci: [d.ci.0, d.ci.1] }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ValueRow {
    pub kappa: f64,
    pub psi: f64,
    pub se: f64,
    pub ci: [f64; 2],
    /// Mean fold threshold on the [0, 1] outcome scale.
    pub tau: Option<f64>,
    pub pct_treated: f64,
    pub pct_stochastic: f64,
    pub vs_treat_all: Interval,
    pub vs_treat_none: Interval,
}

#[derive(Serialize, Deserialize)]
pub struct EvaluateArtifact {
    pub audit: Audit,
    pub n: usize,
    pub treat_all: Interval,
    pub treat_none: Interval,
    pub estimates: Vec<ValueRow>,
    pub warnings: Vec<String>,
}

pub fn evaluate(a: crate::EvaluateArgs, file: &FileConfig) -> Result<(), CliError> {
    let (ds, data) = load_data(&a.data, file, false)?;
    let cfg = estimator(&a.est, file)?;
    let grid = grid(&a.kappa_grid, file)?;
    let cf = CrossFit::fit(&ds, &cfg, false)?;
    let all = cf.estimate(Target::TreatAll, Measure::Outcome)?;
    let none = cf.estimate(Target::TreatNone, Measure::Outcome)?;
    let estimates = grid
        .iter()
        .map(|&k| {
            let v = cf.value(k)?;
            Ok(ValueRow {
                kappa: k,
                psi: v.psi,
                se: v.se,
                ci: [v.ci.0, v.ci.1],
                tau: v.tau,
                pct_treated: v.pct_treated,
                pct_stochastic: v.pct_stochastic,
                vs_treat_all: (&cf.contrast(k, Comparator::TreatAll)?).into(),
                vs_treat_none: (&cf.contrast(k, Comparator::TreatNone)?).into(),
            })
        })
        .collect::<Result<Vec<_>, rc_odtr::Error>>()?;
    let settings = EstimationSettings { data: &data, estimator: &cfg, kappa_grid: &grid, extra: None };
    let artifact = EvaluateArtifact {
        audit: Audit::new("evaluate", cfg.seed, &settings),
        n: ds.len(),
        treat_all: (&all).into(),
        treat_none: (&none).into(),
        estimates,
        warnings: cf.warnings.clone(),
    };
    write_json(a.out.as_deref(), &artifact)
}

// ---- msm ----

#[derive(Serialize, Deserialize)]
pub struct CurveRow {
    pub kappa: f64,
    pub value: f64,
    pub se: f64,
    pub fitted: f64,
    pub chord: f64,
}

#[derive(Serialize, Deserialize)]
pub struct MsmArtifact {
    pub audit: Audit,
    pub n: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub chord: Line,
    pub contrast_intercept: f64,
    pub contrast_slope: f64,
    pub bootstrap: Option<BootstrapCi>,
    pub curve: Vec<CurveRow>,
}

fn msm_curve(artifact: &MsmArtifact) -> Vec<Vec<String>> {
    artifact
        .curve
        .iter()
        .map(|r| vec![r.kappa.to_string(), r.value.to_string(), r.fitted.to_string(), r.chord.to_string()])
        .collect()
}

pub fn msm(a: crate::MsmArgs, file: &FileConfig) -> Result<(), CliError> {
    let (ds, data) = load_data(&a.data, file, false)?;
    let cfg = estimator(&a.est, file)?;
    let grid = grid(&a.kappa_grid, file)?;
    let fb = file.bootstrap.clone().unwrap_or_default();
    let defaults = MsmOptions::default();
    let mode = match a.bootstrap_mode.as_deref() {
        Some(m) => parse_names::<BootstrapMode>("--bootstrap-mode", &[m.to_string()])?[0],
        None => fb.mode.unwrap_or(defaults.mode),
    };
    let opts = MsmOptions {
        replicates: a.replicates.or(fb.replicates).unwrap_or(defaults.replicates),
        mode,
        weighted: a.weighted || fb.weighted.unwrap_or(defaults.weighted),
        level: a.level.or(fb.level).unwrap_or(defaults.level),
    };
    let fit = msm_with_bootstrap(&ds, &grid, &cfg, &opts)?;
    let curve = fit
        .kappas
        .iter()
        .zip(&fit.values)
        .zip(&fit.estimates)
        .map(|((&k, &v), e)| CurveRow { kappa: k, value: v, se: e.se, fitted: fit.fitted(k), chord: fit.chord.at(k) })
        .collect();
    let settings = EstimationSettings {
        data: &data,
        estimator: &cfg,
        kappa_grid: &grid,
        extra: Some(serde_json::to_value(&opts).expect("options serialize")),
    };
    let artifact = MsmArtifact {
        audit: Audit::new("msm", cfg.seed, &settings),
        n: ds.len(),
        beta0: fit.beta0,
        beta1: fit.beta1,
        chord: fit.chord,
        contrast_intercept: fit.contrast.0,
        contrast_slope: fit.contrast.1,
        bootstrap: fit.boot_ci,
        curve,
    };
    write_json(a.out.as_deref(), &artifact)?;
    if let Some(p) = &a.plot_csv {
        write_csv(Some(p), &["kappa", "value", "fitted", "chord"], msm_curve(&artifact))?;
    }
    Ok(())
}

// ---- icer ----

#[derive(Serialize, Deserialize)]
pub struct IcerRow {
    pub kappa: f64,
    /// Expected incremental cost.
    pub numerator: f64,
    /// Expected incremental effect in `units`.
    pub denominator: f64,
    pub icer: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub unstable: bool,
    pub outcome_policy: f64,
    pub outcome_comparator: f64,
    pub cost_policy: f64,
    pub cost_comparator: f64,
}

#[derive(Serialize, Deserialize)]
pub struct IcerArtifact {
    pub audit: Audit,
    pub n: usize,
    pub comparator: Comparator,
    pub units: EffectUnits,
    pub estimates: Vec<IcerRow>,
}

fn plane_rows(artifact: &IcerArtifact) -> Vec<Vec<String>> {
    artifact
        .estimates
        .iter()
        .map(|r| {
            vec![
                r.kappa.to_string(),
                r.denominator.to_string(),
                r.numerator.to_string(),
                r.icer.map(|x| x.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

const PLANE_HEADER: [&str; 4] = ["kappa", "effect", "cost", "icer"];

pub fn icer(a: crate::IcerArgs, file: &FileConfig) -> Result<(), CliError> {
    let (ds, data) = load_data(&a.data, file, true)?;
    let mut cfg = estimator(&a.est, file)?;
    if let Some(e) = a.den_epsilon {
        cfg.den_epsilon = e;
    }
    let grid = grid(&a.kappa_grid, file)?;
    let comparator = parse_comparator(a.comparator.as_deref().or(file.comparator.as_deref()).unwrap_or("treat_none"))?;
    let units = if a.raw_units {
        EffectUnits::Raw
    } else {
        file.units.unwrap_or_default()
    };
    let curve = icer_curve(&ds, &grid, comparator, &cfg, units)?;
    let estimates = curve
        .estimates
        .iter()
        .map(|e| IcerRow {
            kappa: e.kappa,
            numerator: e.numerator,
            denominator: e.denominator,
            icer: e.ratio,
            se: e.se,
            ci: e.ci.map(|c| [c.0, c.1]),
            unstable: e.unstable,
            outcome_policy: e.components.outcome_policy.psi,
            outcome_comparator: e.components.outcome_comparator.psi,
            cost_policy: e.components.cost_policy.psi,
            cost_comparator: e.components.cost_comparator.psi,
        })
        .collect();
    let settings = EstimationSettings {
        data: &data,
        estimator: &cfg,
        kappa_grid: &grid,
        extra: Some(serde_json::json!({ "comparator": comparator, "units": units })),
    };
    let artifact = IcerArtifact {
        audit: Audit::new("icer", cfg.seed, &settings),
        n: ds.len(),
        comparator,
        units: curve.estimates.first().map_or(units, |e| e.units),
        estimates,
    };
    write_json(a.out.as_deref(), &artifact)?;
    if let Some(p) = &a.plane_csv {
        write_csv(Some(p), &PLANE_HEADER, plane_rows(&artifact))?;
    }
    Ok(())
}

// ---- subgroups ----

#[derive(Serialize, Deserialize)]
pub struct SubgroupArtifact {
    pub audit: Audit,
    pub n: usize,
    pub alpha: f64,
    pub results: Vec<SubgroupResult>,
}

pub fn subgroups(a: crate::SubgroupArgs, file: &FileConfig) -> Result<(), CliError> {
    let (ds, data) = load_data(&a.data, file, false)?;
    let alpha = a.alpha.or(file.alpha).unwrap_or(0.1);
    let results = subgroup_scan(&ds, alpha)?;
    let settings = serde_json::json!({ "data": data, "alpha": alpha });
    let artifact = SubgroupArtifact {
        audit: Audit::new("subgroups", 0, &settings),
        n: ds.len(),
        alpha,
        results,
    };
    write_json(a.out.as_deref(), &artifact)
}

// ---- plot-data ----

fn read_artifact<T: for<'de> Deserialize<'de>>(flag: &str, path: &Option<PathBuf>, kind: &str) -> Result<T, CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::validation(flag, format!("required for {kind}")))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(flag, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(flag, format!("{} is not a {kind} artifact: {e}", path.display())))
}

/// Distinct values (to 1e-9) and their counts, ascending.
pub fn histogram(values: &[f64]) -> Vec<(f64, usize)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for x in v {
        match out.last_mut() {
            Some((y, c)) if (x - *y).abs() <= 1e-9 => *c += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

pub fn plot_data(a: crate::PlotArgs) -> Result<(), CliError> {
    let out = a.out.as_deref();
    match a.what {
        PlotKind::BlipHist => {
            let m: ModelArtifact = read_artifact("--model", &a.model, "fit-rule model")?;
            let rows = histogram(&m.in_sample_blips)
                .into_iter()
                .map(|(b, c)| vec![b.to_string(), c.to_string()])
                .collect();
            write_csv(out, &["blip_value", "count"], rows)
        }
        PlotKind::ValueCurve => {
            let r: EvaluateArtifact = read_artifact("--results", &a.results, "evaluate")?;
            let rows = r
                .estimates
                .iter()
                .map(|e| {
                    vec![
                        e.kappa.to_string(),
                        e.psi.to_string(),
                        e.ci[0].to_string(),
                        e.ci[1].to_string(),
                        e.pct_treated.to_string(),
                        e.pct_stochastic.to_string(),
                    ]
                })
                .collect();
            write_csv(out, &["kappa", "psi", "ci_lo", "ci_hi", "pct_treated", "pct_stochastic"], rows)
        }
        PlotKind::Msm => {
            let r: MsmArtifact = read_artifact("--results", &a.results, "msm")?;
            write_csv(out, &["kappa", "value", "fitted", "chord"], msm_curve(&r))
        }
        PlotKind::Plane => {
            let r: IcerArtifact = read_artifact("--results", &a.results, "icer")?;
            write_csv(out, &PLANE_HEADER, plane_rows(&r))
        }
        PlotKind::Subgroups => {
            let r: SubgroupArtifact = read_artifact("--results", &a.results, "subgroups")?;
            let rows = r
                .results
                .iter()
                .flat_map(|s| {
                    s.levels.iter().map(move |l| {
                        vec![
                            s.covariate.clone(),
                            l.level.to_string(),
                            l.n.to_string(),
                            l.effect.map(|e| e.to_string()).unwrap_or_default(),
                        ]
                    })
                })
                .collect();
            write_csv(out, &["covariate", "level", "n", "effect"], rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_merges_near_ties() {
        let h = histogram(&[0.2, 0.1, 0.1 + 1e-12, 0.3, 0.2]);
        assert_eq!(h.len(), 3);
        assert_eq!(h[0].1, 2);
        assert_eq!(h[1], (0.2, 2));
    }
}
