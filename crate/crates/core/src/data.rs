//! Observed-data units, datasets, CSV ingestion and outcome scaling.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit: covariates, binary treatment, outcome and optional cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub w: Vec<f64>,
    pub a: u8,
    pub y: f64,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    BoundedReal,
}

/// Rows in file order. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    outcome_kind: OutcomeKind,
    y_bounds: (f64, f64),
}

impl Dataset {
    /// Validates every row. `outcome_kind` defaults to binary when all outcomes
    /// are 0/1; `y_bounds` defaults to (0, 1) for binary and (min, max) otherwise.
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        outcome_kind: Option<OutcomeKind>,
        y_bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        let arity = covariate_names.len();
        for (i, o) in observations.iter().enumerate() {
            if o.w.len() != arity {
                return Err(Error::InvalidData(format!(
                    "row {i}: {} covariates, expected {arity}",
                    o.w.len()
                )));
            }
            if let Some(v) = o.w.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("row {i}: non-finite covariate {v}")));
            }
            if o.a > 1 {
                return Err(Error::TreatmentNotBinary {
                    row: i,
                    value: o.a as f64,
                });
            }
            if !o.y.is_finite() {
                return Err(Error::InvalidData(format!("row {i}: non-finite outcome")));
            }
            if let Some(c) = o.c {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidData(format!(
                        "row {i}: cost must be finite and nonnegative (got {c})"
                    )));
                }
            }
        }
        let has_cost = observations[0].c.is_some();
        if observations.iter().any(|o| o.c.is_some() != has_cost) {
            return Err(Error::InvalidData(
                "cost present on some rows but not others".into(),
            ));
        }

        let all_binary = observations.iter().all(|o| o.y == 0.0 || o.y == 1.0);
        let outcome_kind = outcome_kind.unwrap_or(if all_binary {
            OutcomeKind::Binary
        } else {
            OutcomeKind::BoundedReal
        });
        if outcome_kind == OutcomeKind::Binary && !all_binary {
            return Err(Error::InvalidData(
                "outcome declared binary but contains values outside {0,1}".into(),
            ));
        }
        let y_bounds = match (y_bounds, outcome_kind) {
            (Some(b), _) => b,
            (None, OutcomeKind::Binary) => (0.0, 1.0),
            (None, OutcomeKind::BoundedReal) => {
                let (lo, hi) = min_max(observations.iter().map(|o| o.y));
                (lo, hi)
            }
        };
        if !(y_bounds.0 < y_bounds.1) {
            return Err(Error::DegenerateBounds {
                min: y_bounds.0,
                max: y_bounds.1,
            });
        }
        if let Some((i, o)) = observations
            .iter()
            .enumerate()
            .find(|(_, o)| o.y < y_bounds.0 || o.y > y_bounds.1)
        {
            return Err(Error::InvalidData(format!(
                "row {i}: outcome {} outside bounds ({}, {})",
                o.y, y_bounds.0, y_bounds.1
            )));
        }
        Ok(Self {
            observations,
            covariate_names,
            outcome_kind,
            y_bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        self.y_bounds
    }

    pub fn has_cost(&self) -> bool {
        self.observations[0].c.is_some()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.observations.iter().map(|o| o.a).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn costs(&self) -> Option<Vec<f64>> {
        self.observations.iter().map(|o| o.c).collect()
    }

    /// (n0, n1)
    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.observations.iter().filter(|o| o.a == 1).count();
        (self.len() - n1, n1)
    }

    pub fn require_both_arms(&self) -> Result<()> {
        match self.arm_counts() {
            (0, _) => Err(Error::SingleArm { arm: 1 }),
            (_, 0) => Err(Error::SingleArm { arm: 0 }),
            _ => Ok(()),
        }
    }

    /// Rows at `indices` (repeats allowed), keeping this dataset's metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            outcome_kind: self.outcome_kind,
            y_bounds: self.y_bounds,
        }
    }

    /// Dataset whose outcome is the cost column, scaled to [0, 1] by its
    /// observed bounds.
    pub(crate) fn cost_as_outcome(&self) -> Result<(Dataset, OutcomeScale)> {
        let costs = self
            .costs()
            .ok_or_else(|| Error::InvalidData("dataset has no cost column".into()))?;
        let (lo, hi) = min_max(costs.iter().copied());
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        let scale = OutcomeScale { min: lo, max: hi };
        let observations = self
            .observations
            .iter()
            .zip(&costs)
            .map(|(o, &c)| Observation {
                w: o.w.clone(),
                a: o.a,
                y: scale.to_unit(c),
                c: None,
            })
            .collect();
        Ok((
            Dataset {
                observations,
                covariate_names: self.covariate_names.clone(),
                outcome_kind: OutcomeKind::BoundedReal,
                y_bounds: (0.0, 1.0),
            },
            scale,
        ))
    }

    /// Writes covariates, then `a`, `y` and (if present) `c`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv_to(&mut out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.covariate_names.iter().map(String::as_str).collect();
        header.extend(["a", "y"]);
        if self.has_cost() {
            header.push("c");
        }
        writeln!(out, "{}", header.join(","))?;
        for o in &self.observations {
            let mut fields: Vec<String> = o.w.iter().map(|v| v.to_string()).collect();
            fields.push(o.a.to_string());
            fields.push(o.y.to_string());
            if let Some(c) = o.c {
                fields.push(c.to_string());
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()
    }
}

/// Which CSV columns carry which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub cost: Option<String>,
    #[serde(default)]
    pub outcome_kind: Option<OutcomeKind>,
    #[serde(default)]
    pub y_bounds: Option<(f64, f64)>,
}

impl ColumnMapping {
    /// Mapping matching the layout produced by [`Dataset::write_csv`].
    pub fn standard(covariates: &[String], with_cost: bool) -> Self {
        Self {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: covariates.to_vec(),
            cost: with_cost.then(|| "c".to_string()),
            outcome_kind: None,
            y_bounds: None,
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &ColumnMapping) -> Result<Dataset> {
    if schema.covariates.is_empty() {
        return Err(Error::invalid("covariate-cols", "at least one covariate column required"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let locate = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let a_idx = locate(&schema.treatment)?;
    let y_idx = locate(&schema.outcome)?;
    let w_idx = schema
        .covariates
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let c_idx = schema.cost.as_deref().map(locate).transpose()?;

    let mut observations = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |idx: usize, column: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(Error::MissingValue {
                    row,
                    column: column.to_string(),
                });
            }
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: column.to_string(),
                value: raw.to_string(),
            })
        };
        let a = cell(a_idx, &schema.treatment)?;
        let a = if a == 0.0 {
            0
        } else if a == 1.0 {
            1
        } else {
            return Err(Error::TreatmentNotBinary { row, value: a });
        };
        let y = cell(y_idx, &schema.outcome)?;
        let w = w_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| cell(i, name))
            .collect::<Result<Vec<_>>>()?;
        let c = match (c_idx, schema.cost.as_deref()) {
            (Some(i), Some(name)) => Some(cell(i, name)?),
            _ => None,
        };
        observations.push(Observation { w, a, y, c });
    }
    let ds = Dataset::new(
        observations,
        schema.covariates.clone(),
        schema.outcome_kind,
        schema.y_bounds,
    )?;
    ds.require_both_arms()?;
    Ok(ds)
}

/// Affine map between an outcome's natural bounds and [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub min: f64,
    pub max: f64,
}

impl OutcomeScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::DegenerateBounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn to_unit(&self, y: f64) -> f64 {
        (y - self.min) / self.width()
    }

    pub fn from_unit(&self, y: f64) -> f64 {
        y * self.width() + self.min
    }
}

/// A dataset with outcomes mapped into [0, 1] plus the map used.
#[derive(Debug, Clone)]
pub struct ScaledDataset {
    pub data: Dataset,
    pub scale: OutcomeScale,
}

pub fn scale_outcome(ds: &Dataset) -> Result<ScaledDataset> {
    let (min, max) = ds.y_bounds();
    let scale = OutcomeScale::new(min, max)?;
    if scale == OutcomeScale::unit() {
        return Ok(ScaledDataset {
            data: ds.clone(),
            scale,
        });
    }
    let observations = ds
        .observations
        .iter()
        .map(|o| Observation {
            y: scale.to_unit(o.y),
            ..o.clone()
        })
        .collect();
    let data = Dataset {
        observations,
        covariate_names: ds.covariate_names.clone(),
        outcome_kind: ds.outcome_kind,
        y_bounds: (0.0, 1.0),
    };
    Ok(ScaledDataset { data, scale })
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}
