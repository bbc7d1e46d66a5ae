//! Resource-constrained optimal dynamic treatment rules with targeted
//! estimation of their value.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crossfit;
pub mod data;
pub mod dgp;
pub mod error;
pub mod folds;
pub mod glm;
pub mod icer;
pub mod learners;
pub mod msm;
pub mod rc_rule;
pub mod tmle;

pub use config::{BlipFit, EstimatorConfig};
pub use crossfit::{contrast, cv_tmle_value, fit_full_data, Comparator, CrossFit, FullDataFit, Measure};
pub use data::{ingest_csv, scale_outcome, ColumnMapping, Dataset, Observation, OutcomeKind, OutcomeScale};
pub use error::{Error, Result};
pub use icer::{icer, icer_curve, EffectUnits, IcerEstimate};
pub use msm::{fit_msm, msm_with_bootstrap, BootstrapMode, MsmFit, MsmOptions};
pub use rc_rule::{build_policy, solve_threshold, BlipDistribution, RuleKind, RulePolicy, ThresholdSolution};
pub use tmle::{tmle_static, tmle_value, Target, ValueEstimate};
