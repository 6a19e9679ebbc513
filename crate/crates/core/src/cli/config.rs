use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cb::CbPenaltyForm;
use crate::criteria::{CriterionKind, DricFitWeight};
use crate::error::{Error, Result};
use crate::estimate::SolverOptions;
use crate::model::{ConditionalKind, OutcomeFamily};
use crate::parallel::Execution;
use crate::select::EstimatorMode;
use crate::sim::{DgpSpec, FitRecipe};

use super::ingest::ColumnSchema;

fn default_seed() -> u64 {
    20_240_601
}

fn default_output() -> PathBuf {
    PathBuf::from("msmic-out")
}

fn default_estimator() -> EstimatorMode {
    EstimatorMode::IpwUnknown
}

/// Everything one `select`, `simulate` or `bias-match` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorMode,
    /// Defaults to the estimator's criteria.
    #[serde(default)]
    pub criteria: Option<Vec<CriterionKind>>,
    /// Target multipliers, one per arm; all ones by default.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub contrast: Option<Vec<f64>>,
    #[serde(default)]
    pub known_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub cb_form: CbPenaltyForm,
    #[serde(default)]
    pub dric_fit_weight: DricFitWeight,
    pub input: InputConfig,
    #[serde(default)]
    pub schema: Option<ColumnSchema>,
    #[serde(default)]
    pub family: Option<OutcomeFamily>,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub conditional: ConditionalConfig,
    #[serde(default)]
    pub candidates: CandidateRule,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

/// Exactly one of `data` and `dgp`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Delimited file, relative to the config file.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub dgp: Option<DgpSpec>,
    /// Records drawn from the DGP.
    #[serde(default)]
    pub n: Option<usize>,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityConfig {
    /// Confounder columns (0-based) used by the propensity model; all by default.
    #[serde(default)]
    pub mask: Option<Vec<usize>>,
    #[serde(default)]
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalConfig {
    /// Defaults to the kind matching the outcome family.
    #[serde(default)]
    pub kind: Option<ConditionalKind>,
    #[serde(default)]
    pub mask: Option<Vec<usize>>,
    /// Gauss-Hermite nodes instead of closed forms.
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
}

/// A regressor referred to by position (0-based) or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateRule {
    /// One candidate with every regressor.
    #[default]
    Full,
    Explicit { sets: Vec<Vec<ColumnRef>> },
    AllSubsets { max_size: usize },
}

fn default_replications() -> usize {
    1000
}

fn default_pilot() -> usize {
    100_000
}

fn default_copy_scale() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Defaults to the recipe matching `estimator`.
    #[serde(default)]
    pub recipe: Option<FitRecipe>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_pilot")]
    pub pilot_n: usize,
    #[serde(default = "default_copy_scale")]
    pub copy_scale: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            recipe: None,
            replications: default_replications(),
            pilot_n: default_pilot(),
            copy_scale: default_copy_scale(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(data), Some(dir)) = (&cfg.input.data, path.parent()) {
            if data.is_relative() {
                cfg.input.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn criteria(&self) -> Vec<CriterionKind> {
        self.criteria.clone().unwrap_or_else(|| self.estimator.default_criteria())
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family.unwrap_or_else(OutcomeFamily::gaussian)
    }

    pub fn recipe(&self) -> FitRecipe {
        self.simulation.recipe.unwrap_or(match self.estimator {
            EstimatorMode::IpwKnown => FitRecipe::IpwKnown,
            EstimatorMode::IpwUnknown => FitRecipe::IpwUnknown,
            EstimatorMode::Dr => FitRecipe::Dr,
            EstimatorMode::Cb => FitRecipe::Cb,
        })
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        match (&self.input.data, &self.input.dgp) {
            (Some(_), None) => {
                if self.schema.is_none() {
                    return Err(Error::config("a data input needs a [schema] section"));
                }
            }
            (None, Some(dgp)) => {
                dgp.validate_shapes()?;
                if self.input.n.unwrap_or(0) == 0 {
                    return Err(Error::config("a DGP input needs a positive `n`"));
                }
            }
            _ => return Err(Error::config("[input] needs exactly one of `data` and `dgp`")),
        }
        if let Some(s) = &self.schema {
            s.validate()?;
        }
        if self.criteria().is_empty() {
            return Err(Error::config("no criteria requested"));
        }
        if let Some(arms) = self.declared_arms() {
            if let Some(t) = &self.target {
                if t.len() != arms {
                    return Err(Error::config(format!("target has {} entries for {arms} arms", t.len())));
                }
            }
        }
        self.family().validate()
    }

    /// Arm count known before reading any data.
    pub fn declared_arms(&self) -> Option<usize> {
        if let Some(d) = &self.input.dgp {
            return Some(d.arms);
        }
        self.schema.as_ref().and_then(|s| s.declared_arms())
    }
}

/// Commented template written by `init`. Every default is spelled out.
pub const TEMPLATE: &str = r#"# msmic run configuration

# Seed for data generation and Monte Carlo experiments; echoed in all output.
seed = 20240601
# Directory for report files (created if missing).
output_dir = "msmic-out"
# How theta is estimated: "ipw-known", "ipw-unknown", "dr" or "cb".
estimator = "ipw-unknown"
# Criteria to compute. Default depends on the estimator:
#   ipw-known   -> ["QICW", "IPWIC1", "OBS-WEIGHT-IC"]
#   ipw-unknown -> ["QICW", "IPWIC2"]
#   dr          -> ["DRIC"]
#   cb          -> ["CB-IC"]
# criteria = ["QICW", "IPWIC2"]
# Target population multipliers d, one per arm. Default: all ones.
# target = [1.0, 1.0]
# Contrast c for the covariate-balancing estimator (entries sum to zero).
# contrast = [1.0, -1.0]
# Propensity parameters treated as known (IPWIC1). With a DGP input the
# true values are used when this is omitted.
# known_alpha = [0.3, 0.8]
# "parallel" or "sequential".
execution = "parallel"
# CB-IC penalty: "derived" or "literal".
cb_form = "derived"
# Weight in the DRIC fit term: "target-weight" or "inverse-propensity".
dric_fit_weight = "target-weight"

[input]
# Either a delimited file (path relative to this file) ...
# data = "data.csv"
# delimiter = ","
# ... or a data-generating process with a sample size.
n = 1000

[input.dgp]
arms = 2
dim_z = 1
# One row (intercept, z coefficients) per non-reference arm.
propensity = [[0.3, 0.8]]
# Outcome law: { kind = "gaussian", noise_sd = 1.0 } or { kind = "bernoulli" }.
outcome = { kind = "gaussian", noise_sd = 1.0 }
# Regressor terms: intercept, arm-indicator, covariate, arm-covariate.
# Arms are numbered from 1, covariates from 0.
regressors = [
    { kind = "arm-indicator", arm = 1 },
    { kind = "arm-indicator", arm = 2 },
    { kind = "covariate", index = 0 },
]
# theta rows: one shared row or one per arm.
theta = [[1.0, 0.0, 0.0]]
# z coefficients of the outcome: none, one shared row, or one per arm.
confounding = [[0.8]]

[input.dgp.misspecification]
propensity_omits_z = false
conditional_omits_z = false

# Column roles for a data input.
# [schema]
# outcome = "y"
# assignment = { arm = "arm" }          # integer arm column 1..H
# assignment = { one_hot = ["t1", "t2"] }
# arms = 2                              # optional with an arm column
# regressors = { shared = ["x1", "x2"] }
# regressors = { per_arm = [["a1", "a2"], ["b1", "b2"]] }
# intercept = false                     # prepend a constant regressor
# confounders = ["z1"]

# Outcome marginal family.
[family]
kind = "gaussian-linear"                # or "bernoulli-logit"
loss = { kind = "log-likelihood" }      # or { kind = "density-power", gamma = 0.1 }
variance = 1.0

[propensity]
# mask = [0]                            # confounders used; default all
floor = 0.0                             # propensity floor, 0 = off

[conditional]
# kind = "gaussian-linear"              # default matches the family
# mask = [0]
# quadrature_nodes = 20                 # default: closed forms

# Candidate marginal structures:
#   { rule = "full" }                   one candidate, all regressors
#   { rule = "explicit", sets = [[0, 1], [0, 1, 2]] }   indices or names
#   { rule = "all-subsets", max_size = 2 }              at most 4096 subsets
[candidates]
rule = "explicit"
sets = [[0, 1], [0, 1, 2]]

[solver]
max_iterations = 100
tolerance = 1e-8
max_halvings = 30
divergence_bound = 1000.0

# Monte Carlo settings for `simulate` and `bias-match`.
[simulation]
# recipe = "ipw-unknown"                # default matches the estimator;
#                                       # also "observed-weight"
replications = 1000
pilot_n = 100000
copy_scale = 1
"#;
