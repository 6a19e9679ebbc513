use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dgp::{stream_rng, DgpSpec, OutcomeLaw, PILOT_STREAM};
use crate::cb::{cb_criterion, cb_fit, pseudo_outcomes, CbPenaltyForm};
use crate::criteria::{dric, ipwic, observed_weight_variant, weighted_fit_term, CriterionKind, DricFitWeight};
use crate::error::{Error, Result};
use crate::estimate::{assigned_weights, fit_dr, fit_propensity, solve_ipw, SolverOptions};
use crate::linalg::{mean_and_se, CompensatedSum};
use crate::model::{
    ConditionalKind, ContrastSpec, ModelTriple, OutcomeConditionalFamily, OutcomeFamily, PropensityModel, TargetPopulation,
    TreatmentFrame,
};
use crate::parallel::{map_indexed, Execution};
use crate::select::{argmin_per_criterion, evaluate_candidates, fit_nuisance, SelectionSettings};

/// Estimator and matching criterion used in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitRecipe {
    /// IPW at the true alpha; IPWIC1.
    IpwKnown,
    /// IPW at the fitted alpha; IPWIC2.
    IpwUnknown,
    /// Doubly robust; DRIC.
    Dr,
    /// Covariate-balancing contrast; CB-IC.
    Cb,
    /// IPW at the true alpha; OBS-WEIGHT-IC.
    ObservedWeight,
}

impl FitRecipe {
    pub fn criterion(self) -> CriterionKind {
        match self {
            FitRecipe::IpwKnown => CriterionKind::Ipwic1,
            FitRecipe::IpwUnknown => CriterionKind::Ipwic2,
            FitRecipe::Dr => CriterionKind::Dric,
            FitRecipe::Cb => CriterionKind::CbIc,
            FitRecipe::ObservedWeight => CriterionKind::ObsWeightIc,
        }
    }

    /// Names of the per-replication auxiliary quantities.
    pub fn aux_names(self) -> &'static [&'static str] {
        match self {
            FitRecipe::IpwKnown | FitRecipe::ObservedWeight => &[],
            FitRecipe::IpwUnknown => &["known_alpha_penalty", "gap", "gap_unscaled"],
            FitRecipe::Dr => &["d2", "d3"],
            FitRecipe::Cb => &["other_form_penalty"],
        }
    }

    fn alpha_known(self) -> bool {
        matches!(self, FitRecipe::IpwKnown | FitRecipe::ObservedWeight)
    }
}

fn default_pilot() -> usize {
    100_000
}

fn one() -> usize {
    1
}

/// A Monte Carlo experiment: a pure function of these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dgp: DgpSpec,
    pub recipe: FitRecipe,
    /// Defaults to the family matching the outcome law, unit variance.
    #[serde(default)]
    pub family: Option<OutcomeFamily>,
    /// Fitted outcome-conditional kind for DR; defaults to the one matching
    /// the outcome law.
    #[serde(default)]
    pub conditional: Option<ConditionalKind>,
    /// Regressor columns of the fitted marginal structure; all by default.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    /// Target population multipliers; all ones by default.
    #[serde(default)]
    pub target: Option<TargetPopulation>,
    /// Contrast for the CB recipe; `(1, -1)` by default.
    #[serde(default)]
    pub contrast: Option<ContrastSpec>,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Sample size of the pilot fit fixing the limit parameters.
    #[serde(default = "default_pilot")]
    pub pilot_n: usize,
    /// The copy frame holds `copy_scale * n` records and its fit terms are
    /// divided by `copy_scale`: same expectation, less Monte Carlo noise.
    #[serde(default = "one")]
    pub copy_scale: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub cb_form: CbPenaltyForm,
    #[serde(default)]
    pub dric_fit_weight: DricFitWeight,
}

impl ExperimentSpec {
    pub fn new(dgp: DgpSpec, recipe: FitRecipe, n: usize, replications: usize, seed: u64) -> Self {
        ExperimentSpec {
            dgp,
            recipe,
            family: None,
            conditional: None,
            columns: None,
            target: None,
            contrast: None,
            n,
            replications,
            seed,
            pilot_n: default_pilot(),
            copy_scale: 1,
            solver: SolverOptions::default(),
            execution: Execution::default(),
            cb_form: CbPenaltyForm::default(),
            dric_fit_weight: DricFitWeight::default(),
        }
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family.unwrap_or(match self.dgp.outcome {
            OutcomeLaw::Gaussian { .. } => OutcomeFamily::gaussian(),
            OutcomeLaw::Bernoulli => OutcomeFamily::bernoulli(),
        })
    }

    fn conditional_kind(&self) -> ConditionalKind {
        self.conditional.unwrap_or(match self.dgp.outcome {
            OutcomeLaw::Gaussian { .. } => ConditionalKind::GaussianLinear,
            OutcomeLaw::Bernoulli => ConditionalKind::BernoulliLogit,
        })
    }

    pub fn target(&self) -> TargetPopulation {
        self.target.clone().unwrap_or_else(|| TargetPopulation::all(self.dgp.arms))
    }

    pub fn contrast(&self) -> Result<ContrastSpec> {
        match &self.contrast {
            Some(c) => Ok(c.clone()),
            None => ContrastSpec::new(vec![1.0, -1.0]),
        }
    }

    fn columns(&self) -> Vec<usize> {
        self.columns.clone().unwrap_or_else(|| (0..self.dgp.dim_x()).collect())
    }

    fn propensity_model(&self) -> PropensityModel {
        if self.recipe.alpha_known() {
            self.dgp.true_propensity_model()
        } else {
            self.dgp.fitted_propensity_model()
        }
    }

    fn models(&self) -> Result<ModelTriple> {
        let conditional = if self.recipe == FitRecipe::Dr {
            self.dgp.fitted_conditional(self.conditional_kind())
        } else {
            OutcomeConditionalFamily::null(self.dgp.arms, self.dgp.dim_z)
        };
        ModelTriple::new(self.family(), self.propensity_model(), conditional)
    }

    fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.n == 0 || self.replications == 0 || self.copy_scale == 0 {
            return Err(Error::config("sample size, replication count and copy scale must be positive"));
        }
        if self.target().arms() != self.dgp.arms {
            return Err(Error::config("target population length differs from the arm count"));
        }
        if self.recipe.alpha_known() && !self.dgp.propensity_correct() {
            return Err(Error::config("the known-alpha recipes need a correctly specified propensity model"));
        }
        if let Some(c) = &self.columns {
            if c.is_empty() || c.iter().any(|&j| j >= self.dgp.dim_x()) {
                return Err(Error::config("fitted columns out of range"));
            }
        }
        if self.recipe == FitRecipe::Cb && self.contrast()?.c().len() != self.dgp.arms {
            return Err(Error::config("contrast length differs from the arm count"));
        }
        Ok(())
    }

    fn frame(&self, stream: u64, n: usize) -> Result<TreatmentFrame> {
        self.dgp
            .generate_with(n, &mut stream_rng(self.seed, stream))?
            .select_regressors(&self.columns())
    }
}

/// Limit parameters, fixed once per experiment from a large pilot sample.
#[derive(Debug, Clone)]
struct Pilot {
    models: ModelTriple,
    /// Alpha defining the limit weights (IPW-type recipes) or the centering
    /// pseudo-outcomes (CB).
    alpha: DVector<f64>,
    theta: DVector<f64>,
}

fn pilot(spec: &ExperimentSpec) -> Result<Pilot> {
    let models = spec.models()?;
    let target = spec.target();
    let opts = &spec.solver;
    let frame = spec.frame(PILOT_STREAM, spec.pilot_n)?;
    let (alpha, theta) = match spec.recipe {
        FitRecipe::Cb => {
            let fit = cb_fit(&frame, &models.propensity, &spec.contrast()?, opts)?;
            (fit.alpha.params, fit.theta)
        }
        recipe => {
            let alpha = if spec.dgp.propensity_correct() {
                spec.dgp.true_alpha()
            } else {
                fit_propensity(&frame, &models.propensity, opts)?.params
            };
            let theta = if recipe == FitRecipe::Dr {
                fit_dr(&frame, &models, &target, opts)?.theta.params
            } else {
                solve_ipw(&frame, &models.propensity, &alpha, &target, &models.family, opts)?.params
            };
            (alpha, theta)
        }
    };
    Ok(Pilot { models, alpha, theta })
}

/// One replication of [`mc_bias`] / [`mc_risk`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub replication: usize,
    /// Analytic penalty on the data frame.
    pub penalty: f64,
    /// Criterion value on the data frame.
    pub value: f64,
    /// Copy-frame fit term minus in-sample fit term at theta-hat, both taken
    /// relative to the limit parameters.
    pub optimism: f64,
    /// Copy-frame fit term at theta-hat.
    pub risk: f64,
    pub theta: Vec<f64>,
    /// Values named by [`FitRecipe::aux_names`].
    pub aux: Vec<f64>,
}

/// Weighted fit term at the limit weights (IPW-type) or squared error on
/// pseudo-outcomes (CB), relative to the centering parameters.
struct FitTerm<'a> {
    spec: &'a ExperimentSpec,
    pilot: &'a Pilot,
    contrast: Option<ContrastSpec>,
}

impl FitTerm<'_> {
    fn limit_weights(&self, frame: &TreatmentFrame) -> Vec<f64> {
        let m = &self.pilot.models.propensity;
        let target = self.spec.target();
        if self.spec.recipe == FitRecipe::ObservedWeight {
            frame
                .records()
                .iter()
                .map(|r| target.mix(&m.point(&r.z, &self.pilot.alpha).e))
                .collect()
        } else {
            assigned_weights(frame, m, &self.pilot.alpha, &target)
        }
    }

    /// `(fit at theta-hat, fit at the centering parameters)`.
    fn eval(&self, frame: &TreatmentFrame, theta: &DVector<f64>, alpha: &DVector<f64>) -> (f64, f64) {
        match &self.contrast {
            Some(c) => {
                let m = &self.pilot.models.propensity;
                let at = |ys: &[f64], th: &DVector<f64>| -> f64 {
                    frame
                        .records()
                        .iter()
                        .zip(ys)
                        .map(|(r, y)| {
                            let e = y - r.x[0].iter().zip(th.iter()).map(|(a, b)| a * b).sum::<f64>();
                            e * e
                        })
                        .collect::<CompensatedSum>()
                        .value()
                };
                let y_hat = pseudo_outcomes(frame, m, alpha, c);
                let y_c = pseudo_outcomes(frame, m, &self.pilot.alpha, c);
                (at(&y_hat, theta), at(&y_c, &self.pilot.theta))
            }
            None => {
                let w = self.limit_weights(frame);
                let family = &self.pilot.models.family;
                (
                    weighted_fit_term(frame, family, &w, theta),
                    weighted_fit_term(frame, family, &w, &self.pilot.theta),
                )
            }
        }
    }
}

fn replicate(spec: &ExperimentSpec, pilot: &Pilot, r: usize) -> Result<ReplicationRow> {
    let data = spec.frame(2 * r as u64, spec.n)?;
    let copy = spec.frame(2 * r as u64 + 1, spec.n * spec.copy_scale)?;
    let models = &pilot.models;
    let target = spec.target();
    let opts = &spec.solver;
    let mut aux = Vec::new();
    let (report, theta, alpha) = match spec.recipe {
        FitRecipe::IpwKnown | FitRecipe::ObservedWeight => {
            let alpha = spec.dgp.true_alpha();
            let theta = solve_ipw(&data, &models.propensity, &alpha, &target, &models.family, opts)?.params;
            let report = if spec.recipe == FitRecipe::IpwKnown {
                ipwic(&data, models, &theta, &alpha, &target, true)?
            } else {
                observed_weight_variant(&data, models, &theta, &alpha, &target)?
            };
            (report, theta, alpha)
        }
        FitRecipe::IpwUnknown => {
            let alpha = fit_propensity(&data, &models.propensity, opts)?.params;
            let theta = solve_ipw(&data, &models.propensity, &alpha, &target, &models.family, opts)?.params;
            let report = ipwic(&data, models, &theta, &alpha, &target, false)?;
            let known = ipwic(&data, models, &theta, &alpha, &target, true)?;
            aux.push(known.penalty);
            aux.push(known.penalty - report.penalty);
            aux.push(2.0 * report.matrices.propensity_correction_unscaled()?);
            (report, theta, alpha)
        }
        FitRecipe::Dr => {
            let fit = fit_dr(&data, models, &target, opts)?;
            let theta = fit.theta.params;
            let alpha = fit.alpha.params;
            let report = dric(&data, &fit.models, &theta, &alpha, &fit.beta.params, &target, spec.dric_fit_weight)?;
            aux.push(report.matrices.d2_hat.unwrap_or(0.0));
            aux.push(report.matrices.d3_hat.unwrap_or(0.0));
            (report, theta, alpha)
        }
        FitRecipe::Cb => {
            let c = spec.contrast()?;
            let fit = cb_fit(&data, &models.propensity, &c, opts)?;
            let report = cb_criterion(&data, &models.propensity, &fit.theta, &fit.alpha.params, &c, spec.cb_form)?;
            let other = match spec.cb_form {
                CbPenaltyForm::Derived => CbPenaltyForm::Literal,
                CbPenaltyForm::Literal => CbPenaltyForm::Derived,
            };
            aux.push(cb_criterion(&data, &models.propensity, &fit.theta, &fit.alpha.params, &c, other)?.penalty);
            (report, fit.theta, fit.alpha.params)
        }
    };
    let term = FitTerm {
        spec,
        pilot,
        contrast: (spec.recipe == FitRecipe::Cb).then(|| spec.contrast()).transpose()?,
    };
    let (in_hat, in_c) = term.eval(&data, &theta, &alpha);
    let (copy_hat, copy_c) = term.eval(&copy, &theta, &alpha);
    let scale = spec.copy_scale as f64;
    let (copy_hat, copy_c) = (copy_hat / scale, copy_c / scale);
    Ok(ReplicationRow {
        replication: r,
        penalty: report.penalty,
        value: report.value,
        optimism: (copy_hat - copy_c) - (in_hat - in_c),
        risk: copy_hat,
        theta: theta.iter().copied().collect(),
        aux,
    })
}

/// Successful replications plus the failure count.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub rows: Vec<ReplicationRow>,
    pub failures: usize,
}

/// Runs every replication; more than 5% failures is an experiment error.
pub fn run_replications(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    spec.validate()?;
    let pilot = pilot(spec)?;
    let results = map_indexed(spec.replications, spec.execution, |r| replicate(spec, &pilot, r));
    let (rows, failures) = collect(results, spec.replications)?;
    Ok(ExperimentRun { rows, failures })
}

fn collect<T>(results: Vec<Result<T>>, m: usize) -> Result<(Vec<T>, usize)> {
    let mut rows = Vec::with_capacity(m);
    let mut failures = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => {
                failures += 1;
                log::warn!("replication {r} failed: {e}");
            }
        }
    }
    check_failures(failures, m)?;
    Ok((rows, failures))
}

fn check_failures(failures: usize, m: usize) -> Result<()> {
    if failures * 20 > m {
        return Err(Error::Experiment(format!("{failures} of {m} replications failed (limit 5%)")));
    }
    Ok(())
}

/// Monte Carlo risk: mean copy-frame fit term at theta-hat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub se: f64,
    pub replications: usize,
    pub failures: usize,
}

pub fn mc_risk(spec: &ExperimentSpec) -> Result<RiskEstimate> {
    let run = run_replications(spec)?;
    let risks: Vec<f64> = run.rows.iter().map(|r| r.risk).collect();
    let (mean, se) = mean_and_se(&risks);
    Ok(RiskEstimate {
        mean,
        se,
        replications: run.rows.len(),
        failures: run.failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxSummary {
    pub name: &'static str,
    pub mean: f64,
    pub se: f64,
}

/// Analytic penalty against the brute-force optimism bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatchReport {
    pub criterion: CriterionKind,
    pub recipe: FitRecipe,
    pub n: usize,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    pub seed: u64,
    pub penalty_mean: f64,
    pub penalty_se: f64,
    pub mc_bias: f64,
    pub mc_se: f64,
    /// `(penalty - optimism)` mean over its standard error, paired by
    /// replication.
    pub z_score: f64,
    /// `(penalty_mean - mc_bias) / mc_bias`.
    pub relative_error: f64,
    pub aux: Vec<AuxSummary>,
    pub rows: Vec<ReplicationRow>,
}

pub fn mc_bias(spec: &ExperimentSpec) -> Result<BiasMatchReport> {
    let run = run_replications(spec)?;
    Ok(summarize(spec, run))
}

fn summarize(spec: &ExperimentSpec, run: ExperimentRun) -> BiasMatchReport {
    let column = |f: &dyn Fn(&ReplicationRow) -> f64| -> Vec<f64> { run.rows.iter().map(f).collect() };
    let (penalty_mean, penalty_se) = mean_and_se(&column(&|r| r.penalty));
    let (mc_bias, mc_se) = mean_and_se(&column(&|r| r.optimism));
    let (diff, diff_se) = mean_and_se(&column(&|r| r.penalty - r.optimism));
    let z_score = if diff_se > 0.0 { diff / diff_se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let aux = spec
        .recipe
        .aux_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mean, se) = mean_and_se(&column(&|r| r.aux[j]));
            AuxSummary { name, mean, se }
        })
        .collect();
    BiasMatchReport {
        criterion: spec.recipe.criterion(),
        recipe: spec.recipe,
        n: spec.n,
        replications: run.rows.len(),
        failures: run.failures,
        seed: spec.seed,
        penalty_mean,
        penalty_se,
        mc_bias,
        mc_se,
        z_score,
        relative_error: (penalty_mean - mc_bias) / mc_bias,
        aux,
        rows: run.rows,
    }
}

/// How often each candidate minimizes each criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTable {
    pub candidates: Vec<Vec<usize>>,
    pub criteria: Vec<CriterionKind>,
    /// `counts[k][c]`: replications where candidate `c` minimized criterion `k`.
    pub counts: Vec<Vec<usize>>,
    pub replications: usize,
    pub failures: usize,
    pub seed: u64,
}

impl SelectionTable {
    pub fn frequency(&self, kind: CriterionKind, candidate: usize) -> Option<f64> {
        let k = self.criteria.iter().position(|&c| c == kind)?;
        Some(self.counts[k][candidate] as f64 / self.replications as f64)
    }
}

/// Repeats candidate selection on fresh frames from `spec.dgp`. The recipe
/// decides whether alpha is known (QICW and IPWIC1 then use the true alpha).
pub fn selection_experiment(spec: &ExperimentSpec, candidates: &[Vec<usize>], criteria: &[CriterionKind]) -> Result<SelectionTable> {
    spec.validate()?;
    if candidates.is_empty() || criteria.is_empty() {
        return Err(Error::config("selection needs at least one candidate and one criterion"));
    }
    if candidates.iter().any(|c| c.is_empty() || c.iter().any(|&j| j >= spec.dgp.dim_x())) {
        return Err(Error::config("candidate columns out of range"));
    }
    let mut models = spec.models()?;
    if criteria.contains(&CriterionKind::Dric) {
        models.conditional = spec.dgp.fitted_conditional(spec.conditional_kind());
    }
    let mut settings = SelectionSettings::new(models, spec.target());
    settings.known_alpha = spec.recipe.alpha_known().then(|| spec.dgp.true_alpha());
    settings.contrast = criteria.contains(&CriterionKind::CbIc).then(|| spec.contrast()).transpose()?;
    settings.solver = spec.solver;
    settings.cb_form = spec.cb_form;
    settings.dric_fit_weight = spec.dric_fit_weight;
    settings.check(criteria)?;
    let results = map_indexed(spec.replications, spec.execution, |r| -> Result<Vec<usize>> {
        let frame = spec.dgp.generate_with(spec.n, &mut stream_rng(spec.seed, 2 * r as u64))?;
        let nuisance = fit_nuisance(&frame, &settings, criteria)?;
        let cells = evaluate_candidates(&frame, candidates, criteria, &settings, &nuisance, Execution::Sequential);
        let best = argmin_per_criterion(&cells, criteria);
        if let Some(bad) = cells.into_iter().find(|c| c.outcome.is_err()) {
            return bad.outcome.map(|_| vec![]);
        }
        best.into_iter()
            .map(|b| b.ok_or_else(|| Error::Experiment("criterion value is not finite".into())))
            .collect()
    });
    let (rows, failures) = collect(results, spec.replications)?;
    let mut counts = vec![vec![0; candidates.len()]; criteria.len()];
    for row in &rows {
        for (k, &c) in row.iter().enumerate() {
            counts[k][c] += 1;
        }
    }
    Ok(SelectionTable {
        candidates: candidates.to_vec(),
        criteria: criteria.to_vec(),
        counts,
        replications: rows.len(),
        failures,
        seed: spec.seed,
    })
}
