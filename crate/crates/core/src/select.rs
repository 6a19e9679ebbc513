//! Evaluating criteria over candidate marginal structures on one frame.
//!
//! Nuisance fits (propensity, outcome-conditional, balancing weights) do not
//! depend on the regressors, so they are fitted once per frame and shared by
//! every candidate.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cb::{cb_criterion, cb_estimate, solve_cb_alpha, CbPenaltyForm};
use crate::criteria::{dric, ipwic, observed_weight_variant, qicw, CriterionKind, CriterionReport, DricFitWeight};
use crate::error::{Error, Result};
use crate::estimate::{fit_outcome_conditional, fit_propensity, solve_dr, solve_ipw, FitResult, SolverOptions};
use crate::model::{ContrastSpec, ModelTriple, TargetPopulation, TreatmentFrame};
use crate::parallel::{map_indexed, Execution};

/// How theta is estimated; decides whether alpha is treated as known and
/// which criteria are computed by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    IpwKnown,
    IpwUnknown,
    Dr,
    Cb,
}

impl EstimatorMode {
    pub fn default_criteria(self) -> Vec<CriterionKind> {
        match self {
            EstimatorMode::IpwKnown => vec![CriterionKind::Qicw, CriterionKind::Ipwic1, CriterionKind::ObsWeightIc],
            EstimatorMode::IpwUnknown => vec![CriterionKind::Qicw, CriterionKind::Ipwic2],
            EstimatorMode::Dr => vec![CriterionKind::Dric],
            EstimatorMode::Cb => vec![CriterionKind::CbIc],
        }
    }
}

/// Everything except the regressor columns.
#[derive(Debug, Clone)]
pub struct SelectionSettings {
    pub models: ModelTriple,
    pub target: TargetPopulation,
    /// Propensity parameters treated as known (IPWIC1, and QICW /
    /// OBS-WEIGHT-IC when present).
    pub known_alpha: Option<DVector<f64>>,
    pub contrast: Option<ContrastSpec>,
    pub solver: SolverOptions,
    pub cb_form: CbPenaltyForm,
    pub dric_fit_weight: DricFitWeight,
}

impl SelectionSettings {
    pub fn new(models: ModelTriple, target: TargetPopulation) -> Self {
        SelectionSettings {
            models,
            target,
            known_alpha: None,
            contrast: None,
            solver: SolverOptions::default(),
            cb_form: CbPenaltyForm::default(),
            dric_fit_weight: DricFitWeight::default(),
        }
    }

    /// Checks settings against the requested criteria before any fitting.
    pub fn check(&self, criteria: &[CriterionKind]) -> Result<()> {
        let h = self.models.arms();
        if self.target.arms() != h {
            return Err(Error::config(format!(
                "target population has {} entries for {h} arms",
                self.target.arms()
            )));
        }
        if let Some(a) = &self.known_alpha {
            if a.len() != self.models.propensity.dim() {
                return Err(Error::config(format!(
                    "known alpha has {} entries, the propensity model needs {}",
                    a.len(),
                    self.models.propensity.dim()
                )));
            }
        }
        if criteria.contains(&CriterionKind::Ipwic1) && self.known_alpha.is_none() {
            return Err(Error::config("IPWIC1 needs known propensity parameters"));
        }
        if criteria.contains(&CriterionKind::CbIc) {
            match &self.contrast {
                None => return Err(Error::config("CB-IC needs a contrast")),
                Some(c) if c.c().len() != h => {
                    return Err(Error::config(format!("contrast has {} entries for {h} arms", c.c().len())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Fits shared by all candidates on one frame.
#[derive(Debug, Clone)]
pub struct Nuisance {
    pub alpha_hat: Option<FitResult>,
    /// Models carrying the fitted conditional variance, with beta.
    pub conditional: Option<(ModelTriple, FitResult)>,
    pub cb_alpha: Option<FitResult>,
}

pub fn fit_nuisance(frame: &TreatmentFrame, settings: &SelectionSettings, criteria: &[CriterionKind]) -> Result<Nuisance> {
    let opts = &settings.solver;
    let needs_hat = criteria.iter().any(|k| match k {
        CriterionKind::Ipwic2 | CriterionKind::Dric => true,
        CriterionKind::Qicw | CriterionKind::ObsWeightIc => settings.known_alpha.is_none(),
        _ => false,
    });
    let alpha_hat = if needs_hat {
        Some(fit_propensity(frame, &settings.models.propensity, opts)?)
    } else {
        None
    };
    let conditional = if criteria.contains(&CriterionKind::Dric) {
        let c = fit_outcome_conditional(frame, &settings.models.conditional, opts)?;
        let models = ModelTriple {
            conditional: c.family,
            ..settings.models.clone()
        };
        Some((models, c.fit))
    } else {
        None
    };
    let cb_alpha = match (&settings.contrast, criteria.contains(&CriterionKind::CbIc)) {
        (Some(c), true) => Some(solve_cb_alpha(frame, &settings.models.propensity, c, opts)?),
        _ => None,
    };
    Ok(Nuisance {
        alpha_hat,
        conditional,
        cb_alpha,
    })
}

/// A criterion evaluated at its own estimate of theta.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: CriterionReport,
    pub theta: FitResult,
}

fn missing(what: &str) -> Error {
    Error::config(format!("{what} was not fitted for this criterion"))
}

/// Evaluates one criterion for the regressor columns `columns`.
pub fn evaluate(
    frame: &TreatmentFrame,
    columns: &[usize],
    kind: CriterionKind,
    settings: &SelectionSettings,
    nuisance: &Nuisance,
) -> Result<Evaluation> {
    let sub = frame.select_regressors(columns)?;
    let models = &settings.models;
    let target = &settings.target;
    let opts = &settings.solver;
    let hat = || nuisance.alpha_hat.as_ref().map(|f| &f.params).ok_or_else(|| missing("alpha-hat"));
    let ipw_alpha = || settings.known_alpha.as_ref().map_or_else(hat, Ok);
    match kind {
        CriterionKind::Qicw | CriterionKind::ObsWeightIc => {
            let alpha = ipw_alpha()?;
            let theta = solve_ipw(&sub, &models.propensity, alpha, target, &models.family, opts)?;
            let report = if kind == CriterionKind::Qicw {
                qicw(&sub, models, &theta.params, alpha, target)?
            } else {
                observed_weight_variant(&sub, models, &theta.params, alpha, target)?
            };
            Ok(Evaluation { report, theta })
        }
        CriterionKind::Ipwic1 | CriterionKind::Ipwic2 => {
            let known = kind == CriterionKind::Ipwic1;
            let alpha = if known {
                settings.known_alpha.as_ref().ok_or_else(|| missing("known alpha"))?
            } else {
                hat()?
            };
            let theta = solve_ipw(&sub, &models.propensity, alpha, target, &models.family, opts)?;
            let report = ipwic(&sub, models, &theta.params, alpha, target, known)?;
            Ok(Evaluation { report, theta })
        }
        CriterionKind::Dric => {
            let alpha = hat()?;
            let (m, beta) = nuisance.conditional.as_ref().ok_or_else(|| missing("outcome-conditional model"))?;
            let theta = solve_dr(&sub, m, alpha, &beta.params, target, opts)?;
            let report = dric(&sub, m, &theta.params, alpha, &beta.params, target, settings.dric_fit_weight)?;
            Ok(Evaluation { report, theta })
        }
        CriterionKind::CbIc => {
            let c = settings.contrast.as_ref().ok_or_else(|| missing("contrast"))?;
            let alpha = nuisance.cb_alpha.as_ref().ok_or_else(|| missing("balancing alpha"))?;
            let est = cb_estimate(&sub, &models.propensity, &alpha.params, c)?;
            let report = cb_criterion(&sub, &models.propensity, &est, &alpha.params, c, settings.cb_form)?;
            // the contrast estimator is closed form
            let theta = FitResult {
                params: est,
                converged: true,
                iterations: 0,
                gradient_norm: 0.0,
                observed_information: report.matrices.a_hat.clone(),
            };
            Ok(Evaluation { report, theta })
        }
    }
}

/// One (candidate, criterion) cell.
#[derive(Debug)]
pub struct CandidateResult {
    /// 1-based candidate id.
    pub candidate: usize,
    pub columns: Vec<usize>,
    pub kind: CriterionKind,
    pub outcome: Result<Evaluation>,
}

/// Evaluates every criterion for every candidate. Results are ordered by
/// candidate id, then by the order of `criteria`.
pub fn evaluate_candidates(
    frame: &TreatmentFrame,
    candidates: &[Vec<usize>],
    criteria: &[CriterionKind],
    settings: &SelectionSettings,
    nuisance: &Nuisance,
    execution: Execution,
) -> Vec<CandidateResult> {
    let cells: Vec<(usize, CriterionKind)> = (0..candidates.len())
        .flat_map(|c| criteria.iter().map(move |&k| (c, k)))
        .collect();
    map_indexed(cells.len(), execution, |i| {
        let (c, kind) = cells[i];
        CandidateResult {
            candidate: c + 1,
            columns: candidates[c].clone(),
            kind,
            outcome: evaluate(frame, &candidates[c], kind, settings, nuisance),
        }
    })
}

/// Index (into `candidates`) of the smallest criterion value per criterion,
/// ignoring failed cells. Ties go to the smaller candidate.
pub fn argmin_per_criterion(results: &[CandidateResult], criteria: &[CriterionKind]) -> Vec<Option<usize>> {
    criteria
        .iter()
        .map(|&k| {
            results
                .iter()
                .filter(|r| r.kind == k)
                .filter_map(|r| r.outcome.as_ref().ok().map(|e| (r.candidate - 1, e.report.value)))
                .filter(|(_, v)| v.is_finite())
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(c, _)| c)
        })
        .collect()
}

/// Every non-empty subset of `0..dim_x` of size at most `max_size`, in
/// order of size then lexicographically. More than 2^12 subsets is an error.
pub fn all_subsets(dim_x: usize, max_size: usize) -> Result<Vec<Vec<usize>>> {
    const CAP: u128 = 1 << 12;
    let k = max_size.min(dim_x);
    let mut count: u128 = 0;
    let mut binom: u128 = 1;
    for s in 1..=k {
        binom = binom * (dim_x + 1 - s) as u128 / s as u128;
        count += binom;
        if count > CAP {
            return Err(Error::config(format!(
                "candidate enumeration over {dim_x} regressors up to size {max_size} exceeds {CAP} subsets"
            )));
        }
    }
    let mut out = Vec::new();
    for size in 1..=k {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let mut i = size;
            while i > 0 && idx[i - 1] == dim_x - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}
