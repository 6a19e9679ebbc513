//! Propensity and outcome-conditional maximum likelihood, and the IPW and
//! doubly robust estimating equations for theta.

mod inference;
mod newton;

pub use inference::{dr_influence, ipw_influence, mle_standard_errors, standard_errors};

pub use newton::{FitResult, SolverOptions};
pub(crate) use newton::solve as newton_solve;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::add_outer;
use crate::model::loss::linear_predictor;
use crate::model::{
    check_outcomes, ConditionalKind, ModelTriple, OutcomeConditionalFamily, OutcomeFamily, PropensityModel, SampleRecord,
    TargetPopulation, TreatmentFrame,
};

/// Records with a fitted probability this close to 0 or 1 are treated as
/// separated.
const SATURATION: f64 = 1e-9;

/// Maximum-likelihood fit of the propensity parameters.
pub fn fit_propensity(frame: &TreatmentFrame, model: &PropensityModel, opts: &SolverOptions) -> Result<FitResult> {
    if frame.arms() != model.arms() || frame.dim_z() != model.dim_z() {
        return Err(Error::config("frame does not match the propensity model"));
    }
    frame.require_all_arms()?;
    let fit = newton::solve(
        "propensity fit",
        DVector::zeros(model.dim()),
        opts,
        Some(model.block_len()),
        |alpha| Ok(model.score_hessian(frame, alpha)),
    )?;
    if let Some(arm) = saturated_arm(frame, model, &fit.params) {
        return Err(Error::NonConvergence {
            what: "propensity fit (separation: fitted probabilities reach 0 or 1)".into(),
            iterations: fit.iterations,
            residual: fit.gradient_norm,
            arm: Some(arm + 1),
        });
    }
    model.warn_if_floored(frame, &fit.params);
    Ok(fit)
}

fn saturated_arm(frame: &TreatmentFrame, model: &PropensityModel, alpha: &DVector<f64>) -> Option<usize> {
    let mut counts = vec![0usize; model.arms()];
    for r in frame.records() {
        let e = model.probabilities(&model.features(&r.z), alpha);
        for (h, &eh) in e.iter().enumerate() {
            if eh > 1.0 - SATURATION {
                counts[h] += 1;
            }
        }
    }
    let (arm, &n) = counts.iter().enumerate().max_by_key(|(_, &c)| c)?;
    (n > 0).then_some(arm)
}

/// Fitted outcome-conditional family: parameters plus the family carrying
/// its plug-in variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFit {
    pub fit: FitResult,
    pub family: OutcomeConditionalFamily,
}

/// Per-arm maximum-likelihood fit of the outcome-conditional family. For the
/// Gaussian kind the common variance is then set to the pooled residual
/// mean square.
pub fn fit_outcome_conditional(frame: &TreatmentFrame, cond: &OutcomeConditionalFamily, opts: &SolverOptions) -> Result<ConditionalFit> {
    if cond.kind() == ConditionalKind::Null {
        return Ok(ConditionalFit {
            fit: FitResult::empty(),
            family: cond.clone(),
        });
    }
    if frame.arms() != cond.arms() {
        return Err(Error::config("frame does not match the outcome-conditional family"));
    }
    frame.require_all_arms()?;
    if cond.kind() == ConditionalKind::BernoulliLogit {
        if let Some(i) = frame.records().iter().position(|r| r.y != 0.0 && r.y != 1.0) {
            return Err(Error::data(Some(i + 1), "Bernoulli conditional family needs 0/1 outcomes"));
        }
    }
    let fit = newton::solve(
        "outcome-conditional fit",
        DVector::zeros(cond.dim()),
        opts,
        Some(cond.block_len()),
        |beta| Ok(cond.fit_equations(frame, beta)),
    )?;
    let family = match cond.kind() {
        ConditionalKind::GaussianLinear => {
            let v = cond.residual_variance(frame, &fit.params);
            if v == 0.0 {
                log::warn!("outcome-conditional model fits the data exactly; conditional variance is zero");
            }
            cond.clone().with_variance(v)
        }
        _ => cond.clone(),
    };
    Ok(ConditionalFit { fit, family })
}

/// Plain maximum likelihood (or minimum loss) ignoring confounding.
pub fn unweighted_mle(frame: &TreatmentFrame, family: &OutcomeFamily, opts: &SolverOptions) -> Result<FitResult> {
    let weights = vec![1.0; frame.len()];
    solve_weighted(frame, family, &weights, None, opts, "unweighted fit")
}

/// `w^(arm_i)(z_i; alpha)` for every record.
pub fn assigned_weights(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, target: &TargetPopulation) -> Vec<f64> {
    frame
        .records()
        .iter()
        .map(|r| {
            let p = propensity.point(&r.z, alpha);
            target.mix(&p.e) / p.e[r.arm]
        })
        .collect()
}

/// Averaged weighted estimating equation `N^-1 sum_i w_i dzeta_i/dtheta`
/// and its Jacobian.
pub fn weighted_equation(frame: &TreatmentFrame, family: &OutcomeFamily, weights: &[f64], theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = theta.len();
    let mut f = DVector::zeros(p);
    let mut jac = DMatrix::zeros(p, p);
    for (r, &w) in frame.records().iter().zip(weights) {
        let x = &r.x[r.arm];
        let k = family.kernel(r.y, linear_predictor(x, theta));
        let xv = DVector::from_column_slice(x);
        f.axpy(w * k.d1, &xv, 1.0);
        add_outer(&mut jac, w * k.d2, &xv, &xv);
    }
    let n = frame.len() as f64;
    (f / n, jac / n)
}

fn solve_weighted(
    frame: &TreatmentFrame,
    family: &OutcomeFamily,
    weights: &[f64],
    init: Option<DVector<f64>>,
    opts: &SolverOptions,
    what: &str,
) -> Result<FitResult> {
    family.validate()?;
    check_outcomes(frame, family)?;
    let init = init.unwrap_or_else(|| DVector::zeros(frame.dim_x()));
    newton::solve(what, init, opts, None, |theta| Ok(weighted_equation(frame, family, weights, theta)))
}

/// IPW estimate of theta at fixed propensity parameters (known or fitted).
pub fn solve_ipw(
    frame: &TreatmentFrame,
    propensity: &PropensityModel,
    alpha: &DVector<f64>,
    target: &TargetPopulation,
    family: &OutcomeFamily,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if target.arms() != frame.arms() || propensity.arms() != frame.arms() {
        return Err(Error::config("target population, propensity model and frame disagree on the arm count"));
    }
    let init = unweighted_mle(frame, family, opts)?.params;
    let weights = assigned_weights(frame, propensity, alpha, target);
    solve_weighted(frame, family, &weights, Some(init), opts, "IPW estimating equation")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrMode {
    Value,
    DAlpha,
    DBeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DrMomentValue {
    Value(DVector<f64>),
    Jacobian(DMatrix<f64>),
}

/// Per-record pieces of the DR moment used by the solver and the criteria.
#[derive(Debug, Clone)]
pub(crate) struct DrPoint {
    pub value: DVector<f64>,
    /// `d m / d theta^T`
    pub d_theta: DMatrix<f64>,
    pub d_alpha: Option<DMatrix<f64>>,
    pub d_beta: Option<DMatrix<f64>>,
    /// `d g^(h) / d theta` for every arm.
    pub g_grad: Vec<DVector<f64>>,
    /// `d zeta / d theta` of the assigned arm.
    pub score: DVector<f64>,
    pub w: f64,
}

pub(crate) fn dr_point(
    models: &ModelTriple,
    r: &SampleRecord,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
    need_alpha: bool,
    need_beta: bool,
) -> DrPoint {
    let p = theta.len();
    let arms = models.arms();
    let pp = models.propensity.point(&r.z, alpha);
    let wp = models.propensity.weight_point(&pp, target);
    let a = r.arm;
    let d_a = target.d()[a];
    let f = models.conditional.features(&r.z);
    let mut value = DVector::zeros(p);
    let mut d_theta = DMatrix::zeros(p, p);
    let mut d_beta = need_beta.then(|| DMatrix::zeros(p, models.conditional.dim()));
    let mut g_grad = Vec::with_capacity(arms);
    let mut g_d1_assigned = 0.0;
    for h in 0..arms {
        let xv = DVector::from_column_slice(&r.x[h]);
        let eta = linear_predictor(&r.x[h], theta);
        let g = models.conditional.point(&models.family, h, eta, &f, beta);
        let coef = d_a - if h == a { wp.w[a] } else { 0.0 };
        value.axpy(coef * g.d1, &xv, 1.0);
        add_outer(&mut d_theta, coef * g.d2, &xv, &xv);
        if let Some(db) = d_beta.as_mut() {
            models.conditional.add_cross(db, coef, h, &xv, &g, &f);
        }
        if h == a {
            g_d1_assigned = g.d1;
        }
        g_grad.push(xv * g.d1);
    }
    let xa = DVector::from_column_slice(&r.x[a]);
    let k = models.family.kernel(r.y, linear_predictor(&r.x[a], theta));
    let w = wp.w[a];
    value.axpy(w * k.d1, &xa, 1.0);
    add_outer(&mut d_theta, w * k.d2, &xa, &xa);
    let d_alpha = need_alpha.then(|| {
        let mut m = DMatrix::zeros(p, models.propensity.dim());
        add_outer(&mut m, k.d1 - g_d1_assigned, &xa, &wp.dw[a]);
        m
    });
    DrPoint {
        value,
        d_theta,
        d_alpha,
        d_beta,
        g_grad,
        score: xa * k.d1,
        w,
    }
}

/// `dr_moment` of the public API: the DR moment of one record or one of
/// its nuisance Jacobians.
#[allow(clippy::too_many_arguments)]
pub fn dr_moment(
    models: &ModelTriple,
    record: &SampleRecord,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
    mode: DrMode,
) -> Result<DrMomentValue> {
    check_dims(models, record, theta, alpha, beta, target)?;
    models.family.check_outcome(record.y)?;
    let pt = dr_point(models, record, theta, alpha, beta, target, mode == DrMode::DAlpha, mode == DrMode::DBeta);
    Ok(match mode {
        DrMode::Value => DrMomentValue::Value(pt.value),
        DrMode::DAlpha => DrMomentValue::Jacobian(pt.d_alpha.expect("requested")),
        DrMode::DBeta => DrMomentValue::Jacobian(pt.d_beta.expect("requested")),
    })
}

fn check_dims(
    models: &ModelTriple,
    r: &SampleRecord,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
) -> Result<()> {
    let arms = models.arms();
    if r.arm >= arms || r.x.len() != arms || target.arms() != arms {
        return Err(Error::config("record, target and models disagree on the arm count"));
    }
    if r.x.iter().any(|x| x.len() != theta.len()) {
        return Err(Error::config("regressor length differs from the theta dimension"));
    }
    if r.z.len() != models.propensity.dim_z() || alpha.len() != models.propensity.dim() || beta.len() != models.conditional.dim() {
        return Err(Error::config("nuisance parameter dimensions do not match the models"));
    }
    Ok(())
}

/// Averaged DR estimating equation and its theta-Jacobian.
pub fn dr_equation(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = theta.len();
    let mut f = DVector::zeros(p);
    let mut jac = DMatrix::zeros(p, p);
    for r in frame.records() {
        let pt = dr_point(models, r, theta, alpha, beta, target, false, false);
        f += pt.value;
        jac += pt.d_theta;
    }
    let n = frame.len() as f64;
    (f / n, jac / n)
}

/// DR estimate of theta given fitted nuisance parameters. `models` must
/// carry the fitted conditional family (with its plug-in variance).
pub fn solve_dr(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
    opts: &SolverOptions,
) -> Result<FitResult> {
    models.check_frame(frame, target)?;
    if let Some(r) = frame.records().first() {
        check_dims(models, r, &DVector::zeros(frame.dim_x()), alpha, beta, target)?;
    }
    let init = unweighted_mle(frame, &models.family, opts)?.params;
    newton::solve("DR estimating equation", init, opts, None, |theta| {
        Ok(dr_equation(frame, models, theta, alpha, beta, target))
    })
}

/// Every stage of a DR fit.
#[derive(Debug, Clone)]
pub struct DrFit {
    pub alpha: FitResult,
    pub beta: FitResult,
    pub theta: FitResult,
    /// Models with the fitted conditional variance.
    pub models: ModelTriple,
}

/// Sequential DR fit: alpha, then beta, then theta.
pub fn fit_dr(frame: &TreatmentFrame, models: &ModelTriple, target: &TargetPopulation, opts: &SolverOptions) -> Result<DrFit> {
    models.check_frame(frame, target)?;
    let alpha = fit_propensity(frame, &models.propensity, opts)?;
    let cond = fit_outcome_conditional(frame, &models.conditional, opts)?;
    let models = ModelTriple {
        conditional: cond.family,
        ..models.clone()
    };
    let theta = solve_dr(frame, &models, &alpha.params, &cond.fit.params, target, opts)?;
    Ok(DrFit {
        alpha,
        beta: cond.fit,
        theta,
        models,
    })
}
