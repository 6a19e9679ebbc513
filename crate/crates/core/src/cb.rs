//! Covariate-balancing propensity weights, the direct contrast estimator and
//! its squared-error criterion (two-arm logistic case).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionKind, CriterionReport, Diagnostics, PenaltyMatrices};
use crate::error::{Error, Result};
use crate::estimate::{FitResult, SolverOptions};
use crate::linalg::{add_outer, checked_inverse, checked_solve, condition, CompensatedSum};
use crate::model::loss::linear_predictor;
use crate::model::{ContrastSpec, PropensityModel, TreatmentFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CbPenaltyForm {
    /// Influence-function form: accounts for alpha-hat in the pseudo-outcome
    /// of both the fit term and the estimator.
    #[default]
    Derived,
    /// `2 sum_h tr[(sum x x^T)^-1 sum t/e^2 c^2 r (r - lambda I^-1 (1,z)) x x^T]`.
    Literal,
}

/// Fitted covariate-balancing model.
#[derive(Debug, Clone, PartialEq)]
pub struct CbFit {
    pub alpha: FitResult,
    /// `N^-1 sum_i sum_h c_h r_i d log e_h / d alpha^T`, with `r = y - x^T theta`.
    pub lambda: DMatrix<f64>,
    /// `N^-1 sum_i sum_h d log e_h / d alpha  c_h (1, z^T)`.
    pub i_hat: DMatrix<f64>,
    pub theta: DVector<f64>,
}

fn check_setup(frame: &TreatmentFrame, propensity: &PropensityModel, c: &ContrastSpec) -> Result<()> {
    if frame.arms() != 2 || propensity.arms() != 2 || c.c().len() != 2 {
        return Err(Error::config("covariate balancing is implemented for two arms"));
    }
    if frame.dim_z() != propensity.dim_z() {
        return Err(Error::config("frame does not match the propensity model"));
    }
    Ok(())
}

fn check_shared_regressors(frame: &TreatmentFrame) -> Result<()> {
    for (i, r) in frame.records().iter().enumerate() {
        if r.x.iter().any(|x| x != &r.x[0]) {
            return Err(Error::data(Some(i + 1), "the contrast estimator needs regressors shared by all arms"));
        }
    }
    Ok(())
}

/// Averaged balancing moment `N^-1 sum_i sum_h t_h c_h (1,z_i) / e_h` and
/// its Jacobian in alpha.
pub fn balancing_moment(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, c: &ContrastSpec) -> (DVector<f64>, DMatrix<f64>) {
    let k = propensity.block_len();
    let q = propensity.dim();
    let mut f_sum = DVector::zeros(k);
    let mut jac = DMatrix::zeros(k, q);
    for r in frame.records() {
        let pp = propensity.point(&r.z, alpha);
        let f = DVector::from_vec(propensity.features(&r.z));
        let a = r.arm;
        let coef = c.c()[a] / pp.e[a];
        f_sum.axpy(coef, &f, 1.0);
        add_outer(&mut jac, -coef, &f, &pp.dlog[a]);
    }
    let n = frame.len() as f64;
    (f_sum / n, jac / n)
}

/// Solves the balancing equations for alpha.
pub fn solve_cb_alpha(frame: &TreatmentFrame, propensity: &PropensityModel, c: &ContrastSpec, opts: &SolverOptions) -> Result<FitResult> {
    check_setup(frame, propensity, c)?;
    frame.require_all_arms()?;
    crate::estimate::newton_solve(
        "covariate-balancing equations",
        DVector::zeros(propensity.dim()),
        opts,
        Some(propensity.block_len()),
        |alpha| Ok(balancing_moment(frame, propensity, alpha, c)),
    )
}

/// Pseudo-outcome `Y* = sum_h t_h c_h y / e_h` of every record.
pub fn pseudo_outcomes(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, c: &ContrastSpec) -> Vec<f64> {
    frame
        .records()
        .iter()
        .map(|r| {
            let pp = propensity.point(&r.z, alpha);
            c.c()[r.arm] * r.y / pp.e[r.arm]
        })
        .collect()
}

/// `(sum x x^T)^-1 sum x Y*`.
pub fn cb_estimate(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, c: &ContrastSpec) -> Result<DVector<f64>> {
    check_setup(frame, propensity, c)?;
    check_shared_regressors(frame)?;
    let ystar = pseudo_outcomes(frame, propensity, alpha, c);
    let p = frame.dim_x();
    let mut q = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (r, ys) in frame.records().iter().zip(&ystar) {
        let x = DVector::from_column_slice(&r.x[0]);
        add_outer(&mut q, 1.0, &x, &x);
        rhs.axpy(*ys, &x, 1.0);
    }
    checked_solve("regressor Gram matrix", &q, &rhs)
}

/// Balancing fit followed by the contrast estimate.
pub fn cb_fit(frame: &TreatmentFrame, propensity: &PropensityModel, c: &ContrastSpec, opts: &SolverOptions) -> Result<CbFit> {
    let alpha = solve_cb_alpha(frame, propensity, c, opts)?;
    let theta = cb_estimate(frame, propensity, &alpha.params, c)?;
    let (lambda, i_hat) = lambda_and_information(frame, propensity, &alpha.params, &theta, c);
    Ok(CbFit {
        alpha,
        lambda,
        i_hat,
        theta,
    })
}

/// Sample versions of `lambda(alpha)` and `I(alpha)`, both summed over arms
/// without assignment indicators.
pub fn lambda_and_information(
    frame: &TreatmentFrame,
    propensity: &PropensityModel,
    alpha: &DVector<f64>,
    theta: &DVector<f64>,
    c: &ContrastSpec,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = propensity.block_len();
    let q = propensity.dim();
    let mut lambda = DMatrix::zeros(1, q);
    let mut info = DMatrix::zeros(q, k);
    for r in frame.records() {
        let pp = propensity.point(&r.z, alpha);
        let f = DVector::from_vec(propensity.features(&r.z));
        let resid = r.y - linear_predictor(&r.x[0], theta);
        for h in 0..2 {
            let ch = c.c()[h];
            for j in 0..q {
                lambda[(0, j)] += ch * resid * pp.dlog[h][j];
            }
            add_outer(&mut info, ch, &pp.dlog[h], &f);
        }
    }
    let n = frame.len() as f64;
    (lambda / n, info / n)
}

/// Per-record influence of `theta-hat` (N x p), including the effect of
/// estimating alpha through the balancing equations.
pub fn cb_influence(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, theta: &DVector<f64>, c: &ContrastSpec) -> Result<DMatrix<f64>> {
    let parts = CbParts::new(frame, propensity, alpha, theta, c)?;
    let n = frame.len();
    let p = theta.len();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let inf = &parts.q_inv * (&parts.x[i] * parts.e[i] + &parts.g * &parts.if_alpha[i]);
        out.set_row(i, &inf.transpose());
    }
    Ok(out)
}

struct CbParts {
    x: Vec<DVector<f64>>,
    /// `Y*_i - x_i^T theta`
    e: Vec<f64>,
    /// `d Y*_i / d alpha`
    dy: Vec<DVector<f64>>,
    if_alpha: Vec<DVector<f64>>,
    q_hat: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    g: DMatrix<f64>,
    j_hat: DMatrix<f64>,
}

impl CbParts {
    fn new(frame: &TreatmentFrame, propensity: &PropensityModel, alpha: &DVector<f64>, theta: &DVector<f64>, c: &ContrastSpec) -> Result<Self> {
        check_setup(frame, propensity, c)?;
        check_shared_regressors(frame)?;
        let n = frame.len();
        let p = theta.len();
        let q = propensity.dim();
        let mut x = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        let mut q_hat = DMatrix::zeros(p, p);
        let mut g = DMatrix::zeros(p, q);
        for r in frame.records() {
            let pp = propensity.point(&r.z, alpha);
            let a = r.arm;
            let coef = c.c()[a] / pp.e[a];
            let xv = DVector::from_column_slice(&r.x[0]);
            let ystar = coef * r.y;
            let d = &pp.dlog[a] * (-ystar);
            add_outer(&mut q_hat, 1.0, &xv, &xv);
            add_outer(&mut g, 1.0, &xv, &d);
            e.push(ystar - xv.dot(theta));
            psi.push(DVector::from_vec(propensity.features(&r.z)) * coef);
            x.push(xv);
            dy.push(d);
        }
        let nf = n as f64;
        q_hat /= nf;
        g /= nf;
        let (_, j_hat) = balancing_moment(frame, propensity, alpha, c);
        let j_inv = checked_inverse("balancing Jacobian", &j_hat)?;
        let if_alpha = psi.iter().map(|s| -(&j_inv * s)).collect();
        let q_inv = checked_inverse("regressor Gram matrix", &q_hat)?;
        Ok(CbParts {
            x,
            e,
            dy,
            if_alpha,
            q_hat,
            q_inv,
            g,
            j_hat,
        })
    }
}

/// Squared-error criterion for the contrast estimator.
pub fn cb_criterion(
    frame: &TreatmentFrame,
    propensity: &PropensityModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    c: &ContrastSpec,
    form: CbPenaltyForm,
) -> Result<CriterionReport> {
    let parts = CbParts::new(frame, propensity, alpha, theta, c)?;
    let n = frame.len() as f64;
    let p = theta.len();
    let fit: CompensatedSum = parts.e.iter().map(|e| e * e).collect();
    let (lambda, i_hat) = lambda_and_information(frame, propensity, alpha, theta, c);
    let i_inv = checked_inverse("I-hat (covariate balancing)", &i_hat)?;
    let mut b = DMatrix::zeros(p, p);
    for (x, e) in parts.x.iter().zip(&parts.e) {
        add_outer(&mut b, e * e, x, x);
    }
    b /= n;
    let penalty = match form {
        CbPenaltyForm::Derived => {
            let mut acc = CompensatedSum::default();
            for i in 0..parts.x.len() {
                let inner = &parts.x[i] * parts.e[i] + &parts.g * &parts.if_alpha[i];
                acc.add(parts.e[i] * parts.x[i].dot(&(&parts.q_inv * inner)));
                acc.add(-parts.e[i] * parts.dy[i].dot(&parts.if_alpha[i]));
            }
            2.0 * acc.value() / n
        }
        CbPenaltyForm::Literal => {
            let li = &lambda * &i_inv;
            let mut m = DMatrix::zeros(p, p);
            for (r, x) in frame.records().iter().zip(&parts.x) {
                let pp = propensity.point(&r.z, alpha);
                let a = r.arm;
                let f = DVector::from_vec(propensity.features(&r.z));
                let resid = r.y - x.dot(theta);
                let corr = (&li * f)[0];
                let coef = c.c()[a] * c.c()[a] / (pp.e[a] * pp.e[a]) * resid * (resid - corr);
                add_outer(&mut m, coef, x, x);
            }
            // (sum x x^T)^-1 (sum ...) = Q^-1 (mean ...)
            2.0 * (&parts.q_inv * (m / n)).trace()
        }
    };
    let diag = Diagnostics {
        min_propensity: propensity.min_propensity(frame, alpha),
        condition_a: condition(&parts.q_hat).0,
        floored_records: propensity.count_floored(frame, alpha),
    };
    let matrices = PenaltyMatrices {
        a_hat: parts.q_hat.clone(),
        b_hat: b,
        i1_hat: Some(i_hat),
        lam1_hat: Some(lambda),
        c1_hat: Some(parts.j_hat.clone()),
        ..Default::default()
    };
    Ok(CriterionReport {
        kind: CriterionKind::CbIc,
        fit_term: fit.value(),
        penalty,
        value: fit.value() + penalty,
        p,
        matrices,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleRecord;

    fn frame() -> TreatmentFrame {
        let mut recs = Vec::new();
        for i in 0..400 {
            let z = ((i as f64) * 0.613).sin() * 1.3;
            let v = ((i as f64) * 1.37).cos();
            let u = ((i as f64) * 2.71).sin();
            let arm = usize::from(u < 0.4 * z);
            let y = if arm == 0 { 1.0 + 0.5 * v } else { 0.0 } + 0.7 * z + 0.5 * ((i as f64) * 0.91).cos();
            recs.push(SampleRecord::new(y, arm, vec![vec![1.0, v]; 2], vec![z]));
        }
        TreatmentFrame::new(recs, 2, 2, 1).unwrap()
    }

    fn c() -> ContrastSpec {
        ContrastSpec::new(vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn balancing_holds_after_fit() {
        let f = frame();
        let m = PropensityModel::full(2, 1);
        let fit = cb_fit(&f, &m, &c(), &SolverOptions::default()).unwrap();
        let (psi, _) = balancing_moment(&f, &m, &fit.alpha.params, &c());
        assert!(psi.amax() <= 1e-8);
        // arm-wise weighted moments agree
        let mut s = [DVector::zeros(2), DVector::zeros(2)];
        for r in f.records() {
            let e = m.propensity_eval(&r.z, &fit.alpha.params).unwrap();
            s[r.arm] += DVector::from_vec(vec![1.0, r.z[0]]) / e[r.arm];
        }
        assert!((&s[0] - &s[1]).amax() <= 1e-8 * f.len() as f64);
    }

    #[test]
    fn estimate_is_linear_in_outcomes() {
        let f = frame();
        let m = PropensityModel::full(2, 1);
        let alpha = solve_cb_alpha(&f, &m, &c(), &SolverOptions::default()).unwrap().params;
        let a = cb_estimate(&f, &m, &alpha, &c()).unwrap();
        let b = cb_estimate(&f.map_outcomes(|y| 2.0 * y), &m, &alpha, &c()).unwrap();
        assert!((b - &a * 2.0).amax() <= 1e-12 * a.amax());
    }

    #[test]
    fn intercept_only_gives_horvitz_thompson() {
        let f = frame().select_regressors(&[0]).unwrap();
        let m = PropensityModel::full(2, 1);
        let alpha = solve_cb_alpha(&f, &m, &c(), &SolverOptions::default()).unwrap().params;
        let t = cb_estimate(&f, &m, &alpha, &c()).unwrap();
        let ht: f64 = pseudo_outcomes(&f, &m, &alpha, &c()).iter().sum::<f64>() / f.len() as f64;
        assert!((t[0] - ht).abs() < 1e-12);
    }

    #[test]
    fn criterion_is_well_formed() {
        let f = frame();
        let m = PropensityModel::full(2, 1);
        let fit = cb_fit(&f, &m, &c(), &SolverOptions::default()).unwrap();
        for form in [CbPenaltyForm::Derived, CbPenaltyForm::Literal] {
            let r = cb_criterion(&f, &m, &fit.theta, &fit.alpha.params, &c(), form).unwrap();
            assert!(r.penalty.is_finite());
            assert!(r.fit_term >= 0.0);
            assert_eq!(r.value, r.fit_term + r.penalty);
        }
    }

    #[test]
    fn arm_specific_regressors_are_rejected() {
        let recs = vec![
            SampleRecord::new(1.0, 0, vec![vec![1.0], vec![2.0]], vec![0.0]),
            SampleRecord::new(1.0, 1, vec![vec![1.0], vec![2.0]], vec![1.0]),
        ];
        let f = TreatmentFrame::new(recs, 2, 1, 1).unwrap();
        let m = PropensityModel::full(2, 1);
        assert!(cb_estimate(&f, &m, &DVector::zeros(2), &c()).is_err());
    }
}
