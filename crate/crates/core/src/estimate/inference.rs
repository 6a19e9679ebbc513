//! Influence functions of the theta estimators, for standard errors.

use nalgebra::{DMatrix, DVector};

use super::dr_point;
use crate::error::Result;
use crate::linalg::{add_outer, checked_inverse};
use crate::model::loss::linear_predictor;
use crate::model::{ModelTriple, TargetPopulation, TreatmentFrame};

/// Per-record influence (N x p) of the IPW estimator. With
/// `alpha_known = false` the propensity score is treated as a fitted MLE.
pub fn ipw_influence(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    target: &TargetPopulation,
    alpha_known: bool,
) -> Result<DMatrix<f64>> {
    let n = frame.len();
    let p = theta.len();
    let q = models.propensity.dim();
    let mut a = DMatrix::zeros(p, p);
    let mut m_alpha = DMatrix::zeros(p, q);
    let mut psi = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for r in frame.records() {
        let pp = models.propensity.point(&r.z, alpha);
        let wp = models.propensity.weight_point(&pp, target);
        let h = r.arm;
        let xv = DVector::from_column_slice(&r.x[h]);
        let k = models.family.kernel(r.y, linear_predictor(&r.x[h], theta));
        add_outer(&mut a, -wp.w[h] * k.d2, &xv, &xv);
        add_outer(&mut m_alpha, k.d1, &xv, &wp.dw[h]);
        psi.push(xv * (wp.w[h] * k.d1));
        phi.push(pp.dlog[h].clone());
    }
    let nf = n as f64;
    let a_inv = checked_inverse("A-hat", &(a / nf))?;
    let correction = if alpha_known {
        None
    } else {
        let (_, hess) = models.propensity.score_hessian(frame, alpha);
        Some(m_alpha / nf * checked_inverse("propensity information", &(-hess))?)
    };
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut v = psi[i].clone();
        if let Some(c) = &correction {
            v += c * &phi[i];
        }
        out.set_row(i, &(&a_inv * v).transpose());
    }
    Ok(out)
}

/// Per-record influence (N x p) of the DR estimator with both nuisance
/// parameters fitted by maximum likelihood.
pub fn dr_influence(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
) -> Result<DMatrix<f64>> {
    let n = frame.len();
    let p = theta.len();
    let q = models.propensity.dim();
    let r_dim = models.conditional.dim();
    let k = models.conditional.block_len();
    let mut a = DMatrix::zeros(p, p);
    let mut m_alpha = DMatrix::zeros(p, q);
    let mut m_beta = DMatrix::zeros(p, r_dim);
    let mut m = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut chi = Vec::with_capacity(n);
    for r in frame.records() {
        let pt = dr_point(models, r, theta, alpha, beta, target, true, true);
        a -= &pt.d_theta;
        m_alpha += pt.d_alpha.as_ref().expect("requested");
        m_beta += pt.d_beta.as_ref().expect("requested");
        m.push(pt.value);
        phi.push(models.propensity.point(&r.z, alpha).dlog[r.arm].clone());
        let mut c = DVector::zeros(r_dim);
        if r_dim > 0 {
            let f = models.conditional.features(&r.z);
            let (mean, _) = models.conditional.mean(r.arm, &f, beta);
            for l in 0..k {
                c[r.arm * k + l] = (r.y - mean) * f[l];
            }
        }
        chi.push(c);
    }
    let nf = n as f64;
    let a_inv = checked_inverse("A-hat (DR)", &(a / nf))?;
    let (_, hess_alpha) = models.propensity.score_hessian(frame, alpha);
    let ca = m_alpha / nf * checked_inverse("propensity information", &(-hess_alpha))?;
    let cb = if r_dim > 0 {
        let (_, jac_beta) = models.conditional.fit_equations(frame, beta);
        m_beta / nf * checked_inverse("outcome-conditional information", &(-jac_beta))?
    } else {
        DMatrix::zeros(p, 0)
    };
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let v = &m[i] + &ca * &phi[i] + &cb * &chi[i];
        out.set_row(i, &(&a_inv * v).transpose());
    }
    Ok(out)
}

/// Standard errors `sqrt(var(IF_j) / N)` from an N x p influence matrix.
pub fn standard_errors(influence: &DMatrix<f64>) -> DVector<f64> {
    let n = influence.nrows() as f64;
    DVector::from_iterator(
        influence.ncols(),
        influence.column_iter().map(|c| {
            let mean = c.mean();
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        }),
    )
}

/// Model-based standard errors of an MLE from its averaged observed
/// information.
pub fn mle_standard_errors(observed_information: &DMatrix<f64>, n: usize) -> Result<DVector<f64>> {
    let inv = checked_inverse("observed information", observed_information)?;
    Ok(DVector::from_iterator(inv.nrows(), (0..inv.nrows()).map(|i| (inv[(i, i)] / n as f64).sqrt())))
}
