//! Empirical penalty matrices and the information criteria built on them.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimate::{assigned_weights, dr_point};
use crate::linalg::{add_outer, checked_inverse, condition, trace_of_product, CompensatedSum};
use crate::model::loss::linear_predictor;
use crate::model::{ModelTriple, OutcomeFamily, TargetPopulation, TreatmentFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CriterionKind {
    #[serde(rename = "QICW")]
    Qicw,
    #[serde(rename = "IPWIC1")]
    Ipwic1,
    #[serde(rename = "IPWIC2")]
    Ipwic2,
    #[serde(rename = "DRIC")]
    Dric,
    #[serde(rename = "CB-IC")]
    CbIc,
    #[serde(rename = "OBS-WEIGHT-IC")]
    ObsWeightIc,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 6] = [
        CriterionKind::Qicw,
        CriterionKind::Ipwic1,
        CriterionKind::Ipwic2,
        CriterionKind::Dric,
        CriterionKind::CbIc,
        CriterionKind::ObsWeightIc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Qicw => "QICW",
            CriterionKind::Ipwic1 => "IPWIC1",
            CriterionKind::Ipwic2 => "IPWIC2",
            CriterionKind::Dric => "DRIC",
            CriterionKind::CbIc => "CB-IC",
            CriterionKind::ObsWeightIc => "OBS-WEIGHT-IC",
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CriterionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown criterion {s:?}"))
    }
}

/// Sample-average plug-ins for the population matrices. Entries not used
/// by a criterion are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PenaltyMatrices {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub i1_hat: Option<DMatrix<f64>>,
    pub i2_hat: Option<DMatrix<f64>>,
    /// q x p
    pub lam1_hat: Option<DMatrix<f64>>,
    /// p x q
    pub lam2_hat: Option<DMatrix<f64>>,
    pub c1_hat: Option<DMatrix<f64>>,
    pub c2_hat: Option<DMatrix<f64>>,
    pub d1_hat: Option<DMatrix<f64>>,
    pub d2_hat: Option<f64>,
    pub d3_hat: Option<f64>,
}

impl PenaltyMatrices {
    /// `tr(A^-1 Lam2 I1^-1 Lam1)`: the contribution of estimating alpha.
    pub fn propensity_correction(&self) -> Result<f64> {
        let (Some(i1), Some(l1), Some(l2)) = (&self.i1_hat, &self.lam1_hat, &self.lam2_hat) else {
            return Ok(0.0);
        };
        let a_inv = checked_inverse("A-hat", &self.a_hat)?;
        let i1_inv = checked_inverse("I1-hat", i1)?;
        Ok(trace_of_product(&a_inv, &(l2 * i1_inv * l1)))
    }

    /// `tr(Lam2 I1^-1 Lam1)` without the leading `A^-1`.
    pub fn propensity_correction_unscaled(&self) -> Result<f64> {
        let (Some(i1), Some(l1), Some(l2)) = (&self.i1_hat, &self.lam1_hat, &self.lam2_hat) else {
            return Ok(0.0);
        };
        let i1_inv = checked_inverse("I1-hat", i1)?;
        Ok((l2 * i1_inv * l1).trace())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub min_propensity: f64,
    pub condition_a: f64,
    pub floored_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub kind: CriterionKind,
    pub fit_term: f64,
    pub penalty: f64,
    pub value: f64,
    /// Dimension of theta.
    pub p: usize,
    pub matrices: PenaltyMatrices,
    pub diagnostics: Diagnostics,
}

impl CriterionReport {
    fn new(kind: CriterionKind, fit_term: f64, penalty: f64, p: usize, matrices: PenaltyMatrices, diagnostics: Diagnostics) -> Self {
        CriterionReport {
            kind,
            fit_term,
            penalty,
            value: fit_term + penalty,
            p,
            matrices,
            diagnostics,
        }
    }
}

/// Which weight multiplies the loss in the DRIC fit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DricFitWeight {
    /// `t w^(h)`, as in every other criterion.
    #[default]
    TargetWeight,
    /// `t / e^(h)`, the literal display; equal to the above when `d` is all ones.
    InversePropensity,
}

/// `-2 sum_i weight_i zeta(y_i | x_i^(arm); theta)`.
pub fn weighted_fit_term(frame: &TreatmentFrame, family: &OutcomeFamily, weights: &[f64], theta: &DVector<f64>) -> f64 {
    let s: CompensatedSum = frame
        .records()
        .iter()
        .zip(weights)
        .map(|(r, w)| w * family.value(r.y, &r.x[r.arm], theta))
        .collect();
    -2.0 * s.value()
}

fn diagnostics(frame: &TreatmentFrame, models: &ModelTriple, alpha: &DVector<f64>, a_hat: &DMatrix<f64>) -> Diagnostics {
    Diagnostics {
        min_propensity: models.propensity.min_propensity(frame, alpha),
        condition_a: condition(a_hat).0,
        floored_records: models.propensity.count_floored(frame, alpha),
    }
}

/// Plug-in `A`, `B` and, when alpha is estimated, `I1`, `Lam1`, `Lam2` at an
/// IPW fit.
pub fn penalty_matrices_ipw(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    target: &TargetPopulation,
    alpha_known: bool,
) -> Result<PenaltyMatrices> {
    models.check_frame(frame, target)?;
    let p = theta.len();
    let q = models.propensity.dim();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut i1 = DMatrix::zeros(q, q);
    let mut l1 = DMatrix::zeros(q, p);
    let mut l2 = DMatrix::zeros(p, q);
    for r in frame.records() {
        let pp = models.propensity.point(&r.z, alpha);
        let wp = models.propensity.weight_point(&pp, target);
        let h = r.arm;
        let w = wp.w[h];
        let xv = DVector::from_column_slice(&r.x[h]);
        let k = models.family.kernel(r.y, linear_predictor(&r.x[h], theta));
        let s = &xv * k.d1;
        add_outer(&mut a, -w * k.d2, &xv, &xv);
        add_outer(&mut b, w * w, &s, &s);
        if !alpha_known {
            add_outer(&mut i1, 1.0, &pp.dlog[h], &pp.dlog[h]);
            add_outer(&mut l1, -1.0, &wp.dw[h], &s);
            add_outer(&mut l2, w, &s, &pp.dlog[h]);
        }
    }
    let n = frame.len() as f64;
    let mut m = PenaltyMatrices {
        a_hat: a / n,
        b_hat: b / n,
        ..Default::default()
    };
    if !alpha_known {
        m.i1_hat = Some(i1 / n);
        m.lam1_hat = Some(l1 / n);
        m.lam2_hat = Some(l2 / n);
    }
    Ok(m)
}

/// IPWIC1 (known propensity) or IPWIC2 (estimated propensity).
pub fn ipwic(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    target: &TargetPopulation,
    alpha_known: bool,
) -> Result<CriterionReport> {
    let m = penalty_matrices_ipw(frame, models, theta, alpha, target, alpha_known)?;
    let a_inv = checked_inverse("A-hat", &m.a_hat)?;
    let mut penalty = 2.0 * trace_of_product(&a_inv, &m.b_hat);
    if !alpha_known {
        penalty -= 2.0 * m.propensity_correction()?;
    }
    let weights = assigned_weights(frame, &models.propensity, alpha, target);
    let fit = weighted_fit_term(frame, &models.family, &weights, theta);
    let kind = if alpha_known {
        CriterionKind::Ipwic1
    } else {
        CriterionKind::Ipwic2
    };
    let diag = diagnostics(frame, models, alpha, &m.a_hat);
    Ok(CriterionReport::new(kind, fit, penalty, theta.len(), m, diag))
}

/// QIC_w: the IPW fit term plus `2p`.
pub fn qicw(frame: &TreatmentFrame, models: &ModelTriple, theta: &DVector<f64>, alpha: &DVector<f64>, target: &TargetPopulation) -> Result<CriterionReport> {
    models.check_frame(frame, target)?;
    let weights = assigned_weights(frame, &models.propensity, alpha, target);
    let fit = weighted_fit_term(frame, &models.family, &weights, theta);
    let p = theta.len();
    let diag = Diagnostics {
        min_propensity: models.propensity.min_propensity(frame, alpha),
        condition_a: f64::NAN,
        floored_records: models.propensity.count_floored(frame, alpha),
    };
    Ok(CriterionReport::new(
        CriterionKind::Qicw,
        fit,
        2.0 * p as f64,
        p,
        PenaltyMatrices::default(),
        diag,
    ))
}

/// Criterion whose loss is weighted by `S(z) = sum_k d_k e_k(z)` instead of
/// `w^(h)`; theta is still the IPW estimate.
pub fn observed_weight_variant(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    target: &TargetPopulation,
) -> Result<CriterionReport> {
    models.check_frame(frame, target)?;
    let p = theta.len();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut fit = CompensatedSum::default();
    for r in frame.records() {
        let pp = models.propensity.point(&r.z, alpha);
        let h = r.arm;
        let mix = target.mix(&pp.e);
        let w = mix / pp.e[h];
        let xv = DVector::from_column_slice(&r.x[h]);
        let k = models.family.kernel(r.y, linear_predictor(&r.x[h], theta));
        add_outer(&mut a, -w * k.d2, &xv, &xv);
        // t w S s s^T estimates sum_h E[S^2 s_h s_h^T]
        add_outer(&mut b, w * mix * k.d1 * k.d1, &xv, &xv);
        fit.add(mix * k.value);
    }
    let n = frame.len() as f64;
    let m = PenaltyMatrices {
        a_hat: a / n,
        b_hat: b / n,
        ..Default::default()
    };
    let a_inv = checked_inverse("A-hat", &m.a_hat)?;
    let penalty = 2.0 * trace_of_product(&a_inv, &m.b_hat);
    let diag = diagnostics(frame, models, alpha, &m.a_hat);
    Ok(CriterionReport::new(
        CriterionKind::ObsWeightIc,
        -2.0 * fit.value(),
        penalty,
        p,
        m,
        diag,
    ))
}

/// Plug-in matrices for the DR criterion. `models` must carry the fitted
/// conditional family.
pub fn penalty_matrices_dr(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
) -> Result<PenaltyMatrices> {
    models.check_frame(frame, target)?;
    let p = theta.len();
    let q = models.propensity.dim();
    let r_dim = models.conditional.dim();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut d1 = DMatrix::zeros(p, p);
    let mut m_alpha = DMatrix::zeros(p, q);
    let mut m_beta = DMatrix::zeros(p, r_dim);
    let mut i1 = DMatrix::zeros(q, q);
    let mut i2 = DMatrix::zeros(r_dim, r_dim);
    let mut e1 = DMatrix::zeros(q, p);
    let mut e2 = DMatrix::zeros(r_dim, p);
    for r in frame.records() {
        let pt = dr_point(models, r, theta, alpha, beta, target, true, true);
        let h = r.arm;
        let w = pt.w;
        let d_h = target.d()[h];
        a -= &pt.d_theta;
        add_outer(&mut b, w * w, &pt.score, &pt.score);
        let g_sum: DVector<f64> = pt.g_grad.iter().fold(DVector::zeros(p), |acc, g| acc + g);
        add_outer(&mut d1, d_h * w, &g_sum, &pt.score);
        add_outer(&mut d1, -w * w, &pt.g_grad[h], &pt.score);
        m_alpha += pt.d_alpha.as_ref().expect("requested");
        m_beta += pt.d_beta.as_ref().expect("requested");
        let pp = models.propensity.point(&r.z, alpha);
        add_outer(&mut i1, 1.0, &pp.dlog[h], &pp.dlog[h]);
        add_outer(&mut e1, w, &pp.dlog[h], &pt.score);
        if r_dim > 0 {
            let f = models.conditional.features(&r.z);
            let ls = models.conditional.log_density_score(h, r.y, &f, beta);
            add_outer(&mut i2, 1.0, &ls, &ls);
            add_outer(&mut e2, w, &ls, &pt.score);
        }
    }
    let n = frame.len() as f64;
    let (a, b, d1) = (a / n, b / n, d1 / n);
    let (m_alpha, m_beta, i1, i2, e1, e2) = (m_alpha / n, m_beta / n, i1 / n, i2 / n, e1 / n, e2 / n);
    let a_inv = checked_inverse("A-hat (DR)", &a)?;
    let c1 = &a_inv * m_alpha * checked_inverse("I1-hat", &i1)?;
    let c2 = &a_inv * m_beta * checked_inverse("I2-hat", &i2)?;
    let d2 = trace_of_product(&c1, &e1);
    let d3 = if r_dim > 0 {
        trace_of_product(&c2, &e2)
    } else {
        0.0
    };
    Ok(PenaltyMatrices {
        a_hat: a,
        b_hat: b,
        i1_hat: Some(i1),
        i2_hat: Some(i2),
        lam1_hat: None,
        lam2_hat: None,
        c1_hat: Some(c1),
        c2_hat: Some(c2),
        d1_hat: Some(d1),
        d2_hat: Some(d2),
        d3_hat: Some(d3),
    })
}

/// Penalty `2 tr[A^-1 (B + D1)] + 2 D2 + 2 D3` from DR matrices.
pub fn dric_penalty(m: &PenaltyMatrices) -> Result<f64> {
    let a_inv = checked_inverse("A-hat (DR)", &m.a_hat)?;
    let inner = match &m.d1_hat {
        Some(d1) => &m.b_hat + d1,
        None => m.b_hat.clone(),
    };
    Ok(2.0 * trace_of_product(&a_inv, &inner) + 2.0 * m.d2_hat.unwrap_or(0.0) + 2.0 * m.d3_hat.unwrap_or(0.0))
}

/// DRIC at a DR fit.
#[allow(clippy::too_many_arguments)]
pub fn dric(
    frame: &TreatmentFrame,
    models: &ModelTriple,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    target: &TargetPopulation,
    fit_weight: DricFitWeight,
) -> Result<CriterionReport> {
    let m = penalty_matrices_dr(frame, models, theta, alpha, beta, target)?;
    let penalty = dric_penalty(&m)?;
    let weights: Vec<f64> = match fit_weight {
        DricFitWeight::TargetWeight => assigned_weights(frame, &models.propensity, alpha, target),
        DricFitWeight::InversePropensity => frame
            .records()
            .iter()
            .map(|r| 1.0 / models.propensity.point(&r.z, alpha).e[r.arm])
            .collect(),
    };
    let fit = weighted_fit_term(frame, &models.family, &weights, theta);
    let diag = diagnostics(frame, models, alpha, &m.a_hat);
    Ok(CriterionReport::new(CriterionKind::Dric, fit, penalty, theta.len(), m, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit_outcome_conditional, fit_propensity, solve_dr, solve_ipw, SolverOptions};
    use crate::model::{ConditionalKind, OutcomeConditionalFamily, PropensityModel, SampleRecord};

    fn frame() -> TreatmentFrame {
        let mut records = Vec::new();
        for i in 0..200 {
            let z = ((i as f64) * 0.731).sin() * 1.4;
            let u = ((i as f64) * 1.913).cos();
            let arm = usize::from(u + 0.6 * z < 0.1);
            let y = 1.0 - 0.5 * arm as f64 + 0.8 * z + ((i as f64) * 2.37).sin();
            records.push(SampleRecord::new(y, arm, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![z]));
        }
        TreatmentFrame::new(records, 2, 2, 1).unwrap()
    }

    fn models(kind: ConditionalKind) -> ModelTriple {
        ModelTriple::new(
            OutcomeFamily::gaussian(),
            PropensityModel::full(2, 1),
            OutcomeConditionalFamily::full(kind, 2, 1),
        )
        .unwrap()
    }

    #[test]
    fn qicw_penalty_is_twice_dimension() {
        let f = frame().select_regressors(&[0]).unwrap();
        let m = ModelTriple::new(
            OutcomeFamily::gaussian(),
            PropensityModel::full(2, 1),
            OutcomeConditionalFamily::null(2, 1),
        )
        .unwrap();
        let r = qicw(&f, &m, &DVector::from_vec(vec![0.3]), &DVector::zeros(2), &TargetPopulation::all(2)).unwrap();
        assert_eq!(r.penalty, 2.0);
        let f = frame();
        let r = qicw(&f, &m, &DVector::zeros(2), &DVector::zeros(2), &TargetPopulation::all(2)).unwrap();
        assert_eq!(r.penalty, 4.0);
        assert_eq!(r.value, r.fit_term + r.penalty);
    }

    #[test]
    fn known_unknown_gap_and_fit_terms() {
        let f = frame();
        let m = models(ConditionalKind::Null);
        let d = TargetPopulation::all(2);
        let opts = SolverOptions::default();
        let alpha = fit_propensity(&f, &m.propensity, &opts).unwrap().params;
        let theta = solve_ipw(&f, &m.propensity, &alpha, &d, &m.family, &opts).unwrap().params;
        let known = ipwic(&f, &m, &theta, &alpha, &d, true).unwrap();
        let unknown = ipwic(&f, &m, &theta, &alpha, &d, false).unwrap();
        let q = qicw(&f, &m, &theta, &alpha, &d).unwrap();
        assert_eq!(q.fit_term.to_bits(), known.fit_term.to_bits());
        assert_eq!(known.fit_term.to_bits(), unknown.fit_term.to_bits());
        let gap = known.penalty - unknown.penalty;
        let expected = 2.0 * unknown.matrices.propensity_correction().unwrap();
        assert!((gap - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        let a = &known.matrices.a_hat;
        assert!((a - a.transpose()).amax() <= 1e-12);
        assert!(known.matrices.b_hat.symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn null_conditional_dric_equals_ipwic2() {
        let f = frame();
        let m = models(ConditionalKind::Null);
        let d = TargetPopulation::new(vec![1.0, 0.5]).unwrap();
        let opts = SolverOptions::default();
        let alpha = fit_propensity(&f, &m.propensity, &opts).unwrap().params;
        let theta = solve_ipw(&f, &m.propensity, &alpha, &d, &m.family, &opts).unwrap().params;
        let beta = DVector::zeros(0);
        let dr = dric(&f, &m, &theta, &alpha, &beta, &d, DricFitWeight::TargetWeight).unwrap();
        let ipw = ipwic(&f, &m, &theta, &alpha, &d, false).unwrap();
        assert!((dr.penalty - ipw.penalty).abs() <= 1e-10 * ipw.penalty.abs());
        assert_eq!(dr.fit_term.to_bits(), ipw.fit_term.to_bits());
        assert!(dr.matrices.d1_hat.as_ref().unwrap().amax() == 0.0);
        assert!((dr.matrices.a_hat.clone() - ipw.matrices.a_hat.clone()).amax() <= 1e-12);
    }

    #[test]
    fn dric_is_finite_with_gaussian_conditional() {
        let f = frame();
        let m = models(ConditionalKind::GaussianLinear);
        let d = TargetPopulation::all(2);
        let opts = SolverOptions::default();
        let alpha = fit_propensity(&f, &m.propensity, &opts).unwrap().params;
        let cf = fit_outcome_conditional(&f, &m.conditional, &opts).unwrap();
        let m = ModelTriple {
            conditional: cf.family,
            ..m
        };
        let theta = solve_dr(&f, &m, &alpha, &cf.fit.params, &d, &opts).unwrap().params;
        let r = dric(&f, &m, &theta, &alpha, &cf.fit.params, &d, DricFitWeight::TargetWeight).unwrap();
        assert!(r.penalty.is_finite());
        assert!(r.matrices.d2_hat.unwrap().is_finite() && r.matrices.d3_hat.unwrap().is_finite());
        assert_eq!(r.value, r.fit_term + r.penalty);
        let lit = dric(&f, &m, &theta, &alpha, &cf.fit.params, &d, DricFitWeight::InversePropensity).unwrap();
        assert!((lit.fit_term - r.fit_term).abs() <= 1e-9 * r.fit_term.abs());
    }

    #[test]
    fn singular_a_is_reported() {
        // duplicate regressor column
        let f = frame().select_regressors(&[0, 0]).unwrap();
        let m = models(ConditionalKind::Null);
        let err = ipwic(&f, &m, &DVector::zeros(2), &DVector::zeros(2), &TargetPopulation::all(2), true).unwrap_err();
        assert!(matches!(err, crate::Error::RankDeficient { .. }));
    }
}
