//! Outcome marginal families and the loss kernels built on them.
//!
//! Every family is a GLM in the linear predictor `eta = x^T theta`, so the
//! loss reduces to a scalar kernel `zeta(y, eta)` with two eta-derivatives;
//! vector and matrix forms follow by the chain rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    GaussianLinear,
    BernoulliLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LossKind {
    #[default]
    LogLikelihood,
    /// `(f^g - 1)/g - (int f^(1+g) - 1)/(1+g)`; tends to `log f` as `g -> 0`.
    DensityPower { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Value,
    Score,
    Hessian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossValue {
    Value(f64),
    Score(DVector<f64>),
    Hessian(DMatrix<f64>),
}

/// `zeta` and its first two derivatives in the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// f(y | x; theta) together with the loss used in place of `log f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeFamily {
    pub kind: OutcomeKind,
    #[serde(default)]
    pub loss: LossKind,
    /// Fixed variance of the Gaussian family; ignored for Bernoulli.
    #[serde(default = "unit_variance")]
    pub variance: f64,
}

fn unit_variance() -> f64 {
    1.0
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl OutcomeFamily {
    pub fn gaussian() -> Self {
        OutcomeFamily {
            kind: OutcomeKind::GaussianLinear,
            loss: LossKind::LogLikelihood,
            variance: 1.0,
        }
    }

    pub fn bernoulli() -> Self {
        OutcomeFamily {
            kind: OutcomeKind::BernoulliLogit,
            loss: LossKind::LogLikelihood,
            variance: 1.0,
        }
    }

    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == OutcomeKind::GaussianLinear && !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::config("Gaussian family variance must be positive"));
        }
        if let LossKind::DensityPower { gamma } = self.loss {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::config("density-power exponent must be positive"));
            }
        }
        Ok(())
    }

    pub fn check_outcome(&self, y: f64) -> Result<()> {
        if self.kind == OutcomeKind::BernoulliLogit && y != 0.0 && y != 1.0 {
            return Err(Error::data(None, format!("Bernoulli outcome {y} is not 0 or 1")));
        }
        Ok(())
    }

    /// Scalar kernel at `(y, eta)`; `y` is assumed valid for the family.
    pub fn kernel(&self, y: f64, eta: f64) -> Kernel {
        match (self.kind, self.loss) {
            (OutcomeKind::GaussianLinear, LossKind::LogLikelihood) => {
                let s2 = self.variance;
                let r = y - eta;
                Kernel {
                    value: -0.5 * r * r / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln(),
                    d1: r / s2,
                    d2: -1.0 / s2,
                }
            }
            (OutcomeKind::BernoulliLogit, LossKind::LogLikelihood) => {
                let p = sigmoid(eta);
                Kernel {
                    value: y * eta - softplus(eta),
                    d1: y - p,
                    d2: -p * (1.0 - p),
                }
            }
            (OutcomeKind::GaussianLinear, LossKind::DensityPower { gamma }) => {
                let s2 = self.variance;
                let c = (2.0 * std::f64::consts::PI * s2).powf(-0.5 * gamma);
                let kappa = gamma / s2;
                let r = y - eta;
                let fg = c * (-0.5 * kappa * r * r).exp();
                let integral = c / (1.0 + gamma).sqrt();
                Kernel {
                    value: (fg - 1.0) / gamma - (integral - 1.0) / (1.0 + gamma),
                    d1: fg * r / s2,
                    d2: fg * (gamma * r * r / (s2 * s2) - 1.0 / s2),
                }
            }
            (OutcomeKind::BernoulliLogit, LossKind::DensityPower { gamma }) => {
                let p = sigmoid(eta);
                let q = 1.0 - p;
                let a = p * q;
                let pg = p.powf(gamma);
                let qg = q.powf(gamma);
                let fg = if y == 1.0 { pg } else { qg };
                let integral = p * pg + q * qg;
                let r = y - p;
                Kernel {
                    value: (fg - 1.0) / gamma - (integral - 1.0) / (1.0 + gamma),
                    d1: fg * r - a * (pg - qg),
                    d2: gamma * fg * r * r - fg * a - a * (q - p) * (pg - qg) - a * gamma * (q * pg + p * qg),
                }
            }
        }
    }

    /// `loss_eval` of the public API: value, score or Hessian in theta.
    pub fn loss_eval(&self, y: f64, x: &[f64], theta: &DVector<f64>, mode: LossMode) -> Result<LossValue> {
        if x.len() != theta.len() {
            return Err(Error::config(format!("regressor length {} differs from parameter length {}", x.len(), theta.len())));
        }
        self.check_outcome(y)?;
        let eta = linear_predictor(x, theta);
        let k = self.kernel(y, eta);
        let xv = DVector::from_column_slice(x);
        Ok(match mode {
            LossMode::Value => LossValue::Value(k.value),
            LossMode::Score => LossValue::Score(xv * k.d1),
            LossMode::Hessian => LossValue::Hessian(&xv * xv.transpose() * k.d2),
        })
    }

    pub fn value(&self, y: f64, x: &[f64], theta: &DVector<f64>) -> f64 {
        self.kernel(y, linear_predictor(x, theta)).value
    }
}

#[inline]
pub(crate) fn linear_predictor(x: &[f64], theta: &DVector<f64>) -> f64 {
    x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<OutcomeFamily> {
        vec![
            OutcomeFamily::gaussian(),
            OutcomeFamily::gaussian().with_variance(1.7),
            OutcomeFamily::bernoulli(),
            OutcomeFamily::gaussian().with_loss(LossKind::DensityPower { gamma: 0.3 }),
            OutcomeFamily::gaussian()
                .with_variance(0.6)
                .with_loss(LossKind::DensityPower { gamma: 0.8 }),
            OutcomeFamily::bernoulli().with_loss(LossKind::DensityPower { gamma: 0.5 }),
        ]
    }

    #[test]
    fn gaussian_unit_variance_closed_forms() {
        let f = OutcomeFamily::gaussian();
        let x = [1.0, 2.0];
        let theta = DVector::from_vec(vec![0.5, -0.25]);
        let y = 1.3;
        let r: f64 = y - 0.0;
        let LossValue::Value(v) = f.loss_eval(y, &x, &theta, LossMode::Value).unwrap() else { panic!() };
        assert!((v - (-0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-15);
        let LossValue::Hessian(h) = f.loss_eval(y, &x, &theta, LossMode::Hessian).unwrap() else { panic!() };
        assert_eq!(h[(1, 1)], -4.0);
    }

    #[test]
    fn score_vanishes_at_zero_residual() {
        let f = OutcomeFamily::gaussian();
        let theta = DVector::from_vec(vec![0.5, 1.5]);
        let x = [1.0, 0.7];
        let y = 0.5 + 1.5 * 0.7;
        let LossValue::Score(s) = f.loss_eval(y, &x, &theta, LossMode::Score).unwrap() else { panic!() };
        assert!(s.norm() < 1e-15);
    }

    #[test]
    fn bernoulli_at_zero() {
        let f = OutcomeFamily::bernoulli();
        let theta = DVector::from_vec(vec![0.0]);
        let LossValue::Value(v) = f.loss_eval(1.0, &[1.0], &theta, LossMode::Value).unwrap() else { panic!() };
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        let LossValue::Score(s) = f.loss_eval(1.0, &[1.0], &theta, LossMode::Score).unwrap() else { panic!() };
        assert_eq!(s[0], 0.5);
        assert!(matches!(
            f.loss_eval(0.5, &[1.0], &theta, LossMode::Value),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let step = 1e-6;
        for f in families() {
            let ys: Vec<f64> = if f.kind == OutcomeKind::BernoulliLogit {
                vec![0.0, 1.0]
            } else {
                vec![-1.3, 0.2, 2.4]
            };
            for &y in &ys {
                for &eta in &[-1.7, -0.2, 0.4, 1.9] {
                    let k = f.kernel(y, eta);
                    let d1 = (f.kernel(y, eta + step).value - f.kernel(y, eta - step).value) / (2.0 * step);
                    let d2 = (f.kernel(y, eta + step).d1 - f.kernel(y, eta - step).d1) / (2.0 * step);
                    assert!((k.d1 - d1).abs() <= 1e-5 * d1.abs().max(1e-3), "{f:?} y={y} eta={eta}");
                    assert!((k.d2 - d2).abs() <= 1e-5 * d2.abs().max(1e-3), "{f:?} y={y} eta={eta}");
                }
            }
        }
    }

    #[test]
    fn density_power_tends_to_log_likelihood() {
        let gamma = 1e-6;
        for (ll, dp, ys) in [
            (
                OutcomeFamily::gaussian().with_variance(1.3),
                OutcomeFamily::gaussian()
                    .with_variance(1.3)
                    .with_loss(LossKind::DensityPower { gamma }),
                vec![-0.7, 0.1, 1.1, 2.5, -2.2],
            ),
            (
                OutcomeFamily::bernoulli(),
                OutcomeFamily::bernoulli().with_loss(LossKind::DensityPower { gamma }),
                vec![0.0, 1.0, 1.0, 0.0, 1.0],
            ),
        ] {
            for (i, y) in ys.into_iter().enumerate() {
                let eta = -1.0 + 0.45 * i as f64;
                let a = ll.kernel(y, eta).value;
                let b = dp.kernel(y, eta).value;
                assert!((a - b).abs() < 1e-4 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn log_likelihood_score_has_zero_mean() {
        // Bernoulli: exact two-point expectation
        let f = OutcomeFamily::bernoulli();
        for &eta in &[-2.0, 0.3, 1.4] {
            let p = sigmoid(eta);
            let m = p * f.kernel(1.0, eta).d1 + (1.0 - p) * f.kernel(0.0, eta).d1;
            assert!(m.abs() < 1e-15);
        }
    }
}
