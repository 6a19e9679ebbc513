//! Per-arm outcome laws given the confounders, and the expected loss under
//! them (`g` for log-likelihood, `eta` for a general loss).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::TreatmentFrame;
use super::loss::{linear_predictor, sigmoid, LossKind, OutcomeFamily, OutcomeKind};
use super::quadrature::NormalRule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionalKind {
    /// `y | z ~ N(beta_h^T (1, z), v)` with a common plug-in variance.
    GaussianLinear,
    /// `y | z ~ Bernoulli(sigmoid(beta_h^T (1, z)))`.
    BernoulliLogit,
    /// Degenerate family with `g = 0`; turns the DR estimator into IPW.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    Value,
    GradTheta,
    HessThetaTheta,
    CrossThetaBeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpectationValue {
    Value(f64),
    Grad(DVector<f64>),
    Matrix(DMatrix<f64>),
}

/// Expected loss and derivatives at one `(arm, eta, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GPoint {
    pub value: f64,
    /// dg/d eta
    pub d1: f64,
    /// d2g/d eta2
    pub d2: f64,
    /// d2g / d eta d(mean)
    pub d1_mean: f64,
    /// d(mean) / d(beta_h^T features)
    pub dmean_dlin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeConditionalFamily {
    kind: ConditionalKind,
    arms: usize,
    dim_z: usize,
    mask: Vec<usize>,
    variance: f64,
    rule: Option<NormalRule>,
}

impl OutcomeConditionalFamily {
    pub fn new(kind: ConditionalKind, arms: usize, dim_z: usize, mask: Vec<usize>) -> Result<Self> {
        if let Some(&c) = mask.iter().find(|&&c| c >= dim_z) {
            return Err(Error::config(format!("confounder column {c} out of range (dim_z = {dim_z})")));
        }
        Ok(OutcomeConditionalFamily {
            kind,
            arms,
            dim_z,
            mask,
            variance: 1.0,
            rule: None,
        })
    }

    pub fn full(kind: ConditionalKind, arms: usize, dim_z: usize) -> Self {
        OutcomeConditionalFamily {
            kind,
            arms,
            dim_z,
            mask: (0..dim_z).collect(),
            variance: 1.0,
            rule: None,
        }
    }

    pub fn null(arms: usize, dim_z: usize) -> Self {
        Self::full(ConditionalKind::Null, arms, dim_z)
    }

    /// Common conditional variance of the Gaussian kind.
    pub fn with_variance(mut self, v: f64) -> Self {
        self.variance = v;
        self
    }

    /// Evaluates expectations with an `n`-node Gauss–Hermite rule instead of
    /// the closed forms. Gaussian kind only.
    pub fn with_quadrature(mut self, nodes: usize) -> Result<Self> {
        if self.kind != ConditionalKind::GaussianLinear {
            return Err(Error::config("quadrature is only available for the Gaussian conditional family"));
        }
        if nodes == 0 {
            return Err(Error::config("quadrature needs at least one node"));
        }
        self.rule = Some(NormalRule::new(nodes));
        Ok(self)
    }

    pub fn kind(&self) -> ConditionalKind {
        self.kind
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn block_len(&self) -> usize {
        self.mask.len() + 1
    }

    /// beta dimension r.
    pub fn dim(&self) -> usize {
        match self.kind {
            ConditionalKind::Null => 0,
            _ => self.arms * self.block_len(),
        }
    }

    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(self.mask.iter().map(|&c| z[c])).collect()
    }

    fn linear(&self, h: usize, f: &[f64], beta: &DVector<f64>) -> f64 {
        let k = self.block_len();
        (0..k).map(|l| beta[h * k + l] * f[l]).sum()
    }

    /// Conditional mean of arm `h` and its derivative in the linear index.
    pub fn mean(&self, h: usize, f: &[f64], beta: &DVector<f64>) -> (f64, f64) {
        match self.kind {
            ConditionalKind::GaussianLinear => (self.linear(h, f, beta), 1.0),
            ConditionalKind::BernoulliLogit => {
                let mu = sigmoid(self.linear(h, f, beta));
                (mu, mu * (1.0 - mu))
            }
            ConditionalKind::Null => (0.0, 0.0),
        }
    }

    /// Rejects outcome/conditional pairings without an expectation kernel.
    pub fn check_compatible(&self, family: &OutcomeFamily) -> Result<()> {
        if self.kind == ConditionalKind::GaussianLinear && family.kind == OutcomeKind::BernoulliLogit {
            return Err(Error::config(
                "a Gaussian conditional law cannot be paired with a Bernoulli outcome family",
            ));
        }
        if self.rule.is_some() && !(self.variance > 0.0) {
            return Err(Error::config("quadrature requires a positive conditional variance"));
        }
        Ok(())
    }

    /// Expected loss at linear predictor `eta` for arm `h` with confounder
    /// features `f`. Assumes [`check_compatible`](Self::check_compatible).
    pub fn point(&self, family: &OutcomeFamily, h: usize, eta: f64, f: &[f64], beta: &DVector<f64>) -> GPoint {
        match self.kind {
            ConditionalKind::Null => GPoint::default(),
            ConditionalKind::BernoulliLogit => {
                let (mu, dmu) = self.mean(h, f, beta);
                let k1 = family.kernel(1.0, eta);
                let k0 = family.kernel(0.0, eta);
                GPoint {
                    value: mu * k1.value + (1.0 - mu) * k0.value,
                    d1: mu * k1.d1 + (1.0 - mu) * k0.d1,
                    d2: mu * k1.d2 + (1.0 - mu) * k0.d2,
                    d1_mean: k1.d1 - k0.d1,
                    dmean_dlin: dmu,
                }
            }
            ConditionalKind::GaussianLinear => {
                let (m, _) = self.mean(h, f, beta);
                let v = self.variance;
                if let Some(rule) = &self.rule {
                    let sd = v.sqrt();
                    let mut out = GPoint {
                        dmean_dlin: 1.0,
                        ..GPoint::default()
                    };
                    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                        let k = family.kernel(m + sd * x, eta);
                        out.value += w * k.value;
                        out.d1 += w * k.d1;
                        out.d2 += w * k.d2;
                        // Stein: d/dm E[h(Y)] = E[h(Y)(Y - m)] / v
                        out.d1_mean += w * k.d1 * x / sd;
                    }
                    return out;
                }
                let s2 = family.variance;
                let delta = m - eta;
                match family.loss {
                    LossKind::LogLikelihood => GPoint {
                        value: -0.5 * (delta * delta + v) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln(),
                        d1: delta / s2,
                        d2: -1.0 / s2,
                        d1_mean: 1.0 / s2,
                        dmean_dlin: 1.0,
                    },
                    LossKind::DensityPower { gamma } => {
                        let c = (2.0 * std::f64::consts::PI * s2).powf(-0.5 * gamma);
                        let kappa = gamma / s2;
                        let s = 1.0 + kappa * v;
                        let big_g = c / s.sqrt() * (-0.5 * kappa * delta * delta / s).exp() / gamma;
                        let k_const = (c / (1.0 + gamma).sqrt() - 1.0) / (1.0 + gamma);
                        let d2 = (kappa * kappa * delta * delta / (s * s) - kappa / s) * big_g;
                        GPoint {
                            value: big_g - 1.0 / gamma - k_const,
                            d1: kappa * delta / s * big_g,
                            d2,
                            d1_mean: -d2,
                            dmean_dlin: 1.0,
                        }
                    }
                }
            }
        }
    }

    /// `conditional_loss_expectation` of the public API.
    #[allow(clippy::too_many_arguments)]
    pub fn conditional_loss_expectation(
        &self,
        family: &OutcomeFamily,
        h: usize,
        x: &[f64],
        z: &[f64],
        theta: &DVector<f64>,
        beta: &DVector<f64>,
        mode: ExpectationMode,
    ) -> Result<ExpectationValue> {
        self.check_compatible(family)?;
        if h >= self.arms {
            return Err(Error::config(format!("arm index {h} out of range")));
        }
        if x.len() != theta.len() || z.len() != self.dim_z || beta.len() != self.dim() {
            return Err(Error::config("dimension mismatch in conditional expectation"));
        }
        let f = self.features(z);
        let g = self.point(family, h, linear_predictor(x, theta), &f, beta);
        let xv = DVector::from_column_slice(x);
        Ok(match mode {
            ExpectationMode::Value => ExpectationValue::Value(g.value),
            ExpectationMode::GradTheta => ExpectationValue::Grad(xv * g.d1),
            ExpectationMode::HessThetaTheta => ExpectationValue::Matrix(&xv * xv.transpose() * g.d2),
            ExpectationMode::CrossThetaBeta => {
                let mut m = DMatrix::zeros(x.len(), self.dim());
                self.add_cross(&mut m, 1.0, h, &xv, &g, &f);
                ExpectationValue::Matrix(m)
            }
        })
    }

    /// `m += scale * d2g/(d theta d beta^T)` for arm `h`.
    pub(crate) fn add_cross(&self, m: &mut DMatrix<f64>, scale: f64, h: usize, x: &DVector<f64>, g: &GPoint, f: &[f64]) {
        if self.kind == ConditionalKind::Null {
            return;
        }
        let k = self.block_len();
        let c = scale * g.d1_mean * g.dmean_dlin;
        if c == 0.0 {
            return;
        }
        for (l, fl) in f.iter().enumerate() {
            let col = h * k + l;
            for i in 0..x.len() {
                m[(i, col)] += c * x[i] * fl;
            }
        }
    }

    /// `d log p^(h)(y | z; beta) / d beta`, zero outside arm `h`'s block.
    pub fn log_density_score(&self, h: usize, y: f64, f: &[f64], beta: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim());
        if self.kind == ConditionalKind::Null {
            return s;
        }
        let k = self.block_len();
        let (m, _) = self.mean(h, f, beta);
        let scale = match self.kind {
            ConditionalKind::GaussianLinear => (y - m) / self.variance,
            _ => y - m,
        };
        for l in 0..k {
            s[h * k + l] = scale * f[l];
        }
        s
    }

    /// Averaged estimating equation and Jacobian for beta, with the
    /// Gaussian kind solved as per-arm least squares (unit variance).
    pub(crate) fn fit_equations(&self, frame: &TreatmentFrame, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let r = self.dim();
        let k = self.block_len();
        let mut score = DVector::zeros(r);
        let mut jac = DMatrix::zeros(r, r);
        for rec in frame.records() {
            let h = rec.arm;
            let f = self.features(&rec.z);
            let (m, dm) = self.mean(h, &f, beta);
            let resid = rec.y - m;
            for a in 0..k {
                score[h * k + a] += resid * f[a];
                for b in 0..k {
                    jac[(h * k + a, h * k + b)] -= dm * f[a] * f[b];
                }
            }
        }
        let n = frame.len() as f64;
        (score / n, jac / n)
    }

    /// Pooled residual variance `N^-1 sum_i (y_i - m_i)^2`.
    pub fn residual_variance(&self, frame: &TreatmentFrame, beta: &DVector<f64>) -> f64 {
        frame
            .records()
            .iter()
            .map(|r| {
                let (m, _) = self.mean(r.arm, &self.features(&r.z), beta);
                (r.y - m).powi(2)
            })
            .sum::<f64>()
            / frame.len() as f64
    }
}
