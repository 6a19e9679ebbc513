use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::loss::sigmoid;
use crate::model::{ConditionalKind, OutcomeConditionalFamily, PropensityModel, SampleRecord, TreatmentFrame};

/// Law of `y^(h)` given its mean `x^(h)T theta^(h) + gamma_h^T z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutcomeLaw {
    Gaussian { noise_sd: f64 },
    /// Success probability `sigmoid(mean)`.
    Bernoulli,
}

/// One regressor column. Arms are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegressorTerm {
    Intercept,
    /// 1 for the given arm, 0 otherwise.
    ArmIndicator { arm: usize },
    /// Standard normal covariate independent of z, shared by all arms.
    Covariate { index: usize },
    /// The covariate for the given arm, 0 for the others.
    ArmCovariate { arm: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misspecification {
    /// The fitted propensity model keeps only the intercept.
    pub propensity_omits_z: bool,
    /// The fitted outcome-conditional model keeps only the intercept.
    pub conditional_omits_z: bool,
}

/// Data-generating process with standard normal confounders and
/// multinomial-logistic assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub arms: usize,
    pub dim_z: usize,
    /// H-1 rows `(intercept, z coefficients)`; the last arm is the reference.
    pub propensity: Vec<Vec<f64>>,
    pub outcome: OutcomeLaw,
    pub regressors: Vec<RegressorTerm>,
    /// Per-arm theta rows, or a single row shared by all arms.
    pub theta: Vec<Vec<f64>>,
    /// Per-arm z coefficients, or a single row shared by all arms. Empty
    /// means no confounding of the outcome.
    #[serde(default)]
    pub confounding: Vec<Vec<f64>>,
    #[serde(default)]
    pub misspecification: Misspecification,
}

/// Positivity bound checked on a large confounder sample.
pub const MIN_PROPENSITY: f64 = 0.01;

impl DgpSpec {
    pub fn dim_x(&self) -> usize {
        self.regressors.len()
    }

    pub fn covariates(&self) -> usize {
        self.regressors
            .iter()
            .filter_map(|t| match t {
                RegressorTerm::Covariate { index } | RegressorTerm::ArmCovariate { index, .. } => Some(index + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn theta_row(&self, h: usize) -> &[f64] {
        if self.theta.len() == 1 {
            &self.theta[0]
        } else {
            &self.theta[h]
        }
    }

    fn gamma_row(&self, h: usize) -> Option<&[f64]> {
        match self.confounding.len() {
            0 => None,
            1 => Some(&self.confounding[0]),
            _ => Some(&self.confounding[h]),
        }
    }

    /// Checks shapes and positivity (over 10^6 confounder draws).
    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        let model = self.true_propensity_model();
        let alpha = self.true_alpha();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut min = f64::INFINITY;
        let mut z = vec![0.0; self.dim_z];
        for _ in 0..1_000_000 {
            for v in &mut z {
                *v = rng.sample(StandardNormal);
            }
            let e = model.probabilities(&model.features(&z), &alpha);
            min = e.iter().copied().fold(min, f64::min);
        }
        if min < MIN_PROPENSITY {
            return Err(Error::config(format!(
                "positivity violated: smallest propensity {min:.2e} over 10^6 draws is below {MIN_PROPENSITY}"
            )));
        }
        Ok(())
    }

    pub fn validate_shapes(&self) -> Result<()> {
        let h = self.arms;
        if h == 0 {
            return Err(Error::config("DGP needs at least one arm"));
        }
        if self.propensity.len() != h - 1 || self.propensity.iter().any(|r| r.len() != self.dim_z + 1) {
            return Err(Error::config(format!(
                "propensity needs {} rows of length {}",
                h - 1,
                self.dim_z + 1
            )));
        }
        if self.regressors.is_empty() {
            return Err(Error::config("DGP needs at least one regressor"));
        }
        for t in &self.regressors {
            if let RegressorTerm::ArmIndicator { arm } | RegressorTerm::ArmCovariate { arm, .. } = t {
                if *arm == 0 || *arm > h {
                    return Err(Error::config(format!("regressor arm {arm} out of range 1..={h}")));
                }
            }
        }
        if !(self.theta.len() == 1 || self.theta.len() == h) || self.theta.iter().any(|r| r.len() != self.dim_x()) {
            return Err(Error::config(format!(
                "theta needs 1 or {h} rows of length {}",
                self.dim_x()
            )));
        }
        if !(self.confounding.len() <= 1 || self.confounding.len() == h) || self.confounding.iter().any(|r| r.len() != self.dim_z) {
            return Err(Error::config(format!("confounding needs 0, 1 or {h} rows of length {}", self.dim_z)));
        }
        if let OutcomeLaw::Gaussian { noise_sd } = self.outcome {
            if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
                return Err(Error::config("noise_sd must be finite and nonnegative"));
            }
        }
        let all = self
            .propensity
            .iter()
            .chain(&self.theta)
            .chain(&self.confounding)
            .flatten();
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config("DGP coefficients must be finite"));
        }
        Ok(())
    }

    pub fn true_propensity_model(&self) -> PropensityModel {
        PropensityModel::full(self.arms, self.dim_z)
    }

    /// True alpha in the layout of [`true_propensity_model`](Self::true_propensity_model).
    pub fn true_alpha(&self) -> DVector<f64> {
        DVector::from_iterator(
            (self.arms - 1) * (self.dim_z + 1),
            self.propensity.iter().flatten().copied(),
        )
    }

    pub fn propensity_correct(&self) -> bool {
        !self.misspecification.propensity_omits_z || self.dim_z == 0
    }

    /// Propensity model used for fitting, honouring the misspecification switch.
    pub fn fitted_propensity_model(&self) -> PropensityModel {
        if self.misspecification.propensity_omits_z {
            PropensityModel::new(self.arms, self.dim_z, vec![]).expect("empty mask is valid")
        } else {
            self.true_propensity_model()
        }
    }

    pub fn fitted_conditional(&self, kind: ConditionalKind) -> OutcomeConditionalFamily {
        let mask = if self.misspecification.conditional_omits_z {
            vec![]
        } else {
            (0..self.dim_z).collect()
        };
        OutcomeConditionalFamily::new(kind, self.arms, self.dim_z, mask).expect("mask within range")
    }

    fn regressor(&self, h: usize, v: &[f64]) -> Vec<f64> {
        self.regressors
            .iter()
            .map(|t| match *t {
                RegressorTerm::Intercept => 1.0,
                RegressorTerm::ArmIndicator { arm } => f64::from(u8::from(arm - 1 == h)),
                RegressorTerm::Covariate { index } => v[index],
                RegressorTerm::ArmCovariate { arm, index } => {
                    if arm - 1 == h {
                        v[index]
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }

    /// Conditional mean of `y^(h)` before the outcome link.
    pub fn linear_mean(&self, h: usize, x: &[f64], z: &[f64]) -> f64 {
        let mut m: f64 = x.iter().zip(self.theta_row(h)).map(|(a, b)| a * b).sum();
        if let Some(g) = self.gamma_row(h) {
            m += g.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        m
    }

    /// Draws `n` records from `rng`. Only the assigned arm's outcome is kept.
    pub fn generate_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<TreatmentFrame> {
        self.validate_shapes()?;
        let model = self.true_propensity_model();
        let alpha = self.true_alpha();
        let nv = self.covariates();
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..self.dim_z).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..nv).map(|_| rng.sample(StandardNormal)).collect();
            let e = model.probabilities(&model.features(&z), &alpha);
            let u: f64 = rng.random();
            let mut arm = self.arms - 1;
            let mut acc = 0.0;
            for (h, eh) in e.iter().enumerate() {
                acc += eh;
                if u < acc {
                    arm = h;
                    break;
                }
            }
            let x: Vec<Vec<f64>> = (0..self.arms).map(|h| self.regressor(h, &v)).collect();
            let m = self.linear_mean(arm, &x[arm], &z);
            let y = match self.outcome {
                OutcomeLaw::Gaussian { noise_sd } => {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + noise_sd * eps
                }
                OutcomeLaw::Bernoulli => f64::from(u8::from(rng.random::<f64>() < sigmoid(m))),
            };
            records.push(SampleRecord::new(y, arm, x, z));
        }
        TreatmentFrame::new(records, self.arms, self.dim_x(), self.dim_z)
    }

    /// `generate` of the public API: stream 0 of the seed.
    pub fn generate(&self, n: usize, seed: u64) -> Result<TreatmentFrame> {
        self.generate_with(n, &mut stream_rng(seed, 0))
    }
}

/// Counter-based random streams: replication `r` draws its data from stream
/// `2r` and its independent copy from stream `2r + 1`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for the pilot fit that fixes limit parameters.
pub const PILOT_STREAM: u64 = u64::MAX;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn confounded() -> DgpSpec {
        DgpSpec {
            arms: 2,
            dim_z: 1,
            propensity: vec![vec![0.3, 0.8]],
            outcome: OutcomeLaw::Gaussian { noise_sd: 1.0 },
            regressors: vec![
                RegressorTerm::ArmIndicator { arm: 1 },
                RegressorTerm::ArmIndicator { arm: 2 },
            ],
            theta: vec![vec![1.0, 0.0]],
            confounding: vec![vec![0.8]],
            misspecification: Misspecification::default(),
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let d = confounded();
        assert_eq!(d.generate(500, 7).unwrap(), d.generate(500, 7).unwrap());
        assert_ne!(d.generate(500, 7).unwrap(), d.generate(500, 8).unwrap());
        let a = d.generate_with(100, &mut stream_rng(7, 2)).unwrap();
        let b = d.generate_with(100, &mut stream_rng(7, 3)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shapes_are_validated() {
        let mut d = confounded();
        d.theta = vec![vec![1.0]];
        assert!(d.validate_shapes().is_err());
        let mut d = confounded();
        d.regressors.push(RegressorTerm::ArmIndicator { arm: 3 });
        d.theta = vec![vec![1.0, 0.0, 0.0]];
        assert!(d.validate_shapes().is_err());
    }

    #[test]
    fn positivity_is_enforced() {
        let mut d = confounded();
        assert!(d.validate().is_ok());
        d.propensity = vec![vec![0.0, 4.0]];
        assert!(matches!(d.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn regressor_layout() {
        let mut d = confounded();
        d.regressors = vec![
            RegressorTerm::Intercept,
            RegressorTerm::Covariate { index: 0 },
            RegressorTerm::ArmCovariate { arm: 2, index: 1 },
        ];
        d.theta = vec![vec![0.0; 3]];
        let f = d.generate(3, 1).unwrap();
        for r in f.records() {
            assert_eq!(r.x[0][0], 1.0);
            assert_eq!(r.x[0][1], r.x[1][1]);
            assert_eq!(r.x[0][2], 0.0);
        }
        assert_eq!(d.covariates(), 2);
    }
}
