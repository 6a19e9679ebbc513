//! Multinomial-logistic propensity scores with the last arm as reference.
//!
//! Parameters are stored arm-major: block `j` (for `j < H-1`) holds the
//! intercept followed by one coefficient per selected confounder, so
//! `q = (H-1) * (1 + |mask|)`.

use nalgebra::{DMatrix, DVector};

use super::frame::{SampleRecord, TargetPopulation, TreatmentFrame};
use crate::error::{Error, Result};
use crate::linalg::add_outer;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    arms: usize,
    dim_z: usize,
    mask: Vec<usize>,
    floor: f64,
}

/// Propensity scores of one record and their log-gradients in alpha.
#[derive(Debug, Clone)]
pub struct PropensityPoint {
    pub e: Vec<f64>,
    /// `d log e^(h) / d alpha` for every arm.
    pub dlog: Vec<DVector<f64>>,
    pub floored: bool,
}

/// Target-population weights of one record and their alpha-gradients.
#[derive(Debug, Clone)]
pub struct WeightPoint {
    /// `S = sum_k d_k e_k`.
    pub mix: f64,
    pub w: Vec<f64>,
    pub dw: Vec<DVector<f64>>,
}

impl PropensityModel {
    /// Uses every confounder column.
    pub fn full(arms: usize, dim_z: usize) -> Self {
        PropensityModel {
            arms,
            dim_z,
            mask: (0..dim_z).collect(),
            floor: 0.0,
        }
    }

    pub fn new(arms: usize, dim_z: usize, mask: Vec<usize>) -> Result<Self> {
        if arms == 0 {
            return Err(Error::config("propensity model needs at least one arm"));
        }
        if let Some(&c) = mask.iter().find(|&&c| c >= dim_z) {
            return Err(Error::config(format!("confounder column {c} out of range (dim_z = {dim_z})")));
        }
        Ok(PropensityModel {
            arms,
            dim_z,
            mask,
            floor: 0.0,
        })
    }

    /// Lower bound applied to every score before it is used as a weight
    /// denominator. Zero disables it.
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&floor) {
            return Err(Error::config("propensity floor must lie in [0, 0.5)"));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn block_len(&self) -> usize {
        self.mask.len() + 1
    }

    /// Parameter dimension q.
    pub fn dim(&self) -> usize {
        (self.arms - 1) * self.block_len()
    }

    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(self.mask.iter().map(|&c| z[c])).collect()
    }

    fn check(&self, z: &[f64], alpha: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim_z {
            return Err(Error::config(format!("confounder vector has length {}, expected {}", z.len(), self.dim_z)));
        }
        if alpha.len() != self.dim() {
            return Err(Error::config(format!("propensity parameters have length {}, expected {}", alpha.len(), self.dim())));
        }
        Ok(())
    }

    /// Raw propensity scores `e^(h)(z; alpha)`, no floor applied.
    pub fn propensity_eval(&self, z: &[f64], alpha: &DVector<f64>) -> Result<Vec<f64>> {
        self.check(z, alpha)?;
        Ok(self.probabilities(&self.features(z), alpha))
    }

    pub(crate) fn probabilities(&self, f: &[f64], alpha: &DVector<f64>) -> Vec<f64> {
        let k = self.block_len();
        let mut eta = vec![0.0; self.arms];
        for (j, eta_j) in eta.iter_mut().enumerate().take(self.arms - 1) {
            *eta_j = (0..k).map(|l| alpha[j * k + l] * f[l]).sum();
        }
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = eta.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        for v in &mut e {
            *v /= total;
        }
        e
    }

    /// Scores and log-gradients, with the floor (if any) applied.
    pub fn point(&self, z: &[f64], alpha: &DVector<f64>) -> PropensityPoint {
        let f = self.features(z);
        let k = f.len();
        let q = self.dim();
        let mut e = self.probabilities(&f, alpha);
        let mut dlog = Vec::with_capacity(self.arms);
        for h in 0..self.arms {
            let mut g = DVector::zeros(q);
            for j in 0..self.arms - 1 {
                let coef = if h == j { 1.0 } else { 0.0 } - e[j];
                for l in 0..k {
                    g[j * k + l] = coef * f[l];
                }
            }
            dlog.push(g);
        }
        let mut floored = false;
        if self.floor > 0.0 {
            for h in 0..self.arms {
                if e[h] < self.floor {
                    e[h] = self.floor;
                    dlog[h].fill(0.0);
                    floored = true;
                }
            }
        }
        PropensityPoint { e, dlog, floored }
    }

    /// Weights `w^(h)` and `d w^(h) / d alpha` at one record.
    pub fn weight_point(&self, p: &PropensityPoint, target: &TargetPopulation) -> WeightPoint {
        let q = self.dim();
        let mix = target.mix(&p.e);
        let mut dmix = DVector::zeros(q);
        for (k, dk) in target.d().iter().enumerate() {
            if *dk != 0.0 {
                dmix.axpy(dk * p.e[k], &p.dlog[k], 1.0);
            }
        }
        let mut w = Vec::with_capacity(self.arms);
        let mut dw = Vec::with_capacity(self.arms);
        for h in 0..self.arms {
            let eh = p.e[h];
            w.push(mix / eh);
            // (dS - S dlog e_h) / e_h
            let mut g = dmix.clone();
            g.axpy(-mix, &p.dlog[h], 1.0);
            g /= eh;
            dw.push(g);
        }
        WeightPoint { mix, w, dw }
    }

    /// Target weights for one record: `target_weight` in the public API.
    pub fn target_weight(&self, z: &[f64], alpha: &DVector<f64>, target: &TargetPopulation) -> Result<Vec<f64>> {
        self.check(z, alpha)?;
        if target.arms() != self.arms {
            return Err(Error::config("target population length differs from arm count"));
        }
        let p = self.point(z, alpha);
        Ok(target.weights(&p.e))
    }

    /// Average log-likelihood `N^-1 sum_i log e^(arm_i)(z_i)`.
    pub fn log_likelihood(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> f64 {
        let n = frame.len() as f64;
        frame
            .records()
            .iter()
            .map(|r| self.probabilities(&self.features(&r.z), alpha)[r.arm].ln())
            .sum::<f64>()
            / n
    }

    /// Averaged score and Hessian of the log-likelihood. Soft labels (a
    /// probability vector per record) are accepted through `labels`.
    pub(crate) fn score_hessian_with<L>(&self, frame: &TreatmentFrame, alpha: &DVector<f64>, labels: L) -> (DVector<f64>, DMatrix<f64>)
    where
        L: Fn(&SampleRecord) -> Vec<f64>,
    {
        let q = self.dim();
        let k = self.block_len();
        let n = frame.len() as f64;
        let mut score = DVector::zeros(q);
        let mut hess = DMatrix::zeros(q, q);
        for r in frame.records() {
            let f = self.features(&r.z);
            let e = self.probabilities(&f, alpha);
            let t = labels(r);
            let fv = DVector::from_column_slice(&f);
            let ff = &fv * fv.transpose();
            for j in 0..self.arms - 1 {
                let resid = t[j] - e[j];
                for l in 0..k {
                    score[j * k + l] += resid * f[l];
                }
                for m in 0..self.arms - 1 {
                    let c = if j == m { e[j] } else { 0.0 } - e[j] * e[m];
                    let mut block = hess.view_mut((j * k, m * k), (k, k));
                    block -= &ff * c;
                }
            }
        }
        (score / n, hess / n)
    }

    pub fn score_hessian(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let arms = self.arms;
        self.score_hessian_with(frame, alpha, |r| r.one_hot(arms))
    }

    /// Outer-product-of-scores information `N^-1 sum_i g_i g_i^T`, where
    /// `g_i = d log e^(arm_i) / d alpha`.
    pub fn opg_information(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> DMatrix<f64> {
        let q = self.dim();
        let mut info = DMatrix::zeros(q, q);
        for r in frame.records() {
            let p = self.point(&r.z, alpha);
            add_outer(&mut info, 1.0, &p.dlog[r.arm], &p.dlog[r.arm]);
        }
        info / frame.len() as f64
    }

    /// Number of records whose smallest raw score falls below the floor.
    pub fn count_floored(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> usize {
        if self.floor <= 0.0 {
            return 0;
        }
        frame
            .records()
            .iter()
            .filter(|r| {
                self.probabilities(&self.features(&r.z), alpha)
                    .iter()
                    .any(|&e| e < self.floor)
            })
            .count()
    }

    /// Smallest raw score over the frame.
    pub fn min_propensity(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> f64 {
        frame
            .records()
            .iter()
            .flat_map(|r| self.probabilities(&self.features(&r.z), alpha))
            .fold(f64::INFINITY, f64::min)
    }

    /// Logs a warning when the floor changed any record.
    pub(crate) fn warn_if_floored(&self, frame: &TreatmentFrame, alpha: &DVector<f64>) -> usize {
        let n = self.count_floored(frame, alpha);
        if n > 0 {
            log::warn!(
                "propensity floor {} applied to {} of {} records; weights and criteria are biased by clipping",
                self.floor,
                n,
                frame.len()
            );
        }
        n
    }
}
