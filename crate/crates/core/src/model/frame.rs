use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit: the outcome of the assigned arm, the assignment, the
/// regressor vector of every arm, and the confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub y: f64,
    /// Zero-based index of the assigned arm.
    pub arm: usize,
    /// `x[h]` is the regressor vector used for arm `h`.
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

impl SampleRecord {
    pub fn new(y: f64, arm: usize, x: Vec<Vec<f64>>, z: Vec<f64>) -> Self {
        SampleRecord { y, arm, x, z }
    }

    /// Builds a record from a one-hot assignment vector.
    pub fn from_one_hot(y: f64, t: &[f64], x: Vec<Vec<f64>>, z: Vec<f64>) -> Result<Self> {
        let mut arm = None;
        for (h, &v) in t.iter().enumerate() {
            if v == 1.0 {
                if arm.is_some() {
                    return Err(Error::data(None, "assignment has more than one active arm"));
                }
                arm = Some(h);
            } else if v != 0.0 {
                return Err(Error::data(None, format!("assignment entry {v} is not 0 or 1")));
            }
        }
        let arm = arm.ok_or_else(|| Error::data(None, "assignment has no active arm"))?;
        Ok(SampleRecord { y, arm, x, z })
    }

    /// Assignment indicator `t^(h)`.
    #[inline]
    pub fn t(&self, h: usize) -> f64 {
        if h == self.arm {
            1.0
        } else {
            0.0
        }
    }

    pub fn one_hot(&self, arms: usize) -> Vec<f64> {
        (0..arms).map(|h| self.t(h)).collect()
    }
}

/// N independent records sharing arm count and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentFrame {
    records: Vec<SampleRecord>,
    arms: usize,
    dim_x: usize,
    dim_z: usize,
}

impl TreatmentFrame {
    pub fn new(records: Vec<SampleRecord>, arms: usize, dim_x: usize, dim_z: usize) -> Result<Self> {
        if arms == 0 {
            return Err(Error::config("a frame needs at least one arm"));
        }
        for (i, r) in records.iter().enumerate() {
            let row = Some(i + 1);
            if r.arm >= arms {
                return Err(Error::data(row, format!("arm {} out of range 1..={arms}", r.arm + 1)));
            }
            if r.x.len() != arms {
                return Err(Error::data(row, format!("{} regressor vectors for {arms} arms", r.x.len())));
            }
            if r.x.iter().any(|x| x.len() != dim_x) {
                return Err(Error::data(row, format!("regressor length differs from {dim_x}")));
            }
            if r.z.len() != dim_z {
                return Err(Error::data(row, format!("confounder length {} differs from {dim_z}", r.z.len())));
            }
            if !r.y.is_finite() || r.x.iter().flatten().chain(r.z.iter()).any(|v| !v.is_finite()) {
                return Err(Error::data(row, "non-finite value"));
            }
        }
        Ok(TreatmentFrame {
            records,
            arms,
            dim_x,
            dim_z,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.arms];
        for r in &self.records {
            counts[r.arm] += 1;
        }
        counts
    }

    /// Fails naming the first arm that has no records.
    pub fn require_all_arms(&self) -> Result<()> {
        match self.arm_counts().iter().position(|&c| c == 0) {
            Some(h) => Err(Error::data(None, format!("arm {} has no records", h + 1))),
            None => Ok(()),
        }
    }

    /// Keeps only the listed regressor columns (in the given order).
    pub fn select_regressors(&self, columns: &[usize]) -> Result<TreatmentFrame> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.dim_x) {
            return Err(Error::config(format!("regressor column {c} out of range (dim_x = {})", self.dim_x)));
        }
        let records = self
            .records
            .iter()
            .map(|r| SampleRecord {
                y: r.y,
                arm: r.arm,
                x: r.x.iter().map(|xh| columns.iter().map(|&c| xh[c]).collect()).collect(),
                z: r.z.clone(),
            })
            .collect();
        Ok(TreatmentFrame {
            records,
            arms: self.arms,
            dim_x: columns.len(),
            dim_z: self.dim_z,
        })
    }

    /// Applies `f` to every outcome (used for scaling checks).
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> TreatmentFrame {
        let mut out = self.clone();
        for r in &mut out.records {
            r.y = f(r.y);
        }
        out
    }

    /// Applies a linear map to every regressor vector: `x -> m x`.
    pub fn transform_regressors(&self, m: &nalgebra::DMatrix<f64>) -> Result<TreatmentFrame> {
        if m.ncols() != self.dim_x {
            return Err(Error::config("transform does not match regressor dimension"));
        }
        let mut out = self.clone();
        for r in &mut out.records {
            for xh in &mut r.x {
                let v = m * nalgebra::DVector::from_column_slice(xh);
                *xh = v.iter().copied().collect();
            }
        }
        out.dim_x = m.nrows();
        Ok(out)
    }
}

/// Multipliers `d^(k)` describing the population whose effect is targeted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TargetPopulation {
    d: Vec<f64>,
}

impl TargetPopulation {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::config("target population needs one weight per arm"));
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("target population weights must be finite and nonnegative"));
        }
        if !d.iter().any(|v| *v > 0.0) {
            return Err(Error::config("at least one target population weight must be positive"));
        }
        Ok(TargetPopulation { d })
    }

    /// The whole population: all multipliers equal to one.
    pub fn all(arms: usize) -> Self {
        TargetPopulation { d: vec![1.0; arms] }
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn arms(&self) -> usize {
        self.d.len()
    }

    /// `S = sum_k d_k e_k`.
    #[inline]
    pub fn mix(&self, e: &[f64]) -> f64 {
        self.d.iter().zip(e).map(|(d, e)| d * e).sum()
    }

    /// `w^(h) = sum_k d_k e_k / e_h` for every arm.
    pub fn weights(&self, e: &[f64]) -> Vec<f64> {
        let s = self.mix(e);
        e.iter().map(|eh| s / eh).collect()
    }
}

impl TryFrom<Vec<f64>> for TargetPopulation {
    type Error = Error;
    fn try_from(d: Vec<f64>) -> Result<Self> {
        TargetPopulation::new(d)
    }
}

impl From<TargetPopulation> for Vec<f64> {
    fn from(t: TargetPopulation) -> Vec<f64> {
        t.d
    }
}

/// Contrast coefficients summing to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ContrastSpec {
    c: Vec<f64>,
}

impl ContrastSpec {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.len() < 2 {
            return Err(Error::config("a contrast needs at least two arms"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("contrast entries must be finite"));
        }
        if c.iter().sum::<f64>() != 0.0 {
            return Err(Error::config("contrast entries must sum to zero"));
        }
        if c.iter().all(|v| *v == 0.0) {
            return Err(Error::config("contrast must be nonzero"));
        }
        Ok(ContrastSpec { c })
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

impl TryFrom<Vec<f64>> for ContrastSpec {
    type Error = Error;
    fn try_from(c: Vec<f64>) -> Result<Self> {
        ContrastSpec::new(c)
    }
}

impl From<ContrastSpec> for Vec<f64> {
    fn from(c: ContrastSpec) -> Vec<f64> {
        c.c
    }
}
