//! Small dense linear-algebra helpers shared by the solvers and criteria.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted before a matrix is declared singular.
pub const MAX_CONDITION: f64 = 1e10;

/// Ratio of the extreme singular values, together with the right singular
/// vector of the smallest one.
pub fn condition(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = m.ncols();
    if n == 0 {
        return (1.0, DVector::zeros(0));
    }
    let svd = m.clone().svd(false, true);
    let sv = &svd.singular_values;
    let (mut imax, mut imin) = (0, 0);
    for i in 0..sv.len() {
        if sv[i] > sv[imax] {
            imax = i;
        }
        if sv[i] < sv[imin] {
            imin = i;
        }
    }
    let cond = if sv[imin] > 0.0 {
        sv[imax] / sv[imin]
    } else {
        f64::INFINITY
    };
    let v_t = svd.v_t.expect("requested V^T");
    (cond, v_t.row(imin).transpose())
}

/// Inverse of a square matrix, refusing anything whose condition number
/// exceeds [`MAX_CONDITION`].
pub fn checked_inverse(what: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::config(format!(
            "{what} is {}x{}, expected a square matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            condition: f64::INFINITY,
            null_direction: vec![],
        });
    }
    let (cond, null) = condition(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            condition: cond,
            null_direction: null.iter().copied().collect(),
        });
    }
    m.clone().full_piv_lu().try_inverse().ok_or_else(|| Error::RankDeficient {
        what: what.to_string(),
        condition: cond,
        null_direction: null.iter().copied().collect(),
    })
}

/// Solves `m x = rhs` with the same singularity policy as [`checked_inverse`].
pub fn checked_solve(what: &str, m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let (cond, null) = condition(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            condition: cond,
            null_direction: null.iter().copied().collect(),
        });
    }
    m.clone()
        .full_piv_lu()
        .solve(rhs)
        .ok_or_else(|| Error::RankDeficient {
            what: what.to_string(),
            condition: cond,
            null_direction: null.iter().copied().collect(),
        })
}

/// `tr(a * b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Rank-one update `m += scale * a b^T`.
#[inline]
pub fn add_outer(m: &mut DMatrix<f64>, scale: f64, a: &DVector<f64>, b: &DVector<f64>) {
    if scale == 0.0 {
        return;
    }
    m.ger(scale, a, b, 1.0);
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let ss = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    (mean, (ss / (n as f64 - 1.0) / n as f64).sqrt())
}
