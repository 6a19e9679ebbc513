use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_solve, sup_norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Sup-norm tolerance on the averaged estimating equation.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Parameter norm treated as divergence (separation).
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 100,
            tolerance: 1e-8,
            max_halvings: 30,
            divergence_bound: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the averaged estimating equation at `params`.
    pub gradient_norm: f64,
    /// Negative Jacobian of the averaged estimating equation at `params`.
    pub observed_information: DMatrix<f64>,
}

impl FitResult {
    /// Fit of a zero-dimensional parameter.
    pub fn empty() -> Self {
        FitResult {
            params: DVector::zeros(0),
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            observed_information: DMatrix::zeros(0, 0),
        }
    }
}

/// Damped Newton on `F(x) = 0`, where `eval` returns `(F, dF/dx)`.
///
/// `block_len` splits the parameter into per-arm blocks so a divergence can
/// be attributed to an arm (1-based in the error).
pub(crate) fn solve<F>(what: &str, init: DVector<f64>, opts: &SolverOptions, block_len: Option<usize>, mut eval: F) -> Result<FitResult>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    if init.is_empty() {
        return Ok(FitResult::empty());
    }
    let mut x = init;
    let (mut f, mut jac) = eval(&x)?;
    let mut norm = f.norm();
    for iter in 0..=opts.max_iterations {
        let res = sup_norm(&f);
        if !res.is_finite() {
            return Err(Error::NonConvergence {
                what: what.to_string(),
                iterations: iter,
                residual: res,
                arm: None,
            });
        }
        if res <= opts.tolerance {
            // one extra full step; quadratic convergence usually takes the
            // residual to rounding level
            if res > 0.0 {
                if let Ok(step) = checked_solve(what, &jac, &(-&f)) {
                    let cand = &x + step;
                    if let Ok((fc, jc)) = eval(&cand) {
                        if fc.norm() < norm {
                            x = cand;
                            f = fc;
                            jac = jc;
                        }
                    }
                }
            }
            let res = sup_norm(&f);
            return Ok(FitResult {
                params: x,
                converged: true,
                iterations: iter,
                gradient_norm: res,
                observed_information: -jac,
            });
        }
        if iter == opts.max_iterations {
            break;
        }
        let step = checked_solve(&format!("Jacobian of {what}"), &jac, &(-&f))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand = &x + &step * scale;
            if let Ok((fc, jc)) = eval(&cand) {
                let nc = fc.norm();
                if nc.is_finite() && nc < norm {
                    x = cand;
                    f = fc;
                    jac = jc;
                    norm = nc;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if x.norm() > opts.divergence_bound {
            return Err(Error::NonConvergence {
                what: what.to_string(),
                iterations: iter + 1,
                residual: sup_norm(&f),
                arm: block_len.map(|k| largest_block(&x, k) + 1),
            });
        }
        if !accepted {
            return Err(Error::NonConvergence {
                what: format!("{what} (line search stalled)"),
                iterations: iter + 1,
                residual: sup_norm(&f),
                arm: None,
            });
        }
    }
    Err(Error::NonConvergence {
        what: what.to_string(),
        iterations: opts.max_iterations,
        residual: sup_norm(&f),
        arm: block_len.filter(|_| x.norm() > 0.5 * opts.divergence_bound).map(|k| largest_block(&x, k) + 1),
    })
}

fn largest_block(x: &DVector<f64>, k: usize) -> usize {
    let blocks = x.len() / k.max(1);
    (0..blocks)
        .max_by(|&a, &b| {
            let na = x.rows(a * k, k).norm();
            let nb = x.rows(b * k, k).norm();
            na.total_cmp(&nb)
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_smooth_system() {
        // x^3 - 2 = 0, y - x = 0
        let r = solve("cubic", DVector::from_vec(vec![5.0, 0.0]), &SolverOptions::default(), None, |v| {
            let f = DVector::from_vec(vec![v[0].powi(3) - 2.0, v[1] - v[0]]);
            let j = DMatrix::from_row_slice(2, 2, &[3.0 * v[0] * v[0], 0.0, -1.0, 1.0]);
            Ok((f, j))
        })
        .unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 2f64.cbrt()).abs() < 1e-9);
        assert!(r.gradient_norm <= 1e-8);
    }

    #[test]
    fn divergence_names_the_block() {
        // the root of the second equation is at infinity: F = (x0, 1/(1+x1))
        let r = solve("runaway", DVector::from_vec(vec![0.0, 0.0]), &SolverOptions::default(), Some(1), |v| {
            let f = DVector::from_vec(vec![v[0], 1.0 / (1.0 + v[1])]);
            let j = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0 / (1.0 + v[1]).powi(2)]);
            Ok((f, j))
        });
        match r {
            Err(Error::NonConvergence { arm, .. }) => assert_eq!(arm, Some(2)),
            other => panic!("expected nonconvergence, got {other:?}"),
        }
    }
}
