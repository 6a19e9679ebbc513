#![allow(dead_code)]

use msmic::sim::{DgpSpec, Misspecification, OutcomeLaw, RegressorTerm};

/// Two arms, logit e1 = 0.3 + 0.8 z, y(h) | z ~ N(theta_h + 0.8 z, 1).
pub fn confounded_two_arm() -> DgpSpec {
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

/// Single arm, y ~ N(1 + 0.5 v, 1).
pub fn single_arm() -> DgpSpec {
    DgpSpec {
        arms: 1,
        dim_z: 0,
        propensity: vec![],
        outcome: OutcomeLaw::Gaussian { noise_sd: 1.0 },
        regressors: vec![RegressorTerm::Intercept, RegressorTerm::Covariate { index: 0 }],
        theta: vec![vec![1.0, 0.5]],
        confounding: vec![],
        misspecification: Misspecification::default(),
    }
}

/// Two arms sharing x = (1, v), logit e1 = 0.3 + 0.5 z; the arm-1 effect
/// is (1, 0.5) and both arms carry 0.7 z.
pub fn balancing() -> DgpSpec {
    DgpSpec {
        arms: 2,
        dim_z: 1,
        propensity: vec![vec![0.3, 0.5]],
        outcome: OutcomeLaw::Gaussian { noise_sd: 1.0 },
        regressors: vec![RegressorTerm::Intercept, RegressorTerm::Covariate { index: 0 }],
        theta: vec![vec![1.0, 0.5], vec![0.0, 0.0]],
        confounding: vec![vec![0.7]],
        misspecification: Misspecification::default(),
    }
}

/// The two-arm DGP with a spurious shared covariate (zero coefficient) as
/// the third regressor.
pub fn with_spurious() -> DgpSpec {
    let mut d = confounded_two_arm();
    d.regressors.push(RegressorTerm::Covariate { index: 0 });
    d.theta = vec![vec![1.0, 0.0, 0.0]];
    d
}
