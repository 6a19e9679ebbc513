//! Statistical families, target-population weighting and loss kernels.

pub mod conditional;
pub mod frame;
pub mod loss;
pub mod propensity;
pub mod quadrature;

pub use conditional::{ConditionalKind, ExpectationMode, ExpectationValue, GPoint, OutcomeConditionalFamily};
pub use frame::{ContrastSpec, SampleRecord, TargetPopulation, TreatmentFrame};
pub use loss::{Kernel, LossKind, LossMode, LossValue, OutcomeFamily, OutcomeKind};
pub use propensity::{PropensityModel, PropensityPoint, WeightPoint};
pub use quadrature::NormalRule;

use crate::error::{Error, Result};

/// Outcome marginal family, propensity family and outcome-conditional
/// family used together by one candidate model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTriple {
    pub family: OutcomeFamily,
    pub propensity: PropensityModel,
    pub conditional: OutcomeConditionalFamily,
}

impl ModelTriple {
    pub fn new(family: OutcomeFamily, propensity: PropensityModel, conditional: OutcomeConditionalFamily) -> Result<Self> {
        family.validate()?;
        conditional.check_compatible(&family)?;
        if propensity.arms() != conditional.arms() {
            return Err(Error::config("propensity and conditional families disagree on the arm count"));
        }
        Ok(ModelTriple {
            family,
            propensity,
            conditional,
        })
    }

    pub fn arms(&self) -> usize {
        self.propensity.arms()
    }

    /// Checks the frame against every family and the target against the arm count.
    pub fn check_frame(&self, frame: &TreatmentFrame, target: &TargetPopulation) -> Result<()> {
        if frame.arms() != self.arms() {
            return Err(Error::config(format!("frame has {} arms, models expect {}", frame.arms(), self.arms())));
        }
        if frame.dim_z() != self.propensity.dim_z() {
            return Err(Error::config("frame confounder dimension differs from the propensity model"));
        }
        if target.arms() != self.arms() {
            return Err(Error::config(format!(
                "target population has {} entries for {} arms",
                target.arms(),
                self.arms()
            )));
        }
        check_outcomes(frame, &self.family)
    }
}

/// Validates every outcome against the family, naming the first bad row.
pub fn check_outcomes(frame: &TreatmentFrame, family: &OutcomeFamily) -> Result<()> {
    for (i, r) in frame.records().iter().enumerate() {
        family.check_outcome(r.y).map_err(|_| {
            Error::data(Some(i + 1), format!("outcome {} is not valid for a {:?} family", r.y, family.kind))
        })?;
    }
    Ok(())
}
