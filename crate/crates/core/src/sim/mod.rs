//! Data-generating processes and brute-force Monte Carlo oracles for the
//! risk and the optimism bias of the fit term.
//!
//! Replication `r` draws its data frame from stream `2r` and its
//! independent copy frame from stream `2r + 1` of a ChaCha8 generator seeded
//! with the experiment seed; the pilot fit uses the last stream. Results are
//! therefore identical with and without the `parallel` feature.

mod dgp;
mod experiment;

pub use dgp::{stream_rng, DgpSpec, Misspecification, OutcomeLaw, RegressorTerm, MIN_PROPENSITY, PILOT_STREAM};
pub use experiment::{
    mc_bias, mc_risk, run_replications, selection_experiment, AuxSummary, BiasMatchReport, ExperimentRun, ExperimentSpec,
    FitRecipe, ReplicationRow, RiskEstimate, SelectionTable,
};
