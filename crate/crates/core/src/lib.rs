//! Mini-batch approximate Metropolis-Hastings.
//!
//! * [`seqtest`]: the sequential accept/reject test and the exact test it approximates.
//! * [`rwalk`]: error and data-usage analysis of the test via a Gaussian random walk.
//! * [`design`]: choosing batch size, error level and bound shape under an error budget.
//! * [`models`], [`samplers`], [`gibbs`]: targets and chains that use the test.
//! * [`risk`]: risk-versus-cost estimation for chain ensembles.

pub mod error;
pub mod special;
pub mod seqtest;
pub mod quad;
pub mod rwalk;
pub mod design;
pub mod models;
pub mod samplers;
pub mod gibbs;
pub mod risk;

pub use error::{Error, Result};
pub use seqtest::{
    compute_mu0, estimate_std, exact_mh_test, sequential_mh_test, t_statistic,
    LogLikDiffPopulation, RunningMoments, SequentialTestSpec, TestDecision, VecPopulation,
};
pub use samplers::{AcceptTest, Budget, ChainTrace, RunSettings, Sampler, StepRecord};
pub use design::{DesignResult, MomentSample};
pub use gibbs::FactorizedBinaryModel;
pub use models::{GradientModel, PosteriorModel};
pub use risk::{estimate_risk, ChainSeries, GroundTruth, RiskReport};
