//! Target posteriors and their log-likelihood difference populations.

mod data;
mod gaussian;
mod lasso;
mod logistic;
pub mod varsel;

pub use data::{read_dataset, write_dataset, Dataset};
pub use gaussian::GaussianMean;
pub use lasso::{synth_lasso_dataset, Lasso1D, PosteriorGrid};
pub use logistic::{synth_logistic_dataset, synth_logistic_split, FeatureMatrix, LogisticRegression};
pub use varsel::{
    legal_moves, log_proposal_ratio, move_type_probability, propose_move, varsel_mu0, MoveKind, VarSelModel, VarSelMove,
    VarSelState,
};

use crate::design::MomentSample;
use crate::error::{Error, Result};
use crate::seqtest::LogLikDiffPopulation;
use crate::special::ExactSum;

/// A posterior whose likelihood factorizes over `num_data` datapoints.
pub trait PosteriorModel: Send + Sync {
    fn num_data(&self) -> usize;

    fn dim(&self) -> usize;

    fn log_lik_point(&self, i: usize, theta: &[f64]) -> f64;

    /// Unnormalized log prior density.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Full-data log-likelihood.
    fn log_lik(&self, theta: &[f64]) -> f64 {
        (0..self.num_data())
            .map(|i| self.log_lik_point(i, theta))
            .collect::<ExactSum>()
            .value()
    }
}

/// Gradients for Langevin proposals. Both methods add into `out`.
pub trait GradientModel: PosteriorModel {
    fn add_grad_log_lik_point(&self, i: usize, theta: &[f64], scale: f64, out: &mut [f64]);

    fn add_grad_log_prior(&self, theta: &[f64], out: &mut [f64]);
}

/// The `l_i = log p(x_i | theta') - log p(x_i | theta)` for a proposal pair.
#[derive(Debug, Clone, Copy)]
pub struct PairPopulation<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    theta_prime: &'a [f64],
}

impl<'a, M: PosteriorModel + ?Sized> PairPopulation<'a, M> {
    pub fn new(model: &'a M, theta: &'a [f64], theta_prime: &'a [f64]) -> Result<Self> {
        for t in [theta, theta_prime] {
            if t.len() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), got: t.len() });
            }
        }
        Ok(Self { model, theta, theta_prime })
    }
}

impl<M: PosteriorModel + ?Sized> LogLikDiffPopulation for PairPopulation<'_, M> {
    fn size(&self) -> usize {
        self.model.num_data()
    }

    fn eval(&self, index: usize) -> f64 {
        self.model.log_lik_point(index, self.theta_prime) - self.model.log_lik_point(index, self.theta)
    }
}

/// Population mean and standard deviation (divisor `N`) of a population.
pub fn population_moments<P: LogLikDiffPopulation + ?Sized>(pop: &P) -> Result<(f64, f64)> {
    let n = pop.size();
    if n == 0 {
        return Err(Error::Empty("population"));
    }
    let vals: Vec<f64> = (0..n).map(|i| pop.eval(i)).collect();
    if let Some((i, &v)) = vals.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLogLik { index: i, value: v });
    }
    let mean = vals.iter().copied().collect::<ExactSum>().value() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok((mean, var.sqrt()))
}

/// Design sample for a proposal pair, with the prior and proposal terms
/// folded into the mean. `None` when all `l_i` are equal.
///
/// `log_proposal_ratio = ln q(theta|theta') - ln q(theta'|theta)`, as in [`crate::compute_mu0`].
pub fn moment_sample<M: PosteriorModel + ?Sized>(
    model: &M,
    theta: &[f64],
    theta_prime: &[f64],
    log_proposal_ratio: f64,
) -> Result<Option<MomentSample>> {
    let pop = PairPopulation::new(model, theta, theta_prime)?;
    let (mean, sd) = population_moments(&pop)?;
    if sd == 0.0 {
        return Ok(None);
    }
    let n = model.num_data();
    let log_prior_ratio = model.log_prior(theta) - model.log_prior(theta_prime);
    Ok(Some(MomentSample {
        mu: mean - (log_prior_ratio - log_proposal_ratio) / n as f64,
        sigma_l: sd,
        n,
    }))
}
