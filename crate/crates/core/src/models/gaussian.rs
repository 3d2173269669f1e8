use super::{GradientModel, PosteriorModel};
use crate::error::{invalid, Error, Result};

/// Unknown mean of unit-variance Gaussian data with a `N(0, prior_var)` prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMean {
    xs: Vec<f64>,
    prior_var: f64,
}

impl GaussianMean {
    pub fn new(xs: Vec<f64>, prior_var: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if !(prior_var > 0.0) {
            return Err(invalid("prior variance must be positive"));
        }
        Ok(Self { xs, prior_var })
    }

    /// Mean and variance of the Gaussian posterior.
    pub fn posterior(&self) -> (f64, f64) {
        let prec = self.xs.len() as f64 + 1.0 / self.prior_var;
        (self.xs.iter().sum::<f64>() / prec, 1.0 / prec)
    }
}

impl PosteriorModel for GaussianMean {
    fn num_data(&self) -> usize {
        self.xs.len()
    }

    fn dim(&self) -> usize {
        1
    }

    fn log_lik_point(&self, i: usize, theta: &[f64]) -> f64 {
        let r = self.xs[i] - theta[0];
        -0.5 * r * r
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        -0.5 * theta[0] * theta[0] / self.prior_var
    }
}

impl GradientModel for GaussianMean {
    fn add_grad_log_lik_point(&self, i: usize, theta: &[f64], scale: f64, out: &mut [f64]) {
        out[0] += scale * (self.xs[i] - theta[0]);
    }

    fn add_grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        out[0] -= theta[0] / self.prior_var;
    }
}
