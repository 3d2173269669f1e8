//! Variable selection in logistic regression by reversible-jump moves.
//!
//! The state is a coefficient vector `beta` and an inclusion mask `gamma`.
//! With the Laplace shrinkage scale integrated out under an inverse-gamma
//! hyperprior with shape `a` and scale `b`, the log target is
//!
//! `log l_N(beta) + ln G(k + a) - ln G(k) - (k + a) ln(|beta|_1 + b) + k ln(lambda) + ln B(k, D - k + 1)`
//!
//! which for `a = b = 0` is `l_N |beta|_1^-k lambda^k B(k, D-k+1)`.

use super::LogisticRegression;
use crate::error::{invalid, Error, Result};
use crate::models::PosteriorModel;
use crate::seqtest::compute_mu0;
use crate::special::{ln_beta, ln_gamma};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Update,
    Birth,
    Death,
}

impl MoveKind {
    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Update => "update",
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
        }
    }

    pub fn is_legal(self, k: usize, d: usize) -> bool {
        match self {
            MoveKind::Update => k >= 1,
            MoveKind::Birth => k < d,
            MoveKind::Death => k > 1,
        }
    }
}

/// Legal moves for a model of size `k` out of `d` features.
pub fn legal_moves(k: usize, d: usize) -> Vec<MoveKind> {
    [MoveKind::Update, MoveKind::Birth, MoveKind::Death]
        .into_iter()
        .filter(|m| m.is_legal(k, d))
        .collect()
}

/// Probability of picking move type `kind` at size `k`: uniform over legal types.
pub fn move_type_probability(kind: MoveKind, k: usize, d: usize) -> f64 {
    if kind.is_legal(k, d) {
        1.0 / legal_moves(k, d).len() as f64
    } else {
        0.0
    }
}

/// Coefficients with an inclusion mask; excluded coefficients are held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSelState {
    beta: Vec<f64>,
    gamma: Vec<bool>,
}

impl VarSelState {
    pub fn new(mut beta: Vec<f64>, gamma: Vec<bool>) -> Result<Self> {
        if beta.len() != gamma.len() {
            return Err(Error::DimensionMismatch { expected: gamma.len(), got: beta.len() });
        }
        if !gamma.iter().any(|&g| g) {
            return Err(invalid("at least one feature must be included"));
        }
        for (b, &g) in beta.iter_mut().zip(&gamma) {
            if !g {
                *b = 0.0;
            }
        }
        Ok(Self { beta, gamma })
    }

    /// Only feature `j` included, with coefficient `value`.
    pub fn single(d: usize, j: usize, value: f64) -> Result<Self> {
        if j >= d {
            return Err(invalid(format!("feature {j} out of range for {d} features")));
        }
        let mut beta = vec![0.0; d];
        let mut gamma = vec![false; d];
        beta[j] = value;
        gamma[j] = true;
        Self::new(beta, gamma)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &[bool] {
        &self.gamma
    }

    pub fn k(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }

    /// Parameters followed by the mask as 0/1, for traces.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend(self.gamma.iter().map(|&g| f64::from(u8::from(g))));
        v
    }

    fn nth(&self, included: bool, n: usize) -> usize {
        self.gamma
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == included)
            .nth(n)
            .map(|(i, _)| i)
            .expect("index within count")
    }
}

/// A proposed move: its type, the affected feature, and the coefficient values
/// before and after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarSelMove {
    pub kind: MoveKind,
    pub index: usize,
    pub old_value: f64,
    pub new_value: f64,
}

/// Logistic likelihood with the variable-selection prior.
#[derive(Debug, Clone)]
pub struct VarSelModel {
    likelihood: LogisticRegression,
    lambda: f64,
    hyper_shape: f64,
    hyper_scale: f64,
}

impl VarSelModel {
    pub const DEFAULT_SIGMA_UPDATE: f64 = 0.01;
    pub const DEFAULT_SIGMA_BIRTH: f64 = 0.1;
    pub const DEFAULT_LAMBDA: f64 = 1e-10;

    /// Model with the scale-invariant hyperprior (`a = b = 0`).
    pub fn new(likelihood: LogisticRegression, lambda: f64) -> Result<Self> {
        Self::with_hyperprior(likelihood, lambda, 0.0, 0.0)
    }

    pub fn with_hyperprior(likelihood: LogisticRegression, lambda: f64, shape: f64, scale: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        if !(shape >= 0.0 && scale >= 0.0) {
            return Err(invalid("hyperprior shape and scale must be nonnegative"));
        }
        Ok(Self { likelihood, lambda, hyper_shape: shape, hyper_scale: scale })
    }

    pub fn likelihood(&self) -> &LogisticRegression {
        &self.likelihood
    }

    pub fn num_data(&self) -> usize {
        self.likelihood.num_data()
    }

    pub fn dim(&self) -> usize {
        self.likelihood.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Log prior of the state, up to a constant, with the shrinkage scale integrated out.
    pub fn log_prior(&self, state: &VarSelState) -> f64 {
        let k = state.k() as f64;
        let d = self.dim() as f64;
        let a = self.hyper_shape;
        let shrink = if a == 0.0 {
            -k * (state.l1_norm() + self.hyper_scale).ln()
        } else {
            ln_gamma(k + a) - ln_gamma(k) - (k + a) * (state.l1_norm() + self.hyper_scale).ln()
        };
        shrink + k * self.lambda.ln() + ln_beta(k, d - k + 1.0)
    }

    /// Log prior as a function of `(k, |beta|_1)` only.
    pub fn log_prior_parts(&self, k: usize, l1: f64) -> f64 {
        let kf = k as f64;
        let d = self.dim() as f64;
        let a = self.hyper_shape;
        ln_gamma(kf + a) - ln_gamma(kf) - (kf + a) * (l1 + self.hyper_scale).ln()
            + kf * self.lambda.ln()
            + ln_beta(kf, d - kf + 1.0)
    }
}

fn ln_normal(x: f64, sd: f64) -> f64 {
    -0.5 * (2.0 * PI * sd * sd).ln() - 0.5 * (x / sd) * (x / sd)
}

/// Draws a legal move and returns it with the proposed state.
pub fn propose_move<R: Rng + ?Sized>(
    state: &VarSelState,
    sigma_update: f64,
    sigma_birth: f64,
    rng: &mut R,
) -> (VarSelMove, VarSelState) {
    let d = state.dim();
    let k = state.k();
    let moves = legal_moves(k, d);
    let kind = moves[rng.random_range(0..moves.len())];
    let mut next = state.clone();
    let mv = match kind {
        MoveKind::Update => {
            let j = state.nth(true, rng.random_range(0..k));
            let eta: f64 = rng.sample(StandardNormal);
            let new_value = state.beta[j] + sigma_update * eta;
            next.beta[j] = new_value;
            VarSelMove { kind, index: j, old_value: state.beta[j], new_value }
        }
        MoveKind::Birth => {
            let j = state.nth(false, rng.random_range(0..d - k));
            let z: f64 = rng.sample(StandardNormal);
            let new_value = sigma_birth * z;
            next.beta[j] = new_value;
            next.gamma[j] = true;
            VarSelMove { kind, index: j, old_value: 0.0, new_value }
        }
        MoveKind::Death => {
            let j = state.nth(true, rng.random_range(0..k));
            next.beta[j] = 0.0;
            next.gamma[j] = false;
            VarSelMove { kind, index: j, old_value: state.beta[j], new_value: 0.0 }
        }
    };
    (mv, next)
}

/// `ln q(state | proposed) - ln q(proposed | state)` for a move from a model of size `k`.
pub fn log_proposal_ratio(mv: &VarSelMove, k: usize, d: usize, sigma_birth: f64) -> Result<f64> {
    if !mv.kind.is_legal(k, d) {
        return Err(Error::IllegalMove(mv.kind.name()));
    }
    let kf = k as f64;
    let df = d as f64;
    Ok(match mv.kind {
        MoveKind::Update => 0.0,
        MoveKind::Birth => {
            let fwd = move_type_probability(MoveKind::Birth, k, d).ln() - (df - kf).ln() + ln_normal(mv.new_value, sigma_birth);
            let back = move_type_probability(MoveKind::Death, k + 1, d).ln() - (kf + 1.0).ln();
            back - fwd
        }
        MoveKind::Death => {
            let fwd = move_type_probability(MoveKind::Death, k, d).ln() - kf.ln();
            let back = move_type_probability(MoveKind::Birth, k - 1, d).ln() - (df - kf + 1.0).ln()
                + ln_normal(mv.old_value, sigma_birth);
            back - fwd
        }
    })
}

/// Move-specific threshold for the sequential test.
pub fn varsel_mu0(
    model: &VarSelModel,
    state: &VarSelState,
    proposed: &VarSelState,
    mv: &VarSelMove,
    u: f64,
    sigma_birth: f64,
) -> Result<f64> {
    let lqr = log_proposal_ratio(mv, state.k(), state.dim(), sigma_birth)?;
    let lpr = model.log_prior(state) - model.log_prior(proposed);
    compute_mu0(u, lpr, lqr, model.num_data())
}
