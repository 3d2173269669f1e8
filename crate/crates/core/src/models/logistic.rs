use super::{GradientModel, PosteriorModel};
use crate::error::{invalid, Error, Result};
use crate::special::{log_sigmoid, sigmoid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Row-major `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Binary logistic regression with a spherical Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    features: FeatureMatrix,
    /// Labels as +1 / -1.
    signs: Vec<f64>,
    prior_precision: f64,
}

impl LogisticRegression {
    pub const DEFAULT_PRIOR_PRECISION: f64 = 10.0;

    /// `labels` are 0/1.
    pub fn new(features: FeatureMatrix, labels: &[u8], prior_precision: f64) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch { expected: features.rows(), got: labels.len() });
        }
        if features.rows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if !(prior_precision >= 0.0) {
            return Err(invalid("prior precision must be nonnegative"));
        }
        let signs = labels
            .iter()
            .map(|&l| match l {
                0 => Ok(-1.0),
                1 => Ok(1.0),
                other => Err(invalid(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { features, signs, prior_precision })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> Vec<u8> {
        self.signs.iter().map(|&s| u8::from(s > 0.0)).collect()
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn with_prior_precision(mut self, p: f64) -> Self {
        self.prior_precision = p;
        self
    }

    /// `P(y = 1 | x, theta)`.
    pub fn predict(x: &[f64], theta: &[f64]) -> f64 {
        sigmoid(dot(x, theta))
    }

    /// Mode of the posterior by Newton's method, with the negative Hessian at the mode.
    pub fn map_estimate(&self, max_iter: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let d = self.features.cols();
        let mut theta = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for _ in 0..max_iter {
            let mut grad = -self.prior_precision * &theta;
            hess.fill(0.0);
            for i in 0..d {
                hess[(i, i)] = self.prior_precision;
            }
            for i in 0..self.features.rows() {
                let x = DVector::from_column_slice(self.features.row(i));
                let s = self.signs[i];
                let a = x.dot(&theta);
                let p = sigmoid(a);
                grad += &x * (s * sigmoid(-s * a));
                hess.ger(p * (1.0 - p), &x, &x, 1.0);
            }
            let chol = hess
                .clone()
                .cholesky()
                .ok_or_else(|| invalid("Hessian is not positive definite"))?;
            let step = chol.solve(&grad);
            theta += &step;
            if step.amax() < 1e-12 {
                break;
            }
        }
        Ok((theta.as_slice().to_vec(), hess))
    }
}

impl PosteriorModel for LogisticRegression {
    fn num_data(&self) -> usize {
        self.features.rows()
    }

    fn dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    fn log_lik_point(&self, i: usize, theta: &[f64]) -> f64 {
        log_sigmoid(self.signs[i] * dot(self.features.row(i), theta))
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        -0.5 * self.prior_precision * dot(theta, theta)
    }
}

impl GradientModel for LogisticRegression {
    fn add_grad_log_lik_point(&self, i: usize, theta: &[f64], scale: f64, out: &mut [f64]) {
        let x = self.features.row(i);
        let s = self.signs[i];
        let w = scale * s * sigmoid(-s * dot(x, theta));
        for (o, xv) in out.iter_mut().zip(x) {
            *o += w * xv;
        }
    }

    fn add_grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o -= self.prior_precision * t;
        }
    }
}

struct LogisticGenerator {
    scales: Vec<f64>,
    weights: Vec<f64>,
}

impl LogisticGenerator {
    fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        // decaying feature scales, loosely like leading principal components
        let scales: Vec<f64> = (0..d).map(|j| 1.0 / (1.0 + j as f64 / 5.0).sqrt()).collect();
        let weights: Vec<f64> = (0..d).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { scales, weights }
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
        let d = self.scales.len();
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row_start = x.len();
            for s in &self.scales {
                x.push(s * rng.sample::<f64, _>(StandardNormal));
            }
            let p = sigmoid(dot(&x[row_start..], &self.weights));
            y.push(u8::from(rng.random::<f64>() < p));
        }
        (x, y)
    }
}

/// Synthetic logistic-regression data with `n` rows and `d` features.
pub fn synth_logistic_dataset(n: usize, d: usize, seed: u64) -> Result<LogisticRegression> {
    Ok(synth_logistic_split(n, 0, d, seed)?.0)
}

/// Training model and held-out features drawn from the same generator.
pub fn synth_logistic_split(
    n_train: usize,
    n_test: usize,
    d: usize,
    seed: u64,
) -> Result<(LogisticRegression, FeatureMatrix)> {
    if d == 0 {
        return Err(invalid("need at least one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = LogisticGenerator::new(d, &mut rng);
    let (x, y) = gen.draw(n_train, &mut rng);
    let (xt, _) = gen.draw(n_test, &mut rng);
    let model = LogisticRegression::new(
        FeatureMatrix::new(x, n_train, d)?,
        &y,
        LogisticRegression::DEFAULT_PRIOR_PRECISION,
    )?;
    Ok((model, FeatureMatrix::new(xt, n_test, d)?))
}
