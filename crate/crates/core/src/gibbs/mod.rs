//! Gibbs sampling for binary models whose joint is a product of factors,
//! with the sequential test deciding each single-site update.
//!
//! States are bitmasks: bit `i` of a `u128` is `X_i`, so models have at most
//! 128 variables.

mod analysis;
mod metrics;

pub use analysis::{
    approx_conditional_exact, dobrushin_coefficient, kernel_analysis, stationary_distribution, sweep_kernel,
    total_variation, KernelAnalysis,
};
pub use metrics::{draw_subsets, enumerate_joint, subset_l1_error, SubsetMarginals, SubsetTally};

use crate::error::{invalid, Error, Result};
use crate::samplers::{AcceptTest, MhDecider, StepRecord};
use crate::seqtest::{LogLikDiffPopulation, SequentialTestSpec};
use crate::special::{log_sigmoid, sigmoid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, Write};

pub const MAX_VARIABLES: usize = 128;
/// Largest factor scope the model file can hold.
pub const MAX_ARITY: usize = 6;

/// A factor over a few binary variables, stored as log-potentials.
///
/// Entry `b` of the table is the log-potential at the configuration whose
/// `k`-th scope variable equals bit `k` of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub scope: Vec<usize>,
    pub table: Vec<f64>,
}

impl Factor {
    fn index(&self, state: u128) -> usize {
        self.scope.iter().enumerate().fold(0, |acc, (k, &v)| acc | ((((state >> v) & 1) as usize) << k))
    }

    pub fn log_value(&self, state: u128) -> f64 {
        self.table[self.index(state)]
    }
}

/// `P(X) ∝ exp(sum_f log f(X))` over `D` binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedBinaryModel {
    d: usize,
    factors: Vec<Factor>,
    /// Per site: factor indices and the site's position in each scope.
    site_factors: Vec<Vec<(u32, u8)>>,
}

impl FactorizedBinaryModel {
    pub fn new(d: usize, factors: Vec<Factor>) -> Result<Self> {
        if d == 0 || d > MAX_VARIABLES {
            return Err(invalid(format!("variable count {d} must lie in 1..={MAX_VARIABLES}")));
        }
        let mut site_factors = vec![Vec::new(); d];
        for (fi, f) in factors.iter().enumerate() {
            if f.scope.is_empty() || f.scope.len() > MAX_ARITY {
                return Err(invalid(format!("factor {fi}: scope size must lie in 1..={MAX_ARITY}")));
            }
            if f.table.len() != 1 << f.scope.len() {
                return Err(Error::DimensionMismatch { expected: 1 << f.scope.len(), got: f.table.len() });
            }
            if f.table.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("factor {fi}: log-potentials must be finite")));
            }
            for (k, &v) in f.scope.iter().enumerate() {
                if v >= d {
                    return Err(invalid(format!("factor {fi}: variable {v} out of range")));
                }
                if f.scope[..k].contains(&v) {
                    return Err(invalid(format!("factor {fi}: repeated variable {v}")));
                }
                site_factors[v].push((fi as u32, k as u8));
            }
        }
        Ok(Self { d, factors, site_factors })
    }

    /// All `D(D-1)(D-2)/6` triple factors with i.i.d. normal log-potentials with standard deviation `log_sd`.
    pub fn dense_triples(d: usize, log_sd: f64, seed: u64) -> Result<Self> {
        if d < 3 {
            return Err(invalid("a triple model needs at least 3 variables"));
        }
        if !(log_sd >= 0.0) || !log_sd.is_finite() {
            return Err(invalid("log-potential spread must be nonnegative"));
        }
        let normal = Normal::new(0.0, log_sd).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(d * (d - 1) * (d - 2) / 6);
        for i in 0..d {
            for j in i + 1..d {
                for k in j + 1..d {
                    let table = (0..8).map(|_| normal.sample(&mut rng)).collect();
                    factors.push(Factor { scope: vec![i, j, k], table });
                }
            }
        }
        Self::new(d, factors)
    }

    pub fn num_variables(&self) -> usize {
        self.d
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Number of factors whose scope contains `site`.
    pub fn site_degree(&self, site: usize) -> usize {
        self.site_factors[site].len()
    }

    /// Unnormalized `ln P(state)`.
    pub fn log_weight(&self, state: u128) -> f64 {
        self.factors.iter().map(|f| f.log_value(state)).sum()
    }

    /// `ln f(X_site = 1, x_-site) - ln f(X_site = 0, x_-site)` for the `j`-th factor touching `site`.
    pub fn factor_log_ratio(&self, site: usize, j: usize, state: u128) -> f64 {
        let (fi, pos) = self.site_factors[site][j];
        let f = &self.factors[fi as usize];
        let base = f.index(state) & !(1usize << pos);
        f.table[base | (1 << pos)] - f.table[base]
    }

    /// `ln P(X_site = 1 | x) - ln P(X_site = 0 | x)`.
    pub fn conditional_log_odds(&self, site: usize, state: u128) -> f64 {
        (0..self.site_degree(site)).map(|j| self.factor_log_ratio(site, j, state)).sum()
    }

    pub fn exact_conditional(&self, site: usize, state: u128) -> f64 {
        sigmoid(self.conditional_log_odds(site, state))
    }

    pub fn log_conditional(&self, site: usize, state: u128) -> f64 {
        log_sigmoid(self.conditional_log_odds(site, state))
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.d {
            return Err(invalid(format!("site {site} out of range for {} variables", self.d)));
        }
        if self.site_factors[site].is_empty() {
            return Err(Error::Empty("factors at site"));
        }
        Ok(())
    }
}

/// Per-factor log-ratios at one site, evaluated lazily from the tables.
#[derive(Debug, Clone, Copy)]
pub struct GibbsRatioPopulation<'a> {
    model: &'a FactorizedBinaryModel,
    site: usize,
    state: u128,
}

impl<'a> GibbsRatioPopulation<'a> {
    pub fn new(model: &'a FactorizedBinaryModel, site: usize, state: u128) -> Result<Self> {
        model.check_site(site)?;
        Ok(Self { model, site, state })
    }

    /// All values, in factor order.
    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.size()).map(|j| self.eval(j)).collect()
    }
}

impl LogLikDiffPopulation for GibbsRatioPopulation<'_> {
    fn size(&self) -> usize {
        self.model.site_degree(self.site)
    }

    fn eval(&self, j: usize) -> f64 {
        self.model.factor_log_ratio(self.site, j, self.state)
    }
}

/// The threshold as printed for the Gibbs test: `ln(u) / ln(1 - u) / N`.
///
/// Comparing the factor mean with this value does not reproduce the Gibbs
/// conditional; [`gibbs_conditional_mu0`] is the threshold the sampler uses.
pub fn gibbs_mu0(u: f64, n_factors: usize) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid(format!("u = {u} must lie in (0, 1)")));
    }
    if n_factors == 0 {
        return Err(Error::Empty("factors"));
    }
    Ok(u.ln() / (-u).ln_1p() / n_factors as f64)
}

/// `ln(u / (1 - u)) / N`: setting `X_i = 1` iff the factor mean exceeds this
/// is the draw `u < P(X_i = 1 | x_-i)`.
pub fn gibbs_conditional_mu0(u: f64, n_factors: usize) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid(format!("u = {u} must lie in (0, 1)")));
    }
    if n_factors == 0 {
        return Err(Error::Empty("factors"));
    }
    Ok((u.ln() - (-u).ln_1p()) / n_factors as f64)
}

/// Resamples `X_site` in place.
pub fn approx_gibbs_update<R: Rng + ?Sized>(
    model: &FactorizedBinaryModel,
    site: usize,
    state: &mut u128,
    decider: &mut MhDecider,
    rng: &mut R,
) -> Result<StepRecord> {
    let pop = GibbsRatioPopulation::new(model, site, *state)?;
    let u = MhDecider::draw_u(rng);
    let mu0 = gibbs_conditional_mu0(u, pop.size())?;
    let d = decider.decide(&pop, mu0, rng)?;
    if d.accept {
        *state |= 1u128 << site;
    } else {
        *state &= !(1u128 << site);
    }
    Ok(StepRecord { accept: d.accept, n_used: d.n_used, stages: d.stages, grad_evals: 0 })
}

/// Systematic-scan Gibbs over sites `0..D`.
pub struct GibbsSampler<'a> {
    model: &'a FactorizedBinaryModel,
    decider: MhDecider,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(model: &'a FactorizedBinaryModel, test: AcceptTest) -> Result<Self> {
        if let AcceptTest::Sequential(spec) = test {
            validate_spec(&spec)?;
        }
        Ok(Self { model, decider: MhDecider::new(test) })
    }

    /// One sweep. `accept` reports whether the state changed; `stages` is the maximum over sites.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut u128, rng: &mut R) -> Result<StepRecord> {
        let before = *state;
        let mut total = StepRecord::default();
        for site in 0..self.model.d {
            let r = approx_gibbs_update(self.model, site, state, &mut self.decider, rng)?;
            total.n_used += r.n_used;
            total.stages = total.stages.max(r.stages);
        }
        total.accept = *state != before;
        Ok(total)
    }
}

fn validate_spec(spec: &SequentialTestSpec) -> Result<()> {
    if spec.batch_size < 2 {
        return Err(invalid("Gibbs batch size must be at least 2"));
    }
    Ok(())
}

impl crate::samplers::Sampler for GibbsSampler<'_> {
    type State = u128;

    fn step<R: Rng + ?Sized>(&mut self, state: &mut u128, rng: &mut R) -> Result<StepRecord> {
        self.sweep(state, rng)
    }

    fn snapshot(&self, state: &u128) -> Vec<f64> {
        (0..self.model.d).map(|i| ((state >> i) & 1) as f64).collect()
    }

    fn num_data(&self) -> usize {
        self.model.site_factors.iter().map(Vec::len).sum()
    }
}

/// Writes `D F`, then one line per factor: scope indices followed by the table.
pub fn write_model<W: Write>(mut w: W, m: &FactorizedBinaryModel) -> std::io::Result<()> {
    writeln!(w, "{} {}", m.d, m.factors.len())?;
    for f in &m.factors {
        let mut parts: Vec<String> = f.scope.iter().map(|v| v.to_string()).collect();
        parts.extend(f.table.iter().map(|v| format!("{v:.16e}")));
        writeln!(w, "{}", parts.join(" "))?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(r: R) -> Result<FactorizedBinaryModel> {
    let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        other => Some((i + 1, other)),
    });
    let (_, header) = lines.next().ok_or(Error::Empty("model file"))?;
    let header = header.map_err(|e| Error::Parse(e.to_string()))?;
    let hv: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header token {t:?}"))))
        .collect::<Result<_>>()?;
    let [d, count] = hv[..] else {
        return Err(Error::Parse("header must be 'D F'".into()));
    };
    let mut factors = Vec::with_capacity(count);
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let arity = (1..=MAX_ARITY)
            .find(|&a| a + (1 << a) == toks.len())
            .ok_or_else(|| Error::Parse(format!("line {lineno}: {} fields fit no factor size", toks.len())))?;
        let scope = toks[..arity]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("line {lineno}: bad index {t:?}"))))
            .collect::<Result<_>>()?;
        let table = toks[arity..]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("line {lineno}: bad value {t:?}"))))
            .collect::<Result<_>>()?;
        factors.push(Factor { scope, table });
    }
    if factors.len() != count {
        return Err(Error::Parse(format!("header declares {count} factors, found {}", factors.len())));
    }
    FactorizedBinaryModel::new(d, factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_counts() {
        let m = FactorizedBinaryModel::dense_triples(10, 0.02, 1).unwrap();
        assert_eq!(m.factors().len(), 10 * 9 * 8 / 6);
        for i in 0..10 {
            assert_eq!(m.site_degree(i), 9 * 8 / 2);
        }
    }

    #[test]
    fn log_odds_match_weight_difference() {
        let m = FactorizedBinaryModel::dense_triples(6, 0.5, 2).unwrap();
        for state in [0u128, 0b101101, 0b010011] {
            for i in 0..6 {
                let hi = m.log_weight(state | 1 << i);
                let lo = m.log_weight(state & !(1 << i));
                assert!((m.conditional_log_odds(i, state) - (hi - lo)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mu0_forms() {
        assert!((gibbs_mu0(0.5, 7).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        let direct = (0.9f64.ln() / 0.1f64.ln()) / 10.0;
        assert!((gibbs_mu0(0.9, 10).unwrap() - direct).abs() < 1e-15);
        for u in [1e-12, 1e-6, 0.3] {
            assert!(gibbs_mu0(u, 3).unwrap() > 0.0);
        }
        assert!(gibbs_mu0(0.0, 3).is_err() && gibbs_mu0(1.0, 3).is_err());
        assert_eq!(gibbs_conditional_mu0(0.5, 4).unwrap(), 0.0);
        assert!((gibbs_conditional_mu0(0.9, 10).unwrap() - 9f64.ln() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn constant_tables_give_half() {
        let factors = (0..5).map(|i| Factor { scope: vec![i, (i + 1) % 5], table: vec![0.3; 4] }).collect();
        let m = FactorizedBinaryModel::new(5, factors).unwrap();
        let mut dec = MhDecider::new(AcceptTest::Exact);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = 0u128;
        let mut ones = 0;
        let n = 40_000;
        for _ in 0..n {
            approx_gibbs_update(&m, 2, &mut state, &mut dec, &mut rng).unwrap();
            ones += (state >> 2) & 1;
        }
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25f64 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn update_frequency_matches_conditional() {
        let m = FactorizedBinaryModel::dense_triples(6, 0.3, 9).unwrap();
        let state0 = 0b011010u128;
        let p = m.exact_conditional(4, state0);
        let mut dec = MhDecider::new(AcceptTest::Exact);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let mut ones = 0;
        for _ in 0..n {
            let mut s = state0;
            approx_gibbs_update(&m, 4, &mut s, &mut dec, &mut rng).unwrap();
            assert_eq!(s & !(1 << 4), state0 & !(1 << 4));
            ones += (s >> 4) & 1;
        }
        let f = ones as f64 / n as f64;
        assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
    }

    #[test]
    fn model_file_round_trip() {
        let m = FactorizedBinaryModel::dense_triples(5, 0.02, 3).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(read_model(buf.as_slice()).unwrap(), m);
        assert!(read_model("3 1\n0 1 5 0 0 0 0 0 0 0 0\n".as_bytes()).is_err());
        assert!(read_model("3 2\n0 1 2 0 0 0 0 0 0 0 0\n".as_bytes()).is_err());
    }
}
