//! Risk of chain-based estimators against ground truth, on a shared cost axis.

use crate::error::{invalid, Error, Result};
use crate::samplers::ChainTrace;
use std::io::{BufRead, Write};

pub const DEFAULT_BURN_IN: f64 = 0.1;

/// Test-function values along one chain, with the cost spent to reach each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSeries {
    pub cost: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl ChainSeries {
    pub fn new(cost: Vec<u64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if cost.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: cost.len(), got: values.len() });
        }
        if cost.is_empty() {
            return Err(Error::Empty("chain series"));
        }
        if cost.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("cost axis must be nondecreasing"));
        }
        let k = values[0].len();
        if values.iter().any(|v| v.len() != k) {
            return Err(invalid("every sample needs the same number of test functions"));
        }
        Ok(Self { cost, values })
    }

    /// Applies `f` to every recorded state, using cumulative evaluations as cost.
    pub fn from_trace<F: FnMut(&[f64]) -> Vec<f64>>(trace: &ChainTrace, mut f: F) -> Result<Self> {
        let (cost, values) = trace.records().iter().map(|r| (r.cumulative_evals, f(&r.params))).unzip();
        Self::new(cost, values)
    }

    fn functions(&self) -> usize {
        self.values[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskRow {
    pub cost: u64,
    /// Mean over chains and test functions of the squared error.
    pub risk: f64,
    pub bias_sq: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
    pub chains: usize,
    pub burn_in: f64,
}

impl RiskReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "evaluations\trisk\tbias_sq\tvariance")?;
        for r in &self.rows {
            writeln!(w, "{}\t{:.10e}\t{:.10e}\t{:.10e}", r.cost, r.risk, r.bias_sq, r.variance)?;
        }
        Ok(())
    }

    pub fn final_risk(&self) -> Option<f64> {
        self.rows.last().map(|r| r.risk)
    }
}

/// Running mean of each test function over samples with cost `<= t`, after
/// dropping the leading `burn_in` fraction of them (at least one sample kept).
fn running_estimate(chain: &ChainSeries, t: u64, burn_in: f64) -> Option<Vec<f64>> {
    let count = chain.cost.partition_point(|&c| c <= t);
    if count == 0 {
        return None;
    }
    let skip = ((count as f64 * burn_in).floor() as usize).min(count - 1);
    let kept = &chain.values[skip..count];
    let mut mean = vec![0.0; chain.functions()];
    for v in kept {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = kept.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Some(mean)
}

/// Risk `R = B^2 + V` at each grid cost, averaged over test functions.
pub fn estimate_risk(chains: &[ChainSeries], truth: &[f64], grid: &[u64], burn_in: f64) -> Result<RiskReport> {
    if chains.is_empty() {
        return Err(Error::Empty("chains"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("cost grid"));
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(invalid(format!("burn-in fraction {burn_in} must lie in [0, 1)")));
    }
    for c in chains {
        if c.functions() != truth.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), got: c.functions() });
        }
    }
    let start = chains.iter().map(|c| c.cost[0]).max().unwrap_or(0);
    let end = chains.iter().map(|c| *c.cost.last().unwrap_or(&0)).min().unwrap_or(0);
    if start > end {
        return Err(invalid("chain cost ranges do not overlap"));
    }
    let k = truth.len() as f64;
    let nc = chains.len() as f64;
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        if t < start || t > end {
            return Err(invalid(format!("grid cost {t} outside the shared range [{start}, {end}]")));
        }
        let est: Vec<Vec<f64>> = chains.iter().map(|c| running_estimate(c, t, burn_in)).collect::<Option<_>>().ok_or_else(|| invalid("chain without samples at grid cost"))?;
        let mut risk = 0.0;
        let mut bias_sq = 0.0;
        let mut variance = 0.0;
        for (j, &truth_j) in truth.iter().enumerate() {
            let mean = est.iter().map(|e| e[j]).sum::<f64>() / nc;
            bias_sq += (mean - truth_j).powi(2);
            variance += est.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / nc;
            risk += est.iter().map(|e| (e[j] - truth_j).powi(2)).sum::<f64>() / nc;
        }
        rows.push(RiskRow { cost: t, risk: risk / k, bias_sq: bias_sq / k, variance: variance / k });
    }
    Ok(RiskReport { rows, chains: chains.len(), burn_in })
}

/// Evenly spaced grid of `points` costs ending at the shared end of all chains.
pub fn shared_cost_grid(chains: &[ChainSeries], points: usize) -> Result<Vec<u64>> {
    if points == 0 {
        return Err(Error::Empty("cost grid"));
    }
    let start = chains.iter().map(|c| c.cost[0]).max().ok_or(Error::Empty("chains"))?;
    let end = chains.iter().map(|c| *c.cost.last().unwrap_or(&0)).min().ok_or(Error::Empty("chains"))?;
    if start > end {
        return Err(invalid("chain cost ranges do not overlap"));
    }
    let span = end - start;
    Ok((1..=points).map(|i| start + (span as u128 * i as u128 / points as u128) as u64).collect())
}

/// Integrated autocorrelation time by Geyer's initial positive sequence.
pub fn integrated_autocorr_time(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, have: n });
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Err(Error::DegenerateScale);
    }
    let acov = |lag: usize| xs[..n - lag].iter().zip(&xs[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64;
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (acov(lag) + acov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok(tau.max(1.0))
}

/// Fraction of samples in each of `bins` equal bins over `[lo, hi)`.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if bins == 0 || !(hi > lo) {
        return Err(invalid("histogram needs bins > 0 and hi > lo"));
    }
    let mut h = vec![0.0; bins];
    let w = (hi - lo) / bins as f64;
    for &x in samples {
        if x >= lo && x < hi {
            h[(((x - lo) / w) as usize).min(bins - 1)] += 1.0;
        }
    }
    let n = samples.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    Ok(h)
}

/// L1 distance between two histograms over the same bins, counting mass
/// missing from either (samples outside the range) as error.
pub fn histogram_l1(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: estimate.len() });
    }
    let inside: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    let missing = (1.0 - estimate.iter().sum::<f64>()).abs() + (1.0 - truth.iter().sum::<f64>()).abs();
    Ok(inside + missing)
}

/// Reference expectations with a record of how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub provenance: String,
    pub values: Vec<f64>,
}

impl GroundTruth {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# truth {}", self.provenance.replace('\n', " "))?;
        writeln!(w, "index\tvalue")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i}\t{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut provenance = None;
        let mut values = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if let Some(p) = line.strip_prefix("# truth") {
                provenance = Some(p.trim().to_string());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let v = line
                .split('\t')
                .nth(1)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: expected 'index<TAB>value'", n + 1)))?;
            values.push(v);
        }
        let provenance = provenance.ok_or_else(|| Error::Parse("missing '# truth' provenance line".into()))?;
        if values.is_empty() {
            return Err(Error::Empty("ground truth"));
        }
        Ok(Self { provenance, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn frozen_chains_have_zero_risk() {
        let truth = vec![0.3, -1.0];
        let chains: Vec<_> = (0..3)
            .map(|_| ChainSeries::new((0..50).map(|i| i * 10).collect(), vec![truth.clone(); 50]).unwrap())
            .collect();
        let r = estimate_risk(&chains, &truth, &[100, 490], 0.1).unwrap();
        assert!(r.rows.iter().all(|row| row.risk < 1e-28));
    }

    #[test]
    fn decomposition_is_exact() {
        let truth = vec![0.0];
        let chains: Vec<_> = [0.5, 1.5, -0.1]
            .iter()
            .map(|&c| ChainSeries::new(vec![1, 2], vec![vec![c], vec![c]]).unwrap())
            .collect();
        let r = estimate_risk(&chains, &truth, &[2], 0.0).unwrap();
        let row = r.rows[0];
        assert!((row.risk - row.bias_sq - row.variance).abs() < 1e-15);
        assert!((row.risk - (0.25 + 2.25 + 0.01) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn independent_noise_risk_decays_like_inverse_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<_> = (0..400)
            .map(|_| {
                let v: Vec<Vec<f64>> = (0..1000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
                ChainSeries::new((1..=1000).collect(), v).unwrap()
            })
            .collect();
        let r = estimate_risk(&chains, &[0.0], &[100, 1000], 0.0).unwrap();
        let (a, b) = (r.rows[0].risk, r.rows[1].risk);
        assert!((a * 100.0 - 1.0).abs() < 0.25, "{a}");
        assert!((b * 1000.0 - 1.0).abs() < 0.25, "{b}");
    }

    #[test]
    fn disjoint_ranges_fail() {
        let a = ChainSeries::new(vec![1, 2], vec![vec![0.0], vec![0.0]]).unwrap();
        let b = ChainSeries::new(vec![5, 6], vec![vec![0.0], vec![0.0]]).unwrap();
        assert!(estimate_risk(&[a.clone(), b.clone()], &[0.0], &[2], 0.1).is_err());
        assert!(shared_cost_grid(&[a, b], 3).is_err());
    }

    #[test]
    fn autocorr_of_ar1() {
        let rho: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + e;
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&xs).unwrap();
        let expect = (1.0 + rho) / (1.0 - rho);
        assert!((tau / expect - 1.0).abs() < 0.1, "{tau}");
    }

    #[test]
    fn histogram_counts_outside_mass() {
        let h = histogram(&[0.1, 0.6, 2.0, 0.7], 0.0, 1.0, 2).unwrap();
        assert_eq!(h, vec![0.25, 0.5]);
        let l1 = histogram_l1(&h, &[0.5, 0.5]).unwrap();
        assert!((l1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truth_round_trip() {
        let t = GroundTruth { provenance: "exact chain steps=10 seed=3".into(), values: vec![0.1, 1.0 / 3.0] };
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(GroundTruth::read(buf.as_slice()).unwrap(), t);
    }
}
