//! Choosing the first-stage fraction, error level and bound exponent of the
//! sequential test under an error budget.

use crate::error::{invalid, Error, Result};
use crate::rwalk::{delta_acceptance, dp_error_and_usage, ErrorCurve, RandomWalkParams, TabulatedCurve, TestShape};
use crate::special::normal_upper_quantile;
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Mutex;

/// Population mean and spread of the `l_i` for one proposal pair.
///
/// `mu` has the prior and proposal terms folded in, so the test threshold is
/// `ln(u) / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSample {
    pub mu: f64,
    pub sigma_l: f64,
    pub n: usize,
}

/// One candidate test configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub pi1: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl DesignPoint {
    pub fn g0(&self) -> f64 {
        normal_upper_quantile(self.epsilon)
    }

    pub fn shape(&self) -> Result<TestShape> {
        TestShape::uniform(self.pi1, self.epsilon, self.alpha)
    }

    fn key(&self) -> (u64, u64, u64) {
        (self.pi1.to_bits(), self.epsilon.to_bits(), self.alpha.to_bits())
    }
}

/// Cartesian search grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignGrid {
    pub pi1: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for DesignGrid {
    fn default() -> Self {
        Self {
            pi1: vec![0.01, 0.02, 0.05, 0.1, 0.2],
            epsilon: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            alpha: vec![0.5, 0.65, 0.8, 1.0],
        }
    }
}

impl DesignGrid {
    pub fn points(&self) -> Vec<DesignPoint> {
        let mut out = Vec::with_capacity(self.pi1.len() * self.epsilon.len() * self.alpha.len());
        for &pi1 in &self.pi1 {
            for &epsilon in &self.epsilon {
                for &alpha in &self.alpha {
                    out.push(DesignPoint { pi1, epsilon, alpha });
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.pi1.is_empty() || self.epsilon.is_empty() || self.alpha.is_empty() {
            return Err(Error::Empty("design grid"));
        }
        for p in self.points() {
            p.shape()?;
        }
        Ok(())
    }
}

/// A chosen design with its predicted error and usage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignResult {
    pub point: DesignPoint,
    pub predicted_error: f64,
    pub predicted_usage: f64,
    pub grid_evaluations: usize,
}

impl fmt::Display for DesignResult {
    /// Key-value block, one `key = value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pi1 = {}", self.point.pi1)?;
        writeln!(f, "epsilon = {}", self.point.epsilon)?;
        writeln!(f, "g0 = {}", self.point.g0())?;
        writeln!(f, "alpha = {}", self.point.alpha)?;
        writeln!(f, "predicted_error = {}", self.predicted_error)?;
        writeln!(f, "predicted_usage = {}", self.predicted_usage)?;
        writeln!(f, "grid_evaluations = {}", self.grid_evaluations)
    }
}

/// Averaged predictions of one design point over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageMetrics {
    pub mean_abs_delta: f64,
    pub mean_usage: f64,
}

/// Evaluates design points, caching one tabulated error curve per point.
pub struct DesignEvaluator {
    grid_size: usize,
    curves: Mutex<HashMap<(u64, u64, u64), std::sync::Arc<TabulatedCurve>>>,
}

impl DesignEvaluator {
    pub const DEFAULT_GRID: usize = 128;

    pub fn new(grid_size: usize) -> Self {
        Self { grid_size, curves: Mutex::new(HashMap::new()) }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn curve(&self, point: &DesignPoint) -> Result<std::sync::Arc<TabulatedCurve>> {
        if let Some(c) = self.curves.lock().expect("cache lock").get(&point.key()) {
            return Ok(c.clone());
        }
        let c = std::sync::Arc::new(TabulatedCurve::build(&point.shape()?, self.grid_size));
        self.curves
            .lock()
            .expect("cache lock")
            .insert(point.key(), c.clone());
        Ok(c)
    }

    /// Mean `|Delta|` and mean `E_u[usage]` over the samples.
    pub fn average(&self, point: &DesignPoint, samples: &[MomentSample]) -> Result<AverageMetrics> {
        let curve = self.curve(point)?;
        average_with(curve.as_ref(), samples)
    }

    /// Error and usage at `mu_std = 0`.
    pub fn worst_case(&self, point: &DesignPoint) -> Result<(f64, f64)> {
        let p = dp_error_and_usage(
            &RandomWalkParams { mu_std: 0.0, shape: point.shape()? },
            self.grid_size,
        )?;
        Ok((p.error, p.expected_usage))
    }
}

impl Default for DesignEvaluator {
    fn default() -> Self {
        Self::new(Self::DEFAULT_GRID)
    }
}

/// Mean `|Delta|` and usage over samples for an arbitrary curve.
pub fn average_with<C: ErrorCurve + ?Sized>(curve: &C, samples: &[MomentSample]) -> Result<AverageMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("design samples"));
    }
    let mut d = 0.0;
    let mut u = 0.0;
    for s in samples {
        let r = delta_acceptance(curve, s.mu, s.sigma_l, s.n)?;
        d += r.delta.abs();
        u += r.expected_usage;
    }
    let k = samples.len() as f64;
    Ok(AverageMetrics { mean_abs_delta: d / k, mean_usage: u / k })
}

struct Scored {
    point: DesignPoint,
    error: f64,
    usage: f64,
}

fn better(a: &Scored, b: &Scored) -> bool {
    (a.usage, a.error, a.point.pi1) < (b.usage, b.error, b.point.pi1)
}

/// Picks the cheapest feasible point, confirming feasibility with `recheck`.
fn select<F>(mut scored: Vec<Scored>, delta_star: f64, evaluations: usize, recheck: F) -> Result<DesignResult>
where
    F: Fn(&DesignPoint) -> Result<f64>,
{
    let min_error = scored.iter().map(|s| s.error).fold(f64::INFINITY, f64::min);
    scored.retain(|s| s.error <= delta_star);
    scored.sort_by(|a, b| {
        if better(a, b) {
            std::cmp::Ordering::Less
        } else if better(b, a) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    for s in scored {
        if recheck(&s.point)? <= delta_star {
            return Ok(DesignResult {
                point: s.point,
                predicted_error: s.error,
                predicted_usage: s.usage,
                grid_evaluations: evaluations,
            });
        }
    }
    Err(Error::InfeasibleDesign { budget: delta_star, min_error })
}

fn check_budget(delta_star: f64) -> Result<()> {
    if !(delta_star >= 0.0) {
        return Err(invalid(format!("error budget {delta_star} must be nonnegative")));
    }
    Ok(())
}

/// Minimizes the average usage subject to mean `|Delta| <= delta_star`.
pub fn average_design(
    samples: &[MomentSample],
    delta_star: f64,
    grid: &DesignGrid,
    evaluator: &DesignEvaluator,
) -> Result<DesignResult> {
    check_budget(delta_star)?;
    grid.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("design samples"));
    }
    let points = grid.points();
    let scored = points
        .par_iter()
        .map(|p| {
            let m = evaluator.average(p, samples)?;
            Ok(Scored { point: *p, error: m.mean_abs_delta, usage: m.mean_usage })
        })
        .collect::<Result<Vec<_>>>()?;
    let fine = DesignEvaluator::new(2 * evaluator.grid_size);
    select(scored, delta_star, points.len(), |p| Ok(fine.average(p, samples)?.mean_abs_delta))
}

/// Minimizes the usage at `mu_std = 0` subject to the error there being at
/// most `delta_star`.
pub fn worst_case_design(delta_star: f64, grid: &DesignGrid, evaluator: &DesignEvaluator) -> Result<DesignResult> {
    check_budget(delta_star)?;
    grid.validate()?;
    let points = grid.points();
    let scored = points
        .par_iter()
        .map(|p| {
            let (error, usage) = evaluator.worst_case(p)?;
            Ok(Scored { point: *p, error, usage })
        })
        .collect::<Result<Vec<_>>>()?;
    let fine = DesignEvaluator::new(2 * evaluator.grid_size);
    select(scored, delta_star, points.len(), |p| Ok(fine.worst_case(p)?.0))
}

/// Reads a tab- or comma-separated `mu sigma_l N` table with a header row.
pub fn read_moment_samples<R: BufRead>(reader: R) -> Result<Vec<MomentSample>> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.split(['\t', ',']).next().map(str::trim) == Some("mu") {
                continue;
            }
        }
        let fields: Vec<&str> = line.split(['\t', ',']).map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields, found {}", lineno + 1, fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {s:?}: {e}", lineno + 1)));
        let sample = MomentSample {
            mu: num(fields[0])?,
            sigma_l: num(fields[1])?,
            n: fields[2]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, fields[2])))?,
        };
        if !(sample.sigma_l > 0.0) {
            return Err(Error::Parse(format!("line {}: sigma_l must be positive", lineno + 1)));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_moment_samples<W: Write>(mut w: W, samples: &[MomentSample]) -> std::io::Result<()> {
    writeln!(w, "mu\tsigma_l\tN")?;
    for s in samples {
        writeln!(w, "{:.16e}\t{:.16e}\t{}", s.mu, s.sigma_l, s.n)?;
    }
    Ok(())
}
