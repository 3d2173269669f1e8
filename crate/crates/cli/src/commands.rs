//! The four CLI commands, each returning the table it prints.

use crate::config::RunConfig;
use crate::experiments::{self, design_table};
use crate::functions::TestFunctions;
use crate::runner::load_trace_dir;
use crate::table::Table;
use anyhow::{bail, Context, Result};
use seqmh_core::design::{read_moment_samples, DesignGrid, DesignEvaluator};
use seqmh_core::risk::{estimate_risk, shared_cost_grid, DEFAULT_BURN_IN};
use seqmh_core::{ChainSeries, GroundTruth};
use std::io::BufReader;
use std::path::Path;

pub fn run(config: &Path) -> Result<Table> {
    experiments::run(&RunConfig::load(config)?)
}

/// Error and usage of the configured tests, by DP and by simulation.
pub fn analyze(config: &Path) -> Result<Table> {
    experiments::analysis_rows(&RunConfig::load(config)?)
}

pub fn design(samples: &Path, budgets: &[f64], grid_size: Option<usize>) -> Result<Table> {
    let f = std::fs::File::open(samples).with_context(|| format!("opening {}", samples.display()))?;
    let samples = read_moment_samples(BufReader::new(f)).with_context(|| format!("reading {}", samples.display()))?;
    design_table(&samples, budgets, &DesignGrid::default(), grid_size.unwrap_or(DesignEvaluator::DEFAULT_GRID))
}

/// Options of the `risk` command.
#[derive(Debug, Clone)]
pub struct RiskOptions {
    pub points: usize,
    pub burn_in: f64,
    /// Use the step index instead of cumulative evaluations as the cost axis.
    pub by_steps: bool,
}

impl Default for RiskOptions {
    fn default() -> Self {
        Self { points: 20, burn_in: DEFAULT_BURN_IN, by_steps: false }
    }
}

/// Risk curves of every ensemble in `trace_dir` against a ground-truth file.
/// Test functions come from the truth file's provenance; feature files it
/// names resolve against the truth file's directory.
pub fn risk(trace_dir: &Path, truth_path: &Path, opts: &RiskOptions) -> Result<Table> {
    let f = std::fs::File::open(truth_path).with_context(|| format!("opening {}", truth_path.display()))?;
    let truth = GroundTruth::read(BufReader::new(f)).with_context(|| format!("reading {}", truth_path.display()))?;
    let functions = TestFunctions::from_provenance(&truth.provenance)?;
    let base = truth_path.parent().unwrap_or(Path::new("."));
    let eval = functions.evaluator(base)?;
    let mut table = Table::new(&["ensemble", "chains", "cost", "risk", "bias_sq", "variance"]);
    for (label, traces) in load_trace_dir(trace_dir)? {
        let series: Vec<ChainSeries> = traces
            .iter()
            .map(|t| {
                if opts.by_steps {
                    let (cost, values) = t.records().iter().map(|r| (r.step, eval(&r.params))).unzip();
                    Ok(ChainSeries::new(cost, values)?)
                } else {
                    Ok(ChainSeries::from_trace(t, |p| eval(p))?)
                }
            })
            .collect::<Result<_>>()
            .with_context(|| format!("ensemble {label}"))?;
        let width = series[0].values.first().map_or(0, Vec::len);
        if width != truth.values.len() {
            bail!("ensemble {label}: {width} test function values per state but {} truth values", truth.values.len());
        }
        let grid = shared_cost_grid(&series, opts.points)?;
        let report = estimate_risk(&series, &truth.values, &grid, opts.burn_in)?;
        for r in &report.rows {
            table.row(vec![
                label.clone(),
                report.chains.to_string(),
                r.cost.to_string(),
                format!("{:.6e}", r.risk),
                format!("{:.6e}", r.bias_sq),
                format!("{:.6e}", r.variance),
            ]);
        }
    }
    Ok(table)
}
