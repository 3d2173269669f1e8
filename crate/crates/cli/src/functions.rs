//! Test functions applied to traced parameters, named by a token that ground
//! truth files carry in their provenance (`functions=<spec>`).

use anyhow::{anyhow, bail, Context, Result};
use seqmh_core::models::{read_dataset, FeatureMatrix, LogisticRegression};
use std::fmt;
use std::path::{Path, PathBuf};

pub type Evaluator = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunctions {
    /// Every traced coordinate.
    Params,
    /// Coordinates `start..end`.
    Slice { start: usize, end: usize },
    /// Indicator of each of `bins` equal bins on `[lo, hi)` for coordinate 0.
    Bins { lo: f64, hi: f64, bins: usize },
    /// Logistic predictive probability on each row of a features file.
    Predictive { path: PathBuf },
}

impl fmt::Display for TestFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Params => write!(f, "params"),
            Self::Slice { start, end } => write!(f, "slice:{start}:{end}"),
            Self::Bins { lo, hi, bins } => write!(f, "bins:{lo:e}:{hi:e}:{bins}"),
            Self::Predictive { path } => write!(f, "predictive:{}", path.display()),
        }
    }
}

impl TestFunctions {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.splitn(2, ':');
        let head = parts.next().unwrap_or("");
        let rest = parts.next().unwrap_or("");
        let nums = |n: usize| -> Result<Vec<&str>> {
            let v: Vec<&str> = rest.split(':').collect();
            if v.len() != n {
                bail!("test functions '{spec}': expected {n} fields after '{head}:'");
            }
            Ok(v)
        };
        Ok(match head {
            "params" => Self::Params,
            "slice" => {
                let v = nums(2)?;
                let (start, end) = (v[0].parse()?, v[1].parse()?);
                if start >= end {
                    bail!("empty slice in '{spec}'");
                }
                Self::Slice { start, end }
            }
            "bins" => {
                let v = nums(3)?;
                let (lo, hi, bins): (f64, f64, usize) = (v[0].parse()?, v[1].parse()?, v[2].parse()?);
                if !(hi > lo) || bins == 0 {
                    bail!("bad bin range in '{spec}'");
                }
                Self::Bins { lo, hi, bins }
            }
            "predictive" if !rest.is_empty() => Self::Predictive { path: PathBuf::from(rest) },
            _ => bail!("unknown test functions '{spec}' (expected params, slice:A:B, bins:LO:HI:K or predictive:FILE)"),
        })
    }

    /// Reads the `functions=` token of a provenance line.
    pub fn from_provenance(provenance: &str) -> Result<Self> {
        let token = provenance
            .split_whitespace()
            .find_map(|t| t.strip_prefix("functions="))
            .ok_or_else(|| anyhow!("provenance has no 'functions=' token: '{provenance}'"))?;
        Self::parse(token)
    }

    /// Builds the evaluator; relative feature paths resolve against `base`.
    pub fn evaluator(&self, base: &Path) -> Result<Evaluator> {
        Ok(match self.clone() {
            Self::Params => Box::new(|p: &[f64]| p.to_vec()),
            Self::Slice { start, end } => Box::new(move |p: &[f64]| p[start.min(p.len())..end.min(p.len())].to_vec()),
            Self::Bins { lo, hi, bins } => Box::new(move |p: &[f64]| {
                let mut v = vec![0.0; bins];
                let x = p[0];
                if x >= lo && x < hi {
                    let b = (((x - lo) / (hi - lo)) * bins as f64) as usize;
                    v[b.min(bins - 1)] = 1.0;
                }
                v
            }),
            Self::Predictive { path } => {
                let features = load_features(&base.join(path))?;
                Box::new(move |theta: &[f64]| {
                    (0..features.rows()).map(|i| LogisticRegression::predict(features.row(i), theta)).collect()
                })
            }
        })
    }
}

/// Feature rows of a dataset file; the target column is ignored.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let data = read_dataset(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    Ok(data.features)
}
