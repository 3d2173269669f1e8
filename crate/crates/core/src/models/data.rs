use super::FeatureMatrix;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// Features with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
}

/// Writes one tab-separated row per datapoint, target last, after a header row.
pub fn write_dataset<W: Write>(mut w: W, data: &Dataset) -> std::io::Result<()> {
    let d = data.features.cols();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(["target".to_string()]).collect();
    writeln!(w, "{}", header.join("\t"))?;
    for (i, t) in data.targets.iter().enumerate() {
        for v in data.features.row(i) {
            write!(w, "{v:.16e}\t")?;
        }
        writeln!(w, "{t:.16e}")?;
    }
    Ok(())
}

/// Reads rows of numbers separated by tabs or commas; the last column is the
/// target. A non-numeric first row is taken as a header.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(['\t', ',']).map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if width.is_none() && feats.is_empty() && targets.is_empty() => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
        };
        if vals.len() < 2 {
            return Err(Error::Parse(format!("line {}: need features and a target", lineno + 1)));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::Parse(format!("line {}: expected {w} columns, found {}", lineno + 1, vals.len())))
            }
            _ => {}
        }
        let (x, t) = vals.split_at(vals.len() - 1);
        feats.extend_from_slice(x);
        targets.push(t[0]);
    }
    let w = width.ok_or(Error::Empty("dataset"))?;
    let n = targets.len();
    Ok(Dataset { features: FeatureMatrix::new(feats, n, w - 1)?, targets })
}
