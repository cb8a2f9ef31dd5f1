//! Learning curves read back from run directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// One run's curve: values indexed by environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// First step at which the value reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.steps
            .iter()
            .zip(&self.values)
            .find(|(_, &v)| v >= threshold)
            .map(|(&s, _)| s)
    }
}

/// Which quantity of a run to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// Mean return of the periodic evaluations (`eval.csv`).
    EvalReturn,
    /// Success rate of the periodic evaluations (`eval.csv`).
    EvalSuccess,
    /// Return of every training episode (`metrics.csv`).
    Episodes,
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Format(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Format(format!("{}: no `{name}` column", path.display())))
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| CliError::Format(format!("{}:{line}: cannot parse `{field}`", path.display())))
}

/// Reads a curve from a run directory.
pub fn read_curve(run: &Path, source: Source) -> Result<Curve> {
    let (file, value_col) = match source {
        Source::EvalReturn => ("eval.csv", "mean_return"),
        Source::EvalSuccess => ("eval.csv", "success_rate"),
        Source::Episodes => ("metrics.csv", "return"),
    };
    let path = run.join(file);
    let (header, rows) = read_table(&path)?;
    let step_col = column(&path, &header, "env_step")?;
    let value_col = column(&path, &header, value_col)?;
    let mut curve = Curve {
        steps: Vec::new(),
        values: Vec::new(),
    };
    for (k, row) in rows.iter().enumerate() {
        let field = row.get(value_col).map_or("", String::as_str);
        if field.is_empty() {
            continue;
        }
        curve.steps.push(parse(&path, k + 2, &row[step_col])?);
        curve.values.push(parse(&path, k + 2, field)?);
    }
    Ok(curve)
}

/// Pointwise mean, minimum and maximum over aligned curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Aggregates curves that share their step grid exactly.
pub fn band(curves: &[Curve]) -> Result<Band> {
    let first = curves
        .first()
        .ok_or_else(|| CliError::Alignment("no curves to aggregate".into()))?;
    for (k, c) in curves.iter().enumerate().skip(1) {
        if c.steps != first.steps {
            return Err(CliError::Alignment(format!(
                "curve {k} has {} points, curve 0 has {}; step grids differ",
                c.len(),
                first.len()
            )));
        }
    }
    let n = curves.len() as f64;
    let at = |i: usize| curves.iter().map(move |c| c.values[i]);
    let len = first.len();
    Ok(Band {
        steps: first.steps.clone(),
        mean: (0..len).map(|i| at(i).sum::<f64>() / n).collect(),
        min: (0..len).map(|i| at(i).fold(f64::INFINITY, f64::min)).collect(),
        max: (0..len).map(|i| at(i).fold(f64::NEG_INFINITY, f64::max)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(steps: &[u64], values: &[f64]) -> Curve {
        Curve {
            steps: steps.to_vec(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn band_is_pointwise() {
        let cs = [
            curve(&[10, 20], &[1.0, 4.0]),
            curve(&[10, 20], &[3.0, 0.0]),
            curve(&[10, 20], &[2.0, 2.0]),
            curve(&[10, 20], &[-2.0, 6.0]),
        ];
        let b = band(&cs).unwrap();
        assert_eq!(b.mean, [1.0, 3.0]);
        assert_eq!(b.min, [-2.0, 0.0]);
        assert_eq!(b.max, [3.0, 6.0]);
    }

    #[test]
    fn misaligned_curves_are_rejected() {
        let cs = [curve(&[10, 20], &[1.0, 2.0]), curve(&[10], &[1.0])];
        assert!(matches!(band(&cs), Err(CliError::Alignment(_))));
        assert!(band(&[]).is_err());
    }

    #[test]
    fn reads_blank_fields_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("metrics.csv"),
            "env_step,grad_step,episode,return,length\n5,0,1,2.5,5\n10,1,1,,\n12,2,2,-1,7\n",
        )
        .unwrap();
        let c = read_curve(dir.path(), Source::Episodes).unwrap();
        assert_eq!(c, curve(&[5, 12], &[2.5, -1.0]));
        assert_eq!(c.first_reaching(0.0), Some(5));
        assert!(read_curve(dir.path(), Source::EvalReturn).is_err());
    }
}
