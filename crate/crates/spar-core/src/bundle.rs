//! Dataset bundle directories: `X.csv`, `Y.csv`, optional `W.csv` (plain
//! headerless CSV), `meta.json`, and optional `truth.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dataset, GroundTruth};
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthJson {
    beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_eps_x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<Vec<f64>>>,
    q: usize,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::EmptyMatrix("empty nested array".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged nested array".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            Error::InvalidConfig(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        rows.push(row);
    }
    rows_to_matrix(&rows)
}

/// Writes a dataset (and optional ground truth) as a bundle directory.
pub fn write_bundle(
    dir: &Path,
    d: &Dataset,
    truth: Option<&GroundTruth>,
    meta: &BundleMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("X.csv"), &d.x)?;
    let ym = DMatrix::from_column_slice(d.y.len(), 1, d.y.as_slice());
    write_matrix_csv(&dir.join("Y.csv"), &ym)?;
    if let Some(w) = &d.w {
        write_matrix_csv(&dir.join("W.csv"), w)?;
    }
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    if let Some(t) = truth {
        let tj = TruthJson {
            beta: t.beta.as_slice().to_vec(),
            alpha: t.alpha.as_ref().map(matrix_to_rows),
            delta: t.delta.as_ref().map(|v| v.as_slice().to_vec()),
            eta: t.eta.as_ref().map(matrix_to_rows),
            lambda_w: t.lambda_w.as_ref().map(|v| v.as_slice().to_vec()),
            sigma_eps_x: t.sigma_eps_x.as_ref().map(matrix_to_rows),
            u: t.u.as_ref().map(matrix_to_rows),
            q: t.q,
        };
        fs::write(dir.join("truth.json"), serde_json::to_string(&tj)?)?;
    }
    Ok(())
}

/// Reads a bundle directory back into a dataset, meta, and optional truth.
pub fn read_bundle(dir: &Path) -> Result<(Dataset, BundleMeta, Option<GroundTruth>)> {
    let x = read_matrix_csv(&dir.join("X.csv"))?;
    let ym = read_matrix_csv(&dir.join("Y.csv"))?;
    if ym.ncols() != 1 {
        return Err(Error::DimensionMismatch("Y.csv must have one column".into()));
    }
    let y = DVector::from_column_slice(ym.as_slice());
    let w_path = dir.join("W.csv");
    let w = if w_path.exists() {
        Some(read_matrix_csv(&w_path)?)
    } else {
        None
    };
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let truth_path = dir.join("truth.json");
    let truth = if truth_path.exists() {
        let tj: TruthJson = serde_json::from_str(&fs::read_to_string(&truth_path)?)?;
        let gt = GroundTruth {
            beta: DVector::from_vec(tj.beta),
            alpha: tj.alpha.as_deref().map(rows_to_matrix).transpose()?,
            delta: tj.delta.map(DVector::from_vec),
            eta: tj.eta.as_deref().map(rows_to_matrix).transpose()?,
            lambda_w: tj.lambda_w.map(DVector::from_vec),
            sigma_eps_x: tj.sigma_eps_x.as_deref().map(rows_to_matrix).transpose()?,
            u: tj.u.as_deref().map(rows_to_matrix).transpose()?,
            q: tj.q,
        };
        Some(gt)
    } else {
        None
    };
    let d = Dataset::new(x, y, w)?;
    Ok((d, meta, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn bundle_round_trip() {
        let dir = tempdir().unwrap();
        let d = Dataset {
            x: DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.5, -4.25, 0.1, 1e-7]),
            y: DVector::from_column_slice(&[0.5, -1.5, 2.0]),
            w: Some(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -1.0])),
        };
        let truth = GroundTruth {
            beta: DVector::from_column_slice(&[1.0, 0.0]),
            alpha: Some(DMatrix::from_row_slice(2, 1, &[0.3, -0.7])),
            delta: Some(DVector::from_column_slice(&[1.0])),
            eta: None,
            lambda_w: None,
            sigma_eps_x: Some(DMatrix::identity(2, 2)),
            u: None,
            q: 1,
        };
        let meta = BundleMeta {
            n: 3,
            p: 2,
            r: 1,
            seed: 7,
            generator: "test".into(),
            params: serde_json::json!({"s": 1}),
        };
        write_bundle(dir.path(), &d, Some(&truth), &meta).unwrap();
        let (d2, meta2, truth2) = read_bundle(dir.path()).unwrap();
        assert_eq!(d, d2);
        assert_eq!(meta2.seed, 7);
        let t2 = truth2.unwrap();
        assert_eq!(t2.beta, truth.beta);
        assert_eq!(t2.alpha.unwrap(), truth.alpha.unwrap());
        assert_eq!(t2.q, 1);
    }

    #[test]
    fn fmt_round_trips_exactly() {
        for &v in &[0.1, -3.7e-12, 123456.789, f64::MIN_POSITIVE, 2.0 / 3.0] {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}
