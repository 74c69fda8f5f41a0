//! CSV exchange format: header `y,w,x0..x{d-1}[,mu0,mu1,pi,cate]`.
//!
//! Reals are written with 17 significant digits, so a write/read cycle is
//! bit-exact. An unknown true propensity is an empty `pi` cell.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::dataset::{ObservationalDataset, Oracle};
use crate::error::{Error, Result};

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Where each role lives in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    /// Explicit covariate columns; when empty, every column named
    /// `covariate_prefix` followed by digits, in file order.
    pub covariates: Vec<String>,
    pub covariate_prefix: String,
    /// Oracle columns, read when present in the file.
    pub mu0: String,
    pub mu1: String,
    pub pi: String,
    pub cate: String,
    /// Fail instead of skipping the oracle when `mu0`/`mu1` are absent.
    pub require_oracle: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            outcome: "y".into(),
            treatment: "w".into(),
            covariates: vec![],
            covariate_prefix: "x".into(),
            mu0: "mu0".into(),
            mu1: "mu1".into(),
            pi: "pi".into(),
            cate: "cate".into(),
            require_oracle: false,
        }
    }
}

/// The exact header written by [`write_csv`].
pub fn csv_header(d: usize, with_oracle: bool) -> Vec<String> {
    let mut h = vec!["y".to_owned(), "w".to_owned()];
    h.extend((0..d).map(|j| format!("x{j}")));
    if with_oracle {
        h.extend(["mu0", "mu1", "pi", "cate"].map(String::from));
    }
    h
}

pub fn write_csv<W: Write>(data: &ObservationalDataset, out: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(csv_header(data.d(), data.oracle().is_some()))?;
    let x = data.x();
    let mut rec = Vec::with_capacity(data.d() + 6);
    for i in 0..data.n() {
        rec.clear();
        rec.push(fmt_f64(data.y()[i]));
        rec.push(data.w()[i].to_string());
        rec.extend(x.row(i).iter().map(|&v| fmt_f64(v)));
        if let Some(o) = data.oracle() {
            rec.push(fmt_f64(o.mu0[i]));
            rec.push(fmt_f64(o.mu1[i]));
            rec.push(o.pi.as_ref().map(|p| fmt_f64(p[i])).unwrap_or_default());
            rec.push(fmt_f64(o.tau[i]));
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn export_csv(data: &ObservationalDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Loads a dataset; rows in errors are 1-based data rows.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::MissingColumn {
            path: path.to_owned(),
            column: name.to_owned(),
        })
    };
    let yc = need(&schema.outcome)?;
    let wc = need(&schema.treatment)?;
    let xcols: Vec<usize> = if schema.covariates.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(schema.covariate_prefix.as_str())
                    .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            })
            .map(|(i, _)| i)
            .collect()
    } else {
        schema.covariates.iter().map(|c| need(c)).collect::<Result<_>>()?
    };
    if xcols.is_empty() {
        return Err(Error::MissingColumn {
            path: path.to_owned(),
            column: format!("{}0", schema.covariate_prefix),
        });
    }
    let oracle_cols = match (find(&schema.mu0), find(&schema.mu1)) {
        (Some(a), Some(b)) => Some((a, b, find(&schema.pi), find(&schema.cate))),
        _ if schema.require_oracle => {
            need(&schema.mu0)?;
            need(&schema.mu1)?;
            unreachable!()
        }
        _ => None,
    };

    let parse_err = |row: usize, col: usize, message: String| Error::Parse {
        path: path.to_owned(),
        row,
        column: header[col].clone(),
        message,
    };
    let real = |rec: &csv::StringRecord, row: usize, col: usize| -> Result<f64> {
        let s = rec.get(col).unwrap_or("");
        let v: f64 = s.parse().map_err(|_| parse_err(row, col, format!("`{s}` is not a number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(parse_err(row, col, format!("`{s}` is not finite")))
        }
    };

    let (mut y, mut w, mut x) = (Vec::new(), Vec::new(), Vec::new());
    let (mut mu0, mut mu1, mut pi, mut cate) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut pi_missing = false;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        y.push(real(&rec, row, yc)?);
        let ws = rec.get(wc).unwrap_or("");
        let wv: f64 = ws.parse().map_err(|_| parse_err(row, wc, format!("`{ws}` is not a number")))?;
        if wv == 0.0 {
            w.push(0u8);
        } else if wv == 1.0 {
            w.push(1u8);
        } else {
            return Err(parse_err(row, wc, format!("treatment must be 0 or 1, got `{ws}`")));
        }
        for &c in &xcols {
            x.push(real(&rec, row, c)?);
        }
        if let Some((a, b, p, t)) = oracle_cols {
            mu0.push(real(&rec, row, a)?);
            mu1.push(real(&rec, row, b)?);
            if let Some(p) = p {
                if rec.get(p).unwrap_or("").is_empty() {
                    pi_missing = true;
                } else {
                    pi.push(real(&rec, row, p)?);
                }
            }
            if let Some(t) = t {
                cate.push(real(&rec, row, t)?);
            }
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, xcols.len()), x).map_err(|e| Error::Dataset(e.to_string()))?;
    let oracle = oracle_cols.map(|(_, _, p, t)| {
        let mu0 = Array1::from(mu0);
        let mu1 = Array1::from(mu1);
        let tau = if t.is_some() { Array1::from(cate) } else { &mu1 - &mu0 };
        Oracle {
            pi: (p.is_some() && !pi_missing && pi.len() == n).then(|| Array1::from(pi)),
            mu0,
            mu1,
            tau,
        }
    });
    let columns = xcols.iter().map(|&c| header[c].clone()).collect();
    ObservationalDataset::new(x, w, Array1::from(y), oracle)?
        .with_columns(columns)
        .map(|d| d.with_provenance(path.display().to_string()))
}
