//! Benchmark results: per-run records, aggregates, and their files.
//!
//! The CSV form has one row per record. Its first column, `record`, is
//! `detail` or `aggregate`. The remaining columns are `learner, architecture,
//! setting, n, seed, rmse_in, rmse_out, wall_seconds, rmse_in_se,
//! rmse_out_se, replicates`. Aggregate rows hold means in `rmse_in` and
//! `rmse_out` and leave `seed` and `wall_seconds` empty.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRecord {
    pub learner: String,
    pub architecture: String,
    pub setting: String,
    pub n: usize,
    pub seed: u64,
    pub rmse_in: f64,
    pub rmse_out: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub learner: String,
    pub architecture: String,
    pub setting: String,
    pub n: usize,
    pub rmse_in: f64,
    pub rmse_out: f64,
    /// Sample standard deviation over replicates divided by sqrt(replicates);
    /// absent with fewer than two replicates.
    pub rmse_in_se: Option<f64>,
    pub rmse_out_se: Option<f64>,
    pub replicates: usize,
}

impl AggregateRecord {
    fn key(&self) -> (&str, &str, &str, usize) {
        (&self.learner, &self.architecture, &self.setting, self.n)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub details: Vec<DetailRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

impl BenchmarkReport {
    /// A report whose aggregates are computed from `details`.
    pub fn from_details(details: Vec<DetailRecord>) -> Self {
        let aggregates = aggregate(&details);
        BenchmarkReport { details, aggregates }
    }

    pub fn find(&self, learner: &str, architecture: &str, setting: &str, n: usize) -> Option<&AggregateRecord> {
        self.aggregates.iter().find(|a| a.key() == (learner, architecture, setting, n))
    }
}

fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some((var / k).sqrt()))
}

/// One aggregate per (learner, architecture, setting, n), in order of first appearance.
pub fn aggregate(details: &[DetailRecord]) -> Vec<AggregateRecord> {
    let mut keys: Vec<(&str, &str, &str, usize)> = Vec::new();
    for d in details {
        let k = (d.learner.as_str(), d.architecture.as_str(), d.setting.as_str(), d.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(learner, architecture, setting, n)| {
            let group: Vec<&DetailRecord> = details
                .iter()
                .filter(|d| d.learner == learner && d.architecture == architecture && d.setting == setting && d.n == n)
                .collect();
            let ins: Vec<f64> = group.iter().map(|d| d.rmse_in).collect();
            let outs: Vec<f64> = group.iter().map(|d| d.rmse_out).collect();
            let (rmse_in, rmse_in_se) = mean_se(&ins);
            let (rmse_out, rmse_out_se) = mean_se(&outs);
            AggregateRecord {
                learner: learner.to_owned(),
                architecture: architecture.to_owned(),
                setting: setting.to_owned(),
                n,
                rmse_in,
                rmse_out,
                rmse_in_se,
                rmse_out_se,
                replicates: group.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultFormat {
    Csv,
    Json,
}

impl ResultFormat {
    /// From a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ResultFormat::Json,
            _ => ResultFormat::Csv,
        }
    }
}

impl FromStr for ResultFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            other => Err(Error::Config(format!("unknown result format `{other}`"))),
        }
    }
}

const HEADER: [&str; 12] = [
    "record",
    "learner",
    "architecture",
    "setting",
    "n",
    "seed",
    "rmse_in",
    "rmse_out",
    "wall_seconds",
    "rmse_in_se",
    "rmse_out_se",
    "replicates",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Report as CSV text: details first, then aggregates.
pub fn to_csv_string(report: &BenchmarkReport) -> String {
    let mut s = HEADER.join(",");
    s.push('\n');
    let mut wr = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for d in &report.details {
        wr.write_record([
            "detail".to_owned(),
            d.learner.clone(),
            d.architecture.clone(),
            d.setting.clone(),
            d.n.to_string(),
            d.seed.to_string(),
            d.rmse_in.to_string(),
            d.rmse_out.to_string(),
            opt(d.wall_seconds),
            String::new(),
            String::new(),
            String::new(),
        ])
        .expect("writing to memory");
    }
    for a in &report.aggregates {
        wr.write_record([
            "aggregate".to_owned(),
            a.learner.clone(),
            a.architecture.clone(),
            a.setting.clone(),
            a.n.to_string(),
            String::new(),
            a.rmse_in.to_string(),
            a.rmse_out.to_string(),
            String::new(),
            opt(a.rmse_in_se),
            opt(a.rmse_out_se),
            a.replicates.to_string(),
        ])
        .expect("writing to memory");
    }
    s.push_str(std::str::from_utf8(&wr.into_inner().expect("memory writer")).expect("utf-8"));
    s
}

pub fn save_results(report: &BenchmarkReport, path: &Path, format: ResultFormat) -> Result<()> {
    let text = match format {
        ResultFormat::Csv => to_csv_string(report),
        ResultFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_results(path: &Path, format: ResultFormat) -> Result<BenchmarkReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ResultFormat::Json => Ok(serde_json::from_str(&text)?),
        ResultFormat::Csv => parse_csv(path, &text),
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<BenchmarkReport> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != HEADER {
        return Err(Error::Parse {
            path: path.to_owned(),
            row: 0,
            column: "header".into(),
            message: format!("expected `{}`", HEADER.join(",")),
        });
    }
    let mut report = BenchmarkReport::default();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let err = |c: usize, message: String| Error::Parse {
            path: path.to_owned(),
            row,
            column: HEADER[c].to_owned(),
            message,
        };
        let num = |c: usize| -> Result<f64> { field(c).parse().map_err(|_| err(c, format!("`{}` is not a number", field(c)))) };
        let int = |c: usize| -> Result<u64> { field(c).parse().map_err(|_| err(c, format!("`{}` is not an integer", field(c)))) };
        let maybe = |c: usize| -> Result<Option<f64>> { if field(c).is_empty() { Ok(None) } else { num(c).map(Some) } };
        match field(0) {
            "detail" => report.details.push(DetailRecord {
                learner: field(1).to_owned(),
                architecture: field(2).to_owned(),
                setting: field(3).to_owned(),
                n: int(4)? as usize,
                seed: int(5)?,
                rmse_in: num(6)?,
                rmse_out: num(7)?,
                wall_seconds: maybe(8)?,
            }),
            "aggregate" => report.aggregates.push(AggregateRecord {
                learner: field(1).to_owned(),
                architecture: field(2).to_owned(),
                setting: field(3).to_owned(),
                n: int(4)? as usize,
                rmse_in: num(6)?,
                rmse_out: num(7)?,
                rmse_in_se: maybe(9)?,
                rmse_out_se: maybe(10)?,
                replicates: int(11)? as usize,
            }),
            other => return Err(err(0, format!("unknown record kind `{other}`"))),
        }
    }
    Ok(report)
}

fn cell(mean: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{mean:.2} ({se:.2})"),
        None => format!("{mean:.2}"),
    }
}

/// Learner rows with in-sample and hold-out "mean (se)" columns, one block
/// per (setting, n).
pub fn table(report: &BenchmarkReport) -> String {
    let mut blocks: Vec<(&str, usize)> = Vec::new();
    for a in &report.aggregates {
        if !blocks.contains(&(a.setting.as_str(), a.n)) {
            blocks.push((&a.setting, a.n));
        }
    }
    let mut out = String::new();
    for (setting, n) in blocks {
        let rows: Vec<&AggregateRecord> = report.aggregates.iter().filter(|a| a.setting == setting && a.n == n).collect();
        let reps = rows.iter().map(|a| a.replicates).max().unwrap_or(0);
        let _ = writeln!(out, "setting {setting}, n = {n}: RMSE averaged over {reps} runs, standard error in parentheses");
        let labels: Vec<String> = rows.iter().map(|a| format!("{} + {}", a.learner, a.architecture)).collect();
        let w = labels.iter().map(String::len).max().unwrap_or(0).max("learner".len());
        let _ = writeln!(out, "{:<w$}  {:>16}  {:>16}", "learner", "in-sample", "hold-out");
        for (a, label) in rows.iter().zip(&labels) {
            let _ = writeln!(
                out,
                "{label:<w$}  {:>16}  {:>16}",
                cell(a.rmse_in, a.rmse_in_se),
                cell(a.rmse_out, a.rmse_out_se)
            );
        }
        out.push('\n');
    }
    out
}
