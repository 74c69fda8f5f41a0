use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oracle quantities known only for simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
    /// True propensity score; unavailable for semi-synthetic benchmarks.
    pub pi: Option<Array1<f64>>,
    pub tau: Array1<f64>,
}

impl Oracle {
    /// Builds the oracle with `tau = mu1 - mu0`.
    pub fn new(mu0: Array1<f64>, mu1: Array1<f64>, pi: Option<Array1<f64>>) -> Self {
        let tau = &mu1 - &mu0;
        Oracle { mu0, mu1, pi, tau }
    }

    fn select(&self, rows: &[usize]) -> Oracle {
        Oracle {
            mu0: self.mu0.select(Axis(0), rows),
            mu1: self.mu1.select(Axis(0), rows),
            pi: self.pi.as_ref().map(|p| p.select(Axis(0), rows)),
            tau: self.tau.select(Axis(0), rows),
        }
    }
}

/// Observed sample `(Y, W, X)` with optional oracle fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalDataset {
    x: Array2<f64>,
    w: Vec<u8>,
    y: Array1<f64>,
    oracle: Option<Oracle>,
    columns: Vec<String>,
    provenance: String,
}

impl ObservationalDataset {
    /// Validates and assembles a dataset. Covariate columns are named
    /// `x0..x{d-1}`.
    pub fn new(
        x: Array2<f64>,
        w: Vec<u8>,
        y: Array1<f64>,
        oracle: Option<Oracle>,
    ) -> Result<Self> {
        let columns = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        let ds = ObservationalDataset {
            x,
            w,
            y,
            oracle,
            columns,
            provenance: String::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        if columns.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "covariate column names",
                expected: self.x.ncols(),
                actual: columns.len(),
            });
        }
        self.columns = columns;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "treatment length",
                expected: n,
                actual: self.w.len(),
            });
        }
        if self.y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "outcome length",
                expected: n,
                actual: self.y.len(),
            });
        }
        if let Some(i) = self.w.iter().position(|&w| w > 1) {
            return Err(Error::Dataset(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                self.w[i]
            )));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("outcome at row {i} is not finite")));
        }
        if let Some(((i, j), _)) = self.x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "covariate x{j} at row {i} is not finite"
            )));
        }
        if let Some(o) = &self.oracle {
            for (name, col) in [("mu0", &o.mu0), ("mu1", &o.mu1), ("cate", &o.tau)] {
                if col.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "oracle column length",
                        expected: n,
                        actual: col.len(),
                    });
                }
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Dataset(format!("oracle {name} has non-finite values")));
                }
            }
            if let Some(pi) = &o.pi {
                if pi.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "oracle column length",
                        expected: n,
                        actual: pi.len(),
                    });
                }
                if let Some(i) = pi.iter().position(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Dataset(format!(
                        "oracle propensity at row {i} is outside [0, 1]"
                    )));
                }
            }
            for i in 0..n {
                let expect = o.mu1[i] - o.mu0[i];
                if (o.tau[i] - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                    return Err(Error::Dataset(format!(
                        "oracle cate at row {i} differs from mu1 - mu0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn oracle(&self) -> Option<&Oracle> {
        self.oracle.as_ref()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Treatment indicator as `0.0` / `1.0`.
    pub fn w_f64(&self) -> Array1<f64> {
        self.w.iter().map(|&w| f64::from(w)).collect()
    }

    pub fn treated_fraction(&self) -> f64 {
        if self.w.is_empty() {
            return 0.0;
        }
        self.w.iter().filter(|&&w| w == 1).count() as f64 / self.w.len() as f64
    }

    /// Indices of rows with treatment `group`.
    pub fn group_rows(&self, group: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.w[i] == group).collect()
    }

    /// Rows `rows` in the given order, keeping names and provenance.
    pub fn subset(&self, rows: &[usize]) -> ObservationalDataset {
        ObservationalDataset {
            x: self.x.select(Axis(0), rows),
            w: rows.iter().map(|&i| self.w[i]).collect(),
            y: self.y.select(Axis(0), rows),
            oracle: self.oracle.as_ref().map(|o| o.select(rows)),
            columns: self.columns.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Replaces outcome and oracle fields, revalidating.
    pub(crate) fn with_outcomes(&self, y: Array1<f64>, oracle: Option<Oracle>) -> Result<Self> {
        let ds = ObservationalDataset {
            x: self.x.clone(),
            w: self.w.clone(),
            y,
            oracle,
            columns: self.columns.clone(),
            provenance: self.provenance.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Requires both treatment groups to be present.
    pub fn require_both_groups(&self, context: &str) -> Result<()> {
        for g in [0u8, 1] {
            if !self.w.contains(&g) {
                return Err(Error::EmptyGroup {
                    group: g,
                    context: if context.is_empty() {
                        String::new()
                    } else {
                        format!(" ({context})")
                    },
                });
            }
        }
        Ok(())
    }
}
