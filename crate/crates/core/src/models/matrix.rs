use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `n × d` input matrix with column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>], names: Option<Vec<String>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n == 0 || d == 0 {
            return Err(Error::InsufficientData(
                "design matrix needs n >= 1 and d >= 1".into(),
            ));
        }
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("design matrix contains non-finite values"));
            }
            data.extend_from_slice(r);
        }
        let names = names.unwrap_or_else(|| (0..d).map(|j| format!("x{j}")).collect());
        if names.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: names.len(),
            });
        }
        Ok(DesignMatrix { n, d, data, names })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.data[i * self.d + j] = *v;
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            n: idx.len(),
            d: self.d,
            data,
            names: self.names.clone(),
        }
    }

    /// Population standard deviation of every column.
    pub fn column_sds(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let col = self.column(j);
                let m = col.iter().sum::<f64>() / self.n as f64;
                (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.n as f64).sqrt()
            })
            .collect()
    }
}
