use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::DesignMatrix;

/// Relative ridge added when the normal equations are (numerically) singular.
const RIDGE_JITTER: f64 = 1e-8;
/// Pivot ratio of the Cholesky factor below which the system counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Ordinary least squares with an intercept, one coefficient column per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegression {
    /// `(d + 1) × k`, row-major; row 0 is the intercept.
    pub coefficients: Vec<f64>,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub jittered: bool,
}

fn factor(xtx: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(xtx.clone())?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v * v));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    (min > SINGULAR_RATIO * max).then_some(chol)
}

impl LinearRegression {
    pub fn fit(x: &DesignMatrix, y: &[Vec<f64>]) -> Result<Self> {
        let (n, d, k) = (x.n_rows(), x.n_cols(), y[0].len());
        let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
        let b = DMatrix::from_fn(n, k, |i, j| y[i][j]);
        let xtx = a.transpose() * &a;
        let xty = a.transpose() * &b;
        let (chol, jittered) = match factor(&xtx) {
            Some(c) => (c, false),
            None => {
                let scale = xtx.diagonal().max().max(1.0);
                let mut reg = xtx.clone();
                for i in 0..=d {
                    reg[(i, i)] += RIDGE_JITTER * scale;
                }
                let c = Cholesky::new(reg)
                    .ok_or_else(|| Error::invalid("normal equations are not positive definite"))?;
                (c, true)
            }
        };
        let beta = chol.solve(&xty);
        let mut coefficients = Vec::with_capacity((d + 1) * k);
        for i in 0..=d {
            for j in 0..k {
                coefficients.push(beta[(i, j)]);
            }
        }
        Ok(LinearRegression {
            coefficients,
            n_inputs: d,
            n_outputs: k,
            jittered,
        })
    }

    pub fn coefficient(&self, input: Option<usize>, output: usize) -> f64 {
        let row = input.map_or(0, |j| j + 1);
        self.coefficients[row * self.n_outputs + output]
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        (0..self.n_outputs)
            .map(|o| {
                let mut acc = self.coefficient(None, o);
                for (j, v) in row.iter().enumerate() {
                    acc += self.coefficient(Some(j), o) * v;
                }
                acc
            })
            .collect()
    }

    pub fn predict(&self, x: &DesignMatrix) -> Vec<Vec<f64>> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 0.37, ((i * 7) % 11) as f64])
            .collect();
        let y: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![2.0 * r[0] - 3.0 * r[1] + 1.0])
            .collect();
        let x = DesignMatrix::from_rows(&rows, None).unwrap();
        let m = LinearRegression::fit(&x, &y).unwrap();
        assert!((m.coefficient(None, 0) - 1.0).abs() < 1e-6);
        assert!((m.coefficient(Some(0), 0) - 2.0).abs() < 1e-6);
        assert!((m.coefficient(Some(1), 0) + 3.0).abs() < 1e-6);
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p[0] - t[0]).abs() < 1e-6);
        }
        assert!(!m.jittered);
    }

    #[test]
    fn collinear_columns_are_jittered() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + 1.0]).collect();
        let x = DesignMatrix::from_rows(&rows, None).unwrap();
        let m = LinearRegression::fit(&x, &y).unwrap();
        assert!(m.jittered);
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p[0] - t[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn multi_output_matches_single_output_fits() {
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64])
            .collect();
        let y: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    r[0] + 0.1 * i as f64 % 3.0,
                    r[1] * 2.0 - r[2],
                    (i * i) as f64 * 0.01,
                ]
            })
            .collect();
        let x = DesignMatrix::from_rows(&rows, None).unwrap();
        let joint = LinearRegression::fit(&x, &y).unwrap().predict(&x);
        for o in 0..3 {
            let col: Vec<Vec<f64>> = y.iter().map(|r| vec![r[o]]).collect();
            let single = LinearRegression::fit(&x, &col).unwrap().predict(&x);
            for (a, b) in joint.iter().zip(&single) {
                assert_eq!(a[o], b[0]);
            }
        }
    }
}
