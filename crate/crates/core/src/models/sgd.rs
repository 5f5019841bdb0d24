//! Linear classifiers trained by mini-batch gradient descent with momentum.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

use super::{DesignMatrix, Hyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginLoss {
    /// Cross-entropy on the logit (logistic regression).
    Logistic,
    /// Hinge loss with an L2 penalty of `1 / (C n)` (primal linear SVM).
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub loss: MarginLoss,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Full-data objective after every epoch.
    pub loss_history: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LinearClassifier {
    fn margin(&self, row: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(row)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    fn penalty(&self, hyper: &Hyper, n: usize) -> f64 {
        match self.loss {
            MarginLoss::Logistic => hyper.l2,
            MarginLoss::Hinge => 1.0 / (hyper.c * n as f64),
        }
    }

    fn objective(&self, x: &DesignMatrix, y: &[bool], lambda: f64) -> f64 {
        let data: f64 = x
            .rows()
            .zip(y)
            .map(|(r, &yi)| {
                let z = self.margin(r);
                match self.loss {
                    MarginLoss::Logistic => softplus(z) - if yi { z } else { 0.0 },
                    MarginLoss::Hinge => (1.0 - if yi { z } else { -z }).max(0.0),
                }
            })
            .sum::<f64>()
            / y.len() as f64;
        data + 0.5 * lambda * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn fit(
        x: &DesignMatrix,
        y: &[bool],
        loss: MarginLoss,
        hyper: &Hyper,
        seed: u64,
    ) -> Result<Self> {
        let (n, d) = (x.n_rows(), x.n_cols());
        let mut model = LinearClassifier {
            loss,
            weights: vec![0.0; d],
            bias: 0.0,
            loss_history: Vec::new(),
        };
        let lambda = model.penalty(hyper, n);
        let batch = if hyper.batch_size == 0 {
            n
        } else {
            hyper.batch_size.min(n)
        };
        let mut rng = stream_rng(seed, 0x006c_696e);
        let mut order: Vec<usize> = (0..n).collect();
        let (mut vw, mut vb) = (vec![0.0; d], 0.0);
        let mut prev = model.objective(x, y, lambda);
        for epoch in 0..hyper.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                let mut gw = vec![0.0; d];
                let mut gb = 0.0;
                for &i in chunk {
                    let r = x.row(i);
                    let z = model.margin(r);
                    let g = match loss {
                        MarginLoss::Logistic => sigmoid(z) - if y[i] { 1.0 } else { 0.0 },
                        MarginLoss::Hinge => {
                            let s = if y[i] { 1.0 } else { -1.0 };
                            if s * z < 1.0 {
                                -s
                            } else {
                                0.0
                            }
                        }
                    };
                    for (gj, v) in gw.iter_mut().zip(r) {
                        *gj += g * v;
                    }
                    gb += g;
                }
                let m = chunk.len() as f64;
                for j in 0..d {
                    let grad = gw[j] / m + lambda * model.weights[j];
                    vw[j] = hyper.momentum * vw[j] - hyper.learning_rate * grad;
                    model.weights[j] += vw[j];
                }
                vb = hyper.momentum * vb - hyper.learning_rate * gb / m;
                model.bias += vb;
            }
            let obj = model.objective(x, y, lambda);
            if !obj.is_finite() {
                return Err(Error::NonFiniteLoss {
                    model: match loss {
                        MarginLoss::Logistic => "LogisticRegression",
                        MarginLoss::Hinge => "LinearSVM",
                    },
                    epoch,
                    loss: obj,
                });
            }
            model.loss_history.push(obj);
            if (prev - obj).abs() < hyper.tolerance {
                break;
            }
            prev = obj;
        }
        Ok(model)
    }

    /// Logistic: `P(y = 1)`. SVM: the sigmoid of the margin, a monotone score in `[0, 1]`.
    pub fn predict_proba(&self, x: &DesignMatrix) -> Vec<f64> {
        x.rows().map(|r| sigmoid(self.margin(r))).collect()
    }
}
