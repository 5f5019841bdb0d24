//! Two-hidden-layer ReLU network with a flat parameter vector.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

use super::sgd::{sigmoid, softplus};
use super::{DesignMatrix, Hyper, Targets};

const BIAS_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpOutput {
    /// Identity output, half squared error.
    Identity,
    /// Single sigmoid output, cross-entropy on the logit.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub inputs: usize,
    pub hidden: (usize, usize),
    pub outputs: usize,
    pub output: MlpOutput,
    pub l2: f64,
}

impl MlpArch {
    fn layers(&self) -> [(usize, usize); 3] {
        [
            (self.inputs, self.hidden.0),
            (self.hidden.0, self.hidden.1),
            (self.hidden.1, self.outputs),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Offsets of `(weights, biases)` per layer; weights are `out × in` row-major.
    fn offsets(&self) -> [(usize, usize); 3] {
        let mut at = 0;
        self.layers().map(|(i, o)| {
            let w = at;
            at += i * o;
            let b = at;
            at += o;
            (w, b)
        })
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> [Vec<f64>; 4] {
        let mut acts = [x.to_vec(), Vec::new(), Vec::new(), Vec::new()];
        for (l, ((ni, no), (w, b))) in self.layers().into_iter().zip(self.offsets()).enumerate() {
            let out: Vec<f64> = (0..no)
                .map(|o| {
                    let z = p[b + o]
                        + p[w + o * ni..w + (o + 1) * ni]
                            .iter()
                            .zip(&acts[l])
                            .map(|(a, v)| a * v)
                            .sum::<f64>();
                    if l < 2 {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts[l + 1] = out;
        }
        acts
    }

    fn sample_loss(&self, out: &[f64], y: &[f64]) -> f64 {
        match self.output {
            MlpOutput::Identity => {
                0.5 * out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
            }
            MlpOutput::Sigmoid => softplus(out[0]) - y[0] * out[0],
        }
    }

    fn penalty(&self, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((ni, no), (w, _)) in self.layers().into_iter().zip(self.offsets()) {
            s += p[w..w + ni * no].iter().map(|v| v * v).sum::<f64>();
        }
        0.5 * self.l2 * s
    }

    fn loss(&self, p: &[f64], x: &DesignMatrix, y: &[Vec<f64>]) -> f64 {
        let data: f64 = x
            .rows()
            .zip(y)
            .map(|(r, t)| self.sample_loss(&self.forward(p, r)[3], t))
            .sum();
        data / y.len() as f64 + self.penalty(p)
    }
}

/// Mean loss plus L2 penalty over `batch`, and its gradient with respect to `params`.
pub fn mlp_gradients(
    arch: &MlpArch,
    params: &[f64],
    batch: &[(&[f64], &[f64])],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let layers = arch.layers();
    let offsets = arch.offsets();
    for (x, y) in batch {
        let acts = arch.forward(params, x);
        loss += arch.sample_loss(&acts[3], y);
        // Identity and sigmoid+BCE share the output delta `out − target`.
        let mut delta: Vec<f64> = match arch.output {
            MlpOutput::Identity => acts[3].iter().zip(*y).map(|(o, t)| o - t).collect(),
            MlpOutput::Sigmoid => vec![sigmoid(acts[3][0]) - y[0]],
        };
        for l in (0..3).rev() {
            let (ni, no) = layers[l];
            let (w, b) = offsets[l];
            for o in 0..no {
                grad[b + o] += delta[o];
                for i in 0..ni {
                    grad[w + o * ni + i] += delta[o] * acts[l][i];
                }
            }
            if l > 0 {
                delta = (0..ni)
                    .map(|i| {
                        if acts[l][i] <= 0.0 {
                            return 0.0;
                        }
                        (0..no).map(|o| params[w + o * ni + i] * delta[o]).sum()
                    })
                    .collect();
            }
        }
    }
    let m = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    for ((ni, no), (w, _)) in layers.into_iter().zip(offsets) {
        for j in w..w + ni * no {
            grad[j] += arch.l2 * params[j];
        }
    }
    (loss / m + arch.penalty(params), grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArch,
    pub params: Vec<f64>,
    /// Regression targets are standardised for training and mapped back on predict.
    pub target_means: Vec<f64>,
    pub target_sds: Vec<f64>,
    pub loss_history: Vec<f64>,
}

impl MlpParams {
    pub fn init(arch: MlpArch, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x006d_6c70);
        let mut params = vec![0.0; arch.n_params()];
        for ((ni, no), (w, b)) in arch.layers().into_iter().zip(arch.offsets()) {
            let he = Normal::new(0.0, (2.0 / ni as f64).sqrt()).expect("positive sd");
            for v in &mut params[w..w + ni * no] {
                *v = he.sample(&mut rng);
            }
            params[b..b + no].fill(BIAS_INIT);
        }
        MlpParams {
            arch,
            params,
            target_means: vec![0.0; arch.outputs],
            target_sds: vec![1.0; arch.outputs],
            loss_history: Vec::new(),
        }
    }

    pub fn fit(x: &DesignMatrix, y: &Targets, hyper: &Hyper, seed: u64) -> Result<Self> {
        let n = x.n_rows();
        let (output, k) = match y {
            Targets::Regression(v) => (MlpOutput::Identity, v[0].len()),
            Targets::Classes(_) => (MlpOutput::Sigmoid, 1),
        };
        let arch = MlpArch {
            inputs: x.n_cols(),
            hidden: hyper.hidden,
            outputs: k,
            output,
            l2: hyper.l2,
        };
        let mut model = MlpParams::init(arch, seed);
        let targets: Vec<Vec<f64>> = match y {
            Targets::Regression(v) => {
                for o in 0..k {
                    let m = v.iter().map(|r| r[o]).sum::<f64>() / n as f64;
                    let sd = (v.iter().map(|r| (r[o] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                    model.target_means[o] = m;
                    // A constant output trains on zeros and is predicted as its mean.
                    model.target_sds[o] = if sd > 1e-12 { sd } else { 0.0 };
                }
                v.iter()
                    .map(|r| {
                        (0..k)
                            .map(|o| match model.target_sds[o] {
                                0.0 => 0.0,
                                sd => (r[o] - model.target_means[o]) / sd,
                            })
                            .collect()
                    })
                    .collect()
            }
            Targets::Classes(c) => c.iter().map(|&b| vec![if b { 1.0 } else { 0.0 }]).collect(),
        };
        let batch = if hyper.batch_size == 0 {
            n
        } else {
            hyper.batch_size.min(n)
        };
        let mut rng = stream_rng(seed, 0x006d_6c7073);
        let mut order: Vec<usize> = (0..n).collect();
        let mut velocity = vec![0.0; model.params.len()];
        let mut prev = arch.loss(&model.params, x, &targets);
        for epoch in 0..hyper.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                let b: Vec<(&[f64], &[f64])> = chunk
                    .iter()
                    .map(|&i| (x.row(i), targets[i].as_slice()))
                    .collect();
                let (_, g) = mlp_gradients(&arch, &model.params, &b);
                for ((p, v), gi) in model.params.iter_mut().zip(&mut velocity).zip(&g) {
                    *v = hyper.momentum * *v - hyper.learning_rate * gi;
                    *p += *v;
                }
            }
            let loss = arch.loss(&model.params, x, &targets);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    model: "MLP",
                    epoch,
                    loss,
                });
            }
            model.loss_history.push(loss);
            if (prev - loss).abs() < hyper.tolerance {
                break;
            }
            prev = loss;
        }
        Ok(model)
    }

    pub fn predict_values(&self, x: &DesignMatrix) -> Vec<Vec<f64>> {
        x.rows()
            .map(|r| {
                let out = &self.arch.forward(&self.params, r)[3];
                out.iter()
                    .enumerate()
                    .map(|(o, v)| v * self.target_sds[o] + self.target_means[o])
                    .collect()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &DesignMatrix) -> Vec<f64> {
        x.rows()
            .map(|r| sigmoid(self.arch.forward(&self.params, r)[3][0]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_gradient(output: MlpOutput) {
        let arch = MlpArch {
            inputs: 3,
            hidden: (4, 3),
            outputs: if output == MlpOutput::Identity { 2 } else { 1 },
            output,
            l2: 0.01,
        };
        let p = MlpParams::init(arch, 5).params;
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.3 * i as f64 - 0.7, (i as f64).sin(), 0.2])
            .collect();
        let ys: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                if output == MlpOutput::Identity {
                    vec![i as f64 * 0.1, -0.5]
                } else {
                    vec![(i % 2) as f64]
                }
            })
            .collect();
        let batch: Vec<(&[f64], &[f64])> = xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
            .collect();
        let (_, g) = mlp_gradients(&arch, &p, &batch);
        let h = 1e-6;
        let mut fd = vec![0.0; p.len()];
        for j in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[j] += h;
            lo[j] -= h;
            fd[j] = (mlp_gradients(&arch, &hi, &batch).0 - mlp_gradients(&arch, &lo, &batch).0)
                / (2.0 * h);
        }
        let diff: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            diff / norm < 1e-4,
            "relative gradient error {}",
            diff / norm
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(MlpOutput::Identity);
        check_gradient(MlpOutput::Sigmoid);
    }

    #[test]
    fn full_batch_without_momentum_is_monotone() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 20.0 - 1.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[0]).collect();
        let x = DesignMatrix::from_rows(&rows, None).unwrap();
        let hyper = Hyper {
            momentum: 0.0,
            batch_size: 0,
            epochs: 200,
            tolerance: 0.0,
            learning_rate: 0.01,
            ..Hyper::default()
        };
        let m = MlpParams::fit(&x, &Targets::scalar(&y), &hyper, 2).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
