use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{stream_id, stream_rng};

use super::{DesignMatrix, Hyper, Targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Mean target per output; for classification the positive fraction.
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub depth: usize,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub classification: bool,
    pub n_outputs: usize,
    /// Mean impurity decrease per input, normalised to sum to one.
    pub impurity_importance: Vec<f64>,
}

/// Targets flattened to `n × k` with booleans as 0/1.
struct Flat {
    y: Vec<f64>,
    k: usize,
    gini: bool,
}

impl Flat {
    fn value(&self, i: usize) -> &[f64] {
        &self.y[i * self.k..(i + 1) * self.k]
    }

    /// Weighted impurity from running sums: `n·gini` or the SSE summed over outputs.
    fn impurity(&self, n: f64, sum: &[f64], sumsq: &[f64]) -> f64 {
        if self.gini {
            let p = sum[0] / n;
            2.0 * n * p * (1.0 - p)
        } else {
            sum.iter()
                .zip(sumsq)
                .map(|(s, q)| (q - s * s / n).max(0.0))
                .sum()
        }
    }
}

struct Builder<'a> {
    x: &'a DesignMatrix,
    y: &'a Flat,
    mtry: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    split_at: usize,
    order: Vec<usize>,
}

impl Builder<'_> {
    fn sums(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut s = vec![0.0; self.y.k];
        let mut q = vec![0.0; self.y.k];
        for &i in idx {
            for (o, v) in self.y.value(i).iter().enumerate() {
                s[o] += v;
                q[o] += v * v;
            }
        }
        (s, q)
    }

    fn best_split(&self, idx: &[usize], parent: f64, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let d = self.x.n_cols();
        let mut features = sample(rng, d, self.mtry).into_vec();
        // Ascending scan so that equal gains keep the lowest column.
        features.sort_unstable();
        let k = self.y.k;
        let (total_s, total_q) = self.sums(idx);
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        for &f in &features {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.x
                    .get(a, f)
                    .total_cmp(&self.x.get(b, f))
                    .then(a.cmp(&b))
            });
            let mut ls = vec![0.0; k];
            let mut lq = vec![0.0; k];
            let mut rs = vec![0.0; k];
            let mut rq = vec![0.0; k];
            let mut found: Option<(usize, f64)> = None;
            for pos in 0..n - 1 {
                for (o, v) in self.y.value(order[pos]).iter().enumerate() {
                    ls[o] += v;
                    lq[o] += v * v;
                }
                let (a, b) = (self.x.get(order[pos], f), self.x.get(order[pos + 1], f));
                if a == b {
                    continue;
                }
                for o in 0..k {
                    rs[o] = total_s[o] - ls[o];
                    rq[o] = total_q[o] - lq[o];
                }
                let nl = (pos + 1) as f64;
                let child =
                    self.y.impurity(nl, &ls, &lq) + self.y.impurity(n as f64 - nl, &rs, &rq);
                let gain = parent - child;
                if found.is_none_or(|(_, g)| gain > g) {
                    found = Some((pos, gain));
                }
            }
            if let Some((pos, gain)) = found {
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (a, b) = (self.x.get(order[pos], f), self.x.get(order[pos + 1], f));
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                        split_at: pos + 1,
                        order,
                    });
                }
            }
        }
        best
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        let (s, _) = self.sums(idx);
        Node::Leaf {
            value: s.iter().map(|v| v / idx.len() as f64).collect(),
        }
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(self.leaf(idx));
        self.depth = self.depth.max(depth);
        if depth >= self.max_depth || idx.len() < 2 {
            return id;
        }
        let (s, q) = self.sums(idx);
        let parent = self.y.impurity(idx.len() as f64, &s, &q);
        if parent <= 1e-12 {
            return id;
        }
        let Some(split) = self.best_split(idx, parent, rng) else {
            return id;
        };
        self.importance[split.feature] += split.gain;
        let (l, r) = split.order.split_at(split.split_at);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl Forest {
    pub fn fit(x: &DesignMatrix, y: &Targets, hyper: &Hyper, seed: u64) -> Result<Self> {
        let (n, d) = (x.n_rows(), x.n_cols());
        let (flat, classification) = match y {
            Targets::Regression(v) => (
                Flat {
                    y: v.iter().flatten().copied().collect(),
                    k: v[0].len(),
                    gini: false,
                },
                false,
            ),
            Targets::Classes(c) => (
                Flat {
                    y: c.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                    k: 1,
                    gini: true,
                },
                true,
            ),
        };
        let mtry = if classification {
            (d as f64).sqrt().floor() as usize
        } else {
            d / 3
        }
        .clamp(1, d);
        let grown: Vec<(Tree, Vec<f64>)> = (0..hyper.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(seed, stream_id(&[0x666f_7265, t as u64]));
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    x,
                    y: &flat,
                    mtry,
                    max_depth: hyper.max_depth,
                    nodes: Vec::new(),
                    importance: vec![0.0; d],
                    depth: 0,
                };
                b.grow(&idx, 0, &mut rng);
                (
                    Tree {
                        nodes: b.nodes,
                        depth: b.depth,
                    },
                    b.importance,
                )
            })
            .collect();
        let mut importance = vec![0.0; d];
        for (_, imp) in &grown {
            for (a, v) in importance.iter_mut().zip(imp) {
                *a += v;
            }
        }
        let total: f64 = importance.iter().sum();
        if total > 0.0 {
            importance.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Forest {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            classification,
            n_outputs: flat.k,
            impurity_importance: importance,
        })
    }

    /// Mean of the tree leaf values.
    pub fn predict_values(&self, x: &DesignMatrix) -> Vec<Vec<f64>> {
        x.rows()
            .map(|r| {
                let mut acc = vec![0.0; self.n_outputs];
                for t in &self.trees {
                    for (a, v) in acc.iter_mut().zip(t.leaf_value(r)) {
                        *a += v;
                    }
                }
                acc.iter().map(|v| v / self.trees.len() as f64).collect()
            })
            .collect()
    }

    /// Fraction of trees voting for the positive class.
    pub fn predict_proba(&self, x: &DesignMatrix) -> Vec<f64> {
        x.rows()
            .map(|r| {
                let votes = self
                    .trees
                    .iter()
                    .filter(|t| t.leaf_value(r)[0] >= 0.5)
                    .count();
                votes as f64 / self.trees.len() as f64
            })
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(|t| t.depth).max().unwrap_or(0)
    }
}
