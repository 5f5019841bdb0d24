//! From-scratch model families behind one fit/predict interface.

mod cluster;
mod forest;
mod importance;
mod linear;
mod matrix;
mod mlp;
mod sgd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cluster::{agglomerative, linkage, Clustering, Linkage, Merge};
pub use forest::{Forest, Tree};
pub use importance::{feature_importance, permutation_importance};
pub use linear::LinearRegression;
pub use matrix::DesignMatrix;
pub use mlp::{mlp_gradients, MlpArch, MlpOutput, MlpParams};
pub use sgd::{LinearClassifier, MarginLoss};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    LinearSVM,
    RandomForest,
    MLP,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LinearRegression => "LinearRegression",
            ModelKind::LogisticRegression => "LogisticRegression",
            ModelKind::LinearSVM => "LinearSVM",
            ModelKind::RandomForest => "RandomForest",
            ModelKind::MLP => "MLP",
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            ModelKind::LinearRegression => task == Task::Regression,
            ModelKind::LogisticRegression | ModelKind::LinearSVM => task == Task::Classification,
            ModelKind::RandomForest | ModelKind::MLP => true,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "linearregression" | "linear" | "lr" => ModelKind::LinearRegression,
            "logisticregression" | "logistic" => ModelKind::LogisticRegression,
            "linearsvm" | "svm" => ModelKind::LinearSVM,
            "randomforest" | "forest" | "rf" => ModelKind::RandomForest,
            "mlp" | "nn" => ModelKind::MLP,
            _ => return Err(Error::invalid(format!("unknown model kind {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Classification,
}

/// Every knob any family reads. Unused fields are ignored by the other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub hidden: (usize, usize),
    /// SVM regularisation.
    pub c: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    pub l2: f64,
    /// Early stop when the epoch loss changes by less than this.
    pub tolerance: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            n_trees: 100,
            max_depth: 5,
            hidden: (2, 4),
            c: 1.0,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 500,
            batch_size: 32,
            l2: 1e-4,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub task: Task,
    pub hyper: Hyper,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, task: Task) -> Self {
        let mut hyper = Hyper::default();
        match kind {
            ModelKind::LogisticRegression => hyper.learning_rate = 0.1,
            ModelKind::MLP if task == Task::Classification => hyper.hidden = (8, 4),
            _ => {}
        }
        ModelSpec {
            kind,
            task,
            hyper,
            seed: 0,
        }
    }

    /// Network sizes for the three prediction problems: gap selection (2, 4),
    /// zebra usage (8, 4), trajectories (8, 32).
    pub fn mlp(hidden: (usize, usize), task: Task) -> Self {
        let mut s = Self::new(ModelKind::MLP, task);
        s.hyper.hidden = hidden;
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kind.supports(self.task) {
            return Err(Error::invalid(format!(
                "{} does not support {:?}",
                self.kind.as_str(),
                self.task
            )));
        }
        let h = &self.hyper;
        if h.hidden.0 == 0 || h.hidden.1 == 0 {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        if h.n_trees == 0 || h.max_depth == 0 {
            return Err(Error::invalid("n_trees and max_depth must be >= 1"));
        }
        if !(h.learning_rate > 0.0 && h.c > 0.0 && h.l2 >= 0.0 && (0.0..1.0).contains(&h.momentum))
        {
            return Err(Error::invalid(
                "learning_rate, c must be > 0; l2 >= 0; momentum in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `n × k` real outputs.
    Regression(Vec<Vec<f64>>),
    Classes(Vec<bool>),
}

impl Targets {
    pub fn scalar(y: &[f64]) -> Self {
        Targets::Regression(y.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classes(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => {
                Targets::Regression(idx.iter().map(|&i| y[i].clone()).collect())
            }
            Targets::Classes(y) => Targets::Classes(idx.iter().map(|&i| y[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Regression(Vec<Vec<f64>>),
    Classification { proba: Vec<f64>, labels: Vec<bool> },
}

impl Predictions {
    fn from_proba(proba: Vec<f64>) -> Self {
        let labels = proba.iter().map(|&p| p >= 0.5).collect();
        Predictions::Classification { proba, labels }
    }

    pub fn regression(&self) -> Option<&[Vec<f64>]> {
        match self {
            Predictions::Regression(v) => Some(v),
            _ => None,
        }
    }

    pub fn labels(&self) -> Option<&[bool]> {
        match self {
            Predictions::Classification { labels, .. } => Some(labels),
            _ => None,
        }
    }

    pub fn proba(&self) -> Option<&[f64]> {
        match self {
            Predictions::Classification { proba, .. } => Some(proba),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Params {
    Linear(LinearRegression),
    Classifier(LinearClassifier),
    Forest(Forest),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub column_names: Vec<String>,
    pub output_dim: usize,
    pub params: Params,
    /// Descending by score; covers every input column.
    pub importance: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model: TrainedModel,
}

fn check_targets(spec: &ModelSpec, x: &DesignMatrix, y: &Targets) -> Result<usize> {
    if x.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "fit needs n >= 2 rows, got {}",
            x.n_rows()
        )));
    }
    if y.len() != x.n_rows() {
        return Err(Error::invalid(format!(
            "{} targets for {} rows",
            y.len(),
            x.n_rows()
        )));
    }
    match (spec.task, y) {
        (Task::Regression, Targets::Regression(v)) => {
            let k = v[0].len();
            if k == 0 || v.iter().any(|r| r.len() != k) {
                return Err(Error::invalid(
                    "regression targets must share one positive width",
                ));
            }
            if v.iter().flatten().any(|t| !t.is_finite()) {
                return Err(Error::invalid("regression targets must be finite"));
            }
            Ok(k)
        }
        (Task::Classification, Targets::Classes(_)) => Ok(1),
        _ => Err(Error::invalid("targets do not match the model task")),
    }
}

/// Fits `spec` to `(x, y)`. Deterministic given `spec.seed`.
pub fn fit(spec: &ModelSpec, x: &DesignMatrix, y: &Targets) -> Result<TrainedModel> {
    spec.validate()?;
    let output_dim = check_targets(spec, x, y)?;
    let params =
        match (spec.kind, y) {
            (ModelKind::LinearRegression, Targets::Regression(t)) => {
                Params::Linear(LinearRegression::fit(x, t)?)
            }
            (ModelKind::LogisticRegression, Targets::Classes(c)) => Params::Classifier(
                LinearClassifier::fit(x, c, MarginLoss::Logistic, &spec.hyper, spec.seed)?,
            ),
            (ModelKind::LinearSVM, Targets::Classes(c)) => Params::Classifier(
                LinearClassifier::fit(x, c, MarginLoss::Hinge, &spec.hyper, spec.seed)?,
            ),
            (ModelKind::RandomForest, _) => {
                Params::Forest(Forest::fit(x, y, &spec.hyper, spec.seed)?)
            }
            (ModelKind::MLP, _) => Params::Mlp(MlpParams::fit(x, y, &spec.hyper, spec.seed)?),
            _ => unreachable!("validated kind/task pairing"),
        };
    let mut model = TrainedModel {
        spec: spec.clone(),
        column_names: x.names().to_vec(),
        output_dim,
        params,
        importance: Vec::new(),
    };
    model.importance = feature_importance(&model, x, y, spec.seed)?;
    Ok(model)
}

impl TrainedModel {
    pub fn n_inputs(&self) -> usize {
        self.column_names.len()
    }

    pub fn predict(&self, x: &DesignMatrix) -> Result<Predictions> {
        if x.n_cols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: x.n_cols(),
            });
        }
        Ok(match &self.params {
            Params::Linear(m) => Predictions::Regression(m.predict(x)),
            Params::Classifier(m) => Predictions::from_proba(m.predict_proba(x)),
            Params::Forest(f) => match self.spec.task {
                Task::Regression => Predictions::Regression(f.predict_values(x)),
                Task::Classification => Predictions::from_proba(f.predict_proba(x)),
            },
            Params::Mlp(m) => match self.spec.task {
                Task::Regression => Predictions::Regression(m.predict_values(x)),
                Task::Classification => Predictions::from_proba(m.predict_proba(x)),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope {
            format_version: FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let env: Envelope = serde_json::from_str(s)?;
        if env.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                env.format_version
            )));
        }
        Ok(env.model)
    }
}
