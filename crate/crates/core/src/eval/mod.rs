//! Metrics, fold plans, cross-validation and rank-based tests.

mod cv;
mod metrics;
mod split;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{input_names, FeatureRow};
use crate::models::{Predictions, Targets, Task};

pub(crate) use cv::canonical;
pub use cv::{
    cross_validate, cross_validate_detailed, fit_predict, run_fold, FitOutcome, FoldRun,
    ScaledModel,
};
pub use metrics::{acc, ade, ade_flat, f1, mae, mape, Confusion};
pub use split::{make_splits, make_splits_by_key, RowKey, SplitMode, SplitPlan, N_FOLDS};
pub use stats::{
    bonferroni, compare_groups, kruskal_wallis_h, mann_whitney_u, mann_whitney_u_with,
    u_statistics, Alternative, Correction, GroupComparison, GroupSummary, PairwiseTest, TestResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    GapSelection,
    ZebraUsage,
    Trajectory,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::GapSelection => "gap",
            TaskKind::ZebraUsage => "zebra",
            TaskKind::Trajectory => "trajectory",
        }
    }

    pub fn model_task(self) -> Task {
        match self {
            TaskKind::ZebraUsage => Task::Classification,
            _ => Task::Regression,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gap" | "gapselection" => Ok(TaskKind::GapSelection),
            "zebra" | "zebrausage" => Ok(TaskKind::ZebraUsage),
            "trajectory" | "traj" => Ok(TaskKind::Trajectory),
            _ => Err(Error::invalid(format!(
                "unknown task {s:?}; expected gap, zebra or trajectory"
            ))),
        }
    }
}

/// Labelled inputs for one task, one entry per usable feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub task: TaskKind,
    pub with_entry: bool,
    pub names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    /// Trajectories are flattened as `x0, y0, x1, y1, …`.
    pub targets: Targets,
    pub keys: Vec<RowKey>,
    /// Observed zebra usage per row, where the trial had a zebra.
    pub zebra: Vec<Option<bool>>,
}

impl Problem {
    /// Keeps the rows carrying the task's label. Trajectory rows must share one length.
    pub fn from_rows(rows: &[FeatureRow], task: TaskKind, with_entry: bool) -> Result<Problem> {
        let mut inputs = Vec::new();
        let mut keys = Vec::new();
        let mut zebra = Vec::new();
        let mut reg = Vec::new();
        let mut cls = Vec::new();
        for r in rows {
            let keep = match task {
                TaskKind::GapSelection => r.label_gap.map(|g| reg.push(vec![g])).is_some(),
                TaskKind::ZebraUsage => r.label_zebra.map(|z| cls.push(z)).is_some(),
                TaskKind::Trajectory => match &r.label_trajectory {
                    Some(t) if t.len() >= 2 => {
                        reg.push(t.iter().flat_map(|p| [p[0], p[1]]).collect());
                        true
                    }
                    Some(_) => {
                        log::warn!(
                            "skipping trial {}: trajectory shorter than two points",
                            r.trial_id
                        );
                        false
                    }
                    None => false,
                },
            };
            if keep {
                inputs.push(r.inputs(with_entry));
                keys.push(RowKey::of(r));
                zebra.push(r.label_zebra);
            }
        }
        if inputs.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no rows carry a {} label",
                task.as_str()
            )));
        }
        if task == TaskKind::Trajectory && reg.iter().any(|t| t.len() != reg[0].len()) {
            return Err(Error::invalid(
                "trajectory labels must share one resample count",
            ));
        }
        let targets = match task {
            TaskKind::ZebraUsage => Targets::Classes(cls),
            _ => Targets::Regression(reg),
        };
        Ok(Problem {
            task,
            with_entry,
            names: input_names(with_entry),
            inputs,
            targets,
            keys,
            zebra,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Problem {
        Problem {
            task: self.task,
            with_entry: self.with_entry,
            names: self.names.clone(),
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: self.targets.subset(idx),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            zebra: idx.iter().map(|&i| self.zebra[i]).collect(),
        }
    }

    /// Appends named input columns.
    pub fn with_columns(mut self, names: &[String], values: &[Vec<f64>]) -> Problem {
        self.names.extend(names.iter().cloned());
        for (row, extra) in self.inputs.iter_mut().zip(values) {
            row.extend_from_slice(extra);
        }
        self
    }

    /// Rows of `self` followed by rows of `other`; both must share columns and task.
    pub fn concat(&self, other: &Problem) -> Result<Problem> {
        if self.names != other.names || self.task != other.task {
            return Err(Error::invalid(
                "cannot merge problems with different tasks or columns",
            ));
        }
        let targets = match (&self.targets, &other.targets) {
            (Targets::Regression(a), Targets::Regression(b)) => {
                Targets::Regression([a.clone(), b.clone()].concat())
            }
            (Targets::Classes(a), Targets::Classes(b)) => {
                Targets::Classes([a.clone(), b.clone()].concat())
            }
            _ => return Err(Error::invalid("target kinds differ")),
        };
        Ok(Problem {
            task: self.task,
            with_entry: self.with_entry,
            names: self.names.clone(),
            inputs: [self.inputs.clone(), other.inputs.clone()].concat(),
            targets,
            keys: [self.keys.clone(), other.keys.clone()].concat(),
            zebra: [self.zebra.clone(), other.zebra.clone()].concat(),
        })
    }

    /// One sub-problem per country tag, in sorted tag order.
    pub fn by_country(&self) -> Vec<(String, Problem)> {
        let mut tags: Vec<&str> = self.keys.iter().map(|k| k.country.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        tags.into_iter()
            .map(|t| {
                let idx: Vec<usize> = (0..self.len())
                    .filter(|&i| self.keys[i].country == t)
                    .collect();
                (t.to_string(), self.subset(&idx))
            })
            .collect()
    }

    pub fn plan(&self, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
        make_splits_by_key(&self.keys, mode, seed)
    }
}

/// Metrics for one set of predictions; fields not applicable to the task are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub ade: Option<f64>,
    /// Trajectory ADE per cluster label; empty for the tabular tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ade_by_cluster: Vec<Option<f64>>,
}

impl Metrics {
    pub fn compute(task: TaskKind, truth: &Targets, pred: &Predictions) -> Result<Metrics> {
        let mut m = Metrics {
            n: truth.len(),
            ..Metrics::default()
        };
        match (task, truth, pred) {
            (TaskKind::GapSelection, Targets::Regression(y), Predictions::Regression(p)) => {
                let y: Vec<f64> = y.iter().map(|r| r[0]).collect();
                let p: Vec<f64> = p.iter().map(|r| r[0]).collect();
                m.mae = Some(mae(&y, &p)?);
                m.mape = mape(&y, &p).ok();
            }
            (
                TaskKind::ZebraUsage,
                Targets::Classes(y),
                Predictions::Classification { labels, .. },
            ) => {
                let c = Confusion::from_labels(y, labels)?;
                m.acc = Some(c.accuracy());
                m.f1 = c.f1().ok();
            }
            (TaskKind::Trajectory, Targets::Regression(y), Predictions::Regression(p)) => {
                m.ade = Some(ade_flat(y, p)?);
            }
            _ => return Err(Error::invalid("predictions do not match the task")),
        }
        Ok(m)
    }

    /// Fold average of each metric, over the folds where it is defined.
    pub fn mean(folds: &[&Metrics]) -> Metrics {
        fn avg(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let (s, c) = v.flatten().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            (c > 0).then(|| s / c as f64)
        }
        let k = folds
            .iter()
            .map(|m| m.ade_by_cluster.len())
            .max()
            .unwrap_or(0);
        Metrics {
            n: folds.iter().map(|m| m.n).sum(),
            mae: avg(folds.iter().map(|m| m.mae)),
            mape: avg(folds.iter().map(|m| m.mape)),
            acc: avg(folds.iter().map(|m| m.acc)),
            f1: avg(folds.iter().map(|m| m.f1)),
            ade: avg(folds.iter().map(|m| m.ade)),
            ade_by_cluster: (0..k)
                .map(|c| {
                    avg(folds
                        .iter()
                        .map(|m| m.ade_by_cluster.get(c).copied().flatten()))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub task: TaskKind,
    pub split: SplitMode,
    pub seed: u64,
    pub folds: Vec<FoldMetrics>,
    pub mean: Metrics,
}

impl EvalReport {
    pub fn new(
        model: impl Into<String>,
        task: TaskKind,
        split: SplitMode,
        seed: u64,
        mut folds: Vec<FoldMetrics>,
    ) -> Self {
        folds.sort_by_key(|f| f.fold);
        let mean = Metrics::mean(&folds.iter().map(|f| &f.metrics).collect::<Vec<_>>());
        EvalReport {
            model: model.into(),
            task,
            split,
            seed,
            folds,
            mean,
        }
    }

    /// The headline number: MAE, ACC or ADE depending on the task.
    pub fn headline(&self) -> Option<f64> {
        match self.task {
            TaskKind::GapSelection => self.mean.mae,
            TaskKind::ZebraUsage => self.mean.acc,
            TaskKind::Trajectory => self.mean.ade,
        }
    }
}
