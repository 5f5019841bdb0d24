//! Cross-domain evaluation and the transferability strategies.

mod strategy;
mod trajectory;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::eval::{
    canonical, EvalReport, FoldMetrics, Metrics, Problem, ScaledModel, SplitMode, TaskKind,
};
use crate::models::ModelSpec;

pub use strategy::{
    cross_validate_strategy, run_strategy, ClusterStage, DomainReport, Strategy, StrategyModel,
    StrategyReport, StrategySpec, ZebraStage,
};
pub use trajectory::{
    cluster_ade, fit_trajectory_pipeline, predict_trajectory, resample_points, with_resample,
    ReferenceClusters, TrajectoryBundle,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub train_domain: String,
    pub test_domain: String,
    pub model: String,
    pub split: SplitMode,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub task: TaskKind,
    pub seed: u64,
    pub domains: Vec<String>,
    /// Ordered by model, then train domain, then test domain.
    pub cells: Vec<TransferCell>,
}

impl TransferMatrix {
    pub fn get(&self, train: &str, test: &str, model: &str) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|c| c.train_domain == train && c.test_domain == test && c.model == model)
            .map(|c| &c.report)
    }
}

/// For every ordered domain pair `(A, B)` and fold `f`: fit on `A` minus its fold `f`,
/// score on fold `f` of `B`. The diagonal is plain within-domain cross-validation.
pub fn transfer_eval(
    domains: &[&Problem],
    specs: &[ModelSpec],
    mode: SplitMode,
    seed: u64,
) -> Result<TransferMatrix> {
    if domains.is_empty() || domains.iter().any(|d| d.is_empty()) {
        return Err(Error::InsufficientData(
            "transfer evaluation needs non-empty domains".into(),
        ));
    }
    let task = domains[0].task;
    if domains
        .iter()
        .any(|d| d.task != task || d.names != domains[0].names)
    {
        return Err(Error::invalid(
            "domains must share the task and input columns",
        ));
    }
    for (i, a) in domains.iter().enumerate() {
        let keys: HashSet<_> = a.keys.iter().collect();
        if domains[i + 1..]
            .iter()
            .any(|b| b.keys.iter().any(|k| keys.contains(k)))
        {
            return Err(Error::invalid("transfer domains must be disjoint"));
        }
    }
    let names: Vec<String> = domains.iter().map(|d| strategy::domain_name(d)).collect();
    let plans = domains
        .iter()
        .map(|d| d.plan(mode, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for s in 0..specs.len() {
        for (a, plan) in plans.iter().enumerate() {
            for f in 0..plan.folds.len() {
                jobs.push((s, a, f));
            }
        }
    }
    // Each job fits once on A minus fold f and scores fold f of every domain.
    let scored: Vec<Vec<FoldMetrics>> = jobs
        .par_iter()
        .map(|&(s, a, f)| {
            let train = canonical(domains[a], plans[a].train_indices(f));
            let model =
                ScaledModel::fit(&specs[s], domains[a], &train).map_err(|e| Error::Fold {
                    fold: f,
                    source: Box::new(e),
                })?;
            domains
                .iter()
                .zip(&plans)
                .map(|(b, plan_b)| {
                    let test = canonical(b, plan_b.folds[f].clone());
                    let pred = model.predict(b, &test)?;
                    Ok(FoldMetrics {
                        fold: f,
                        n_train: train.len(),
                        metrics: Metrics::compute(task, &b.targets.subset(&test), &pred)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        for a in 0..domains.len() {
            for b in 0..domains.len() {
                let folds: Vec<FoldMetrics> = jobs
                    .iter()
                    .zip(&scored)
                    .filter(|((js, ja, _), _)| *js == s && *ja == a)
                    .map(|(_, m)| m[b].clone())
                    .collect();
                cells.push(TransferCell {
                    train_domain: names[a].clone(),
                    test_domain: names[b].clone(),
                    model: spec.kind.as_str().to_string(),
                    split: mode,
                    report: EvalReport::new(spec.kind.as_str(), task, mode, seed, folds),
                });
            }
        }
    }
    Ok(TransferMatrix {
        task,
        seed,
        domains: names,
        cells,
    })
}

#[cfg(test)]
mod tests;
