use rayon::prelude::*;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::features::Scaler;
use crate::models::{fit, DesignMatrix, ModelSpec, Predictions, Targets, TrainedModel};

use super::{EvalReport, FoldMetrics, Metrics, Problem, SplitPlan};

/// A model together with the standardiser fitted on the same training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledModel {
    pub scaler: Scaler,
    pub model: TrainedModel,
}

impl ScaledModel {
    pub fn fit_rows(
        spec: &ModelSpec,
        names: &[String],
        raw: &[Vec<f64>],
        targets: &Targets,
    ) -> Result<Self> {
        let scaler = Scaler::fit(raw, names)?;
        if scaler.names.is_empty() {
            return Err(Error::InsufficientData(
                "every input column is constant on the training rows".into(),
            ));
        }
        let x = DesignMatrix::from_rows(&scaler.transform_all(raw)?, Some(scaler.names.clone()))?;
        let model = fit(spec, &x, targets)?;
        Ok(ScaledModel { scaler, model })
    }

    /// Fits on the `train` rows of `problem` only.
    pub fn fit(spec: &ModelSpec, problem: &Problem, train: &[usize]) -> Result<Self> {
        let raw: Vec<Vec<f64>> = train.iter().map(|&i| problem.inputs[i].clone()).collect();
        Self::fit_rows(spec, &problem.names, &raw, &problem.targets.subset(train))
    }

    pub fn predict_rows(&self, raw: &[Vec<f64>]) -> Result<Predictions> {
        let x = DesignMatrix::from_rows(
            &self.scaler.transform_all(raw)?,
            Some(self.scaler.names.clone()),
        )?;
        self.model.predict(&x)
    }

    pub fn predict(&self, problem: &Problem, idx: &[usize]) -> Result<Predictions> {
        let raw: Vec<Vec<f64>> = idx.iter().map(|&i| problem.inputs[i].clone()).collect();
        self.predict_rows(&raw)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ScaledModel,
    pub predictions: Predictions,
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    /// Training and test row indices in canonical key order.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub outcome: FitOutcome,
}

/// Sorts row indices by row key so that results do not depend on input order.
pub(crate) fn canonical(problem: &Problem, mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by(|&a, &b| problem.keys[a].cmp(&problem.keys[b]).then(a.cmp(&b)));
    idx
}

/// Fits on `train` rows of `train_set` and predicts `test` rows of `test_set`.
pub fn fit_predict(
    spec: &ModelSpec,
    train_set: &Problem,
    train: &[usize],
    test_set: &Problem,
    test: &[usize],
) -> Result<FitOutcome> {
    let model = ScaledModel::fit(spec, train_set, train)?;
    let predictions = model.predict(test_set, test)?;
    Ok(FitOutcome { model, predictions })
}

pub fn run_fold(
    spec: &ModelSpec,
    problem: &Problem,
    plan: &SplitPlan,
    fold: usize,
) -> Result<FoldRun> {
    if plan.n_rows() != problem.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.len(),
            got: plan.n_rows(),
        });
    }
    let train = canonical(problem, plan.train_indices(fold));
    let test = canonical(problem, plan.folds[fold].clone());
    let outcome = fit_predict(spec, problem, &train, problem, &test).map_err(|e| Error::Fold {
        fold,
        source: Box::new(e),
    })?;
    Ok(FoldRun {
        fold,
        train,
        test,
        outcome,
    })
}

pub fn cross_validate(spec: &ModelSpec, problem: &Problem, plan: &SplitPlan) -> Result<EvalReport> {
    Ok(cross_validate_detailed(spec, problem, plan)?.0)
}

/// Also returns out-of-fold predictions in problem row order: regression
/// outputs, or `[P(positive)]` for classification.
pub fn cross_validate_detailed(
    spec: &ModelSpec,
    problem: &Problem,
    plan: &SplitPlan,
) -> Result<(EvalReport, Vec<Vec<f64>>)> {
    if !spec.kind.supports(problem.task.model_task()) || spec.task != problem.task.model_task() {
        return Err(Error::invalid(format!(
            "{} with task {:?} cannot serve the {} task",
            spec.kind.as_str(),
            spec.task,
            problem.task.as_str()
        )));
    }
    let runs: Vec<FoldRun> = (0..plan.folds.len())
        .into_par_iter()
        .filter(|&f| !plan.folds[f].is_empty())
        .map(|f| run_fold(spec, problem, plan, f))
        .collect::<Result<_>>()?;
    let mut oof = vec![Vec::new(); problem.len()];
    let mut folds = Vec::with_capacity(runs.len());
    for run in &runs {
        let truth = problem.targets.subset(&run.test);
        let metrics = Metrics::compute(problem.task, &truth, &run.outcome.predictions)?;
        match &run.outcome.predictions {
            Predictions::Regression(p) => {
                for (&i, v) in run.test.iter().zip(p) {
                    oof[i] = v.clone();
                }
            }
            Predictions::Classification { proba, .. } => {
                for (&i, v) in run.test.iter().zip(proba) {
                    oof[i] = vec![*v];
                }
            }
        }
        folds.push(FoldMetrics {
            fold: run.fold,
            n_train: run.train.len(),
            metrics,
        });
    }
    let report = EvalReport::new(
        spec.kind.as_str(),
        problem.task,
        plan.mode,
        plan.seed,
        folds,
    );
    Ok((report, oof))
}
