use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    canonical, EvalReport, FoldMetrics, Metrics, Problem, ScaledModel, SplitMode, SplitPlan,
    TaskKind,
};
use crate::features::Scaler;
use crate::models::{
    agglomerative, Clustering, Linkage, ModelKind, ModelSpec, Predictions, Targets, Task,
};

use super::trajectory::{cluster_ade, ReferenceClusters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Separate,
    Joint,
    CountryFeature,
    ClusterFeature,
    ZebraUsageFeature,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Separate,
        Strategy::Joint,
        Strategy::CountryFeature,
        Strategy::ClusterFeature,
        Strategy::ZebraUsageFeature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Separate => "separate",
            Strategy::Joint => "joint",
            Strategy::CountryFeature => "country",
            Strategy::ClusterFeature => "cluster",
            Strategy::ZebraUsageFeature => "zebra",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "separate" => Ok(Strategy::Separate),
            "joint" => Ok(Strategy::Joint),
            "country" | "countryfeature" => Ok(Strategy::CountryFeature),
            "cluster" | "clusterfeature" => Ok(Strategy::ClusterFeature),
            "zebra" | "zebrausage" | "zebrausagefeature" => Ok(Strategy::ZebraUsageFeature),
            _ => Err(Error::invalid(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub n_clusters: usize,
    pub linkage: Linkage,
    /// One trajectory head per cluster instead of a shared head with the one-hot appended.
    pub per_cluster: bool,
    /// Clusters used to break trajectory ADE down in reports.
    pub report_clusters: usize,
    pub base: ModelSpec,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, base: ModelSpec) -> Self {
        StrategySpec {
            strategy,
            n_clusters: 2,
            linkage: Linkage::Ward,
            per_cluster: false,
            report_clusters: 3,
            base,
        }
    }

    pub fn with_clusters(mut self, k: usize) -> Self {
        self.n_clusters = k;
        self
    }

    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::ClusterFeature => format!("cluster(n={})", self.n_clusters),
            s => s.as_str().to_string(),
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        if self.strategy == Strategy::ZebraUsageFeature && task != TaskKind::Trajectory {
            return Err(Error::invalid(
                "the zebra-usage strategy applies to the trajectory task only",
            ));
        }
        if self.n_clusters == 0 {
            return Err(Error::invalid("n_clusters must be >= 1"));
        }
        if self.base.task != task.model_task() {
            return Err(Error::invalid(format!(
                "{} is configured for {:?} but the {} task needs {:?}",
                self.base.kind.as_str(),
                self.base.task,
                task.as_str(),
                task.model_task()
            )));
        }
        self.base.validate()
    }
}

/// Classifier used for cluster routing and zebra usage, matched to the base family.
fn classifier_spec(base: &ModelSpec) -> ModelSpec {
    let kind = match base.kind {
        ModelKind::RandomForest | ModelKind::MLP | ModelKind::LinearSVM => base.kind,
        _ => ModelKind::LogisticRegression,
    };
    ModelSpec::new(kind, Task::Classification).with_seed(base.seed)
}

fn one_hot(label: usize, k: usize) -> Vec<f64> {
    (0..k).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

/// Cluster stage. Tabular tasks cluster standardised inputs and assign new rows
/// to the nearest centroid; the trajectory task clusters trajectories and routes
/// new rows through one-vs-rest classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStage {
    pub k: usize,
    pub clustering: Clustering,
    pub input_scaler: Option<Scaler>,
    pub classifiers: Vec<ScaledModel>,
    pub train_labels: Vec<usize>,
}

impl ClusterStage {
    fn fit(spec: &StrategySpec, problem: &Problem, train: &[usize]) -> Result<Self> {
        let mut k = spec.n_clusters;
        if k > train.len() {
            warn!(
                "reducing clusters from {k} to {} training rows",
                train.len()
            );
            k = train.len();
        }
        let raw: Vec<Vec<f64>> = train.iter().map(|&i| problem.inputs[i].clone()).collect();
        if problem.task != TaskKind::Trajectory {
            let scaler = Scaler::fit(&raw, &problem.names)?;
            let z = scaler.transform_all(&raw)?;
            let clustering = agglomerative(&z, k, spec.linkage)?;
            return Ok(ClusterStage {
                k,
                train_labels: clustering.labels.clone(),
                clustering,
                input_scaler: Some(scaler),
                classifiers: Vec::new(),
            });
        }
        let Targets::Regression(traj) = problem.targets.subset(train) else {
            return Err(Error::invalid("trajectory targets must be real-valued"));
        };
        let clustering = agglomerative(&traj, k, spec.linkage)?;
        let labels = clustering.labels.clone();
        let cspec = classifier_spec(&spec.base);
        let classifiers = if k > 1 {
            (0..k)
                .map(|c| {
                    let y = Targets::Classes(labels.iter().map(|&l| l == c).collect());
                    ScaledModel::fit_rows(&cspec, &problem.names, &raw, &y)
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ClusterStage {
            k,
            train_labels: labels,
            clustering,
            input_scaler: None,
            classifiers,
        })
    }

    pub fn assign(&self, raw: &[Vec<f64>]) -> Result<Vec<usize>> {
        if let Some(s) = &self.input_scaler {
            return Ok(s
                .transform_all(raw)?
                .iter()
                .map(|z| self.clustering.assign(z))
                .collect());
        }
        if self.k == 1 {
            return Ok(vec![0; raw.len()]);
        }
        let probas: Vec<Vec<f64>> = self
            .classifiers
            .iter()
            .map(|m| Ok(m.predict_rows(raw)?.proba().expect("classifier").to_vec()))
            .collect::<Result<_>>()?;
        Ok((0..raw.len())
            .map(|i| {
                let mut best = 0;
                for c in 1..self.k {
                    if probas[c][i] > probas[best][i] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

/// Zebra-usage stage: a classifier fitted on training rows, or a constant when
/// the training rows contain a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ZebraStage {
    Classifier(Box<ScaledModel>),
    Constant(bool),
}

impl ZebraStage {
    fn fit(spec: &StrategySpec, problem: &Problem, train: &[usize]) -> Result<Self> {
        let labels: Vec<bool> = train
            .iter()
            .map(|&i| {
                problem.zebra[i]
                    .ok_or_else(|| Error::invalid("zebra usage unknown for a training row"))
            })
            .collect::<Result<_>>()?;
        if labels.iter().all(|&l| l == labels[0]) {
            return Ok(ZebraStage::Constant(labels[0]));
        }
        let raw: Vec<Vec<f64>> = train.iter().map(|&i| problem.inputs[i].clone()).collect();
        let m = ScaledModel::fit_rows(
            &classifier_spec(&spec.base),
            &problem.names,
            &raw,
            &Targets::Classes(labels),
        )?;
        Ok(ZebraStage::Classifier(Box::new(m)))
    }

    fn predict(&self, raw: &[Vec<f64>]) -> Result<Vec<bool>> {
        match self {
            ZebraStage::Constant(c) => Ok(vec![*c; raw.len()]),
            ZebraStage::Classifier(m) => {
                Ok(m.predict_rows(raw)?.labels().expect("classifier").to_vec())
            }
        }
    }
}

/// Everything one strategy learns from a set of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyModel {
    pub spec: StrategySpec,
    pub task: TaskKind,
    /// Training countries; all but the first get a dummy column.
    pub countries: Vec<String>,
    pub cluster: Option<ClusterStage>,
    pub zebra: Option<ZebraStage>,
    /// One shared head, or one per cluster.
    pub heads: Vec<ScaledModel>,
}

impl StrategyModel {
    /// Fits on the `train` rows of `problem`. The Separate strategy behaves like Joint here;
    /// the split by domain happens in [`run_strategy`].
    pub fn fit(spec: &StrategySpec, problem: &Problem, train: &[usize]) -> Result<Self> {
        spec.validate(problem.task)?;
        let train = canonical(problem, train.to_vec());
        let mut model = StrategyModel {
            spec: spec.clone(),
            task: problem.task,
            countries: Vec::new(),
            cluster: None,
            zebra: None,
            heads: Vec::new(),
        };
        let mut truth_clusters = None;
        match spec.strategy {
            Strategy::CountryFeature => {
                let mut c: Vec<String> = train
                    .iter()
                    .map(|&i| problem.keys[i].country.clone())
                    .collect();
                c.sort();
                c.dedup();
                model.countries = c;
            }
            Strategy::ClusterFeature => {
                let stage = ClusterStage::fit(spec, problem, &train)?;
                truth_clusters = Some(stage.train_labels.clone());
                model.cluster = Some(stage);
            }
            Strategy::ZebraUsageFeature => {
                model.zebra = Some(ZebraStage::fit(spec, problem, &train)?)
            }
            Strategy::Separate | Strategy::Joint => {}
        }
        // Training rows carry their true cluster and zebra usage; new rows get predictions.
        let extras: Vec<Vec<f64>> = train
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let cluster = truth_clusters.as_ref().map(|l| l[pos]);
                let zebra = problem.zebra[i];
                model.extra_columns(&problem.keys[i].country, cluster, zebra)
            })
            .collect();
        let names = model.input_names(problem);
        let raw: Vec<Vec<f64>> = train
            .iter()
            .zip(&extras)
            .map(|(&i, e)| [problem.inputs[i].as_slice(), e].concat())
            .collect();
        let targets = problem.targets.subset(&train);
        model.heads = match (&model.cluster, spec.per_cluster) {
            (Some(stage), true) => (0..stage.k)
                .map(|c| {
                    let idx: Vec<usize> = (0..train.len())
                        .filter(|&p| stage.train_labels[p] == c)
                        .collect();
                    if idx.len() < 2 {
                        return Err(Error::InsufficientData(format!(
                            "cluster {c} has {} training rows; per-cluster heads need 2",
                            idx.len()
                        )));
                    }
                    let r: Vec<Vec<f64>> = idx.iter().map(|&p| raw[p].clone()).collect();
                    ScaledModel::fit_rows(&spec.base, &names, &r, &targets.subset(&idx))
                })
                .collect::<Result<_>>()?,
            _ => vec![ScaledModel::fit_rows(&spec.base, &names, &raw, &targets)?],
        };
        Ok(model)
    }

    fn extra_columns(
        &self,
        country: &str,
        cluster: Option<usize>,
        zebra: Option<bool>,
    ) -> Vec<f64> {
        let mut v = Vec::new();
        for c in self.countries.iter().skip(1) {
            v.push(if c == country { 1.0 } else { 0.0 });
        }
        if let (Some(stage), Some(c)) = (&self.cluster, cluster) {
            v.extend(one_hot(c, stage.k));
        }
        if self.zebra.is_some() {
            v.push(if zebra.unwrap_or(false) { 1.0 } else { 0.0 });
        }
        v
    }

    fn input_names(&self, problem: &Problem) -> Vec<String> {
        let mut n = problem.names.clone();
        n.extend(
            self.countries
                .iter()
                .skip(1)
                .map(|c| format!("country_{c}")),
        );
        if let Some(stage) = &self.cluster {
            n.extend((0..stage.k).map(|c| format!("cluster_{c}")));
        }
        if self.zebra.is_some() {
            n.push("zebra_pred".into());
        }
        n
    }

    /// Cluster assigned to each row of `idx`, if the strategy clusters.
    pub fn assign_clusters(&self, problem: &Problem, idx: &[usize]) -> Result<Option<Vec<usize>>> {
        let raw: Vec<Vec<f64>> = idx.iter().map(|&i| problem.inputs[i].clone()).collect();
        self.cluster.as_ref().map(|s| s.assign(&raw)).transpose()
    }

    pub fn predict(&self, problem: &Problem, idx: &[usize]) -> Result<Predictions> {
        let raw: Vec<Vec<f64>> = idx.iter().map(|&i| problem.inputs[i].clone()).collect();
        let clusters = self.assign_clusters(problem, idx)?;
        let zebra = self.zebra.as_ref().map(|z| z.predict(&raw)).transpose()?;
        let full: Vec<Vec<f64>> = idx
            .iter()
            .enumerate()
            .map(|(p, &i)| {
                let e = self.extra_columns(
                    &problem.keys[i].country,
                    clusters.as_ref().map(|c| c[p]),
                    zebra.as_ref().map(|z| z[p]),
                );
                [raw[p].as_slice(), &e].concat()
            })
            .collect();
        if self.heads.len() == 1 {
            return self.heads[0].predict_rows(&full);
        }
        // Per-cluster heads: route each row, then restore the input order.
        let clusters = clusters.expect("per-cluster heads imply a cluster stage");
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
        for (c, head) in self.heads.iter().enumerate() {
            let rows: Vec<usize> = (0..idx.len()).filter(|&p| clusters[p] == c).collect();
            if rows.is_empty() {
                continue;
            }
            let r: Vec<Vec<f64>> = rows.iter().map(|&p| full[p].clone()).collect();
            match head.predict_rows(&r)? {
                Predictions::Regression(v) => {
                    for (&p, y) in rows.iter().zip(v) {
                        out[p] = y;
                    }
                }
                Predictions::Classification { proba, .. } => {
                    for (&p, y) in rows.iter().zip(proba) {
                        out[p] = vec![y];
                    }
                }
            }
        }
        Ok(match self.task.model_task() {
            Task::Regression => Predictions::Regression(out),
            Task::Classification => {
                let proba: Vec<f64> = out.iter().map(|v| v[0]).collect();
                let labels = proba.iter().map(|&p| p >= 0.5).collect();
                Predictions::Classification { proba, labels }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub model: String,
    pub task: TaskKind,
    pub domains: Vec<DomainReport>,
    /// Mean of the per-domain means.
    pub average: Metrics,
}

pub(crate) fn domain_name(p: &Problem) -> String {
    let mut c: Vec<&str> = p.keys.iter().map(|k| k.country.as_str()).collect();
    c.sort_unstable();
    c.dedup();
    c.join("+")
}

fn fold_metrics(
    problem: &Problem,
    test: &[usize],
    pred: &Predictions,
    reference: Option<&ReferenceClusters>,
    fold: usize,
    n_train: usize,
) -> Result<FoldMetrics> {
    let truth = problem.targets.subset(test);
    let mut metrics = Metrics::compute(problem.task, &truth, pred)?;
    if let (Some(r), Targets::Regression(t), Predictions::Regression(p)) = (reference, &truth, pred)
    {
        metrics.ade_by_cluster = cluster_ade(r, t, p)?;
    }
    Ok(FoldMetrics {
        fold,
        n_train,
        metrics,
    })
}

/// Five-fold evaluation of one strategy over two domains. Each domain's held-out
/// fold is scored by the model(s) trained on the remaining folds.
pub fn run_strategy(
    spec: &StrategySpec,
    a: &Problem,
    b: &Problem,
    plans: (&SplitPlan, &SplitPlan),
) -> Result<StrategyReport> {
    spec.validate(a.task)?;
    if plans.0.mode != SplitMode::ByParticipant || plans.1.mode != SplitMode::ByParticipant {
        warn!("strategy comparison is meant for participant-level splits");
    }
    let combined = a.concat(b)?;
    let n_folds = plans.0.folds.len().min(plans.1.folds.len());
    let per_fold: Vec<[FoldMetrics; 2]> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            strategy_fold(spec, a, b, &combined, plans, f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut domains = Vec::new();
    for (d, (p, plan)) in [(a, plans.0), (b, plans.1)].into_iter().enumerate() {
        let folds: Vec<FoldMetrics> = per_fold.iter().map(|f| f[d].clone()).collect();
        domains.push(DomainReport {
            domain: domain_name(p),
            report: EvalReport::new(spec.base.kind.as_str(), p.task, plan.mode, plan.seed, folds),
        });
    }
    let average = Metrics::mean(&domains.iter().map(|d| &d.report.mean).collect::<Vec<_>>());
    Ok(StrategyReport {
        strategy: spec.label(),
        model: spec.base.kind.as_str().to_string(),
        task: a.task,
        domains,
        average,
    })
}

/// Five-fold evaluation of one strategy inside a single problem. Trajectory
/// folds also report ADE per reference cluster.
pub fn cross_validate_strategy(
    spec: &StrategySpec,
    problem: &Problem,
    plan: &SplitPlan,
) -> Result<EvalReport> {
    spec.validate(problem.task)?;
    let folds: Vec<FoldMetrics> = (0..plan.folds.len())
        .into_par_iter()
        .map(|f| {
            let run = || -> Result<FoldMetrics> {
                let train = plan.train_indices(f);
                let test = canonical(problem, plan.folds[f].clone());
                let reference = if problem.task == TaskKind::Trajectory {
                    Some(ReferenceClusters::fit(
                        problem,
                        &train,
                        spec.report_clusters,
                        spec.linkage,
                    )?)
                } else {
                    None
                };
                let model = StrategyModel::fit(spec, problem, &train)?;
                let pred = model.predict(problem, &test)?;
                fold_metrics(problem, &test, &pred, reference.as_ref(), f, train.len())
            };
            run().map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::new(
        spec.base.kind.as_str(),
        problem.task,
        plan.mode,
        plan.seed,
        folds,
    ))
}

fn strategy_fold(
    spec: &StrategySpec,
    a: &Problem,
    b: &Problem,
    combined: &Problem,
    plans: (&SplitPlan, &SplitPlan),
    f: usize,
) -> Result<[FoldMetrics; 2]> {
    let offset = a.len();
    let train_a = plans.0.train_indices(f);
    let train_b = plans.1.train_indices(f);
    let test_a = canonical(a, plans.0.folds[f].clone());
    let test_b = canonical(b, plans.1.folds[f].clone());
    let reference = |p: &Problem, tr: &[usize]| -> Result<Option<ReferenceClusters>> {
        if p.task == TaskKind::Trajectory {
            ReferenceClusters::fit(p, tr, spec.report_clusters, spec.linkage).map(Some)
        } else {
            Ok(None)
        }
    };
    let (ref_a, ref_b) = (reference(a, &train_a)?, reference(b, &train_b)?);
    let (pred_a, pred_b, n_a, n_b) = if spec.strategy == Strategy::Separate {
        let ma = StrategyModel::fit(spec, a, &train_a)?;
        let mb = StrategyModel::fit(spec, b, &train_b)?;
        (
            ma.predict(a, &test_a)?,
            mb.predict(b, &test_b)?,
            train_a.len(),
            train_b.len(),
        )
    } else {
        let train: Vec<usize> = train_a
            .iter()
            .copied()
            .chain(train_b.iter().map(|i| i + offset))
            .collect();
        let m = StrategyModel::fit(spec, combined, &train)?;
        let tb: Vec<usize> = test_b.iter().map(|i| i + offset).collect();
        (
            m.predict(combined, &test_a)?,
            m.predict(combined, &tb)?,
            train.len(),
            train.len(),
        )
    };
    Ok([
        fold_metrics(a, &test_a, &pred_a, ref_a.as_ref(), f, n_a)?,
        fold_metrics(b, &test_b, &pred_b, ref_b.as_ref(), f, n_b)?,
    ])
}
