//! Cluster-classify-predict pipeline for crossing trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ade_flat, Problem, RowKey, TaskKind};
use crate::features::{resample_trajectory, FeatureRow};
use crate::models::{agglomerative, Clustering, Linkage, Predictions, Targets};
use crate::sim::TracePoint;

use super::strategy::{StrategyModel, StrategySpec};

/// Resamples a trajectory already spaced uniformly in normalised time.
pub fn resample_points(points: &[[f64; 2]], m: usize) -> Vec<[f64; 2]> {
    if points.len() == m {
        return points.to_vec();
    }
    let n = points.len();
    let trace: Vec<TracePoint> = points
        .iter()
        .enumerate()
        .map(|(i, p)| TracePoint {
            t: i as f64 / (n - 1) as f64,
            x: p[0],
            y: p[1],
        })
        .collect();
    resample_trajectory(&trace, m)
}

/// Copy of a trajectory problem with every target resampled to `m` points.
pub fn with_resample(problem: &Problem, m: usize) -> Result<Problem> {
    if problem.task != TaskKind::Trajectory {
        return Err(Error::invalid("resampling applies to the trajectory task"));
    }
    if m < 2 {
        return Err(Error::invalid("resample count must be >= 2"));
    }
    let Targets::Regression(t) = &problem.targets else {
        return Err(Error::invalid("trajectory targets must be real-valued"));
    };
    let targets = t
        .iter()
        .map(|flat| {
            let pts: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            resample_points(&pts, m)
                .iter()
                .flat_map(|p| [p[0], p[1]])
                .collect()
        })
        .collect();
    Ok(Problem {
        targets: Targets::Regression(targets),
        ..problem.clone()
    })
}

/// Trajectory clusters used to break ADE down in reports, numbered by size (largest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClusters {
    pub clustering: Clustering,
    /// `rank[label]` is the reported cluster index.
    pub rank: Vec<usize>,
}

impl ReferenceClusters {
    pub fn fit(problem: &Problem, train: &[usize], k: usize, linkage: Linkage) -> Result<Self> {
        let Targets::Regression(t) = problem.targets.subset(train) else {
            return Err(Error::invalid("trajectory targets must be real-valued"));
        };
        let clustering = agglomerative(&t, k.min(t.len()), linkage)?;
        let mut sizes: Vec<(usize, usize)> = (0..clustering.k)
            .map(|c| (clustering.labels.iter().filter(|&&l| l == c).count(), c))
            .collect();
        sizes.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rank = vec![0; clustering.k];
        for (r, (_, c)) in sizes.into_iter().enumerate() {
            rank[c] = r;
        }
        Ok(ReferenceClusters { clustering, rank })
    }

    pub fn assign(&self, flat: &[f64]) -> usize {
        self.rank[self.clustering.assign(flat)]
    }
}

/// ADE per reference cluster of the ground-truth trajectories.
pub fn cluster_ade(
    reference: &ReferenceClusters,
    truth: &[Vec<f64>],
    pred: &[Vec<f64>],
) -> Result<Vec<Option<f64>>> {
    let labels: Vec<usize> = truth.iter().map(|t| reference.assign(t)).collect();
    (0..reference.clustering.k)
        .map(|c| {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                return Ok(None);
            }
            let t: Vec<Vec<f64>> = idx.iter().map(|&i| truth[i].clone()).collect();
            let p: Vec<Vec<f64>> = idx.iter().map(|&i| pred[i].clone()).collect();
            ade_flat(&t, &p).map(Some)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub m: usize,
    pub with_entry: bool,
    pub model: StrategyModel,
}

impl TrajectoryBundle {
    /// Cluster label of each training row (training order is canonical key order).
    pub fn train_cluster_labels(&self) -> Option<&[usize]> {
        self.model
            .cluster
            .as_ref()
            .map(|c| c.train_labels.as_slice())
    }
}

/// Fits the trajectory model for `strategy` on every row carrying a trajectory.
pub fn fit_trajectory_pipeline(
    rows: &[FeatureRow],
    strategy: &StrategySpec,
    m: usize,
    with_entry: bool,
) -> Result<TrajectoryBundle> {
    let problem = with_resample(
        &Problem::from_rows(rows, TaskKind::Trajectory, with_entry)?,
        m,
    )?;
    let all: Vec<usize> = (0..problem.len()).collect();
    Ok(TrajectoryBundle {
        m,
        with_entry,
        model: StrategyModel::fit(strategy, &problem, &all)?,
    })
}

/// Predicts `m` points from the row's features alone.
pub fn predict_trajectory(bundle: &TrajectoryBundle, row: &FeatureRow) -> Result<Vec<[f64; 2]>> {
    let problem = Problem {
        task: TaskKind::Trajectory,
        with_entry: bundle.with_entry,
        names: crate::features::input_names(bundle.with_entry),
        inputs: vec![row.inputs(bundle.with_entry)],
        targets: Targets::Regression(vec![vec![0.0; 2 * bundle.m]]),
        keys: vec![RowKey::of(row)],
        zebra: vec![row.label_zebra],
    };
    match bundle.model.predict(&problem, &[0])? {
        Predictions::Regression(v) => Ok(v[0].chunks_exact(2).map(|c| [c[0], c[1]]).collect()),
        Predictions::Classification { .. } => {
            Err(Error::invalid("trajectory model returned class labels"))
        }
    }
}
