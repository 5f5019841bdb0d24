use rand::seq::SliceRandom;

use crate::error::Result;
use crate::rng::{stream_id, stream_rng};

use super::{DesignMatrix, Params, Predictions, Targets, TrainedModel};

const PERMUTATION_REPEATS: usize = 5;

/// Mean squared error for regression, Brier score for classification.
fn error(pred: &Predictions, y: &Targets) -> f64 {
    match (pred, y) {
        (Predictions::Regression(p), Targets::Regression(t)) => {
            let k = t[0].len() as f64;
            p.iter()
                .zip(t)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / k)
                .sum::<f64>()
                / t.len() as f64
        }
        (Predictions::Classification { proba, .. }, Targets::Classes(c)) => {
            proba
                .iter()
                .zip(c)
                .map(|(p, &c)| (p - if c { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
                / c.len() as f64
        }
        _ => f64::NAN,
    }
}

/// Mean increase in error after shuffling each column.
pub fn permutation_importance(
    model: &TrainedModel,
    x: &DesignMatrix,
    y: &Targets,
    seed: u64,
) -> Result<Vec<f64>> {
    let base = error(&model.predict(x)?, y);
    let mut out = Vec::with_capacity(x.n_cols());
    for j in 0..x.n_cols() {
        let mut rng = stream_rng(seed, stream_id(&[0x7065_726d, j as u64]));
        let col = x.column(j);
        let mut xp = x.clone();
        let mut total = 0.0;
        for _ in 0..PERMUTATION_REPEATS {
            let mut shuffled = col.clone();
            shuffled.shuffle(&mut rng);
            xp.set_column(j, &shuffled);
            total += error(&model.predict(&xp)?, y) - base;
        }
        out.push(total / PERMUTATION_REPEATS as f64);
    }
    Ok(out)
}

/// Per-column scores sorted descending (stable on column order).
///
/// Linear families use `|coefficient| · sd(column)`, summed over outputs; forests
/// use the impurity decrease; the MLP uses permutation importance on `(x, y)`.
pub fn feature_importance(
    model: &TrainedModel,
    x: &DesignMatrix,
    y: &Targets,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let sds = x.column_sds();
    let scores: Vec<f64> = match &model.params {
        Params::Linear(m) => (0..x.n_cols())
            .map(|j| {
                (0..m.n_outputs)
                    .map(|o| m.coefficient(Some(j), o).abs())
                    .sum::<f64>()
                    * sds[j]
            })
            .collect(),
        Params::Classifier(m) => m
            .weights
            .iter()
            .zip(&sds)
            .map(|(w, s)| w.abs() * s)
            .collect(),
        Params::Forest(f) => f.impurity_importance.clone(),
        Params::Mlp(_) => permutation_importance(model, x, y, seed)?,
    };
    let mut ranked: Vec<(String, f64)> = model.column_names.iter().cloned().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}
