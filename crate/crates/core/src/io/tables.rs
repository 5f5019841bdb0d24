use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_bytes, fmt_f64, fmt_opt};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metrics, TaskKind};
use crate::features::{
    EntryFrameFeatures, FeatureRow, PreEventFeatures, DEFAULT_RESAMPLE, ENTRY_NAMES,
    PRE_EVENT_NAMES,
};
use crate::transfer::{StrategyReport, TransferMatrix};

const ID_COLUMNS: [&str; 4] = ["trial_id", "participant_id", "country_tag", "condition"];

/// Fixed column order: ids, pre-event features, entry features, labels and
/// `m` interleaved trajectory points.
pub fn feature_columns(m: usize) -> Vec<String> {
    let mut c: Vec<String> = ID_COLUMNS.iter().map(|s| s.to_string()).collect();
    c.extend(PRE_EVENT_NAMES.iter().map(|s| s.to_string()));
    c.extend(ENTRY_NAMES.iter().map(|s| s.to_string()));
    c.push("label_gap".into());
    c.push("label_zebra".into());
    for i in 0..m {
        c.push(format!("traj_x{i}"));
        c.push(format!("traj_y{i}"));
    }
    c
}

pub fn write_features_csv(rows: &[FeatureRow]) -> Result<Vec<u8>> {
    let m = rows
        .iter()
        .filter_map(|r| r.label_trajectory.as_ref().map(Vec::len))
        .max()
        .unwrap_or(DEFAULT_RESAMPLE);
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.trial_id.to_string(),
                r.participant_id.to_string(),
                r.country_tag.clone(),
                r.condition.clone(),
            ];
            v.extend(r.pre.to_array().iter().map(|x| fmt_f64(*x)));
            match &r.entry {
                Some(e) => v.extend(e.to_array().iter().map(|x| fmt_f64(*x))),
                None => v.extend(std::iter::repeat_n(String::new(), ENTRY_NAMES.len())),
            }
            v.push(fmt_opt(r.label_gap));
            v.push(r.label_zebra.map(|b| b.to_string()).unwrap_or_default());
            let traj = r.label_trajectory.as_deref().unwrap_or(&[]);
            for i in 0..m {
                match traj.get(i) {
                    Some(p) => v.extend([fmt_f64(p[0]), fmt_f64(p[1])]),
                    None => v.extend([String::new(), String::new()]),
                }
            }
            v
        })
        .collect();
    csv_bytes(&feature_columns(m), &records)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let schema = |row: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        row,
        message,
    };
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let headers = r.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    let n_traj = headers.len().saturating_sub(4 + 14 + 5 + 2);
    if n_traj % 2 != 0 || headers.iter().collect::<Vec<_>>() != feature_columns(n_traj / 2) {
        return Err(schema(
            1,
            "header does not match the feature column order".into(),
        ));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec =
            rec.map_err(|e| schema(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = cell(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| schema(row, format!("column {}: cannot parse {s:?}", &headers[i])))
        };
        let need = |i: usize| {
            num(i)?.ok_or_else(|| schema(row, format!("column {} is empty", &headers[i])))
        };
        let pre: Vec<f64> = (4..18).map(need).collect::<Result<_>>()?;
        let entry: Vec<Option<f64>> = (18..23).map(num).collect::<Result<_>>()?;
        let entry = if entry.iter().all(Option::is_some) {
            Some(EntryFrameFeatures::from_slice(
                &entry.iter().flatten().copied().collect::<Vec<_>>(),
            ))
        } else if entry.iter().all(Option::is_none) {
            None
        } else {
            return Err(schema(row, "entry features are partly empty".into()));
        };
        let label_zebra = match cell(24) {
            "" => None,
            s => Some(
                s.to_ascii_lowercase()
                    .parse()
                    .map_err(|_| schema(row, format!("label_zebra: cannot parse {s:?}")))?,
            ),
        };
        let mut traj = Vec::new();
        for i in 0..n_traj / 2 {
            match (num(25 + 2 * i)?, num(26 + 2 * i)?) {
                (Some(x), Some(y)) => traj.push([x, y]),
                (None, None) => break,
                _ => return Err(schema(row, format!("trajectory point {i} is half empty"))),
            }
        }
        out.push(FeatureRow {
            trial_id: cell(0)
                .parse()
                .map_err(|_| schema(row, "trial_id is not an integer".into()))?,
            participant_id: cell(1)
                .parse()
                .map_err(|_| schema(row, "participant_id is not an integer".into()))?,
            country_tag: cell(2).to_string(),
            condition: cell(3).to_string(),
            pre: PreEventFeatures::from_slice(&pre),
            entry,
            label_gap: num(23)?,
            label_zebra,
            label_trajectory: (!traj.is_empty()).then_some(traj),
        });
    }
    Ok(out)
}

fn metric_names(task: TaskKind, clusters: usize) -> Vec<String> {
    match task {
        TaskKind::GapSelection => vec!["mae".into(), "mape".into()],
        TaskKind::ZebraUsage => vec!["acc".into(), "f1".into()],
        TaskKind::Trajectory => {
            let mut v = vec!["ade".to_string()];
            v.extend((1..=clusters).map(|c| format!("ade_c{c}")));
            v
        }
    }
}

fn metric_values(task: TaskKind, m: &Metrics, clusters: usize) -> Vec<String> {
    match task {
        TaskKind::GapSelection => vec![fmt_opt(m.mae), fmt_opt(m.mape)],
        TaskKind::ZebraUsage => vec![fmt_opt(m.acc), fmt_opt(m.f1)],
        TaskKind::Trajectory => {
            let mut v = vec![fmt_opt(m.ade)];
            v.extend((0..clusters).map(|c| fmt_opt(m.ade_by_cluster.get(c).copied().flatten())));
            v
        }
    }
}

fn cluster_width<'a>(ms: impl Iterator<Item = &'a Metrics>) -> usize {
    ms.map(|m| m.ade_by_cluster.len()).max().unwrap_or(0)
}

/// One row per model with the fold-mean metrics of its task.
pub fn eval_reports_csv(reports: &[EvalReport]) -> Result<Vec<u8>> {
    let Some(first) = reports.first() else {
        return csv_bytes(&["model".into()], &[]);
    };
    let task = first.task;
    if reports.iter().any(|r| r.task != task) {
        return Err(Error::invalid("eval reports mix tasks"));
    }
    let k = cluster_width(reports.iter().map(|r| &r.mean));
    let mut header: Vec<String> = ["model", "task", "split", "seed", "n"]
        .map(String::from)
        .to_vec();
    header.extend(metric_names(task, k));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut v = vec![
                r.model.clone(),
                task.as_str().into(),
                r.split.as_str().into(),
                r.seed.to_string(),
                r.mean.n.to_string(),
            ];
            v.extend(metric_values(task, &r.mean, k));
            v
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Rows are (model, training domain); columns are test domain × metric.
pub fn transfer_matrix_csv(m: &TransferMatrix) -> Result<Vec<u8>> {
    let k = cluster_width(m.cells.iter().map(|c| &c.report.mean));
    let names = metric_names(m.task, k);
    let mut header = vec!["model".to_string(), "train".to_string()];
    for d in &m.domains {
        header.extend(names.iter().map(|n| format!("{d}_{n}")));
    }
    let mut models: Vec<&str> = Vec::new();
    for c in &m.cells {
        if !models.contains(&c.model.as_str()) {
            models.push(&c.model);
        }
    }
    let mut rows = Vec::new();
    for model in models {
        for train in &m.domains {
            let mut v = vec![model.to_string(), train.clone()];
            for test in &m.domains {
                match m.get(train, test, model) {
                    Some(r) => v.extend(metric_values(m.task, &r.mean, k)),
                    None => v.extend(std::iter::repeat_n(String::new(), names.len())),
                }
            }
            rows.push(v);
        }
    }
    csv_bytes(&header, &rows)
}

/// Rows are (strategy, model); columns are domain × metric, then the average.
pub fn strategy_reports_csv(reports: &[StrategyReport]) -> Result<Vec<u8>> {
    let Some(first) = reports.first() else {
        return csv_bytes(&["strategy".into(), "model".into()], &[]);
    };
    let task = first.task;
    let domains: Vec<&str> = first.domains.iter().map(|d| d.domain.as_str()).collect();
    if reports.iter().any(|r| {
        r.task != task
            || r.domains
                .iter()
                .map(|d| d.domain.as_str())
                .ne(domains.iter().copied())
    }) {
        return Err(Error::invalid(
            "strategy reports disagree on task or domains",
        ));
    }
    let k = cluster_width(
        reports
            .iter()
            .flat_map(|r| r.domains.iter().map(|d| &d.report.mean)),
    );
    let names = metric_names(task, k);
    let mut header = vec!["strategy".to_string(), "model".to_string()];
    for d in domains.iter().chain(std::iter::once(&"average")) {
        header.extend(names.iter().map(|n| format!("{d}_{n}")));
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut v = vec![r.strategy.clone(), r.model.clone()];
            for d in &r.domains {
                v.extend(metric_values(task, &d.report.mean, k));
            }
            v.extend(metric_values(task, &r.average, k));
            v
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// One row per labelled model listing its `top` most important features.
pub fn importance_csv(entries: &[(String, Vec<(String, f64)>)], top: usize) -> Result<Vec<u8>> {
    let mut header = vec!["model".to_string()];
    for i in 1..=top {
        header.push(format!("feature_{i}"));
        header.push(format!("score_{i}"));
    }
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|(label, imp)| {
            let mut v = vec![label.clone()];
            for i in 0..top {
                match imp.get(i) {
                    Some((n, s)) => v.extend([n.clone(), fmt_f64(*s)]),
                    None => v.extend([String::new(), String::new()]),
                }
            }
            v
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Mean outcome of one bin of a plotted variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub observed: f64,
    pub predicted: Option<f64>,
}

impl PlotBin {
    pub fn csv(bins: &[PlotBin], x_name: &str) -> Result<Vec<u8>> {
        let header = [
            format!("{x_name}_lo"),
            format!("{x_name}_hi"),
            "n".into(),
            "observed".into(),
            "predicted".into(),
        ];
        let rows: Vec<Vec<String>> = bins
            .iter()
            .map(|b| {
                vec![
                    fmt_f64(b.lo),
                    fmt_f64(b.hi),
                    b.n.to_string(),
                    fmt_f64(b.observed),
                    fmt_opt(b.predicted),
                ]
            })
            .collect();
        csv_bytes(&header, &rows)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Equal-count bins over `x` after sorting; ties stay in rank order.
fn quantile_bins(points: &[(f64, f64, Option<f64>)], n_bins: usize) -> Vec<PlotBin> {
    let mut sorted: Vec<_> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let n_bins = n_bins.min(n);
    (0..n_bins)
        .map(|b| {
            let chunk = &sorted[b * n / n_bins..(b + 1) * n / n_bins];
            PlotBin {
                lo: chunk[0].0,
                hi: chunk[chunk.len() - 1].0,
                n: chunk.len(),
                observed: mean(chunk.iter().map(|p| p.1)),
                predicted: chunk
                    .iter()
                    .map(|p| p.2)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| mean(v.into_iter())),
            }
        })
        .collect()
}

fn gap_points(
    rows: &[FeatureRow],
    x: impl Fn(&FeatureRow) -> f64,
    pred: Option<&[f64]>,
) -> Result<Vec<(f64, f64, Option<f64>)>> {
    if let Some(p) = pred {
        if p.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: p.len(),
            });
        }
    }
    Ok(rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.label_gap.map(|g| (x(r), g, pred.map(|p| p[i]))))
        .collect())
}

/// Mean accepted gap per missed two-lane gap count; counts above `cap` pool into one bin.
pub fn plot_gap_vs_missed(
    rows: &[FeatureRow],
    pred: Option<&[f64]>,
    cap: usize,
) -> Result<Vec<PlotBin>> {
    let pts = gap_points(rows, |r| r.pre.N_cb.min(cap as f64), pred)?;
    let mut out = Vec::new();
    for c in 0..=cap {
        let bin: Vec<_> = pts.iter().filter(|p| p.0 == c as f64).copied().collect();
        if bin.is_empty() {
            continue;
        }
        let mut b = quantile_bins(&bin, 1).remove(0);
        b.lo = c as f64;
        b.hi = if c == cap { f64::INFINITY } else { c as f64 };
        out.push(b);
    }
    Ok(out)
}

pub fn plot_gap_vs_wait(
    rows: &[FeatureRow],
    pred: Option<&[f64]>,
    n_bins: usize,
) -> Result<Vec<PlotBin>> {
    Ok(quantile_bins(
        &gap_points(rows, |r| r.pre.T_w, pred)?,
        n_bins,
    ))
}

pub fn plot_gap_vs_speed(
    rows: &[FeatureRow],
    pred: Option<&[f64]>,
    n_bins: usize,
) -> Result<Vec<PlotBin>> {
    Ok(quantile_bins(
        &gap_points(rows, |r| r.pre.V_p, pred)?,
        n_bins,
    ))
}

/// Zebra-usage accuracy per waiting-time bin; `observed` is the usage rate.
pub fn plot_accuracy_vs_wait(
    rows: &[FeatureRow],
    pred: &[bool],
    n_bins: usize,
) -> Result<Vec<PlotBin>> {
    if pred.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: pred.len(),
        });
    }
    let pts: Vec<_> = rows
        .iter()
        .zip(pred)
        .filter_map(|(r, &p)| {
            r.label_zebra.map(|z| {
                let hit = if p == z { 1.0 } else { 0.0 };
                (r.pre.T_w, if z { 1.0 } else { 0.0 }, Some(hit))
            })
        })
        .collect();
    Ok(quantile_bins(&pts, n_bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_all;
    use crate::sim::{generate_dataset, standard_conditions, AgentProfile};

    #[test]
    fn features_round_trip() {
        let trials =
            generate_dataset(&standard_conditions(), &AgentProfile::japan(), 2, 2, 4).unwrap();
        let rows = extract_all(&trials);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, write_features_csv(&rows).unwrap()).unwrap();
        let back = read_features_csv(&p).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(
                (a.trial_id, &a.condition, a.label_zebra),
                (b.trial_id, &b.condition, b.label_zebra)
            );
            assert_eq!(
                a.label_trajectory.as_ref().map(Vec::len),
                b.label_trajectory.as_ref().map(Vec::len)
            );
            for (x, y) in a.inputs(true).iter().zip(b.inputs(true)) {
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
            }
        }
        assert_eq!(
            write_features_csv(&back).unwrap(),
            write_features_csv(&rows).unwrap()
        );
    }

    #[test]
    fn header_is_fixed() {
        let c = feature_columns(2);
        assert_eq!(c.len(), 4 + 14 + 5 + 2 + 4);
        assert_eq!(&c[4], "T_w");
        assert_eq!(&c[18], "D_n");
        assert_eq!(&c[23], "label_gap");
        assert_eq!(&c[28], "traj_y1");
    }

    #[test]
    fn quantile_bins_split_evenly() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 2.0 * i as f64, None)).collect();
        let bins = quantile_bins(&pts, 5);
        assert_eq!(bins.len(), 5);
        assert!(bins.iter().all(|b| b.n == 2 && b.predicted.is_none()));
        assert_eq!(bins[0].observed, 1.0);
        assert_eq!((bins[4].lo, bins[4].hi), (8.0, 9.0));
    }
}
