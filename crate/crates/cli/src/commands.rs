use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crosslab::eval::{
    compare_groups, cross_validate_detailed, Alternative, EvalReport, GroupComparison, Problem,
    ScaledModel, TaskKind,
};
use crosslab::features::{extract_all, FeatureRow};
use crosslab::io::{
    eval_reports_csv, importance_csv, plot_accuracy_vs_wait, plot_gap_vs_missed, plot_gap_vs_speed,
    plot_gap_vs_wait, read_trial_set, strategy_reports_csv, transfer_matrix_csv, write_atomic,
    write_features_csv, write_json, write_trial_set, DatasetSource, ExperimentConfig, Overrides,
    PlotBin,
};
use crosslab::models::ModelKind;
use crosslab::sim::TrialRecord;
use crosslab::transfer::{
    cross_validate_strategy, run_strategy, transfer_eval, with_resample, Strategy, StrategyReport,
    TransferMatrix,
};
use crosslab::{Error, Result};

use crate::RunArgs;

/// Bins per plotted variable; the missed-gap plot pools counts above `MISSED_CAP`.
const PLOT_BINS: usize = 5;
const MISSED_CAP: usize = 10;
const TOP_FEATURES: usize = 3;

fn load_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path, ov)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn simulate(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(
        config,
        &Overrides {
            seed,
            ..Default::default()
        },
    )?;
    let dir = match out {
        Some(d) => d,
        None => out_dir(&cfg, None).join("dataset"),
    };
    let n = simulate_into(&cfg, &dir)?;
    println!("wrote {n} trials to {}", dir.display());
    Ok(())
}

fn simulate_into(cfg: &ExperimentConfig, dir: &Path) -> Result<usize> {
    let DatasetSource::Generate(block) = &cfg.source else {
        return Err(Error::invalid(
            "simulate needs a [generation] section in the config",
        ));
    };
    let trials = block.generate(cfg.seed)?;
    let manifest = write_trial_set(dir, &trials, cfg.seed, &cfg.sha256)?;
    Ok(manifest.n_trials)
}

fn read_datasets(dirs: &[PathBuf]) -> Result<Vec<TrialRecord>> {
    let mut all = Vec::new();
    for d in dirs {
        all.extend(read_trial_set(d)?);
    }
    Ok(all)
}

pub fn extract(data: &[PathBuf], out: &Path) -> Result<()> {
    let rows = extract_all(&read_datasets(data)?);
    write_atomic(out, &write_features_csv(&rows)?)?;
    println!("wrote {} feature rows to {}", rows.len(), out.display());
    Ok(())
}

/// Loads or generates the dataset; generated data is written first and read
/// back, so both paths see identical values.
fn load_rows(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<FeatureRow>> {
    let trials = match &cfg.source {
        DatasetSource::Paths(p) => read_datasets(p)?,
        DatasetSource::Generate(_) => {
            let dir = out.join("dataset");
            simulate_into(cfg, &dir)?;
            read_trial_set(&dir)?
        }
    };
    let rows = extract_all(&trials);
    info!("{} of {} trials crossed", rows.len(), trials.len());
    Ok(rows)
}

fn problem_of(cfg: &ExperimentConfig, rows: &[FeatureRow]) -> Result<Problem> {
    let p = Problem::from_rows(rows, cfg.task, cfg.with_entry)?;
    if cfg.task == TaskKind::Trajectory && cfg.resample != crosslab::features::DEFAULT_RESAMPLE {
        return with_resample(&p, cfg.resample);
    }
    Ok(p)
}

/// Rows that made it into the problem, in problem order.
fn labelled_rows(task: TaskKind, rows: &[FeatureRow]) -> Vec<FeatureRow> {
    rows.iter()
        .filter(|r| match task {
            TaskKind::GapSelection => r.label_gap.is_some(),
            TaskKind::ZebraUsage => r.label_zebra.is_some(),
            TaskKind::Trajectory => r.label_trajectory.as_ref().is_some_and(|t| t.len() >= 2),
        })
        .cloned()
        .collect()
}

pub fn run(args: &RunArgs, evaluate: bool) -> Result<()> {
    let ov = Overrides {
        seed: args.seed,
        task: args.task,
        split: args.split,
        strategies: (!args.strategy.is_empty()).then(|| args.strategy.clone()),
    };
    let cfg = load_config(&args.config, &ov)?;
    let out = out_dir(&cfg, args.out.clone());
    let rows = load_rows(&cfg, &out)?;
    write_atomic(&out.join("features.csv"), &write_features_csv(&rows)?)?;
    let problem = problem_of(&cfg, &rows)?;

    if evaluate {
        evaluate_models(&cfg, &problem, &labelled_rows(cfg.task, &rows), &out)?;
    }
    transfer(&cfg, &problem, &out)?;
    println!("reports written to {}", out.display());
    Ok(())
}

fn evaluate_models(
    cfg: &ExperimentConfig,
    problem: &Problem,
    rows: &[FeatureRow],
    out: &Path,
) -> Result<()> {
    let plan = problem.plan(cfg.split, cfg.seed)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut oof: Vec<(ModelKind, Vec<Vec<f64>>)> = Vec::new();
    for spec in &cfg.models {
        let report = if cfg.task == TaskKind::Trajectory {
            cross_validate_strategy(&cfg.strategy_spec(Strategy::Joint, spec), problem, &plan)?
        } else {
            let (r, pred) = cross_validate_detailed(spec, problem, &plan)?;
            oof.push((spec.kind, pred));
            r
        };
        println!("{}: {}", spec.kind.as_str(), headline(cfg.task, &report));
        reports.push(report);
    }
    write_atomic(&out.join("eval_report.csv"), &eval_reports_csv(&reports)?)?;
    write_json(&out.join("eval_report.json"), &reports)?;

    let mut importance = Vec::new();
    let all: Vec<usize> = (0..problem.len()).collect();
    let domains = problem.by_country();
    for spec in &cfg.models {
        let model = ScaledModel::fit(spec, problem, &all)?;
        importance.push((
            spec.kind.as_str().to_string(),
            model.model.importance.clone(),
        ));
        // Full precision keeps a reloaded model bit-identical.
        let json = model.model.to_json()?;
        write_atomic(
            &out.join("models")
                .join(format!("{}.json", spec.kind.as_str())),
            json.as_bytes(),
        )?;
        if domains.len() > 1 {
            for (tag, p) in &domains {
                let idx: Vec<usize> = (0..p.len()).collect();
                let m = ScaledModel::fit(spec, p, &idx)?;
                importance.push((
                    format!("{}/{tag}", spec.kind.as_str()),
                    m.model.importance.clone(),
                ));
            }
        }
    }
    write_atomic(
        &out.join("importance_top3.csv"),
        &importance_csv(&importance, TOP_FEATURES)?,
    )?;

    // Plots use the network's out-of-fold predictions when it was run.
    let chosen = oof
        .iter()
        .find(|(k, _)| *k == ModelKind::MLP)
        .or_else(|| oof.first());
    let plots = out.join("plots");
    match (cfg.task, chosen) {
        (TaskKind::GapSelection, Some((_, pred))) => {
            let p: Vec<f64> = pred.iter().map(|v| v[0]).collect();
            write_plot(
                &plots.join("gap_vs_missed.csv"),
                &plot_gap_vs_missed(rows, Some(&p), MISSED_CAP)?,
                "N_cb",
            )?;
            write_plot(
                &plots.join("gap_vs_wait.csv"),
                &plot_gap_vs_wait(rows, Some(&p), PLOT_BINS)?,
                "T_w",
            )?;
            write_plot(
                &plots.join("gap_vs_speed.csv"),
                &plot_gap_vs_speed(rows, Some(&p), PLOT_BINS)?,
                "V_p",
            )?;
        }
        (TaskKind::ZebraUsage, Some((_, pred))) => {
            let labels: Vec<bool> = pred.iter().map(|v| v[0] >= 0.5).collect();
            write_plot(
                &plots.join("accuracy_vs_wait.csv"),
                &plot_accuracy_vs_wait(rows, &labels, PLOT_BINS)?,
                "T_w",
            )?;
        }
        _ => {}
    }
    Ok(())
}

fn write_plot(path: &Path, bins: &[PlotBin], x: &str) -> Result<()> {
    write_atomic(path, &PlotBin::csv(bins, x)?)
}

fn headline(task: TaskKind, r: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    match task {
        TaskKind::GapSelection => format!("MAE {} s, MAPE {} %", f(r.mean.mae), f(r.mean.mape)),
        TaskKind::ZebraUsage => format!("ACC {}, F1 {}", f(r.mean.acc), f(r.mean.f1)),
        TaskKind::Trajectory => format!("ADE {} m", f(r.mean.ade)),
    }
}

fn transfer(cfg: &ExperimentConfig, problem: &Problem, out: &Path) -> Result<()> {
    let domains = problem.by_country();
    if domains.len() < 2 {
        warn!("one country in the data; skipping transfer evaluation");
        return Ok(());
    }
    let refs: Vec<&Problem> = domains.iter().map(|(_, p)| p).collect();
    let matrix: TransferMatrix = transfer_eval(&refs, &cfg.models, cfg.split, cfg.seed)?;
    write_atomic(
        &out.join("transfer_matrix.csv"),
        &transfer_matrix_csv(&matrix)?,
    )?;
    write_json(&out.join("transfer_matrix.json"), &matrix)?;

    if cfg.strategies.is_empty() {
        return Ok(());
    }
    if domains.len() != 2 {
        warn!(
            "strategy comparison needs exactly two countries, found {}",
            domains.len()
        );
        return Ok(());
    }
    let (a, b) = (&domains[0].1, &domains[1].1);
    let plans = (a.plan(cfg.split, cfg.seed)?, b.plan(cfg.split, cfg.seed)?);
    let mut reports: Vec<StrategyReport> = Vec::new();
    for spec in &cfg.models {
        for &s in &cfg.strategies {
            reports.push(run_strategy(
                &cfg.strategy_spec(s, spec),
                a,
                b,
                (&plans.0, &plans.1),
            )?);
        }
    }
    write_atomic(
        &out.join("strategies.csv"),
        &strategy_reports_csv(&reports)?,
    )?;
    write_json(&out.join("strategies.json"), &reports)
}

pub struct StatsArgs {
    pub data: Vec<PathBuf>,
    pub by: String,
    pub value: String,
    pub condition: Option<String>,
    pub country: Option<String>,
    pub alternative: String,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct StatsOutput<'a> {
    by: &'a str,
    value: &'a str,
    condition: Option<&'a str>,
    country: Option<&'a str>,
    #[serde(flatten)]
    comparison: GroupComparison,
}

fn stat_value(value: &str, r: &FeatureRow) -> Result<Option<f64>> {
    Ok(match value {
        "wait" => Some(r.pre.T_w),
        "gap" => r.label_gap,
        "speed" => Some(r.pre.V_p),
        "missed" => Some(r.pre.N_cb),
        other => {
            return Err(Error::invalid(format!(
                "unknown --value {other:?}; use wait, gap, speed or missed"
            )))
        }
    })
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let alternative: Alternative = a.alternative.parse()?;
    let rows = extract_all(&read_datasets(&a.data)?);
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in &rows {
        if a.condition
            .as_ref()
            .is_some_and(|c| !c.eq_ignore_ascii_case(&r.condition))
            || a.country.as_ref().is_some_and(|c| c != &r.country_tag)
        {
            continue;
        }
        let key = match a.by.as_str() {
            "country" => &r.country_tag,
            "condition" => &r.condition,
            other => {
                return Err(Error::invalid(format!(
                    "unknown --by {other:?}; use country or condition"
                )))
            }
        };
        let Some(v) = stat_value(&a.value, r)? else {
            continue;
        };
        match groups.iter_mut().find(|g| &g.0 == key) {
            Some(g) => g.1.push(v),
            None => groups.push((key.clone(), vec![v])),
        }
    }
    groups.sort_by(|x, y| x.0.cmp(&y.0));
    let output = StatsOutput {
        by: &a.by,
        value: &a.value,
        condition: a.condition.as_deref(),
        country: a.country.as_deref(),
        comparison: compare_groups(&groups, alternative)?,
    };
    let json = crosslab::io::to_json_string(&output)?;
    match &a.out {
        Some(p) => write_atomic(p, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

/// Markdown summary of whatever reports exist under `dir`.
pub fn report(dir: &Path) -> Result<()> {
    let evals: Option<Vec<EvalReport>> = read_json(&dir.join("eval_report.json"))?;
    let matrix: Option<TransferMatrix> = read_json(&dir.join("transfer_matrix.json"))?;
    let strategies: Option<Vec<StrategyReport>> = read_json(&dir.join("strategies.json"))?;
    if evals.is_none() && matrix.is_none() && strategies.is_none() {
        return Err(Error::invalid(format!(
            "no reports found in {}",
            dir.display()
        )));
    }
    let mut md = String::new();
    if let Some(evals) = &evals {
        let _ = writeln!(
            md,
            "## Cross-validation\n\n| model | task | split | n | mae | mape | acc | f1 | ade |"
        );
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
        for r in evals {
            let m = &r.mean;
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.model,
                r.task.as_str(),
                r.split.as_str(),
                m.n,
                cell(m.mae),
                cell(m.mape),
                cell(m.acc),
                cell(m.f1),
                cell(m.ade)
            );
        }
        md.push('\n');
    }
    if let Some(t) = &matrix {
        let _ = writeln!(
            md,
            "## Transfer ({})\n\n| model | train | test | headline |",
            t.task.as_str()
        );
        let _ = writeln!(md, "|---|---|---|---|");
        for c in &t.cells {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                c.model,
                c.train_domain,
                c.test_domain,
                cell(c.report.headline())
            );
        }
        md.push('\n');
    }
    if let Some(s) = &strategies {
        let _ = writeln!(
            md,
            "## Strategies\n\n| strategy | model | average headline |"
        );
        let _ = writeln!(md, "|---|---|---|");
        for r in s {
            let h = match r.task {
                TaskKind::GapSelection => r.average.mae,
                TaskKind::ZebraUsage => r.average.acc,
                TaskKind::Trajectory => r.average.ade,
            };
            let _ = writeln!(md, "| {} | {} | {} |", r.strategy, r.model, cell(h));
        }
        md.push('\n');
    }
    write_atomic(&dir.join("summary.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}
