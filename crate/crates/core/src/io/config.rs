use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{SplitMode, TaskKind};
use crate::models::{Hyper, Linkage, ModelKind, ModelSpec};
use crate::rng::stream_id;
use crate::sim::{generate_dataset, AgentProfile, GroupCondition, ScenarioConfig, TrialRecord};
use crate::transfer::{Strategy, StrategySpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    seed: Option<u64>,
    task: Option<String>,
    models: Option<Vec<String>>,
    split: Option<String>,
    strategies: Option<Vec<String>>,
    with_entry: Option<bool>,
    resample: Option<usize>,
    output_dir: Option<PathBuf>,
    generation: Option<RawGeneration>,
    dataset: Option<RawDataset>,
    scenario: Option<toml::Table>,
    #[serde(default)]
    agents: BTreeMap<String, toml::Table>,
    hyper: Option<toml::Table>,
    strategy: Option<RawStrategy>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeneration {
    profiles: Option<Vec<String>>,
    participants: Option<u32>,
    trials_per_condition: Option<u32>,
    conditions: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    paths: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    n_clusters: Option<usize>,
    report_clusters: Option<usize>,
    per_cluster: Option<bool>,
    linkage: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBlock {
    pub profiles: Vec<AgentProfile>,
    pub conditions: Vec<ScenarioConfig>,
    pub participants: u32,
    pub trials_per_condition: u32,
}

impl GenerationBlock {
    /// Simulates every profile; profile `i` draws from `stream_id([seed, i])`
    /// and its trials carry the profile name as country tag.
    pub fn generate(&self, seed: u64) -> Result<Vec<TrialRecord>> {
        let mut all = Vec::with_capacity(self.trial_count());
        for (i, p) in self.profiles.iter().enumerate() {
            all.extend(generate_dataset(
                &self.conditions,
                p,
                self.participants,
                self.trials_per_condition,
                stream_id(&[seed, i as u64]),
            )?);
        }
        Ok(all)
    }

    pub fn trial_count(&self) -> usize {
        self.profiles.len()
            * self.participants as usize
            * self.conditions.len()
            * self.trials_per_condition as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Paths(Vec<PathBuf>),
    Generate(GenerationBlock),
}

/// Command-line values that replace their config counterparts before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub task: Option<TaskKind>,
    pub split: Option<SplitMode>,
    pub strategies: Option<Vec<Strategy>>,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: TaskKind,
    pub models: Vec<ModelSpec>,
    pub split: SplitMode,
    pub strategies: Vec<Strategy>,
    pub n_clusters: usize,
    pub report_clusters: usize,
    pub per_cluster: bool,
    pub linkage: Linkage,
    pub with_entry: bool,
    pub resample: usize,
    pub output_dir: Option<PathBuf>,
    pub source: DatasetSource,
    /// SHA-256 of the config text.
    pub sha256: String,
}

/// 1-based line of `key` inside `[section]` (or at top level), if present.
fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = Some(t.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            if key.is_empty() && current.as_deref() == section {
                return Some(i + 1);
            }
            continue;
        }
        let in_section = match section {
            None => current.is_none(),
            Some(s) => current.as_deref() == Some(s),
        };
        if in_section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, section: Option<&str>, key: &str, message: impl Into<String>) -> Error {
        let line = line_of(self.text, section, key)
            .or_else(|| section.and_then(|s| line_of(self.text, Some(s), "")))
            .unwrap_or(1);
        Error::Config {
            line,
            message: message.into(),
        }
    }
}

fn line_from_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn merge<T: serde::Serialize + serde::de::DeserializeOwned>(
    base: &T,
    overrides: &toml::Table,
) -> std::result::Result<T, String> {
    let mut v = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    for (k, val) in overrides {
        v.insert(k.clone(), val.clone());
    }
    toml::Value::Table(v)
        .try_into()
        .map_err(|e: toml::de::Error| e.message().to_string())
}

fn preset(name: &str) -> Option<AgentProfile> {
    match name {
        "DE" => Some(AgentProfile::germany()),
        "JP" => Some(AgentProfile::japan()),
        _ => None,
    }
}

fn condition(base: &ScenarioConfig, name: &str) -> Option<ScenarioConfig> {
    let mut c = base.clone();
    match name.to_ascii_lowercase().as_str() {
        "alone" => {
            c.zebra_present = false;
            c.group_condition = GroupCondition::Alone;
            c.leader_gap = 0.0;
        }
        "zebra" => {
            c.zebra_present = true;
            c.group_condition = GroupCondition::Alone;
            c.leader_gap = 0.0;
        }
        other => {
            let g = GroupCondition::from_str(other).ok()?;
            c.zebra_present = false;
            c.group_condition = g;
            c.leader_gap = g.leader_gap()?;
        }
    }
    Some(c)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_with(&text, overrides)?;
        // Dataset paths are relative to the config file.
        if let DatasetSource::Paths(p) = &mut cfg.source {
            let base = path.parent().unwrap_or(Path::new("."));
            for q in p.iter_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        }
        if let Some(o) = &mut cfg.output_dir {
            if o.is_relative() {
                *o = path.parent().unwrap_or(Path::new(".")).join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &Overrides::default())
    }

    pub fn parse_with(text: &str, ov: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(1, |s| line_from_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        let ctx = Ctx { text };
        if let Some(v) = raw.schema_version {
            if v != SCHEMA_VERSION {
                return Err(ctx.err(
                    None,
                    "schema_version",
                    format!("unsupported schema_version {v}"),
                ));
            }
        }
        let task = match (ov.task, &raw.task) {
            (Some(t), _) => t,
            (None, Some(t)) => {
                TaskKind::from_str(t).map_err(|e| ctx.err(None, "task", e.to_string()))?
            }
            (None, None) => TaskKind::GapSelection,
        };
        let split = match (ov.split, &raw.split) {
            (Some(s), _) => s,
            (None, Some(s)) => {
                SplitMode::from_str(s).map_err(|e| ctx.err(None, "split", e.to_string()))?
            }
            (None, None) => SplitMode::ByParticipant,
        };
        let seed = ov.seed.or(raw.seed).unwrap_or(0);

        let kinds: Vec<ModelKind> = match &raw.models {
            Some(m) => m
                .iter()
                .map(|s| ModelKind::from_str(s).map_err(|e| ctx.err(None, "models", e.to_string())))
                .collect::<Result<_>>()?,
            None => match task {
                TaskKind::ZebraUsage => vec![
                    ModelKind::LogisticRegression,
                    ModelKind::LinearSVM,
                    ModelKind::RandomForest,
                    ModelKind::MLP,
                ],
                _ => vec![
                    ModelKind::LinearRegression,
                    ModelKind::RandomForest,
                    ModelKind::MLP,
                ],
            },
        };
        let mut models = Vec::new();
        for kind in kinds {
            if !kind.supports(task.model_task()) {
                return Err(ctx.err(
                    None,
                    "models",
                    format!(
                        "{} cannot be used for the {} task",
                        kind.as_str(),
                        task.as_str()
                    ),
                ));
            }
            let mut spec = ModelSpec::new(kind, task.model_task()).with_seed(seed);
            if kind == ModelKind::MLP {
                spec.hyper.hidden = match task {
                    TaskKind::GapSelection => (2, 4),
                    TaskKind::ZebraUsage => (8, 4),
                    TaskKind::Trajectory => (8, 32),
                };
            }
            if let Some(h) = &raw.hyper {
                spec.hyper =
                    merge::<Hyper>(&spec.hyper, h).map_err(|m| ctx.err(Some("hyper"), "", m))?;
            }
            spec.validate()
                .map_err(|e| ctx.err(Some("hyper"), "", e.to_string()))?;
            models.push(spec);
        }
        if models.is_empty() {
            return Err(ctx.err(None, "models", "at least one model is required"));
        }

        let strategies: Vec<Strategy> = match (&ov.strategies, &raw.strategies) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => s
                .iter()
                .map(|x| {
                    Strategy::from_str(x).map_err(|e| ctx.err(None, "strategies", e.to_string()))
                })
                .collect::<Result<_>>()?,
            (None, None) => {
                let mut v = vec![
                    Strategy::Separate,
                    Strategy::Joint,
                    Strategy::CountryFeature,
                    Strategy::ClusterFeature,
                ];
                if task == TaskKind::Trajectory {
                    v.push(Strategy::ZebraUsageFeature);
                }
                v
            }
        };
        if task != TaskKind::Trajectory && strategies.contains(&Strategy::ZebraUsageFeature) {
            return Err(ctx.err(
                None,
                "strategies",
                "the zebra strategy applies to the trajectory task only",
            ));
        }
        let st = raw.strategy.as_ref();
        let n_clusters = st.and_then(|s| s.n_clusters).unwrap_or(2);
        let report_clusters = st.and_then(|s| s.report_clusters).unwrap_or(3);
        if n_clusters == 0 || report_clusters == 0 {
            return Err(ctx.err(
                Some("strategy"),
                "n_clusters",
                "cluster counts must be >= 1",
            ));
        }
        let linkage = match st.and_then(|s| s.linkage.as_deref()).unwrap_or("ward") {
            "ward" => Linkage::Ward,
            "average" => Linkage::Average,
            "complete" => Linkage::Complete,
            "single" => Linkage::Single,
            other => {
                return Err(ctx.err(
                    Some("strategy"),
                    "linkage",
                    format!("unknown linkage {other:?}"),
                ))
            }
        };
        let resample = raw.resample.unwrap_or(crate::features::DEFAULT_RESAMPLE);
        if resample < 2 {
            return Err(ctx.err(None, "resample", "resample must be >= 2"));
        }

        let source = match (&raw.dataset, &raw.generation) {
            (Some(_), Some(_)) => {
                return Err(ctx.err(
                    Some("generation"),
                    "",
                    "give either [dataset] or [generation], not both",
                ))
            }
            (None, None) => {
                return Err(ctx.err(None, "", "a [dataset] or [generation] section is required"))
            }
            (Some(d), None) => {
                if d.paths.is_empty() {
                    return Err(ctx.err(Some("dataset"), "paths", "dataset.paths is empty"));
                }
                DatasetSource::Paths(d.paths.clone())
            }
            (None, Some(g)) => {
                let base = match &raw.scenario {
                    Some(t) => merge::<ScenarioConfig>(&ScenarioConfig::default(), t)
                        .map_err(|m| ctx.err(Some("scenario"), "", m))?,
                    None => ScenarioConfig::default(),
                };
                let names = g.conditions.clone().unwrap_or_else(|| {
                    ["Alone", "Zebra", "Risky", "Safe"]
                        .map(String::from)
                        .to_vec()
                });
                let mut conditions = Vec::new();
                for n in &names {
                    let c = condition(&base, n).ok_or_else(|| {
                        ctx.err(
                            Some("generation"),
                            "conditions",
                            format!("unknown condition {n:?}"),
                        )
                    })?;
                    c.validate().map_err(|e| {
                        let key = e.to_string();
                        let field = key
                            .split("scenario.")
                            .nth(1)
                            .and_then(|s| {
                                s.split(|c: char| !(c.is_alphanumeric() || c == '_')).next()
                            })
                            .unwrap_or("")
                            .to_string();
                        ctx.err(Some("scenario"), &field, key)
                    })?;
                    conditions.push(c);
                }
                let profile_names = g
                    .profiles
                    .clone()
                    .unwrap_or_else(|| vec!["DE".into(), "JP".into()]);
                let mut profiles = Vec::new();
                for name in &profile_names {
                    let section = format!("agents.{name}");
                    let over = raw.agents.get(name);
                    let p = match (preset(name), over) {
                        (Some(p), None) => p,
                        (Some(p), Some(o)) => merge(&p, o).map_err(|m| ctx.err(Some(&section), "", m))?,
                        (None, Some(o)) => {
                            let mut o = o.clone();
                            o.entry("profile_name").or_insert(toml::Value::String(name.clone()));
                            toml::Value::Table(o)
                                .try_into()
                                .map_err(|e: toml::de::Error| ctx.err(Some(&section), "", e.message().to_string()))?
                        }
                        (None, None) => {
                            return Err(ctx.err(
                                Some("generation"),
                                "profiles",
                                format!("profile {name:?} is neither a preset nor defined under [agents.{name}]"),
                            ))
                        }
                    };
                    p.validate()
                        .map_err(|e| ctx.err(Some(&section), "", e.to_string()))?;
                    profiles.push(p);
                }
                if profiles.is_empty() {
                    return Err(ctx.err(
                        Some("generation"),
                        "profiles",
                        "at least one profile is required",
                    ));
                }
                let participants = g.participants.unwrap_or(60);
                let trials_per_condition = g.trials_per_condition.unwrap_or(15);
                if participants == 0 || trials_per_condition == 0 {
                    return Err(ctx.err(
                        Some("generation"),
                        "participants",
                        "participants and trials_per_condition must be >= 1",
                    ));
                }
                DatasetSource::Generate(GenerationBlock {
                    profiles,
                    conditions,
                    participants,
                    trials_per_condition,
                })
            }
        };
        Ok(ExperimentConfig {
            seed,
            task,
            models,
            split,
            strategies,
            n_clusters,
            report_clusters,
            per_cluster: st.and_then(|s| s.per_cluster).unwrap_or(false),
            linkage,
            with_entry: raw.with_entry.unwrap_or(false),
            resample,
            output_dir: raw.output_dir.clone(),
            source,
            sha256: super::sha256_hex(text.as_bytes()),
        })
    }

    pub fn strategy_spec(&self, strategy: Strategy, base: &ModelSpec) -> StrategySpec {
        let mut s = StrategySpec::new(strategy, base.clone()).with_clusters(self.n_clusters);
        s.report_clusters = self.report_clusters;
        s.per_cluster = self.per_cluster;
        s.linkage = self.linkage;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
task = "gap"
models = ["linear", "forest"]

[generation]
profiles = ["DE"]
participants = 3
trials_per_condition = 2
"#;

    #[test]
    fn parses_defaults() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.models.len(), 2);
        assert_eq!(c.split, SplitMode::ByParticipant);
        let DatasetSource::Generate(g) = &c.source else {
            panic!()
        };
        assert_eq!(g.conditions.len(), 4);
        assert_eq!(g.trial_count(), 24);
        assert_eq!(g.conditions[3].leader_gap, 6.5);
    }

    #[test]
    fn validation_errors_carry_lines() {
        let text = format!("{BASIC}\n[scenario]\ngap_min = 9.0\ngap_max = 8.5\n");
        match ExperimentConfig::parse(&text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 12, "{message}");
                assert!(message.contains("gap_min"));
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("seed = 1\nbogus = 2\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let text = BASIC.replace("models = [\"linear\", \"forest\"]", "models = [\"svm\"]");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(Error::Config { line: 4, .. })
        ));
    }

    #[test]
    fn strategies_must_fit_the_task() {
        let text = format!("strategies = [\"zebra\"]\n{BASIC}");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(Error::Config { line: 1, .. })
        ));
        let ok = format!(
            "strategies = [\"zebra\"]\n{}",
            BASIC.replace("\"gap\"", "\"trajectory\"")
        );
        let c = ExperimentConfig::parse(&ok).unwrap();
        assert_eq!(c.models[1].hyper.hidden, (2, 4));
    }

    #[test]
    fn agent_overrides_and_custom_profiles() {
        let text = format!("{BASIC}\n[agents.DE]\nimpatience_rate = 0.0\n",);
        let c = ExperimentConfig::parse(&text).unwrap();
        let DatasetSource::Generate(g) = &c.source else {
            panic!()
        };
        assert_eq!(g.profiles[0].impatience_rate, 0.0);
        assert_eq!(
            g.profiles[0].walk_speed_mean,
            AgentProfile::germany().walk_speed_mean
        );

        let bad = format!("{BASIC}\n[agents.DE]\nzebra_preference = 2.0\n");
        assert!(matches!(
            ExperimentConfig::parse(&bad),
            Err(Error::Config { .. })
        ));
        let unknown = BASIC.replace("[\"DE\"]", "[\"XX\"]");
        assert!(ExperimentConfig::parse(&unknown).is_err());
    }

    #[test]
    fn exactly_one_source() {
        let both = format!("{BASIC}\n[dataset]\npaths = [\"x\"]\n");
        assert!(ExperimentConfig::parse(&both).is_err());
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
        let c = ExperimentConfig::parse("[dataset]\npaths = [\"data\"]\n").unwrap();
        assert_eq!(c.source, DatasetSource::Paths(vec![PathBuf::from("data")]));
    }

    #[test]
    fn command_line_overrides_apply_before_validation() {
        let ov = Overrides {
            seed: Some(99),
            task: Some(TaskKind::ZebraUsage),
            ..Default::default()
        };
        let text = BASIC.replace("models = [\"linear\", \"forest\"]\n", "");
        let c = ExperimentConfig::parse_with(&text, &ov).unwrap();
        assert_eq!((c.seed, c.task), (99, TaskKind::ZebraUsage));
        assert!(c
            .models
            .iter()
            .all(|m| m.seed == 99 && m.task == crate::models::Task::Classification));
        // The listed linear regressor cannot serve classification.
        assert!(ExperimentConfig::parse_with(BASIC, &ov).is_err());
    }

    #[test]
    fn hyper_overrides() {
        let c = ExperimentConfig::parse(&format!("{BASIC}\n[hyper]\nn_trees = 10\n")).unwrap();
        assert!(c.models.iter().all(|m| m.hyper.n_trees == 10));
        assert!(ExperimentConfig::parse(&format!("{BASIC}\n[hyper]\nn_tree = 10\n")).is_err());
    }
}
