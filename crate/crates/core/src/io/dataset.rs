use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    csv_bytes, fmt_f64, sha256_hex, to_json_line, write_atomic, write_json, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::gaps::crossing_events;
use crate::sim::{
    AgentTruth, GroupCondition, Lane, Route, ScenarioConfig, TracePoint, TrialRecord, VehicleStream,
};

/// Column order of `index.csv`. Only the ids and the two file columns are
/// required when reading; missing scenario columns take their defaults.
pub const INDEX_COLUMNS: [&str; 28] = [
    "trial_id",
    "participant_id",
    "country_tag",
    "condition",
    "lane_count",
    "vehicle_speed",
    "gap_min",
    "gap_max",
    "road_width",
    "zebra_present",
    "zebra_x",
    "zebra_half_width",
    "start_x",
    "start_y",
    "goal_x",
    "goal_y",
    "group_condition",
    "leader_gap",
    "frame_dt",
    "lane_offset_max",
    "horizon",
    "entry_frame_index",
    "truth_walk_speed",
    "truth_safety_margin",
    "truth_route",
    "truth_followed_leader",
    "trace_file",
    "stream_file",
];

const REQUIRED: [&str; 5] = [
    "trial_id",
    "participant_id",
    "country_tag",
    "trace_file",
    "stream_file",
];

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub trial_id: u32,
    pub participant_id: u32,
    pub country_tag: String,
    pub condition: String,
    pub wait_start: f64,
    pub road_entry_t: Option<f64>,
    pub crossing_end_t: Option<f64>,
    pub accepted_gap: Option<f64>,
    pub used_zebra: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub n_trials: usize,
    pub n_participants: usize,
    /// Trials per country tag.
    pub countries: BTreeMap<String, usize>,
    /// SHA-256 of every data file, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

fn file_stem(t: &TrialRecord) -> String {
    format!("{}_{:06}.csv", t.country_tag, t.trial_id)
}

fn route_str(r: Route) -> &'static str {
    match r {
        Route::Direct => "Direct",
        Route::Zebra => "Zebra",
        Route::DirectThenZebra => "DirectThenZebra",
    }
}

fn index_row(t: &TrialRecord) -> Vec<String> {
    let s = &t.scenario;
    let stem = file_stem(t);
    let truth = t.truth.as_ref();
    vec![
        t.trial_id.to_string(),
        t.participant_id.to_string(),
        t.country_tag.clone(),
        s.condition_label().to_string(),
        s.lane_count.to_string(),
        fmt_f64(s.vehicle_speed),
        fmt_f64(s.gap_min),
        fmt_f64(s.gap_max),
        fmt_f64(s.road_width),
        s.zebra_present.to_string(),
        fmt_f64(s.zebra_x),
        fmt_f64(s.zebra_half_width),
        fmt_f64(s.start_x),
        fmt_f64(s.start_y),
        fmt_f64(s.goal_x),
        fmt_f64(s.goal_y),
        s.group_condition.as_str().to_string(),
        fmt_f64(s.leader_gap),
        fmt_f64(s.frame_dt),
        fmt_f64(s.lane_offset_max),
        fmt_f64(s.horizon),
        t.entry_frame_index
            .map(|i| i.to_string())
            .unwrap_or_default(),
        truth.map(|a| fmt_f64(a.walk_speed)).unwrap_or_default(),
        truth.map(|a| fmt_f64(a.safety_margin)).unwrap_or_default(),
        truth
            .map(|a| route_str(a.route).to_string())
            .unwrap_or_default(),
        truth
            .map(|a| a.followed_leader.to_string())
            .unwrap_or_default(),
        format!("traces/{stem}"),
        format!("streams/{stem}"),
    ]
}

fn trace_bytes(t: &TrialRecord) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = t
        .trace
        .iter()
        .map(|p| vec![fmt_f64(p.t), fmt_f64(p.x), fmt_f64(p.y)])
        .collect();
    csv_bytes(&["t".into(), "x".into(), "y".into()], &rows)
}

fn stream_bytes(t: &TrialRecord) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for s in t.streams() {
        for a in &s.arrival_times {
            rows.push(vec![s.lane.as_str().to_string(), fmt_f64(*a)]);
        }
    }
    csv_bytes(&["lane".into(), "arrival_t".into()], &rows)
}

fn event_of(t: &TrialRecord) -> TrialEvent {
    let ev = crossing_events(t);
    TrialEvent {
        trial_id: t.trial_id,
        participant_id: t.participant_id,
        country_tag: t.country_tag.clone(),
        condition: t.scenario.condition_label().to_string(),
        wait_start: ev.wait_start,
        road_entry_t: ev.road_entry_t,
        crossing_end_t: ev.crossing_end_t,
        accepted_gap: ev.accepted_gap_car_both,
        used_zebra: ev.used_zebra,
    }
}

/// Writes `trials` under `dir` and returns the manifest that was written.
///
/// Layout: `index.csv`, `traces/<country>_<id>.csv`, `streams/<country>_<id>.csv`,
/// `events.jsonl` and `manifest.json`. Output bytes depend only on the inputs.
pub fn write_trial_set(
    dir: &Path,
    trials: &[TrialRecord],
    seed: u64,
    config_sha256: &str,
) -> Result<Manifest> {
    let mut seen = HashSet::new();
    for t in trials {
        if !seen.insert((t.country_tag.as_str(), t.trial_id)) {
            return Err(Error::invalid(format!(
                "duplicate trial {} for country {}",
                t.trial_id, t.country_tag
            )));
        }
        if t.country_tag.is_empty() || t.country_tag.contains(['/', '\\', ',']) {
            return Err(Error::invalid(format!(
                "country tag {:?} cannot name a file",
                t.country_tag
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let files: Vec<(String, String)> = trials
        .par_iter()
        .map(|t| {
            let stem = file_stem(t);
            let mut out = Vec::with_capacity(2);
            for (sub, bytes) in [("traces", trace_bytes(t)?), ("streams", stream_bytes(t)?)] {
                let rel = format!("{sub}/{stem}");
                write_atomic(&dir.join(&rel), &bytes)?;
                out.push((rel, sha256_hex(&bytes)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut hashes: BTreeMap<String, String> = files.into_iter().collect();

    let header: Vec<String> = INDEX_COLUMNS.iter().map(|s| s.to_string()).collect();
    let index = csv_bytes(&header, &trials.iter().map(index_row).collect::<Vec<_>>())?;
    write_atomic(&dir.join("index.csv"), &index)?;
    hashes.insert("index.csv".into(), sha256_hex(&index));

    let events: Vec<String> = trials
        .par_iter()
        .map(|t| to_json_line(&event_of(t)))
        .collect::<Result<_>>()?;
    let mut ev = events.join("\n");
    if !ev.is_empty() {
        ev.push('\n');
    }
    write_atomic(&dir.join("events.jsonl"), ev.as_bytes())?;
    hashes.insert("events.jsonl".into(), sha256_hex(ev.as_bytes()));

    let mut countries = BTreeMap::new();
    let mut participants = HashSet::new();
    for t in trials {
        *countries.entry(t.country_tag.clone()).or_insert(0) += 1;
        participants.insert((t.country_tag.as_str(), t.participant_id));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed,
        config_sha256: config_sha256.to_string(),
        n_trials: trials.len(),
        n_participants: participants.len(),
        countries,
        files: hashes,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

struct Cols {
    map: HashMap<String, usize>,
}

impl Cols {
    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.map
            .get(name)
            .and_then(|&i| rec.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

fn schema(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn parse_field<T: FromStr>(path: &Path, row: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| schema(path, row, format!("column {name}: cannot parse {raw:?}")))
}

fn open_csv(path: &Path) -> Result<(csv::Reader<fs::File>, Cols)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let headers = r
        .headers()
        .map_err(|e| schema(path, 1, format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(schema(path, 1, "missing header row"));
    }
    let map = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    Ok((r, Cols { map }))
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn read_f64_table(path: &Path, columns: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let (mut r, cols) = open_csv(path)?;
    for c in columns {
        if !cols.map.contains_key(*c) {
            return Err(schema(path, 1, format!("missing column {c}")));
        }
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            schema(path, row, e.to_string())
        })?;
        let row = record_line(&rec);
        let vals = columns
            .iter()
            .map(|c| {
                cols.get(&rec, c)
                    .map(str::to_string)
                    .ok_or_else(|| schema(path, row, format!("empty {c}")))
            })
            .collect::<Result<_>>()?;
        out.push((row, vals));
    }
    Ok(out)
}

fn read_trace(path: &Path) -> Result<Vec<TracePoint>> {
    let mut trace: Vec<TracePoint> = Vec::new();
    for (row, v) in read_f64_table(path, &["t", "x", "y"])? {
        let p = TracePoint {
            t: parse_field(path, row, "t", &v[0])?,
            x: parse_field(path, row, "x", &v[1])?,
            y: parse_field(path, row, "y", &v[2])?,
        };
        if !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite()) {
            return Err(schema(path, row, "non-finite trace value"));
        }
        if trace.last().is_some_and(|q| q.t >= p.t) {
            return Err(schema(path, row, "trace times must increase"));
        }
        trace.push(p);
    }
    if trace.len() < 2 {
        return Err(schema(path, 1, "trace needs at least two frames"));
    }
    Ok(trace)
}

fn read_streams(path: &Path) -> Result<(VehicleStream, VehicleStream)> {
    let mut near = VehicleStream {
        lane: Lane::Near,
        arrival_times: Vec::new(),
    };
    let mut far = VehicleStream {
        lane: Lane::Far,
        arrival_times: Vec::new(),
    };
    for (row, v) in read_f64_table(path, &["lane", "arrival_t"])? {
        let t: f64 = parse_field(path, row, "arrival_t", &v[1])?;
        if !t.is_finite() {
            return Err(schema(path, row, "non-finite arrival time"));
        }
        let lane = match v[0].to_ascii_lowercase().as_str() {
            "near" => &mut near,
            "far" => &mut far,
            other => return Err(schema(path, row, format!("unknown lane {other:?}"))),
        };
        if lane.arrival_times.last().is_some_and(|&q| q >= t) {
            return Err(schema(
                path,
                row,
                "arrival times must increase within a lane",
            ));
        }
        lane.arrival_times.push(t);
    }
    Ok((near, far))
}

struct IndexRow {
    row: usize,
    trial_id: u32,
    participant_id: u32,
    country_tag: String,
    scenario: ScenarioConfig,
    entry_frame_index: Option<usize>,
    truth: Option<AgentTruth>,
    trace_file: PathBuf,
    stream_file: PathBuf,
}

fn parse_index_row(
    path: &Path,
    dir: &Path,
    cols: &Cols,
    rec: &csv::StringRecord,
) -> Result<IndexRow> {
    let row = record_line(rec);
    let req = |name: &str| {
        cols.get(rec, name)
            .ok_or_else(|| schema(path, row, format!("empty {name}")))
    };
    let opt_f = |name: &str, default: f64| -> Result<f64> {
        match cols.get(rec, name) {
            Some(v) => parse_field(path, row, name, v),
            None => Ok(default),
        }
    };
    let opt_b = |name: &str, default: bool| -> Result<bool> {
        match cols.get(rec, name) {
            Some(v) => parse_field(path, row, name, &v.to_ascii_lowercase()),
            None => Ok(default),
        }
    };
    let d = ScenarioConfig::default();
    let group_condition = match cols.get(rec, "group_condition") {
        Some(v) => GroupCondition::from_str(v).map_err(|e| schema(path, row, e.to_string()))?,
        None => d.group_condition,
    };
    let lane_count = match cols.get(rec, "lane_count") {
        Some(v) => parse_field(path, row, "lane_count", v)?,
        None => d.lane_count,
    };
    let mut scenario = ScenarioConfig {
        lane_count,
        vehicle_speed: opt_f("vehicle_speed", d.vehicle_speed)?,
        gap_min: opt_f("gap_min", d.gap_min)?,
        gap_max: opt_f("gap_max", d.gap_max)?,
        road_width: opt_f("road_width", d.road_width)?,
        zebra_present: opt_b("zebra_present", d.zebra_present)?,
        zebra_x: opt_f("zebra_x", d.zebra_x)?,
        zebra_half_width: opt_f("zebra_half_width", d.zebra_half_width)?,
        start_x: opt_f("start_x", d.start_x)?,
        start_y: opt_f("start_y", d.start_y)?,
        goal_x: opt_f("goal_x", d.goal_x)?,
        goal_y: opt_f("goal_y", d.goal_y)?,
        group_condition,
        leader_gap: opt_f("leader_gap", group_condition.leader_gap().unwrap_or(0.0))?,
        frame_dt: opt_f("frame_dt", d.frame_dt)?,
        lane_offset_max: opt_f("lane_offset_max", d.lane_offset_max)?,
        horizon: opt_f("horizon", d.horizon)?,
    };
    // A bare condition label fills in what the scenario columns left out.
    if let Some(c) = cols.get(rec, "condition") {
        match c {
            "Zebra" if cols.get(rec, "zebra_present").is_none() => scenario.zebra_present = true,
            "Alone" | "Zebra" | "Risky" | "Safe" => {}
            other => return Err(schema(path, row, format!("unknown condition {other:?}"))),
        }
    }
    scenario
        .validate()
        .map_err(|e| schema(path, row, e.to_string()))?;
    let entry_frame_index = match cols.get(rec, "entry_frame_index") {
        Some(v) => Some(parse_field(path, row, "entry_frame_index", v)?),
        None => None,
    };
    let truth = match (
        cols.get(rec, "truth_walk_speed"),
        cols.get(rec, "truth_safety_margin"),
    ) {
        (Some(s), Some(f)) => Some(AgentTruth {
            walk_speed: parse_field(path, row, "truth_walk_speed", s)?,
            safety_margin: parse_field(path, row, "truth_safety_margin", f)?,
            route: match cols.get(rec, "truth_route").unwrap_or("Direct") {
                "Direct" => Route::Direct,
                "Zebra" => Route::Zebra,
                "DirectThenZebra" => Route::DirectThenZebra,
                other => return Err(schema(path, row, format!("unknown route {other:?}"))),
            },
            followed_leader: opt_b("truth_followed_leader", false)?,
        }),
        _ => None,
    };
    let country_tag = req("country_tag")?.to_string();
    Ok(IndexRow {
        row,
        trial_id: parse_field(path, row, "trial_id", req("trial_id")?)?,
        participant_id: parse_field(path, row, "participant_id", req("participant_id")?)?,
        country_tag,
        scenario,
        entry_frame_index,
        truth,
        trace_file: dir.join(req("trace_file")?),
        stream_file: dir.join(req("stream_file")?),
    })
}

/// Reads a dataset directory written by [`write_trial_set`] or mapped by hand
/// onto the same schema. Errors name the file and 1-based line.
pub fn read_trial_set(dir: &Path) -> Result<Vec<TrialRecord>> {
    let path = dir.join("index.csv");
    let (mut r, cols) = open_csv(&path)?;
    for c in REQUIRED {
        if !cols.map.contains_key(c) {
            return Err(schema(&path, 1, format!("missing column {c}")));
        }
    }
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            schema(&path, row, e.to_string())
        })?;
        let ir = parse_index_row(&path, dir, &cols, &rec)?;
        if let Some(prev) = seen.insert((ir.country_tag.clone(), ir.trial_id), ir.row) {
            return Err(schema(
                &path,
                ir.row,
                format!(
                    "trial {} of {} repeats row {prev}",
                    ir.trial_id, ir.country_tag
                ),
            ));
        }
        rows.push(ir);
    }
    rows.into_par_iter()
        .map(|ir| {
            let missing = |p: &Path| {
                schema(
                    &path,
                    ir.row,
                    format!("referenced file {} does not exist", p.display()),
                )
            };
            if !ir.trace_file.is_file() {
                return Err(missing(&ir.trace_file));
            }
            if !ir.stream_file.is_file() {
                return Err(missing(&ir.stream_file));
            }
            let trace = read_trace(&ir.trace_file)?;
            let (near, far) = read_streams(&ir.stream_file)?;
            let entry_frame_index = match ir.entry_frame_index {
                Some(i) if i >= trace.len() => {
                    return Err(schema(
                        &path,
                        ir.row,
                        format!("entry_frame_index {i} beyond the trace"),
                    ))
                }
                Some(i) => Some(i),
                None => TrialRecord::find_entry_frame(&trace),
            };
            Ok(TrialRecord {
                trial_id: ir.trial_id,
                participant_id: ir.participant_id,
                country_tag: ir.country_tag,
                scenario: ir.scenario,
                near,
                far,
                trace,
                entry_frame_index,
                truth: ir.truth,
            })
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<TrialEvent>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| schema(path, i + 1, e.to_string())))
        .collect()
}
