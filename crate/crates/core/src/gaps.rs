//! Gap quantities and crossing events derived from a trial.
//!
//! Car gaps come straight from arrival times at `x = 0`. Effective gaps are
//! timed at the pedestrian's moving position: the window opens when the lead
//! vehicle passes the pedestrian's current abscissa and closes when the
//! follower reaches it. Two-lane (synchronized) gaps are bounded by the
//! earliest next pass on either lane.

use serde::{Deserialize, Serialize};

use crate::sim::{Lane, TracePoint, TrialRecord, VehicleStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LaneScope {
    Near,
    Far,
    Both,
}

impl From<Lane> for LaneScope {
    fn from(l: Lane) -> Self {
        match l {
            Lane::Near => LaneScope::Near,
            Lane::Far => LaneScope::Far,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GapKind {
    Car,
    Effective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub lane_scope: LaneScope,
    pub kind: GapKind,
    pub open_t: f64,
    pub close_t: f64,
    pub duration: f64,
    /// The pedestrian entered the road inside this window.
    pub used: bool,
    /// Closed while the pedestrian was waiting.
    pub missed: bool,
    /// At least one end lies outside the trace and used an extrapolated position.
    pub extrapolated: bool,
}

impl GapObservation {
    fn new(
        lane_scope: LaneScope,
        kind: GapKind,
        open_t: f64,
        close_t: f64,
        extrapolated: bool,
    ) -> Self {
        GapObservation {
            lane_scope,
            kind,
            open_t,
            close_t,
            duration: close_t - open_t,
            used: false,
            missed: false,
            extrapolated,
        }
    }

    /// Half-open containment `[open, close)`.
    pub fn contains(&self, t: f64) -> bool {
        self.open_t <= t && t < self.close_t
    }
}

/// One gap per consecutive pair of arrivals.
pub fn car_gaps(stream: &VehicleStream) -> Vec<GapObservation> {
    stream
        .arrival_times
        .windows(2)
        .map(|w| GapObservation::new(stream.lane.into(), GapKind::Car, w[0], w[1], false))
        .collect()
}

/// Linear interpolation of the pedestrian's `x`; clamps to the end frames
/// outside the trace and reports whether it did.
pub fn pedestrian_x_at(trace: &[TracePoint], t: f64) -> (f64, bool) {
    let first = trace.first().expect("non-empty trace");
    let last = trace.last().unwrap();
    if t <= first.t {
        return (first.x, t < first.t);
    }
    if t >= last.t {
        return (last.x, t > last.t);
    }
    let i = trace.partition_point(|p| p.t <= t);
    let (a, b) = (trace[i - 1], trace[i]);
    let u = (t - a.t) / (b.t - a.t);
    (a.x + u * (b.x - a.x), false)
}

/// Instant vehicle `idx` reaches the pedestrian, solving
/// `t = a + dir * x_p(t) / speed` by fixed-point iteration. The map is a
/// contraction because the pedestrian is much slower than the vehicle.
pub fn effective_pass_time(
    stream: &VehicleStream,
    idx: usize,
    trace: &[TracePoint],
    speed: f64,
) -> (f64, bool) {
    let a = stream.arrival_times[idx];
    let dir = stream.direction();
    let (mut x, mut extrapolated) = pedestrian_x_at(trace, a);
    let mut t = a + dir * x / speed;
    for _ in 0..200 {
        let (xn, ex) = pedestrian_x_at(trace, t);
        let tn = a + dir * xn / speed;
        let done = (tn - t).abs() <= 1e-13 * (1.0 + t.abs()) || xn == x;
        t = tn;
        x = xn;
        extrapolated = ex;
        if done {
            break;
        }
    }
    (t, extrapolated)
}

/// Per-lane gaps timed at the pedestrian's position.
pub fn effective_gaps(
    stream: &VehicleStream,
    trace: &[TracePoint],
    speed: f64,
) -> Vec<GapObservation> {
    if stream.arrival_times.len() < 2 || trace.is_empty() {
        return Vec::new();
    }
    let passes: Vec<(f64, bool)> = (0..stream.arrival_times.len())
        .map(|i| effective_pass_time(stream, i, trace, speed))
        .collect();
    passes
        .windows(2)
        .map(|w| {
            GapObservation::new(
                stream.lane.into(),
                GapKind::Effective,
                w[0].0,
                w[1].0,
                w[0].1 || w[1].1,
            )
        })
        .collect()
}

fn pass_events(gaps: &[GapObservation]) -> Vec<(f64, bool)> {
    let mut ev: Vec<(f64, bool)> = gaps
        .iter()
        .flat_map(|g| [(g.open_t, g.extrapolated), (g.close_t, g.extrapolated)])
        .collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    ev.dedup_by(|b, a| a.0 == b.0);
    ev
}

/// Two-lane gaps: at every pass on either lane the window runs until the
/// earliest next pass on any lane. Duplicate windows and windows strictly
/// inside another are discarded. Output is sorted by opening time.
pub fn synchronized_gaps(
    near: &[GapObservation],
    far: &[GapObservation],
    kind: GapKind,
) -> Vec<GapObservation> {
    let lanes = [pass_events(near), pass_events(far)];
    let mut all: Vec<(f64, bool)> = lanes.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut windows = Vec::with_capacity(all.len());
    for &(t, ex_open) in &all {
        let mut close: Option<(f64, bool)> = None;
        for lane in &lanes {
            let i = lane.partition_point(|e| e.0 <= t);
            if let Some(&next) = lane.get(i) {
                if close.is_none_or(|c| next.0 < c.0) {
                    close = Some(next);
                }
            }
        }
        if let Some((c, ex_close)) = close {
            windows.push(GapObservation::new(
                LaneScope::Both,
                kind,
                t,
                c,
                ex_open || ex_close,
            ));
        }
    }
    drop_contained(windows)
}

fn drop_contained(mut windows: Vec<GapObservation>) -> Vec<GapObservation> {
    windows.sort_by(|a, b| {
        a.open_t
            .total_cmp(&b.open_t)
            .then(b.close_t.total_cmp(&a.close_t))
    });
    windows.dedup_by(|b, a| {
        let same = a.open_t == b.open_t && a.close_t == b.close_t;
        if same {
            a.extrapolated |= b.extrapolated;
        }
        same
    });
    let mut kept = Vec::with_capacity(windows.len());
    let mut reach = f64::NEG_INFINITY;
    for w in windows {
        if w.close_t <= reach {
            continue;
        }
        reach = w.close_t;
        kept.push(w);
    }
    kept
}

/// All six gap lists of a trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapSet {
    pub near_car: Vec<GapObservation>,
    pub far_car: Vec<GapObservation>,
    pub both_car: Vec<GapObservation>,
    pub near_effective: Vec<GapObservation>,
    pub far_effective: Vec<GapObservation>,
    pub both_effective: Vec<GapObservation>,
}

impl GapSet {
    pub fn compute(trial: &TrialRecord) -> Self {
        let speed = trial.scenario.vehicle_speed;
        let near_car = car_gaps(&trial.near);
        let far_car = car_gaps(&trial.far);
        let both_car = synchronized_gaps(&near_car, &far_car, GapKind::Car);
        let near_effective = effective_gaps(&trial.near, &trial.trace, speed);
        let far_effective = effective_gaps(&trial.far, &trial.trace, speed);
        let both_effective = synchronized_gaps(&near_effective, &far_effective, GapKind::Effective);
        GapSet {
            near_car,
            far_car,
            both_car,
            near_effective,
            far_effective,
            both_effective,
        }
    }

    pub fn get(&self, scope: LaneScope, kind: GapKind) -> &[GapObservation] {
        match (scope, kind) {
            (LaneScope::Near, GapKind::Car) => &self.near_car,
            (LaneScope::Far, GapKind::Car) => &self.far_car,
            (LaneScope::Both, GapKind::Car) => &self.both_car,
            (LaneScope::Near, GapKind::Effective) => &self.near_effective,
            (LaneScope::Far, GapKind::Effective) => &self.far_effective,
            (LaneScope::Both, GapKind::Effective) => &self.both_effective,
        }
    }

    fn lists_mut(&mut self) -> [&mut Vec<GapObservation>; 6] {
        [
            &mut self.near_car,
            &mut self.far_car,
            &mut self.both_car,
            &mut self.near_effective,
            &mut self.far_effective,
            &mut self.both_effective,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvents {
    pub wait_start: f64,
    pub road_entry_t: Option<f64>,
    pub crossing_end_t: Option<f64>,
    pub entry_frame_index: Option<usize>,
    pub accepted_gap_car_both: Option<f64>,
    pub accepted_gap_effective_both: Option<f64>,
    pub used_zebra: bool,
    pub gaps: GapSet,
}

impl CrossingEvents {
    pub fn entered(&self) -> bool {
        self.road_entry_t.is_some()
    }
}

/// Derives road entry, the accepted gaps and the used/missed flags.
pub fn crossing_events(trial: &TrialRecord) -> CrossingEvents {
    let mut gaps = GapSet::compute(trial);
    let trace = &trial.trace;
    let wait_start = trace.first().map_or(0.0, |p| p.t);
    let entry_idx = trial
        .entry_frame_index
        .or_else(|| TrialRecord::find_entry_frame(trace));
    let Some(entry_idx) = entry_idx else {
        return CrossingEvents {
            wait_start,
            road_entry_t: None,
            crossing_end_t: None,
            entry_frame_index: None,
            accepted_gap_car_both: None,
            accepted_gap_effective_both: None,
            used_zebra: false,
            gaps,
        };
    };
    let entry = trace[entry_idx];
    let road_entry_t = entry.t;
    for list in gaps.lists_mut() {
        for g in list.iter_mut() {
            g.used = g.contains(road_entry_t);
            g.missed = g.close_t >= wait_start && g.close_t < road_entry_t;
        }
    }
    let accepted = |list: &[GapObservation]| list.iter().find(|g| g.used).map(|g| g.duration);
    let sc = &trial.scenario;
    CrossingEvents {
        wait_start,
        road_entry_t: Some(road_entry_t),
        crossing_end_t: trace.last().map(|p| p.t),
        entry_frame_index: Some(entry_idx),
        accepted_gap_car_both: accepted(&gaps.both_car),
        accepted_gap_effective_both: accepted(&gaps.both_effective),
        used_zebra: sc.zebra_present && (entry.x - sc.zebra_x).abs() <= sc.zebra_half_width,
        gaps,
    }
}
