//! Tabular feature rows and the train-fitted standardiser.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaps::{CrossingEvents, GapKind, GapObservation, GapSet, LaneScope};
use crate::sim::{TracePoint, TrialRecord, VehicleStream, ZebraYield};

pub const PRE_EVENT_NAMES: [&str; 14] = [
    "T_w", "V_p", "N_en", "N_cn", "M_en", "M_cn", "N_ef", "N_cf", "M_ef", "M_cf", "N_eb", "N_cb",
    "M_eb", "M_cb",
];
pub const ENTRY_NAMES: [&str; 5] = ["D_n", "V_cn", "D_f", "V_cf", "D_z"];

/// Frames slower than this (m/s) count as standing rather than walking.
pub const WALKING_THRESHOLD: f64 = 0.5;

/// Measured before the pedestrian enters the road.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PreEventFeatures {
    pub T_w: f64,
    pub V_p: f64,
    pub N_en: f64,
    pub N_cn: f64,
    pub M_en: f64,
    pub M_cn: f64,
    pub N_ef: f64,
    pub N_cf: f64,
    pub M_ef: f64,
    pub M_cf: f64,
    pub N_eb: f64,
    pub N_cb: f64,
    pub M_eb: f64,
    pub M_cb: f64,
}

impl PreEventFeatures {
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.T_w, self.V_p, self.N_en, self.N_cn, self.M_en, self.M_cn, self.N_ef, self.N_cf,
            self.M_ef, self.M_cf, self.N_eb, self.N_cb, self.M_eb, self.M_cb,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        PreEventFeatures {
            T_w: v[0],
            V_p: v[1],
            N_en: v[2],
            N_cn: v[3],
            M_en: v[4],
            M_cn: v[5],
            N_ef: v[6],
            N_cf: v[7],
            M_ef: v[8],
            M_cf: v[9],
            N_eb: v[10],
            N_cb: v[11],
            M_eb: v[12],
            M_cb: v[13],
        }
    }
}

/// Measured at the frame the pedestrian enters the road.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct EntryFrameFeatures {
    pub D_n: f64,
    pub V_cn: f64,
    pub D_f: f64,
    pub V_cf: f64,
    pub D_z: f64,
}

impl EntryFrameFeatures {
    pub fn to_array(&self) -> [f64; 5] {
        [self.D_n, self.V_cn, self.D_f, self.V_cf, self.D_z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        EntryFrameFeatures {
            D_n: v[0],
            V_cn: v[1],
            D_f: v[2],
            V_cf: v[3],
            D_z: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub trial_id: u32,
    pub participant_id: u32,
    pub country_tag: String,
    /// `Alone`, `Zebra`, `Risky` or `Safe`.
    pub condition: String,
    pub pre: PreEventFeatures,
    pub entry: Option<EntryFrameFeatures>,
    /// Accepted two-lane car gap; present for crossings without a zebra.
    pub label_gap: Option<f64>,
    /// Present for zebra trials.
    pub label_zebra: Option<bool>,
    /// Time-resampled path; present for zebra trials.
    pub label_trajectory: Option<Vec<[f64; 2]>>,
}

impl FeatureRow {
    /// Cross-validation unit keys.
    pub fn participant_key(&self) -> (String, u32) {
        (self.country_tag.clone(), self.participant_id)
    }

    pub fn trial_key(&self) -> (String, u32) {
        (self.country_tag.clone(), self.trial_id)
    }

    /// Pre-event features, optionally followed by the entry-frame features.
    pub fn inputs(&self, with_entry: bool) -> Vec<f64> {
        let mut v = self.pre.to_array().to_vec();
        if with_entry {
            v.extend(self.entry.unwrap_or_default().to_array());
        }
        v
    }
}

pub fn input_names(with_entry: bool) -> Vec<String> {
    let mut v: Vec<String> = PRE_EVENT_NAMES.iter().map(|s| s.to_string()).collect();
    if with_entry {
        v.extend(ENTRY_NAMES.iter().map(|s| s.to_string()));
    }
    v
}

fn missed_stats(gaps: &[GapObservation]) -> (f64, f64) {
    let missed = gaps.iter().filter(|g| g.missed);
    let (n, m) = missed.fold((0usize, 0.0f64), |(n, m), g| (n + 1, m.max(g.duration)));
    (n as f64, m)
}

/// Mean speed over the frames in `[from, to]` where the pedestrian walks.
fn walking_speed(trace: &[TracePoint], from: f64, to: f64) -> f64 {
    let (mut dist, mut time) = (0.0, 0.0);
    for w in trace.windows(2) {
        if w[0].t < from || w[1].t > to {
            continue;
        }
        let dt = w[1].t - w[0].t;
        let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
        if dt > 0.0 && d / dt >= WALKING_THRESHOLD {
            dist += d;
            time += dt;
        }
    }
    if time > 0.0 {
        dist / time
    } else {
        0.0
    }
}

/// Window in which drivers yield to a pedestrian on the zebra.
pub fn zebra_yield(trial: &TrialRecord, events: &CrossingEvents) -> Option<ZebraYield> {
    let sc = &trial.scenario;
    if !(sc.zebra_present && events.used_zebra) {
        return None;
    }
    let near =
        |p: &TracePoint| (p.x - sc.zebra_x).abs() <= sc.zebra_half_width && p.y >= sc.start_y;
    let from = trial.trace.iter().find(|p| near(p))?.t;
    let until = trial
        .trace
        .iter()
        .find(|p| p.t >= from && p.y > sc.road_width)
        .map_or(trial.trace.last()?.t, |p| p.t);
    Some(ZebraYield {
        zebra_x: sc.zebra_x,
        from_t: from,
        until_t: until,
    })
}

/// Distance along the lane to, and speed of, the first vehicle that has not
/// yet passed the pedestrian at time `t`.
fn approaching_vehicle(
    stream: &VehicleStream,
    p: &TracePoint,
    speed: f64,
    zebra: Option<&ZebraYield>,
) -> (f64, f64) {
    let dir = stream.direction();
    for idx in 0..stream.arrival_times.len() {
        let s = stream.state_at(idx, p.t, speed, zebra);
        // still upstream of the pedestrian
        if dir * (p.x - s.x) > 0.0 {
            return ((p.x - s.x).abs(), s.v);
        }
    }
    (f64::INFINITY, speed)
}

/// Feature row for one crossing trial.
pub fn extract(trial: &TrialRecord, events: &CrossingEvents, gaps: &GapSet) -> Result<FeatureRow> {
    let (Some(entry_t), Some(entry_idx)) = (events.road_entry_t, events.entry_frame_index) else {
        return Err(Error::NoCrossing {
            trial_id: trial.trial_id,
        });
    };
    let end_t = events.crossing_end_t.unwrap_or(entry_t);
    let stat = |scope, kind| missed_stats(gaps.get(scope, kind));
    let (n_en, m_en) = stat(LaneScope::Near, GapKind::Effective);
    let (n_cn, m_cn) = stat(LaneScope::Near, GapKind::Car);
    let (n_ef, m_ef) = stat(LaneScope::Far, GapKind::Effective);
    let (n_cf, m_cf) = stat(LaneScope::Far, GapKind::Car);
    let (n_eb, m_eb) = stat(LaneScope::Both, GapKind::Effective);
    let (n_cb, m_cb) = stat(LaneScope::Both, GapKind::Car);
    let pre = PreEventFeatures {
        T_w: entry_t - events.wait_start,
        V_p: walking_speed(&trial.trace, events.wait_start, end_t),
        N_en: n_en,
        N_cn: n_cn,
        M_en: m_en,
        M_cn: m_cn,
        N_ef: n_ef,
        N_cf: n_cf,
        M_ef: m_ef,
        M_cf: m_cf,
        N_eb: n_eb,
        N_cb: n_cb,
        M_eb: m_eb,
        M_cb: m_cb,
    };

    let sc = &trial.scenario;
    let p = trial.trace[entry_idx];
    let zebra = zebra_yield(trial, events);
    let (d_n, v_cn) = approaching_vehicle(&trial.near, &p, sc.vehicle_speed, zebra.as_ref());
    let (d_f, v_cf) = approaching_vehicle(&trial.far, &p, sc.vehicle_speed, zebra.as_ref());
    let entry = EntryFrameFeatures {
        D_n: d_n,
        V_cn: v_cn,
        D_f: d_f,
        V_cf: v_cf,
        D_z: (p.x - sc.zebra_x).abs(),
    };

    let (label_gap, label_zebra, label_trajectory) = if sc.zebra_present {
        (
            None,
            Some(events.used_zebra),
            Some(resample_trajectory(&trial.trace, DEFAULT_RESAMPLE)),
        )
    } else {
        let gap = events
            .accepted_gap_car_both
            .ok_or_else(|| Error::invalid(format!("trial {}: no accepted gap", trial.trial_id)))?;
        (Some(gap), None, None)
    };

    Ok(FeatureRow {
        trial_id: trial.trial_id,
        participant_id: trial.participant_id,
        country_tag: trial.country_tag.clone(),
        condition: sc.condition_label().to_string(),
        pre,
        entry: Some(entry),
        label_gap,
        label_zebra,
        label_trajectory,
    })
}

/// Extracts every crossing trial; trials without a road entry are skipped and logged.
pub fn extract_all(trials: &[TrialRecord]) -> Vec<FeatureRow> {
    use rayon::prelude::*;
    let rows: Vec<Option<FeatureRow>> = trials
        .par_iter()
        .map(|t| {
            let ev = crate::gaps::crossing_events(t);
            match extract(t, &ev, &ev.gaps) {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("skipping trial {}/{}: {e}", t.country_tag, t.trial_id);
                    None
                }
            }
        })
        .collect();
    rows.into_iter().flatten().collect()
}

pub const DEFAULT_RESAMPLE: usize = 32;

/// `m` points uniformly spaced in normalised time from the first to the last frame.
pub fn resample_trajectory(trace: &[TracePoint], m: usize) -> Vec<[f64; 2]> {
    assert!(m >= 2 && trace.len() >= 2);
    let (t0, t1) = (trace[0].t, trace[trace.len() - 1].t);
    (0..m)
        .map(|j| {
            let t = t0 + (t1 - t0) * j as f64 / (m - 1) as f64;
            let i = trace
                .partition_point(|p| p.t <= t)
                .clamp(1, trace.len() - 1);
            let (a, b) = (trace[i - 1], trace[i]);
            let u = if b.t > a.t {
                ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            [a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)]
        })
        .collect()
}

/// Z-score standardiser fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    /// Indices (into the raw input) of the retained columns.
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Constant columns removed at fit time.
    pub dropped: Vec<String>,
    pub n_inputs: usize,
}

/// Order-independent mean and population sd: values are summed in sorted order.
fn column_moments(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

const CONSTANT_SD: f64 = 1e-12;

impl Scaler {
    pub fn fit(rows: &[Vec<f64>], names: &[String]) -> Result<Scaler> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "scaler needs >= 2 training rows, got {}",
                rows.len()
            )));
        }
        let d = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let mut s = Scaler {
            names: Vec::new(),
            kept: Vec::new(),
            means: Vec::new(),
            sds: Vec::new(),
            dropped: Vec::new(),
            n_inputs: d,
        };
        for j in 0..d {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "column {} has non-finite values",
                    names[j]
                )));
            }
            let (mean, sd) = column_moments(&mut col);
            if sd <= CONSTANT_SD * (1.0 + mean.abs()) {
                warn!("dropping constant feature {}", names[j]);
                s.dropped.push(names[j].clone());
                continue;
            }
            s.names.push(names[j].clone());
            s.kept.push(j);
            s.means.push(mean);
            s.sds.push(sd);
        }
        Ok(s)
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                got: row.len(),
            });
        }
        Ok(self
            .kept
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&j, (m, s))| (row[j] - m) / s)
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }

    /// Raw values of the retained columns.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// `fit_scaler` over feature rows.
pub fn fit_scaler(rows: &[FeatureRow], with_entry: bool) -> Result<Scaler> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.inputs(with_entry)).collect();
    Scaler::fit(&x, &input_names(with_entry))
}

pub fn apply_scaler(scaler: &Scaler, row: &FeatureRow, with_entry: bool) -> Result<Vec<f64>> {
    scaler.transform(&row.inputs(with_entry))
}
