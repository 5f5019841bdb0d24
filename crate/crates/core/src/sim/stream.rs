use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

use super::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lane {
    Near,
    Far,
}

impl Lane {
    /// Travel direction along `x`.
    pub fn direction(self) -> f64 {
        match self {
            Lane::Near => 1.0,
            Lane::Far => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Near => "Near",
            Lane::Far => "Far",
        }
    }
}

/// Point vehicles on one lane, identified by the instant they cross `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleStream {
    pub lane: Lane,
    pub arrival_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    /// Speed magnitude, m/s.
    pub v: f64,
}

/// Scripted yielding at a zebra crossing: a vehicle that would reach its stop
/// line while the pedestrian occupies the crossing ramps linearly to zero over
/// `BRAKE_SECONDS`, waits, then resumes at cruise speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZebraYield {
    pub zebra_x: f64,
    /// Pedestrian becomes relevant to drivers.
    pub from_t: f64,
    /// Pedestrian has cleared the road.
    pub until_t: f64,
}

pub const BRAKE_SECONDS: f64 = 1.0;
/// Stop line distance ahead of the zebra centre line.
pub const STOP_MARGIN: f64 = 2.5;

impl VehicleStream {
    pub fn direction(&self) -> f64 {
        self.lane.direction()
    }

    /// Free-flow instant at which vehicle `idx` passes abscissa `x`.
    pub fn pass_time_at(&self, idx: usize, x: f64, speed: f64) -> f64 {
        self.arrival_times[idx] + self.direction() * x / speed
    }

    /// Free-flow position of vehicle `idx` at time `t`.
    pub fn position(&self, idx: usize, t: f64, speed: f64) -> f64 {
        self.direction() * speed * (t - self.arrival_times[idx])
    }

    /// Position and speed of vehicle `idx`, honouring an optional zebra yield.
    pub fn state_at(
        &self,
        idx: usize,
        t: f64,
        speed: f64,
        zebra: Option<&ZebraYield>,
    ) -> VehicleState {
        let free = VehicleState {
            x: self.position(idx, t, speed),
            v: speed,
        };
        let Some(z) = zebra else { return free };
        let dir = self.direction();
        let stop_x = z.zebra_x - dir * STOP_MARGIN;
        // free-flow instant at which braking would have to start
        let brake_dist = speed * BRAKE_SECONDS / 2.0;
        let t_brake = self.pass_time_at(idx, stop_x - dir * brake_dist, speed);
        let t_stop = t_brake + BRAKE_SECONDS;
        if t_stop < z.from_t || t_brake > z.until_t || t < t_brake {
            return free;
        }
        if t <= t_stop {
            let tau = t - t_brake;
            let x0 = self.position(idx, t_brake, speed);
            return VehicleState {
                x: x0 + dir * speed * (tau - tau * tau / (2.0 * BRAKE_SECONDS)),
                v: speed * (1.0 - tau / BRAKE_SECONDS),
            };
        }
        let resume = z.until_t.max(t_stop);
        if t <= resume {
            VehicleState { x: stop_x, v: 0.0 }
        } else {
            VehicleState {
                x: stop_x + dir * speed * (t - resume),
                v: speed,
            }
        }
    }
}

/// Draws `n` uniform gaps walking away from `anchor` in direction `sign`
/// until the boundary is crossed.
fn walk_arrivals(
    anchor: f64,
    sign: f64,
    bound: f64,
    cfg: &ScenarioConfig,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = anchor;
    while (sign > 0.0 && t <= bound) || (sign < 0.0 && t >= bound) {
        t += sign * rng.random_range(cfg.gap_min..=cfg.gap_max);
        out.push(t);
    }
    out
}

/// Near and far streams covering `[-gap_max - 1, horizon + 60]`.
///
/// With `script = Some((t, gap))` both lanes have a vehicle at `t` and none
/// until `t + gap`, so the two-lane gap at `t` is exactly `gap`.
pub(crate) fn generate_streams(
    cfg: &ScenarioConfig,
    script: Option<(f64, f64)>,
    rng: &mut Rng,
) -> (VehicleStream, VehicleStream) {
    let lo = -cfg.gap_max - 1.0;
    let hi = cfg.horizon + 60.0;

    let near_lane = |rng: &mut Rng| -> (Vec<f64>, usize) {
        let (first, second) = match script {
            Some((t, gap)) => (t, Some(t + gap)),
            None => (-rng.random_range(0.0..cfg.gap_max), None),
        };
        let mut before = walk_arrivals(first, -1.0, lo, cfg, rng);
        before.reverse();
        let anchor_idx = before.len();
        let mut arrivals = before;
        arrivals.push(first);
        let last = match second {
            Some(s) => {
                arrivals.push(s);
                s
            }
            None => first,
        };
        arrivals.extend(walk_arrivals(last, 1.0, hi, cfg, rng));
        (arrivals, anchor_idx)
    };

    let (near, anchor_idx) = near_lane(rng);
    let far = if cfg.lane_offset_max > 0.0 {
        paired_far_lane(&near, anchor_idx, script.is_some(), cfg, rng)
    } else {
        near_lane(rng).0
    };
    (
        VehicleStream {
            lane: Lane::Near,
            arrival_times: near,
        },
        VehicleStream {
            lane: Lane::Far,
            arrival_times: far,
        },
    )
}

/// Far-lane partner of every near-lane vehicle, trailing by an offset in
/// `[0, lane_offset_max]`. The offset walks so that every far-lane gap stays
/// within `[gap_min, gap_max]`.
fn paired_far_lane(
    near: &[f64],
    anchor: usize,
    scripted: bool,
    cfg: &ScenarioConfig,
    rng: &mut Rng,
) -> Vec<f64> {
    let omax = cfg.lane_offset_max;
    let mut offsets = vec![0.0; near.len()];
    offsets[anchor] = if scripted {
        0.0
    } else {
        rng.random_range(0.0..=omax)
    };
    let draw = |lo: f64, hi: f64, rng: &mut Rng| {
        let lo = lo.max(0.0);
        let hi = hi.min(omax);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    for k in anchor + 1..near.len() {
        let g = near[k] - near[k - 1];
        let prev = offsets[k - 1];
        offsets[k] = draw(prev + cfg.gap_min - g, prev + cfg.gap_max - g, rng);
    }
    for k in (0..anchor).rev() {
        let g = near[k + 1] - near[k];
        let next = offsets[k + 1];
        offsets[k] = draw(next + g - cfg.gap_max, next + g - cfg.gap_min, rng);
    }
    near.iter().zip(&offsets).map(|(a, o)| a + o).collect()
}
