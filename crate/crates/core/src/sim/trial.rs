use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaps;
use crate::rng::{stream_id, stream_rng, Rng};

use super::stream::generate_streams;
use super::{AgentProfile, GroupCondition, ScenarioConfig, VehicleStream};

/// Amplitude (m) and period range (s) of the lateral pacing while waiting.
const SWAY_AMPLITUDE: f64 = 0.25;
const SWAY_PERIOD: (f64, f64) = (6.0, 10.0);
const REACTION: (f64, f64) = (0.2, 0.5);
const WALK_SPEED_BOUNDS: (f64, f64) = (0.5, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Direct,
    Zebra,
    /// Entered the road outside the zebra band, then drifted onto it.
    DirectThenZebra,
}

/// Generating-law values, kept for diagnostics and calibration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub walk_speed: f64,
    pub safety_margin: f64,
    pub route: Route,
    pub followed_leader: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub participant_id: u32,
    pub country_tag: String,
    pub scenario: ScenarioConfig,
    pub near: VehicleStream,
    pub far: VehicleStream,
    pub trace: Vec<TracePoint>,
    pub entry_frame_index: Option<usize>,
    pub truth: Option<AgentTruth>,
}

impl TrialRecord {
    /// First frame at or beyond the near road edge.
    pub fn find_entry_frame(trace: &[TracePoint]) -> Option<usize> {
        trace.iter().position(|p| p.y >= 0.0)
    }

    pub fn streams(&self) -> [&VehicleStream; 2] {
        [&self.near, &self.far]
    }
}

/// Walk speed `S` and safety margin `F`, fixed for one participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantDraws {
    pub walk_speed: f64,
    pub safety_margin: f64,
}

impl ParticipantDraws {
    pub fn sample(agent: &AgentProfile, rng: &mut Rng) -> Self {
        let s = Normal::new(agent.walk_speed_mean, agent.walk_speed_sd)
            .expect("validated sd")
            .sample(rng);
        let f = Normal::new(agent.safety_margin_mean, agent.safety_margin_sd)
            .expect("validated sd")
            .sample(rng);
        ParticipantDraws {
            walk_speed: s.clamp(WALK_SPEED_BOUNDS.0, WALK_SPEED_BOUNDS.1),
            safety_margin: f,
        }
    }
}

/// Polyline walked at constant speed starting at `t0`.
struct Walk {
    t0: f64,
    speed: f64,
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Walk {
    fn new(t0: f64, speed: f64, points: Vec<(f64, f64)>) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Walk {
            t0,
            speed,
            points,
            cumulative,
        }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn end_time(&self) -> f64 {
        self.t0 + self.length() / self.speed
    }

    fn position(&self, t: f64) -> (f64, f64) {
        let s = ((t - self.t0) * self.speed).clamp(0.0, self.length());
        let seg = self
            .cumulative
            .partition_point(|&c| c <= s)
            .clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[seg - 1], self.points[seg]);
        let len = self.cumulative[seg] - self.cumulative[seg - 1];
        if len <= 0.0 {
            return b;
        }
        let u = ((s - self.cumulative[seg - 1]) / len).clamp(0.0, 1.0);
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
    }

    /// Instant the walk first reaches `y >= level`, if it does.
    fn time_reaching_y(&self, level: f64) -> Option<f64> {
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if a.1 < level && b.1 >= level {
                let u = (level - a.1) / (b.1 - a.1);
                let s = self.cumulative[i] + u * (self.cumulative[i + 1] - self.cumulative[i]);
                return Some(self.t0 + s / self.speed);
            }
            if a.1 >= level {
                return Some(self.t0 + self.cumulative[i] / self.speed);
            }
        }
        None
    }
}

/// Critical gap of the agent after `missed` unused gaps.
fn acceptance_threshold(
    cfg: &ScenarioConfig,
    agent: &AgentProfile,
    draws: &ParticipantDraws,
    missed: usize,
    t_open: f64,
) -> f64 {
    if t_open >= cfg.horizon {
        return agent.threshold_floor;
    }
    let critical = cfg.road_width / draws.walk_speed + draws.safety_margin;
    (critical - agent.impatience_rate * missed as f64).max(agent.threshold_floor)
}

/// One trial with an independent participant draw.
pub fn generate_trial(
    config: &ScenarioConfig,
    agent: &AgentProfile,
    seed: u64,
) -> Result<TrialRecord> {
    config.validate()?;
    agent.validate()?;
    let draws = ParticipantDraws::sample(agent, &mut stream_rng(seed, u64::MAX));
    generate_trial_with(config, agent, &draws, seed, 0, 0)
}

/// One trial for a participant whose walk speed and margin are already drawn.
pub fn generate_trial_with(
    config: &ScenarioConfig,
    agent: &AgentProfile,
    draws: &ParticipantDraws,
    seed: u64,
    trial_id: u32,
    participant_id: u32,
) -> Result<TrialRecord> {
    config.validate()?;
    agent.validate()?;
    if !(draws.walk_speed.is_finite() && draws.walk_speed > 0.0 && draws.safety_margin.is_finite())
    {
        return Err(Error::invalid(
            "participant draws must be finite with positive walk speed",
        ));
    }
    let cfg = config;
    let mut rng = stream_rng(
        seed,
        stream_id(&[0x0074_7269_616c, trial_id as u64, participant_id as u64]),
    );
    let speed = draws.walk_speed;

    let leader = cfg
        .group_condition
        .leader_gap()
        .map(|_| (rng.random_range(4.0..16.0), cfg.leader_gap));
    let (near, far) = generate_streams(cfg, leader, &mut rng);

    let follows = leader.is_some() && rng.random::<f64>() < agent.leader_follow_weight;
    let uses_zebra = cfg.zebra_present && rng.random::<f64>() < agent.zebra_preference;
    let changes_mind =
        cfg.zebra_present && !uses_zebra && rng.random::<f64>() < agent.mind_change_prob;
    let sway_period = rng.random_range(SWAY_PERIOD.0..SWAY_PERIOD.1);
    let reaction = rng.random_range(REACTION.0..REACTION.1);
    let goal_jitter = Normal::new(0.0, 0.2).unwrap().sample(&mut rng);

    let start = (cfg.start_x, cfg.start_y);
    let goal = (cfg.goal_x + goal_jitter, cfg.goal_y);
    let far_edge = cfg.road_width;

    let (walk, sway_until) = if uses_zebra {
        let zx = cfg.zebra_x;
        let pts = vec![start, (zx, cfg.start_y), (zx, far_edge + 0.5), goal];
        (Walk::new(reaction, speed, pts), None)
    } else {
        let windows = gaps::synchronized_gaps(
            &gaps::car_gaps(&near),
            &gaps::car_gaps(&far),
            gaps::GapKind::Car,
        );
        let mut missed = 0usize;
        let mut chosen = None;
        for w in &windows {
            if w.close_t <= 0.0 {
                continue;
            }
            if w.open_t < 0.0 {
                missed += 1;
                continue;
            }
            let accept = if follows {
                let (t_lead, _) = leader.unwrap();
                w.open_t == t_lead
            } else {
                w.duration >= acceptance_threshold(cfg, agent, draws, missed, w.open_t)
            };
            if accept {
                chosen = Some(*w);
                break;
            }
            missed += 1;
        }
        let chosen = match chosen {
            Some(w) => w,
            None => *windows
                .iter()
                .filter(|w| w.open_t >= cfg.horizon)
                .max_by(|a, b| a.duration.total_cmp(&b.duration))
                .ok_or_else(|| {
                    Error::invalid("vehicle streams do not cover the waiting horizon")
                })?,
        };
        let t_dep = chosen.open_t + reaction.min(0.25 * chosen.duration);
        let x_dep = sway_x(cfg.start_x, sway_period, t_dep);
        let dep = (x_dep, cfg.start_y);
        let pts = if changes_mind {
            vec![
                dep,
                (x_dep, 0.0),
                (cfg.zebra_x, 0.6 * far_edge),
                (cfg.zebra_x, far_edge + 0.5),
                goal,
            ]
        } else {
            vec![dep, goal]
        };
        (Walk::new(t_dep, speed, pts), Some(sway_period))
    };

    let end = walk.end_time();
    debug_assert!(walk.time_reaching_y(0.0).is_some());
    let n_frames = (end / cfg.frame_dt).ceil() as usize + 1;
    let mut trace = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * cfg.frame_dt;
        let (x, y) = match sway_until {
            Some(period) if t < walk.t0 => (sway_x(cfg.start_x, period, t), cfg.start_y),
            _ => walk.position(t),
        };
        trace.push(TracePoint { t, x, y });
    }
    let entry_frame_index = TrialRecord::find_entry_frame(&trace);

    Ok(TrialRecord {
        trial_id,
        participant_id,
        country_tag: agent.profile_name.clone(),
        scenario: cfg.clone(),
        near,
        far,
        trace,
        entry_frame_index,
        truth: Some(AgentTruth {
            walk_speed: speed,
            safety_margin: draws.safety_margin,
            route: if uses_zebra {
                Route::Zebra
            } else if changes_mind {
                Route::DirectThenZebra
            } else {
                Route::Direct
            },
            followed_leader: follows,
        }),
    })
}

fn sway_x(x0: f64, period: f64, t: f64) -> f64 {
    x0 + SWAY_AMPLITUDE * (std::f64::consts::TAU * t / period).sin()
}

/// The four conditions of the study design: alone, zebra, risky and safe leaders.
pub fn standard_conditions() -> Vec<ScenarioConfig> {
    vec![
        ScenarioConfig::alone(),
        ScenarioConfig::zebra(),
        ScenarioConfig::group(GroupCondition::Risky),
        ScenarioConfig::group(GroupCondition::Safe),
    ]
}

/// `n_participants × configs.len() × trials_per_condition` trials.
///
/// Participant ids run `0..n_participants`; trial ids are contiguous in
/// generation order. Every participant keeps one walk-speed and margin draw.
pub fn generate_dataset(
    configs: &[ScenarioConfig],
    agent: &AgentProfile,
    n_participants: u32,
    trials_per_condition: u32,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    if n_participants < 1 {
        return Err(Error::invalid("n_participants must be >= 1"));
    }
    if configs.is_empty() {
        return Err(Error::invalid("at least one scenario is required"));
    }
    agent.validate()?;
    for c in configs {
        c.validate()?;
    }
    let per_participant = configs.len() as u32 * trials_per_condition;
    let nested: Result<Vec<Vec<TrialRecord>>> = (0..n_participants)
        .into_par_iter()
        .map(|p| {
            let draws =
                ParticipantDraws::sample(agent, &mut stream_rng(seed, stream_id(&[1, p as u64])));
            let mut trials = Vec::with_capacity(per_participant as usize);
            for (ci, cfg) in configs.iter().enumerate() {
                for k in 0..trials_per_condition {
                    let trial_id = p * per_participant + ci as u32 * trials_per_condition + k;
                    trials.push(generate_trial_with(cfg, agent, &draws, seed, trial_id, p)?);
                }
            }
            Ok(trials)
        })
        .collect();
    Ok(nested?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_is_regular_and_bounded() {
        let agent = AgentProfile::germany();
        for (i, cfg) in standard_conditions().iter().enumerate() {
            let trial = generate_trial(cfg, &agent, 100 + i as u64).unwrap();
            let speed = trial.truth.as_ref().unwrap().walk_speed;
            for w in trial.trace.windows(2) {
                assert!((w[1].t - w[0].t - cfg.frame_dt).abs() < 1e-9);
                let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
                assert!(d <= speed * cfg.frame_dt * 1.5 + 1e-12, "step {d}");
            }
            let entry = trial.entry_frame_index.unwrap();
            assert!(trial.trace[entry].y >= 0.0);
            assert!(entry == 0 || trial.trace[entry - 1].y < 0.0);
            let last = trial.trace.last().unwrap();
            assert!(last.y >= cfg.goal_y - 1e-9);
        }
    }

    #[test]
    fn same_seed_same_trial() {
        let cfg = ScenarioConfig::zebra();
        let a = generate_trial(&cfg, &AgentProfile::japan(), 9).unwrap();
        let b = generate_trial(&cfg, &AgentProfile::japan(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_trial(&cfg, &AgentProfile::japan(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let mut agent = AgentProfile::germany();
        agent.safety_margin_mean = f64::INFINITY;
        assert!(generate_trial(&ScenarioConfig::alone(), &agent, 1).is_err());
    }

    #[test]
    fn unreachable_floor_still_crosses_after_horizon() {
        let agent = AgentProfile {
            threshold_floor: 50.0,
            ..AgentProfile::germany()
        };
        let cfg = ScenarioConfig {
            horizon: 30.0,
            ..ScenarioConfig::alone()
        };
        let trial = generate_trial(&cfg, &agent, 5).unwrap();
        let entry = trial.entry_frame_index.unwrap();
        assert!(trial.trace[entry].t >= cfg.horizon);
    }

    #[test]
    fn walk_reaches_edges() {
        let w = Walk::new(1.0, 2.0, vec![(0.0, -1.0), (0.0, 3.0)]);
        assert_eq!(w.end_time(), 3.0);
        assert_eq!(w.time_reaching_y(0.0), Some(1.5));
        assert_eq!(w.position(2.0), (0.0, 1.0));
    }

    #[test]
    fn dataset_counts_and_participant_draws() {
        let agent = AgentProfile::germany();
        let data = generate_dataset(&standard_conditions(), &agent, 3, 2, 11).unwrap();
        assert_eq!(data.len(), 3 * 4 * 2);
        for p in 0..3 {
            let speeds: Vec<f64> = data
                .iter()
                .filter(|t| t.participant_id == p)
                .map(|t| t.truth.as_ref().unwrap().walk_speed)
                .collect();
            assert_eq!(speeds.len(), 8);
            assert!(speeds.iter().all(|&s| s == speeds[0]));
        }
        let ids: Vec<u32> = data.iter().map(|t| t.trial_id).collect();
        assert_eq!(ids, (0..24).collect::<Vec<_>>());
    }
}
