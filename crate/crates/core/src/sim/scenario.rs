use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 30 km/h.
pub const DEFAULT_VEHICLE_SPEED: f64 = 8.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupCondition {
    Alone,
    Risky,
    Safe,
}

impl GroupCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupCondition::Alone => "Alone",
            GroupCondition::Risky => "Risky",
            GroupCondition::Safe => "Safe",
        }
    }

    /// Gap the leading virtual pedestrian crosses in.
    pub fn leader_gap(self) -> Option<f64> {
        match self {
            GroupCondition::Alone => None,
            GroupCondition::Risky => Some(4.0),
            GroupCondition::Safe => Some(6.5),
        }
    }
}

impl std::str::FromStr for GroupCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Alone" | "alone" => Ok(GroupCondition::Alone),
            "Risky" | "risky" => Ok(GroupCondition::Risky),
            "Safe" | "safe" => Ok(GroupCondition::Safe),
            other => Err(Error::invalid(format!("unknown group condition {other:?}"))),
        }
    }
}

/// Static layout and traffic parameters of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lane_count: u32,
    /// m/s
    pub vehicle_speed: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    /// Crossing length in metres (`L` in the critical-gap law).
    pub road_width: f64,
    pub zebra_present: bool,
    pub zebra_x: f64,
    /// Half-width of the band around `zebra_x` that counts as using the zebra.
    pub zebra_half_width: f64,
    pub start_x: f64,
    pub start_y: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub group_condition: GroupCondition,
    /// 4.0 s for `Risky`, 6.5 s for `Safe`; ignored when alone.
    pub leader_gap: f64,
    pub frame_dt: f64,
    /// Far-lane vehicles trail their near-lane partner by at most this many
    /// seconds. Zero draws the two lanes independently.
    pub lane_offset_max: f64,
    /// Waiting horizon after which the agent takes any gap above its floor.
    pub horizon: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            lane_count: 2,
            vehicle_speed: DEFAULT_VEHICLE_SPEED,
            gap_min: 2.5,
            gap_max: 8.5,
            road_width: 6.0,
            zebra_present: false,
            zebra_x: 4.0,
            zebra_half_width: 2.0,
            start_x: 0.0,
            start_y: -0.5,
            goal_x: 0.0,
            goal_y: 6.5,
            group_condition: GroupCondition::Alone,
            leader_gap: 0.0,
            frame_dt: 0.02,
            lane_offset_max: 1.0,
            horizon: 120.0,
        }
    }
}

impl ScenarioConfig {
    pub fn alone() -> Self {
        Self::default()
    }

    pub fn zebra() -> Self {
        ScenarioConfig {
            zebra_present: true,
            ..Self::default()
        }
    }

    pub fn group(condition: GroupCondition) -> Self {
        ScenarioConfig {
            group_condition: condition,
            leader_gap: condition.leader_gap().unwrap_or(0.0),
            ..Self::default()
        }
    }

    /// Short label used in file indices: `Alone`, `Zebra`, `Risky`, `Safe`.
    pub fn condition_label(&self) -> &'static str {
        if self.zebra_present {
            "Zebra"
        } else {
            self.group_condition.as_str()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("vehicle_speed", self.vehicle_speed),
            ("gap_min", self.gap_min),
            ("gap_max", self.gap_max),
            ("road_width", self.road_width),
            ("zebra_x", self.zebra_x),
            ("zebra_half_width", self.zebra_half_width),
            ("start_x", self.start_x),
            ("start_y", self.start_y),
            ("goal_x", self.goal_x),
            ("goal_y", self.goal_y),
            ("leader_gap", self.leader_gap),
            ("frame_dt", self.frame_dt),
            ("lane_offset_max", self.lane_offset_max),
            ("horizon", self.horizon),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "scenario.{name} is not finite ({v})"
                )));
            }
        }
        if self.lane_count != 2 {
            return Err(Error::invalid("scenario.lane_count must be 2"));
        }
        if !(self.gap_min > 0.0 && self.gap_min < self.gap_max) {
            return Err(Error::invalid(format!(
                "scenario.gap_min ({}) must be positive and below gap_max ({})",
                self.gap_min, self.gap_max
            )));
        }
        if self.vehicle_speed <= 0.0 {
            return Err(Error::invalid("scenario.vehicle_speed must be positive"));
        }
        if self.frame_dt <= 0.0 {
            return Err(Error::invalid("scenario.frame_dt must be positive"));
        }
        if self.road_width <= 0.0 {
            return Err(Error::invalid("scenario.road_width must be positive"));
        }
        if self.start_y >= 0.0 || self.goal_y <= self.road_width {
            return Err(Error::invalid(
                "scenario.start_y must lie before the near edge and goal_y beyond the far edge",
            ));
        }
        if self.zebra_half_width < 0.0 || self.lane_offset_max < 0.0 || self.horizon <= 0.0 {
            return Err(Error::invalid(
                "scenario.zebra_half_width, lane_offset_max must be >= 0 and horizon > 0",
            ));
        }
        if self.group_condition != GroupCondition::Alone {
            if self.zebra_present {
                return Err(Error::invalid("group conditions have no zebra crossing"));
            }
            if self.leader_gap != 4.0 && self.leader_gap != 6.5 {
                return Err(Error::invalid(format!(
                    "scenario.leader_gap must be 4.0 or 6.5 under a group condition, got {}",
                    self.leader_gap
                )));
            }
            if self.leader_gap < self.gap_min || self.leader_gap > self.gap_max {
                return Err(Error::invalid(
                    "scenario.leader_gap outside [gap_min, gap_max]",
                ));
            }
        }
        Ok(())
    }
}

/// Behavioural parameters of a simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub profile_name: String,
    pub walk_speed_mean: f64,
    pub walk_speed_sd: f64,
    /// Safety margin `F` of the critical-gap law, seconds.
    pub safety_margin_mean: f64,
    pub safety_margin_sd: f64,
    /// Seconds of threshold lost per missed gap.
    pub impatience_rate: f64,
    pub threshold_floor: f64,
    pub zebra_preference: f64,
    pub leader_follow_weight: f64,
    pub mind_change_prob: f64,
}

impl AgentProfile {
    /// Calibrated against the German cohort: median accepted gap ~6.5 s,
    /// median waiting time ~9.5 s, missed-gap mode at four.
    pub fn germany() -> Self {
        AgentProfile {
            profile_name: "DE".into(),
            walk_speed_mean: 1.43,
            walk_speed_sd: 0.22,
            safety_margin_mean: 4.2,
            safety_margin_sd: 0.8,
            impatience_rate: 1.0,
            threshold_floor: 5.0,
            zebra_preference: 0.55,
            leader_follow_weight: 0.5,
            mind_change_prob: 0.04,
        }
    }

    /// More cautious population: larger margin and floor, slightly faster walk.
    pub fn japan() -> Self {
        AgentProfile {
            profile_name: "JP".into(),
            walk_speed_mean: 1.48,
            walk_speed_sd: 0.21,
            safety_margin_mean: 4.4,
            safety_margin_sd: 0.6,
            impatience_rate: 0.6,
            threshold_floor: 5.6,
            zebra_preference: 0.7,
            leader_follow_weight: 0.35,
            mind_change_prob: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("walk_speed_mean", self.walk_speed_mean),
            ("walk_speed_sd", self.walk_speed_sd),
            ("safety_margin_mean", self.safety_margin_mean),
            ("safety_margin_sd", self.safety_margin_sd),
            ("impatience_rate", self.impatience_rate),
            ("threshold_floor", self.threshold_floor),
            ("zebra_preference", self.zebra_preference),
            ("leader_follow_weight", self.leader_follow_weight),
            ("mind_change_prob", self.mind_change_prob),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!("agent.{name} is not finite ({v})")));
            }
        }
        if self.walk_speed_mean <= 0.0 {
            return Err(Error::invalid("agent.walk_speed_mean must be positive"));
        }
        if self.walk_speed_sd < 0.0 || self.safety_margin_sd < 0.0 {
            return Err(Error::invalid("agent standard deviations must be >= 0"));
        }
        if self.impatience_rate < 0.0 {
            return Err(Error::invalid("agent.impatience_rate must be >= 0"));
        }
        if self.threshold_floor <= 0.0 {
            return Err(Error::invalid("agent.threshold_floor must be positive"));
        }
        for (name, p) in [
            ("zebra_preference", self.zebra_preference),
            ("leader_follow_weight", self.leader_follow_weight),
            ("mind_change_prob", self.mind_change_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "agent.{name} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}
