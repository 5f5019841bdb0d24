//! Deterministic traffic and pedestrian simulator.
//!
//! Frame: `x` runs along the road, `y` across it. The near road edge is `y = 0`
//! and the far edge is `y = road_width`. Vehicles are points travelling at a
//! constant speed; the near lane drives towards `+x`, the far lane towards `-x`.
//! Arrival times are recorded at the reference line `x = 0`.

mod scenario;
mod stream;
mod trial;

pub use scenario::{AgentProfile, GroupCondition, ScenarioConfig};
pub use stream::{Lane, VehicleState, VehicleStream, ZebraYield};
pub use trial::{
    generate_dataset, generate_trial, generate_trial_with, standard_conditions, AgentTruth,
    ParticipantDraws, Route, TracePoint, TrialRecord,
};
