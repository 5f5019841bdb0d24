use crosslab::features::extract_all;
use crosslab::sim::{generate_dataset, AgentProfile, ScenarioConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    for mut agent in [AgentProfile::germany(), AgentProfile::japan()] {
        let mut cfg = ScenarioConfig::alone();
        if args.len() >= 4 {
            agent.safety_margin_mean = args[0];
            agent.impatience_rate = args[1];
            agent.threshold_floor = args[2];
            cfg.lane_offset_max = args[3];
        }
        let trials = generate_dataset(&[cfg], &agent, 60, 15, 1).unwrap();
        let rows = extract_all(&trials);
        let gaps: Vec<f64> = rows.iter().map(|r| r.label_gap.unwrap()).collect();
        let waits: Vec<f64> = rows.iter().map(|r| r.pre.T_w).collect();
        let mut hist = [0usize; 16];
        for r in &rows {
            hist[(r.pre.N_cb as usize).min(15)] += 1;
        }
        println!(
            "{} n={} gap median {:.2} wait median {:.2} missed hist {:?}",
            agent.profile_name,
            rows.len(),
            median(gaps),
            median(waits),
            hist
        );
    }
}
