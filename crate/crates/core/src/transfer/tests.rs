use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::*;
use crate::eval::{cross_validate, RowKey};
use crate::models::{ModelKind, Targets, Task};
use crate::rng::stream_rng;

/// Gap-like regression domain: `y = 5 + 0.8 x0 − 0.5 x1 + noise + shift`.
fn domain(country: &str, participants: u32, per: u32, shift: f64, seed: u64) -> Problem {
    let mut rng = stream_rng(seed, 0);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let (mut inputs, mut y, mut keys) = (Vec::new(), Vec::new(), Vec::new());
    for p in 0..participants {
        for t in 0..per {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            y.push(vec![
                5.0 + 0.8 * x[0] - 0.5 * x[1] + noise.sample(&mut rng) + shift,
            ]);
            inputs.push(x);
            keys.push(RowKey {
                country: country.into(),
                trial_id: p * per + t,
                participant_id: p,
            });
        }
    }
    let n = inputs.len();
    Problem {
        task: TaskKind::GapSelection,
        with_entry: false,
        names: (0..4).map(|j| format!("f{j}")).collect(),
        inputs,
        targets: Targets::Regression(y),
        keys,
        zebra: vec![None; n],
    }
}

/// Straight crossings for `x0 < 0`, zebra detours otherwise.
fn trajectories(country: &str, n: u32, m: usize, seed: u64) -> Problem {
    let mut rng = stream_rng(seed, 1);
    let (mut inputs, mut y, mut keys, mut zebra) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let x0: f64 = rng.random_range(-1.0..1.0);
        let detour = x0 >= 0.0;
        let jitter: f64 = rng.random_range(-0.1..0.1);
        let path: Vec<[f64; 2]> = if detour {
            vec![[0.0, -0.5], [4.0, -0.5], [4.0, 6.5], [jitter, 6.5]]
        } else {
            vec![[0.0, -0.5], [jitter, 6.5]]
        };
        let flat: Vec<f64> = resample_points(&path, m)
            .iter()
            .flat_map(|p| [p[0], p[1]])
            .collect();
        inputs.push(vec![x0, rng.random_range(-1.0..1.0)]);
        y.push(flat);
        keys.push(RowKey {
            country: country.into(),
            trial_id: i,
            participant_id: i / 4,
        });
        zebra.push(Some(detour));
    }
    Problem {
        task: TaskKind::Trajectory,
        with_entry: false,
        names: vec!["a".into(), "b".into()],
        inputs,
        targets: Targets::Regression(y),
        keys,
        zebra,
    }
}

fn linear() -> ModelSpec {
    ModelSpec::new(ModelKind::LinearRegression, Task::Regression)
}

#[test]
fn diagonal_is_within_domain_cv() {
    let a = domain("DE", 20, 10, 0.0, 1);
    let b = domain("JP", 20, 10, 0.0, 2);
    let specs = [
        linear(),
        ModelSpec::new(ModelKind::RandomForest, Task::Regression).with_seed(3),
    ];
    let m = transfer_eval(&[&a, &b], &specs, SplitMode::ByParticipant, 7).unwrap();
    assert_eq!(m.cells.len(), 8);
    for spec in &specs {
        let cv = cross_validate(spec, &a, &a.plan(SplitMode::ByParticipant, 7).unwrap()).unwrap();
        assert_eq!(m.get("DE", "DE", spec.kind.as_str()).unwrap(), &cv);
    }
}

#[test]
fn identical_distributions_transfer_cleanly() {
    let a = domain("DE", 30, 10, 0.0, 11);
    let b = domain("JP", 30, 10, 0.0, 12);
    let m = transfer_eval(&[&a, &b], &[linear()], SplitMode::ByParticipant, 1).unwrap();
    let within = m
        .get("JP", "JP", "LinearRegression")
        .unwrap()
        .mean
        .mae
        .unwrap();
    let across = m
        .get("DE", "JP", "LinearRegression")
        .unwrap()
        .mean
        .mae
        .unwrap();
    assert!(
        (across - within).abs() <= 0.1 * within,
        "{across} vs {within}"
    );
}

#[test]
fn label_shift_degrades_transfer() {
    let a = domain("DE", 30, 10, 0.0, 11);
    let b = domain("JP", 30, 10, 1.0, 12);
    let m = transfer_eval(&[&a, &b], &[linear()], SplitMode::ByParticipant, 1).unwrap();
    let within = m
        .get("JP", "JP", "LinearRegression")
        .unwrap()
        .mean
        .mae
        .unwrap();
    let across = m
        .get("DE", "JP", "LinearRegression")
        .unwrap()
        .mean
        .mae
        .unwrap();
    assert!(across - within >= 0.5, "{across} vs {within}");
}

#[test]
fn overlapping_or_empty_domains_are_rejected() {
    let a = domain("DE", 10, 5, 0.0, 1);
    assert!(transfer_eval(&[&a, &a], &[linear()], SplitMode::ByTrial, 1).is_err());
    assert!(transfer_eval(&[], &[linear()], SplitMode::ByTrial, 1).is_err());
}

#[test]
fn transfer_is_deterministic() {
    let a = domain("DE", 15, 8, 0.0, 1);
    let b = domain("JP", 15, 8, 0.5, 2);
    let specs = [ModelSpec::new(ModelKind::MLP, Task::Regression).with_seed(4)];
    let x = transfer_eval(&[&a, &b], &specs, SplitMode::ByTrial, 3).unwrap();
    let y = transfer_eval(&[&a, &b], &specs, SplitMode::ByTrial, 3).unwrap();
    assert_eq!(
        serde_json::to_string(&x).unwrap(),
        serde_json::to_string(&y).unwrap()
    );
}

fn plans(a: &Problem, b: &Problem, seed: u64) -> (crate::eval::SplitPlan, crate::eval::SplitPlan) {
    (
        a.plan(SplitMode::ByParticipant, seed).unwrap(),
        b.plan(SplitMode::ByParticipant, seed).unwrap(),
    )
}

#[test]
fn single_cluster_matches_joint_exactly() {
    let a = domain("DE", 20, 10, 0.0, 5);
    let b = domain("JP", 20, 10, 0.3, 6);
    let (pa, pb) = plans(&a, &b, 2);
    for base in [
        linear(),
        ModelSpec::new(ModelKind::RandomForest, Task::Regression).with_seed(1),
    ] {
        let joint = run_strategy(
            &StrategySpec::new(Strategy::Joint, base.clone()),
            &a,
            &b,
            (&pa, &pb),
        )
        .unwrap();
        let k1 = run_strategy(
            &StrategySpec::new(Strategy::ClusterFeature, base.clone()).with_clusters(1),
            &a,
            &b,
            (&pa, &pb),
        )
        .unwrap();
        assert_eq!(joint.domains, k1.domains);
        // Prediction level, not only metrics.
        let combined = a.concat(&b).unwrap();
        let train: Vec<usize> = (0..combined.len()).filter(|i| i % 3 != 0).collect();
        let test: Vec<usize> = (0..combined.len()).filter(|i| i % 3 == 0).collect();
        let j = StrategyModel::fit(
            &StrategySpec::new(Strategy::Joint, base.clone()),
            &combined,
            &train,
        )
        .unwrap();
        let c = StrategyModel::fit(
            &StrategySpec::new(Strategy::ClusterFeature, base).with_clusters(1),
            &combined,
            &train,
        )
        .unwrap();
        assert_eq!(
            j.predict(&combined, &test).unwrap(),
            c.predict(&combined, &test).unwrap()
        );
    }
}

#[test]
fn joint_is_no_worse_than_separate_on_shared_distribution() {
    let a = domain("DE", 20, 10, 0.0, 21);
    let b = domain("JP", 20, 10, 0.0, 22);
    let (pa, pb) = plans(&a, &b, 4);
    let sep = run_strategy(
        &StrategySpec::new(Strategy::Separate, linear()),
        &a,
        &b,
        (&pa, &pb),
    )
    .unwrap();
    let joint = run_strategy(
        &StrategySpec::new(Strategy::Joint, linear()),
        &a,
        &b,
        (&pa, &pb),
    )
    .unwrap();
    assert!(joint.average.mae.unwrap() <= sep.average.mae.unwrap() * 1.05);
    assert_eq!(sep.domains.len(), 2);
}

#[test]
fn every_strategy_is_deterministic() {
    let a = trajectories("DE", 60, 8, 1);
    let b = trajectories("JP", 60, 8, 2);
    let (pa, pb) = plans(&a, &b, 1);
    for s in Strategy::ALL {
        let spec = StrategySpec::new(s, linear());
        let x = run_strategy(&spec, &a, &b, (&pa, &pb)).unwrap();
        let y = run_strategy(&spec, &a, &b, (&pa, &pb)).unwrap();
        assert_eq!(x, y, "{}", s.as_str());
        for d in &x.domains {
            assert_eq!(d.report.mean.ade_by_cluster.len(), 3);
        }
    }
}

#[test]
fn zebra_strategy_is_trajectory_only() {
    let a = domain("DE", 10, 5, 0.0, 1);
    let b = domain("JP", 10, 5, 0.0, 2);
    let (pa, pb) = plans(&a, &b, 1);
    assert!(run_strategy(
        &StrategySpec::new(Strategy::ZebraUsageFeature, linear()),
        &a,
        &b,
        (&pa, &pb)
    )
    .is_err());
}

fn digest(model: &StrategyModel) -> Vec<u8> {
    Sha256::digest(serde_json::to_vec(model).unwrap()).to_vec()
}

#[test]
fn removing_a_test_row_leaves_the_model_unchanged() {
    let p = domain("DE", 12, 10, 0.0, 9);
    let train: Vec<usize> = (0..p.len()).filter(|i| i % 4 != 0).collect();
    for s in [
        Strategy::Joint,
        Strategy::CountryFeature,
        Strategy::ClusterFeature,
    ] {
        let spec = StrategySpec::new(
            s,
            ModelSpec::new(ModelKind::RandomForest, Task::Regression).with_seed(2),
        );
        let full = StrategyModel::fit(&spec, &p, &train).unwrap();
        for drop in [0usize, 40, 116] {
            let keep: Vec<usize> = (0..p.len()).filter(|&i| i != drop).collect();
            let reduced = p.subset(&keep);
            let remapped: Vec<usize> = train
                .iter()
                .map(|&i| if i > drop { i - 1 } else { i })
                .collect();
            let again = StrategyModel::fit(&spec, &reduced, &remapped).unwrap();
            assert_eq!(
                digest(&full),
                digest(&again),
                "{} dropping {drop}",
                s.as_str()
            );
        }
    }
}

#[test]
fn tabular_centroids_come_from_training_rows() {
    let p = domain("DE", 12, 10, 0.0, 3);
    let train: Vec<usize> = (0..p.len()).filter(|i| i % 2 == 0).collect();
    let spec = StrategySpec::new(Strategy::ClusterFeature, linear()).with_clusters(3);
    let model = StrategyModel::fit(&spec, &p, &train).unwrap();
    let stage = model.cluster.as_ref().unwrap();
    let scaler = stage.input_scaler.as_ref().unwrap();
    let ordered = crate::eval::canonical(&p, train.clone());
    for c in 0..stage.k {
        let members: Vec<Vec<f64>> = ordered
            .iter()
            .zip(&stage.train_labels)
            .filter(|(_, &l)| l == c)
            .map(|(&i, _)| scaler.transform(&p.inputs[i]).unwrap())
            .collect();
        for j in 0..members[0].len() {
            let mean = members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64;
            assert!((stage.clustering.centroids[c][j] - mean).abs() < 1e-12);
        }
    }
    // The scaler saw only training rows.
    let raw: Vec<Vec<f64>> = train.iter().map(|&i| p.inputs[i].clone()).collect();
    let expected = crate::features::Scaler::fit(&raw, &p.names).unwrap();
    assert_eq!(scaler, &expected);
}

#[test]
fn clusters_recover_zebra_usage() {
    let p = trajectories("DE", 80, 16, 5);
    let all: Vec<usize> = (0..p.len()).collect();
    let model = StrategyModel::fit(
        &StrategySpec::new(Strategy::ClusterFeature, linear()),
        &p,
        &all,
    )
    .unwrap();
    let labels = &model.cluster.as_ref().unwrap().train_labels;
    let ordered = crate::eval::canonical(&p, all);
    let agree = ordered
        .iter()
        .zip(labels)
        .filter(|(&i, &l)| p.zebra[i] == Some(l == 1))
        .count() as f64
        / labels.len() as f64;
    assert!(agree.max(1.0 - agree) >= 0.97);
}

#[test]
fn pipeline_beats_joint_on_two_families() {
    let a = trajectories("DE", 100, 16, 7);
    let b = trajectories("JP", 100, 16, 8);
    let (pa, pb) = plans(&a, &b, 3);
    let joint = run_strategy(
        &StrategySpec::new(Strategy::Joint, linear()),
        &a,
        &b,
        (&pa, &pb),
    )
    .unwrap();
    let cluster = run_strategy(
        &StrategySpec::new(Strategy::ClusterFeature, linear()),
        &a,
        &b,
        (&pa, &pb),
    )
    .unwrap();
    assert!(cluster.average.ade.unwrap() < joint.average.ade.unwrap());
    let mut per = StrategySpec::new(Strategy::ClusterFeature, linear());
    per.per_cluster = true;
    let routed = run_strategy(&per, &a, &b, (&pa, &pb)).unwrap();
    assert!(routed.average.ade.unwrap() < joint.average.ade.unwrap());
}

#[test]
fn identical_trajectories_are_reproduced() {
    let mut p = trajectories("DE", 30, 8, 2);
    let fixed = match &p.targets {
        Targets::Regression(t) => t[0].clone(),
        _ => unreachable!(),
    };
    p.targets = Targets::Regression(vec![fixed.clone(); p.len()]);
    let all: Vec<usize> = (0..p.len()).collect();
    let spec = StrategySpec::new(
        Strategy::Joint,
        ModelSpec::new(ModelKind::RandomForest, Task::Regression),
    );
    let model = StrategyModel::fit(&spec, &p, &all).unwrap();
    let pred = model.predict(&p, &all).unwrap();
    let rows = pred.regression().unwrap();
    assert!(rows.iter().all(|r| r.len() == 16));
    let truth = vec![fixed; p.len()];
    assert!(crate::eval::ade_flat(&truth, rows).unwrap() < 1e-9);
}

#[test]
fn straight_path_resamples_evenly() {
    let path = [[1.0, -0.5], [1.0, 2.0], [1.0, 6.5]];
    // Uneven input spacing in time, so use an explicit constant-speed trace.
    let trace: Vec<crate::sim::TracePoint> = (0..50)
        .map(|i| crate::sim::TracePoint {
            t: i as f64 * 0.02,
            x: 1.0 + 0.3 * i as f64 * 0.02,
            y: -0.5 + 1.4 * i as f64 * 0.02,
        })
        .collect();
    let r = crate::features::resample_trajectory(&trace, 32);
    let step = [r[1][0] - r[0][0], r[1][1] - r[0][1]];
    for w in r.windows(2) {
        assert!((w[1][0] - w[0][0] - step[0]).abs() < 1e-9);
        assert!((w[1][1] - w[0][1] - step[1]).abs() < 1e-9);
    }
    assert_eq!(resample_points(&path, 3), path.to_vec());
    assert_eq!(resample_points(&path, 5).len(), 5);
}

#[test]
fn single_domain_joint_matches_cross_validation() {
    let a = domain("DE", 20, 8, 0.0, 4);
    let plan = a.plan(SplitMode::ByParticipant, 3).unwrap();
    let spec = StrategySpec::new(Strategy::Joint, linear());
    let s = cross_validate_strategy(&spec, &a, &plan).unwrap();
    let c = cross_validate(&linear(), &a, &plan).unwrap();
    assert_eq!(s.mean, c.mean);

    let t = trajectories("DE", 80, 8, 5);
    let plan = t.plan(SplitMode::ByParticipant, 3).unwrap();
    let spec = StrategySpec::new(
        Strategy::ClusterFeature,
        ModelSpec::new(ModelKind::RandomForest, Task::Regression),
    );
    let r = cross_validate_strategy(&spec, &t, &plan).unwrap();
    assert_eq!(r.mean.ade_by_cluster.len(), 3);
    assert!(r.folds.iter().all(|f| f.metrics.ade.is_some()));
}
