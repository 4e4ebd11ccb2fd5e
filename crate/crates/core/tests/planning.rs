//! Shot sampling, scoring and the planning benchmark loop.

use pcode_core::baselines::{RecurrentConfig, RnnModel};
use pcode_core::model::AnyModel;
use pcode_core::pcode::{PcOdeConfig, PcOdeModel};
use pcode_core::planning::*;
use pcode_core::worlds::Simulator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn proposals_respect_the_speed_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = propose_actions(1, (0.05, 0.2), &mut rng).unwrap();
    assert_eq!(one.len(), 1);
    let s = one[0][0].hypot(one[0][1]);
    assert!((0.05..0.2).contains(&s));
    assert!(propose_actions(0, (0.05, 0.2), &mut rng).is_err());
    assert!(propose_actions(3, (0.2, 0.05), &mut rng).is_err());
}

#[test]
fn proposals_cover_every_quadrant_and_repeat_under_a_seed() {
    let draws = propose_actions(1000, (0.05, 0.2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut quadrants = [0; 4];
    for v in &draws {
        quadrants[usize::from(v[0] < 0.0) * 2 + usize::from(v[1] < 0.0)] += 1;
    }
    assert!(quadrants.iter().all(|&q| q > 150), "{quadrants:?}");
    let again = propose_actions(1000, (0.05, 0.2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(draws, again);
}

#[test]
fn resting_target_scores_its_own_distance() {
    let p = ShotProblem::new([0.2, 0.8], [0.9, 0.05], 0.04).unwrap();
    let d = execute(&p, [0.0, 0.0], &Simulator::default()).unwrap();
    assert!((d - 0.111_803_398_874_989_48).abs() < 1e-12);
    assert!(is_success(d));
}

#[test]
fn crafted_diagonal_shot_is_pocketed() {
    let p = ShotProblem::new([0.3, 0.7], [0.5, 0.5], 0.1).unwrap();
    let v = 0.15 / 2f64.sqrt();
    let sim = Simulator::default();
    let d = execute(&p, [v, -v], &sim).unwrap();
    // the target slides down the diagonal toward the corner at (0.9, 0.1),
    // sampled only at integer steps
    assert!(d >= 0.02f64.sqrt() - 1e-9, "{d}");
    assert!(is_success(d));
    let miss = execute(&p, [0.0, 0.0], &sim).unwrap();
    assert!(!is_success(miss));
}

#[test]
fn random_planner_plays_the_first_candidate() {
    let p = benchmark_problem(3, 0, 0.1);
    let cfg = PlanConfig::default();
    let actions = benchmark_candidates(3, 0, &cfg).unwrap();
    let sim = Simulator::default();
    let scores = score_actions(Planner::Random, &p, &actions, &sim).unwrap();
    for budget in [1, 5, 20] {
        let ep = choose_and_execute(&p, &actions, &scores, budget, &sim).unwrap();
        assert_eq!(ep.action, actions[0]);
        assert_eq!(ep.cell_updates, 0);
        assert_eq!(ep.candidates, budget);
    }
    assert!(choose_and_execute(&p, &actions, &scores, 21, &sim).is_err());
}

#[test]
fn simulator_planner_is_monotone_in_budget() {
    let sim = Simulator::default();
    let cfg = PlanConfig::default();
    let records = plan_and_execute(Planner::Simulator, 40, &cfg, 0.1, 9, &sim).unwrap();
    for i in 0..40 {
        let rows: Vec<&PlanRecord> = records.iter().filter(|r| r.problem == i).collect();
        for w in rows.windows(2) {
            assert!(w[1].success >= w[0].success, "problem {i}");
        }
    }
    let curve = success_curve(&records, "simulator");
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), cfg.budgets);
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    let random = plan_and_execute(Planner::Random, 40, &cfg, 0.1, 9, &sim).unwrap();
    let r = success_curve(&random, "random");
    assert_eq!(r[0].1, curve[0].1);
    assert!(curve.last().unwrap().1 >= r.last().unwrap().1);
}

#[test]
fn learned_planners_count_cell_updates() {
    let sim = Simulator::default();
    let cfg = PlanConfig { budgets: vec![1, 3], ..PlanConfig::default() };
    let rnn = AnyModel::Rnn(RnnModel::new(RecurrentConfig::new(4, 6), &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
    let recs = plan_and_execute(Planner::Model(&rnn), 3, &cfg, 0.1, 5, &sim).unwrap();
    assert_eq!(recs.len(), 6);
    assert_eq!(total_cell_updates(&recs, "rnn", 1), 3 * SHOT_HORIZON);
    assert_eq!(total_cell_updates(&recs, "rnn", 3), 9 * SHOT_HORIZON);
    let again = plan_and_execute(Planner::Model(&rnn), 3, &cfg, 0.1, 5, &sim).unwrap();
    assert_eq!(recs, again);

    let mut pc = PcOdeModel::new(PcOdeConfig::new(4, 6), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    pc.epsilon = 1e9;
    let pc = AnyModel::PcOde(pc);
    let recs = plan_and_execute(Planner::Model(&pc), 3, &cfg, 0.1, 5, &sim).unwrap();
    assert!(recs.iter().all(|r| r.cell_updates >= r.budget));

    let wrong = AnyModel::Rnn(RnnModel::new(RecurrentConfig::new(2, 4), &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
    assert!(plan_and_execute(Planner::Model(&wrong), 1, &cfg, 0.1, 5, &sim).is_err());
}

#[test]
fn csv_has_a_header_and_one_row_per_record() {
    let sim = Simulator::default();
    let recs = plan_and_execute(Planner::Random, 2, &PlanConfig::default(), 0.1, 1, &sim).unwrap();
    let mut out = Vec::new();
    write_csv(&recs, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "problem,planner,budget,success,cell_updates,function_evals");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1].starts_with("0,random,1,"));
}
