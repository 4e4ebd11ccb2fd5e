//! Checkpoint round trips, run reproducibility and the library entry points
//! behind each CLI command.

use pcode_bench::checkpoint::{self, decode, encode};
use pcode_bench::manifest::RunManifest;
use pcode_bench::runner::{self, held_out_split, init_model, MANIFEST_FILE};
use pcode_bench::{BenchError, EpsilonSource, ExperimentConfig, Preset};
use pcode_core::model::{ModelKind, SeqBatch, SequenceModel};
use pcode_core::planning::{success_curve, PlanConfig};
use pcode_core::worlds::{generate_with_horizon, TaskId, Trajectory, WorldParams};

fn small(task: TaskId, model: ModelKind, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(Preset::Desk, task, model);
    c.n = 60;
    c.latent = 12;
    c.hidden = 12;
    c.train.steps = steps;
    c.train.batch_size = 8;
    c.stop.eval_every = 10;
    c.seed = 4;
    c
}

fn rollout_values(model: &pcode_core::model::AnyModel, trajs: &[Trajectory]) -> Vec<f64> {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let primer = SeqBatch::from_trajectories(&refs).unwrap().prefix(5).unwrap();
    let roll = model.rollout(&primer, trajs[0].len() - 1).unwrap();
    let mut out = Vec::new();
    for i in 0..trajs.len() {
        for t in 0..trajs[0].len() {
            out.extend_from_slice(roll.prediction(i, t));
        }
    }
    out
}

#[test]
fn checkpoints_round_trip() {
    let data = generate_with_horizon(TaskId::Billiards2d, 6, 12, 2, &WorldParams::default()).unwrap();
    for kind in [ModelKind::PcOde, ModelKind::Rnn, ModelKind::OdeRnn] {
        let mut cfg = small(TaskId::Billiards2d, kind, 1);
        cfg.horizon = 12;
        let mut model = init_model(&cfg, 4).unwrap();
        model.set_epsilon(3.5e-4);
        model.set_standardizer(pcode_core::nn::Standardizer {
            mean: vec![0.5, 0.4, 0.6, 0.5],
            scale: vec![0.2, 0.3, 0.25, 0.1],
        });
        let first = encode(&model, "abc");
        let back = decode(&first, Some("abc")).unwrap();
        assert_eq!(encode(&back.model, "abc"), first, "{kind}");
        // only the PC-ODE carries a tolerance
        let eps = if kind == ModelKind::PcOde { 3.5e-4 } else { 0.0 };
        assert_eq!(back.model.epsilon(), eps);
        assert_eq!(back.model.standardizer(), model.standardizer());

        let a = rollout_values(&model, &data.trajectories);
        let b = rollout_values(&back.model, &data.trajectories);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{kind}: {x} vs {y}");
        }
    }
}

#[test]
fn damaged_checkpoints_are_refused() {
    let cfg = small(TaskId::Lines, ModelKind::Rnn, 1);
    let model = init_model(&cfg, 2).unwrap();
    let bytes = encode(&model, "h1");
    let corrupt = |r: Result<checkpoint::Checkpoint, BenchError>| matches!(r, Err(BenchError::Corrupt(_)));
    assert!(corrupt(decode(&bytes[..bytes.len() - 1], None)));
    assert!(corrupt(decode(&bytes[..40], None)));
    assert!(corrupt(decode(b"PCOD1 nonsense", None)));
    assert!(matches!(decode(&bytes, Some("h2")), Err(BenchError::Mismatch(_))));

    let text = String::from_utf8_lossy(&bytes).into_owned();
    let pos = text.find("latent 12").unwrap();
    let mut altered = bytes.clone();
    altered[pos..pos + 9].copy_from_slice(b"latent 13");
    assert!(matches!(decode(&altered, None), Err(BenchError::Mismatch(_))));
}

#[test]
fn runs_are_reproducible_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(TaskId::Lines, ModelKind::Rnn, 40);
    cfg.out = Some(dir.path().to_path_buf());
    let a = runner::run(&cfg, &mut |_| {}).unwrap();
    let b = runner::run(&cfg, &mut |_| {}).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.manifest.metrics.mean_dt, 1.0);
    assert_eq!(a.manifest.split.held_out, 6);
    assert_eq!(a.manifest.training.valid_curve.len(), 4);

    let run_dir = a.dir.unwrap();
    let on_disk = RunManifest::read(&run_dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, a.manifest);
    let (_, m) = runner::reevaluate_run(&run_dir).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
    assert!(rel(m.test_mse, a.manifest.metrics.test_mse) < 1e-5);
    assert!(rel(m.sample_mse, a.manifest.metrics.sample_mse) < 1e-5);
    assert_eq!(m.mean_dt, a.manifest.metrics.mean_dt);
}

#[test]
fn tolerance_comes_from_a_baseline_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(TaskId::Lines, ModelKind::Rnn, 20);
    base.out = Some(dir.path().to_path_buf());
    let done = runner::run(&base, &mut |_| {}).unwrap();

    let mut pc = small(TaskId::Lines, ModelKind::PcOde, 20);
    pc.out = Some(dir.path().to_path_buf());
    pc.epsilon = EpsilonSource::FromBaseline(done.manifest.run_id.clone());
    let (eps, source) = runner::resolve_epsilon(&pc).unwrap();
    assert_eq!(eps, done.manifest.training.final_train_loss);
    assert_eq!(source, format!("baseline:{}", done.manifest.run_id));
    let run = runner::run(&pc, &mut |_| {}).unwrap();
    assert_eq!(run.manifest.epsilon, eps);
    assert_eq!(run.model.epsilon(), eps);

    pc.epsilon = EpsilonSource::FromBaseline("missing-run".into());
    assert!(runner::run(&pc, &mut |_| {}).is_err());
    // a PC-ODE run cannot serve as the baseline
    pc.epsilon = EpsilonSource::FromBaseline(run.manifest.run_id.clone());
    assert!(runner::resolve_epsilon(&pc).is_err());
}

#[test]
fn training_beats_initialization() {
    let cfg = small(TaskId::Lines, ModelKind::Rnn, 300);
    let trained = runner::run(&cfg, &mut |_| {}).unwrap();
    let ds = runner::load_dataset(&cfg).unwrap();
    let (_, held) = held_out_split(&ds.trajectories, cfg.seed);
    let mut fresh = init_model(&cfg, 2).unwrap();
    fresh.set_standardizer(trained.model.standardizer().clone());
    let before = runner::evaluate_model(&fresh, &held, 5).unwrap();
    let after = trained.manifest.metrics;
    assert!(before.sample_mse > 10.0 * after.sample_mse, "{} vs {}", before.sample_mse, after.sample_mse);
    let again = runner::evaluate_model(&trained.model, &held, 5).unwrap();
    assert_eq!(again.sample_mse, after.sample_mse);
    // dimension mismatch
    let px = generate_with_horizon(TaskId::Billiards2d, 2, 8, 1, &WorldParams::default()).unwrap();
    assert!(runner::evaluate_model(&trained.model, &px.trajectories, 5).is_err());
}

#[test]
fn split_holds_out_a_tenth() {
    let ds = generate_with_horizon(TaskId::Circles, 95, 4, 3, &WorldParams::default()).unwrap();
    let (tr, held) = held_out_split(&ds.trajectories, 8);
    assert_eq!((tr.len(), held.len()), (86, 9));
    let (tr2, held2) = held_out_split(&ds.trajectories, 8);
    assert_eq!((tr, held.clone()), (tr2, held2));
    for h in &held {
        assert_eq!(ds.trajectories.iter().filter(|t| *t == h).count(), 1);
    }
    assert_ne!(held_out_split(&ds.trajectories, 9).1, held);
}

#[test]
fn single_size_sweep_gives_one_csv_row() {
    let cfg = small(TaskId::Circles, ModelKind::PcOde, 5);
    let rows = runner::sweep_capacity(&cfg, &[8], &[1], &mut |_, _, _| {}).unwrap();
    assert_eq!(rows.len(), 1);
    let mut csv = Vec::new();
    runner::write_sweep_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(header.len(), row.len());
    assert_eq!(row[0], "8");
    assert!(row[2..].iter().all(|v| v.parse::<f64>().is_ok()));
    let rnn = small(TaskId::Circles, ModelKind::Rnn, 5);
    assert!(runner::sweep_capacity(&rnn, &[8], &[1], &mut |_, _, _| {}).is_err());
}

#[test]
fn one_budget_gives_one_point_per_planner() {
    let mut cfg = small(TaskId::Billiards2d, ModelKind::Rnn, 1);
    cfg.horizon = 10;
    let model = init_model(&cfg, 4).unwrap();
    let plan = PlanConfig {
        budgets: vec![1],
        ..PlanConfig::default()
    };
    let records = runner::plan_benchmark(&[&model], 6, &plan, 3, &WorldParams::default()).unwrap();
    for name in ["simulator", "random", "rnn"] {
        assert_eq!(success_curve(&records, name).len(), 1, "{name}");
    }
    let mut out = Vec::new();
    runner::write_plan_summary(&records, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 4);
}
