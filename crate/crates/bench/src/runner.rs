//! Training runs, held-out evaluation, capacity sweeps and planning.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pcode_core::model::{AnyModel, ModelKind, SequenceModel};
use pcode_core::pcode::select_epsilon;
use pcode_core::planning::{plan_and_execute, success_curve, total_cell_updates, PlanConfig, PlanRecord, Planner};
use pcode_core::train::{evaluate, train, EvalMetrics, StepInfo};
use pcode_core::worlds::{generate_with_horizon, read_dataset, Dataset, Trajectory, WorldParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Architecture};
use crate::config::{EpsilonSource, ExperimentConfig};
use crate::error::{config_err, io_err, BenchError, Result};
use crate::manifest::{Metrics, RunManifest, Split, Training};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
/// Sequences per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

// Far above any trajectory index, so these never share a stream with the
// data generators.
const SPLIT_STREAM: u64 = 1 << 40;
const INIT_STREAM: u64 = (1 << 40) + 1;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_dataset(std::io::BufReader::new(f))?)
}

/// The configured dataset file, or freshly generated data.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(path) => {
            let ds = read_dataset_file(path)?;
            if ds.task != cfg.task {
                return Err(BenchError::Mismatch(format!(
                    "dataset holds {} but the config asks for {}",
                    ds.task.as_str(),
                    cfg.task.as_str()
                )));
            }
            Ok(ds)
        }
        None => Ok(generate_with_horizon(cfg.task, cfg.n, cfg.horizon, cfg.seed, &cfg.world)?),
    }
}

/// Seeded shuffle, then the last tenth (at least one sequence) is held out.
pub fn held_out_split(data: &[Trajectory], seed: u64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeded(seed, SPLIT_STREAM));
    let held = if data.len() < 2 { 0 } else { (data.len() / 10).max(1) };
    let cut = data.len() - held;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

/// Untrained model for `cfg`, initialized from its seed.
pub fn init_model(cfg: &ExperimentConfig, obs_dim: usize) -> Result<AnyModel> {
    let arch = Architecture {
        kind: cfg.model,
        obs_dim,
        latent: cfg.latent,
        hidden: cfg.hidden,
        leaky_slope: cfg.leaky_slope,
        substeps: if cfg.model == ModelKind::OdeRnn { cfg.substeps } else { 0 },
    };
    arch.build(&mut seeded(cfg.seed, INIT_STREAM))
}

/// Finds the manifest named by a baseline reference.
pub fn locate_manifest(reference: &str, out: Option<&Path>) -> Result<PathBuf> {
    let direct = PathBuf::from(reference);
    let mut candidates = vec![direct.clone(), direct.join(MANIFEST_FILE)];
    if let Some(out) = out {
        candidates.push(out.join(reference).join(MANIFEST_FILE));
    }
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| config_err(format!("baseline run `{reference}` not found")))
}

/// Tolerance and its provenance label.
pub fn resolve_epsilon(cfg: &ExperimentConfig) -> Result<(f64, String)> {
    if cfg.model != ModelKind::PcOde {
        return Ok((0.0, "unused".into()));
    }
    match &cfg.epsilon {
        EpsilonSource::Value(v) => Ok((*v, "value".into())),
        EpsilonSource::FromBaseline(r) => {
            let path = locate_manifest(r, cfg.out.as_deref())?;
            let base = RunManifest::read(&path)?;
            if base.model != ModelKind::Rnn.as_str() {
                return Err(config_err(format!("baseline `{r}` is a {} run, not rnn", base.model)));
            }
            if base.task != cfg.task.as_str() {
                return Err(config_err(format!(
                    "baseline `{r}` was trained on {}, not {}",
                    base.task,
                    cfg.task.as_str()
                )));
            }
            let eps = select_epsilon(Some(base.training.final_train_loss))?;
            Ok((eps, format!("baseline:{}", base.run_id)))
        }
    }
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Kept weights, already narrowed to the checkpoint precision.
    pub model: AnyModel,
    /// Where the artifacts were written, if an output directory was set.
    pub dir: Option<PathBuf>,
}

/// Trains, evaluates on the held-out split and, when `cfg.out` is set,
/// writes `config.txt`, `model.ckpt` and `manifest.json` under
/// `<out>/<run id>/`.
pub fn run(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&StepInfo)) -> Result<RunOutcome> {
    cfg.validate()?;
    let (epsilon, epsilon_source) = resolve_epsilon(cfg)?;
    let ds = load_dataset(cfg)?;
    let (train_set, held) = held_out_split(&ds.trajectories, cfg.seed);
    if held.is_empty() {
        return Err(config_err("need at least two sequences to hold one out"));
    }
    let mut model = init_model(cfg, ds.obs_dim())?;
    let report = train(
        &mut model,
        &train_set,
        &held,
        &cfg.train_config(epsilon),
        Some(cfg.stop),
        cfg.seed,
        progress,
    )?;
    model.params_mut().round_to_f32();
    let metrics = evaluate(&model, &held, cfg.train.primer_len, EVAL_CHUNK)?;
    let hash = cfg.hash();
    let manifest = RunManifest {
        run_id: cfg.run_id(),
        config: cfg.pairs(),
        config_hash: hash.clone(),
        task: cfg.task.as_str().into(),
        model: cfg.model.as_str().into(),
        epsilon,
        epsilon_source,
        split: Split {
            train: train_set.len(),
            held_out: held.len(),
        },
        training: Training {
            loss_curve: report.loss_curve,
            dt_star_curve: report.dt_star_curve,
            valid_curve: report.valid_curve,
            eval_every: cfg.stop.eval_every,
            patience: cfg.stop.patience,
            best_step: report.best_step,
            steps_run: report.steps_run,
            final_train_loss: report.final_train_loss,
        },
        metrics: metrics.into(),
        checkpoint: CHECKPOINT_FILE.into(),
    };
    let dir = match &cfg.out {
        Some(out) => {
            let dir = out.join(&manifest.run_id);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let cfg_path = dir.join(CONFIG_FILE);
            fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
            checkpoint::save(&dir.join(CHECKPOINT_FILE), &model, &hash)?;
            manifest.write(&dir.join(MANIFEST_FILE))?;
            Some(dir)
        }
        None => None,
    };
    Ok(RunOutcome { manifest, model, dir })
}

/// Metrics of `model` on `data`, checking that the dimensions agree.
pub fn evaluate_model(model: &AnyModel, data: &[Trajectory], primer_len: usize) -> Result<EvalMetrics> {
    let dim = data.first().map_or(0, |t| t.obs_dim);
    if dim != model.obs_dim() {
        return Err(BenchError::Mismatch(format!(
            "model expects {}-dimensional observations, dataset has {dim}",
            model.obs_dim()
        )));
    }
    Ok(evaluate(model, data, primer_len, EVAL_CHUNK)?)
}

/// Reloads a run directory and re-evaluates its checkpoint on the same
/// held-out split.
pub fn reevaluate_run(dir: &Path) -> Result<(RunManifest, EvalMetrics)> {
    let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    let cfg = ExperimentConfig::parse(&manifest.config_text())?;
    if cfg.hash() != manifest.config_hash {
        return Err(BenchError::Mismatch("manifest config does not match its hash".into()));
    }
    let ck = checkpoint::load(&dir.join(&manifest.checkpoint), Some(&manifest.config_hash))?;
    let ds = load_dataset(&cfg)?;
    let (_, held) = held_out_split(&ds.trajectories, cfg.seed);
    let m = evaluate_model(&ck.model, &held, cfg.train.primer_len)?;
    Ok((manifest, m))
}

/// CSV with one metrics row per labelled entry.
pub fn write_metrics_csv(rows: &[(String, Metrics)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "run,test_mse,sample_mse,mean_dt,mean_dt_star,cell_updates_per_seq,function_evals_per_seq"
    )?;
    for (label, m) in rows {
        writeln!(
            out,
            "{label},{},{},{},{},{},{}",
            m.test_mse, m.sample_mse, m.mean_dt, m.mean_dt_star, m.cell_updates_per_seq, m.function_evals_per_seq
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Retrains the PC-ODE of `base` at every latent size and seed.
pub fn sweep_capacity(
    base: &ExperimentConfig,
    sizes: &[usize],
    seeds: &[u64],
    progress: &mut dyn FnMut(usize, u64, &StepInfo),
) -> Result<Vec<SweepRow>> {
    if base.model != ModelKind::PcOde {
        return Err(config_err("capacity sweeps train pcode models"));
    }
    if sizes.is_empty() || seeds.is_empty() {
        return Err(config_err("need at least one size and one seed"));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.latent = size;
            cfg.hidden = size;
            cfg.seed = seed;
            let out = run(&cfg, &mut |s| progress(size, seed, s))?;
            rows.push(SweepRow {
                size,
                seed,
                metrics: out.manifest.metrics,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "hidden_size,seed,mean_dt,mean_dt_star,sample_mse,test_mse")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(out, "{},{},{},{},{},{}", r.size, r.seed, m.mean_dt, m.mean_dt_star, m.sample_mse, m.test_mse)?;
    }
    Ok(())
}

/// Mean of a metric over seeds, per size, in first-seen size order.
pub fn mean_by_size(rows: &[SweepRow], metric: impl Fn(&Metrics) -> f64) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sizes.contains(&r.size) {
            sizes.push(r.size);
        }
    }
    sizes
        .into_iter()
        .map(|s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.size == s).map(|r| metric(&r.metrics)).collect();
            (s, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Simulator and random planners plus one planner per model, all on the
/// same problems and candidate shots.
pub fn plan_benchmark(
    models: &[&AnyModel],
    n_problems: usize,
    cfg: &PlanConfig,
    seed: u64,
    world: &WorldParams,
) -> Result<Vec<PlanRecord>> {
    let sim = world.simulator();
    let mut planners = vec![Planner::Simulator, Planner::Random];
    planners.extend(models.iter().map(|m| Planner::Model(m)));
    let mut records = Vec::new();
    for p in planners {
        records.extend(plan_and_execute(p, n_problems, cfg, world.radius, seed, &sim)?);
    }
    Ok(records)
}

/// Success rate and total cell updates per planner and budget.
pub fn write_plan_summary(records: &[PlanRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "planner,budget,success_rate,cell_updates")?;
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.planner.as_str()) {
            names.push(&r.planner);
        }
    }
    for name in names {
        for (budget, rate) in success_curve(records, name) {
            writeln!(out, "{name},{budget},{rate},{}", total_cell_updates(records, name, budget))?;
        }
    }
    Ok(())
}
