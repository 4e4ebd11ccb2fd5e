use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcode_core::model::SequenceModel;
use pcode_core::planning::{write_csv, PlanConfig};
use pcode_core::train::StepInfo;
use pcode_core::worlds::{generate_with_horizon, write_dataset, TaskId, DATASET_MAGIC};
use pcode_bench::checkpoint::{self, CHECKPOINT_MAGIC};
use pcode_bench::config::parse_pairs;
use pcode_bench::error::BenchError;
use pcode_bench::manifest::{Metrics, RunManifest};
use pcode_bench::runner::{self, held_out_split};
use pcode_bench::{ExperimentConfig, Preset, Result};

#[derive(Parser)]
#[command(name = "pcode", version, about = "Train and evaluate piecewise-constant neural ODE models")]
struct Cli {
    /// Default profile for unset hyperparameters.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    Gen {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train one model and write its run directory.
    Train(ConfigArgs),
    /// Held-out metrics of a checkpoint.
    Eval {
        /// Run directory; reuses its config and split.
        #[arg(long, conflicts_with_all = ["checkpoint", "dataset"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluate only the split held out under this seed.
        #[arg(long)]
        held_out_seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        primer_len: usize,
    },
    /// Mean step size against latent width.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        seeds: Vec<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Billiards shot planning with the simulator, random shots and models.
    Plan {
        /// Billiards2d checkpoints used as planners.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        problems: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 20])]
        budgets: Vec<usize>,
        /// Per-planner summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Describe a dataset, checkpoint or manifest.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn build_config(cli: &Cli, args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut pairs = match &args.config {
        Some(p) => parse_pairs(&read_text(p)?)?,
        None => Vec::new(),
    };
    let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
    if let Some(t) = &args.task {
        push("task", t.clone());
    }
    if let Some(m) = &args.model {
        push("model", m.clone());
    }
    if let Some(p) = &cli.preset {
        push("preset", p.clone());
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("override `{s}` is not key=value")))?;
        push(k.trim(), v.trim().to_string());
    }
    if let Some(seed) = cli.seed {
        push("seed", seed.to_string());
    }
    if let Some(out) = &cli.out {
        push("out", out.display().to_string());
    }
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    ExperimentConfig::parse(&text)
}

fn log_step(label: &str) -> impl FnMut(&StepInfo) + '_ {
    move |s: &StepInfo| {
        if s.step % 100 == 0 || s.valid_loss.is_some() {
            let valid = s.valid_loss.map_or(String::new(), |v| format!(" valid={v:.4e}"));
            eprintln!(
                "{label} step={} loss={:.4e} dt_star={:.2}{valid}",
                s.step, s.loss_x, s.mean_dt_star
            );
        }
    }
}

fn print_table(rows: &[(String, Metrics)]) {
    eprintln!("{:<36} {:>11} {:>11} {:>8} {:>8} {:>9}", "run", "test_mse", "sample_mse", "mean_dt", "dt_star", "updates");
    for (label, m) in rows {
        eprintln!(
            "{label:<36} {:>11.4e} {:>11.4e} {:>8.3} {:>8.3} {:>9.2}",
            m.test_mse, m.sample_mse, m.mean_dt, m.mean_dt_star, m.cell_updates_per_seq
        );
    }
}

fn write_to(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let wrap = |p: &Path| {
        let p = p.display().to_string();
        move |source| BenchError::Io { path: p, source }
    };
    match path {
        Some(p) => {
            let mut file = io::BufWriter::new(fs::File::create(p).map_err(wrap(p))?);
            f(&mut file).and_then(|_| file.flush()).map_err(wrap(p))
        }
        None => f(&mut io::stdout().lock()).map_err(wrap(Path::new("<stdout>"))),
    }
}

fn cmd_gen(cli: &Cli, task: &str, n: Option<usize>, horizon: Option<usize>) -> Result<()> {
    let task: TaskId = task.parse()?;
    let preset: Preset = cli.preset.as_deref().unwrap_or("desk").parse()?;
    let defaults = ExperimentConfig::preset(preset, task, pcode_core::model::ModelKind::PcOde);
    let out = cli
        .out
        .clone()
        .ok_or_else(|| BenchError::Config("gen needs --out <file>".into()))?;
    let ds = generate_with_horizon(
        task,
        n.unwrap_or(defaults.n),
        horizon.unwrap_or(defaults.horizon),
        cli.seed.unwrap_or(0),
        &defaults.world,
    )?;
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes)?;
    fs::write(&out, bytes).map_err(|source| BenchError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let values: Vec<f64> = ds.trajectories.iter().flat_map(|t| t.observations.iter().copied()).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    println!("task,n,steps,obs_dim,mean,std");
    println!("{},{},{},{},{mean},{}", task.as_str(), ds.len(), ds.steps(), ds.obs_dim(), var.sqrt());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(cli, args)?;
    let id = cfg.run_id();
    eprintln!("run={id} config_hash={}", cfg.hash());
    let out = runner::run(&cfg, &mut log_step(&id))?;
    let rows = vec![(id, out.manifest.metrics.clone())];
    print_table(&rows);
    if let Some(dir) = &out.dir {
        eprintln!("wrote {}", dir.display());
    }
    write_to(None, |w| runner::write_metrics_csv(&rows, w))
}

fn cmd_eval(
    cli: &Cli,
    run: Option<&Path>,
    ckpt: Option<&Path>,
    dataset: Option<&Path>,
    held_out_seed: Option<u64>,
    primer_len: usize,
) -> Result<()> {
    let (label, metrics) = match (run, ckpt, dataset) {
        (Some(dir), _, _) => {
            let (manifest, m) = runner::reevaluate_run(dir)?;
            (manifest.run_id, m)
        }
        (None, Some(ck), Some(ds)) => {
            let model = checkpoint::load(ck, None)?.model;
            let data = runner::read_dataset_file(ds)?;
            let trajs = match held_out_seed {
                Some(seed) => held_out_split(&data.trajectories, seed).1,
                None => data.trajectories,
            };
            (ck.display().to_string(), runner::evaluate_model(&model, &trajs, primer_len)?)
        }
        _ => return Err(BenchError::Config("eval needs --run or --checkpoint with --dataset".into())),
    };
    let rows = vec![(label, Metrics::from(metrics))];
    print_table(&rows);
    write_to(cli.out.as_deref(), |w| runner::write_metrics_csv(&rows, w))
}

fn cmd_sweep(cli: &Cli, args: &ConfigArgs, sizes: &[usize], seeds: &[u64], csv: Option<&Path>) -> Result<()> {
    let cfg = build_config(cli, args)?;
    let rows = runner::sweep_capacity(&cfg, sizes, seeds, &mut |size, seed, s| {
        log_step(&format!("size={size} seed={seed}"))(s)
    })?;
    write_to(csv, |w| runner::write_sweep_csv(&rows, w))
}

fn cmd_plan(cli: &Cli, models: &[PathBuf], problems: usize, budgets: &[usize], summary: Option<&Path>) -> Result<()> {
    let loaded = models
        .iter()
        .map(|p| checkpoint::load(p, None).map(|c| c.model))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = loaded.iter().collect();
    let cfg = PlanConfig {
        budgets: budgets.to_vec(),
        ..PlanConfig::default()
    };
    let world = pcode_core::worlds::WorldParams::default();
    let records = runner::plan_benchmark(&refs, problems, &cfg, cli.seed.unwrap_or(0), &world)?;
    write_to(summary, |w| runner::write_plan_summary(&records, w))?;
    let mut bytes = Vec::new();
    write_csv(&records, &mut bytes)?;
    write_to(cli.out.as_deref(), |w| w.write_all(&bytes))
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.starts_with(DATASET_MAGIC) {
        let ds = pcode_core::worlds::read_dataset(bytes.as_slice())?;
        println!("dataset task={} n={} steps={} obs_dim={} seed={}", ds.task.as_str(), ds.len(), ds.steps(), ds.obs_dim(), ds.seed);
        for (k, v) in ds.params.to_pairs() {
            println!("  {k} = {v}");
        }
    } else if bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
        let ck = checkpoint::decode(&bytes, None)?;
        let m = &ck.model;
        println!(
            "checkpoint kind={} obs_dim={} params={} epsilon={} config_hash={}",
            m.kind(),
            m.obs_dim(),
            m.params().num_scalars(),
            m.epsilon(),
            ck.config_hash
        );
        for (name, t) in m.params().iter() {
            println!("  {name} {:?}", t.shape());
        }
    } else {
        let m: RunManifest = serde_json::from_slice(&bytes)?;
        println!(
            "run {} task={} model={} epsilon={} ({}) best_step={} steps_run={}",
            m.run_id, m.task, m.model, m.epsilon, m.epsilon_source, m.training.best_step, m.training.steps_run
        );
        print_table(&[(m.run_id.clone(), m.metrics.clone())]);
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { task, n, horizon } => cmd_gen(cli, task, *n, *horizon),
        Command::Train(args) => cmd_train(cli, args),
        Command::Eval {
            run,
            checkpoint,
            dataset,
            held_out_seed,
            primer_len,
        } => cmd_eval(cli, run.as_deref(), checkpoint.as_deref(), dataset.as_deref(), *held_out_seed, *primer_len),
        Command::Sweep { config, sizes, seeds, csv } => cmd_sweep(cli, config, sizes, seeds, csv.as_deref()),
        Command::Plan {
            models,
            problems,
            budgets,
            summary,
        } => cmd_plan(cli, models, *problems, budgets, summary.as_deref()),
        Command::Inspect { path } => cmd_inspect(path),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
