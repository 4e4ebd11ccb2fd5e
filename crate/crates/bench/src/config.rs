//! Experiment configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use pcode_core::baselines::DEFAULT_SUBSTEPS;
use pcode_core::model::ModelKind;
use pcode_core::pcode::TrainConfig;
use pcode_core::train::StopRule;
use pcode_core::worlds::{TaskId, WorldParams};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

/// Named default profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Small enough for one laptop core.
    Desk,
    /// Full-size models and schedules.
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

impl FromStr for Preset {
    type Err = crate::BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(config_err(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

/// Where a PC-ODE run gets its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonSource {
    Value(f64),
    /// A finished RNN run, given as a run id under the output directory, a
    /// run directory or a manifest path.
    FromBaseline(String),
}

impl std::fmt::Display for EpsilonSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpsilonSource::Value(v) => write!(f, "{v}"),
            EpsilonSource::FromBaseline(r) => write!(f, "from-baseline:{r}"),
        }
    }
}

impl FromStr for EpsilonSource {
    type Err = crate::BenchError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(r) = s.strip_prefix("from-baseline:") {
            if r.is_empty() {
                return Err(config_err("from-baseline needs a run reference"));
            }
            return Ok(EpsilonSource::FromBaseline(r.to_string()));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| config_err(format!("bad epsilon `{s}`")))?;
        if !(v >= 0.0) {
            return Err(config_err(format!("epsilon must be non-negative, got {v}")));
        }
        Ok(EpsilonSource::Value(v))
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub model: ModelKind,
    pub preset: Preset,
    pub seed: u64,
    /// Trajectories generated when no dataset file is given.
    pub n: usize,
    pub horizon: usize,
    pub latent: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    /// RK4 substeps per unit time (ODE-RNN only).
    pub substeps: usize,
    pub epsilon: EpsilonSource,
    /// Optimizer and objective settings; its `epsilon` is ignored in favor
    /// of [`ExperimentConfig::epsilon`].
    pub train: TrainConfig,
    pub stop: StopRule,
    pub world: WorldParams,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, task: TaskId, model: ModelKind) -> Self {
        let pixels = task.is_pixels();
        let mut train = TrainConfig::default();
        let (n, latent) = match (preset, pixels) {
            (Preset::Desk, false) => (2000, 64),
            (Preset::Desk, true) => (500, 128),
            (Preset::Paper, false) => (10_000, 128),
            (Preset::Paper, true) => (10_000, 512),
        };
        match preset {
            Preset::Desk => {
                train.batch_size = 32;
                train.steps = 2000;
                train.decay_interval = 1000;
            }
            Preset::Paper => {
                train.batch_size = 256;
                train.steps = if pixels { 50_000 } else { 10_000 };
                train.decay_interval = 5000;
            }
        }
        Self {
            task,
            model,
            preset,
            seed: 0,
            n,
            horizon: task.default_horizon(),
            latent,
            hidden: latent,
            leaky_slope: 0.01,
            substeps: DEFAULT_SUBSTEPS,
            epsilon: EpsilonSource::Value(train.epsilon),
            train,
            stop: StopRule::default(),
            world: WorldParams::default(),
            dataset: None,
            out: None,
        }
    }

    /// Parses the text form. `task` is required; `preset` and `model`
    /// choose the defaults that the remaining keys override.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let task: TaskId = get("task")
            .ok_or_else(|| config_err("missing `task`"))?
            .parse()?;
        let model: ModelKind = get("model").unwrap_or("pcode").parse()?;
        let preset: Preset = get("preset").unwrap_or("desk").parse()?;
        let mut cfg = Self::preset(preset, task, model);
        for (k, v) in &pairs {
            if !matches!(k.as_str(), "task" | "model" | "preset") {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one key. `task`, `model` and `preset` cannot be changed
    /// this way because they select the defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| config_err(format!("bad value `{value}` for `{key}`")))
        }
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "latent" => self.latent = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "leaky_slope" => self.leaky_slope = num(key, value)?,
            "substeps" => self.substeps = num(key, value)?,
            "epsilon" => self.epsilon = value.parse()?,
            "batch_size" => t.batch_size = num(key, value)?,
            "steps" => t.steps = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "decay" => t.decay = num(key, value)?,
            "decay_interval" => t.decay_interval = num(key, value)?,
            "dt_loss_scale" => t.dt_loss_scale = num(key, value)?,
            "bootstrap_prob" => t.bootstrap_prob = num(key, value)?,
            "feed_decoded" => t.feed_decoded = num(key, value)?,
            "primer_len" => t.primer_len = num(key, value)?,
            "standardize" => t.standardize = num(key, value)?,
            "grad_clip" => {
                t.grad_clip = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "eval_every" => self.stop.eval_every = num(key, value)?,
            "patience" => self.stop.patience = num(key, value)?,
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "task" | "model" | "preset" => {
                return Err(config_err(format!("`{key}` selects the defaults and must be set first")))
            }
            k => match k.strip_prefix("world.") {
                Some(w) => self.world.set(w, value)?,
                None => return Err(config_err(format!("unknown key `{k}`"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut probe = self.train.clone();
        probe.epsilon = 0.0;
        probe.validate()?;
        if self.n == 0 || self.latent == 0 || self.hidden == 0 || self.horizon == 0 {
            return Err(config_err("n, horizon, latent and hidden must be positive"));
        }
        if self.model == ModelKind::OdeRnn && self.substeps == 0 {
            return Err(config_err("substeps must be positive"));
        }
        if self.train.primer_len > self.horizon {
            return Err(config_err(format!(
                "primer_len {} exceeds horizon {}",
                self.train.primer_len, self.horizon
            )));
        }
        if self.stop.eval_every == 0 {
            return Err(config_err("eval_every must be positive"));
        }
        Ok(())
    }

    /// Canonical text form; [`ExperimentConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Ordered key/value snapshot.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut v: Vec<(String, String)> = [
            ("task", self.task.as_str().to_string()),
            ("model", self.model.as_str().to_string()),
            ("preset", self.preset.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("n", self.n.to_string()),
            ("horizon", self.horizon.to_string()),
            ("latent", self.latent.to_string()),
            ("hidden", self.hidden.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("substeps", self.substeps.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("steps", t.steps.to_string()),
            ("lr", t.lr.to_string()),
            ("decay", t.decay.to_string()),
            ("decay_interval", t.decay_interval.to_string()),
            ("dt_loss_scale", t.dt_loss_scale.to_string()),
            ("bootstrap_prob", t.bootstrap_prob.to_string()),
            ("feed_decoded", t.feed_decoded.to_string()),
            ("primer_len", t.primer_len.to_string()),
            ("standardize", t.standardize.to_string()),
            ("grad_clip", t.grad_clip.map_or("none".to_string(), |c| c.to_string())),
            ("eval_every", self.stop.eval_every.to_string()),
            ("patience", self.stop.patience.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        v.extend(self.world.to_pairs().into_iter().map(|(k, val)| (format!("world.{k}"), val)));
        v.push(("dataset".into(), path(&self.dataset)));
        v.push(("out".into(), path(&self.out)));
        v
    }

    /// SHA-256 over every setting that influences the trained weights or
    /// the metrics; the output location is left out.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-s{}-{}",
            self.task.as_str(),
            self.model.as_str(),
            self.seed,
            &self.hash()[..8]
        )
    }

    /// Training settings with the resolved tolerance filled in.
    pub fn train_config(&self, epsilon: f64) -> TrainConfig {
        TrainConfig {
            epsilon,
            ..self.train.clone()
        }
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(config_err(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
