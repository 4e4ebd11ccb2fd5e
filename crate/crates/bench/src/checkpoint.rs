//! Model checkpoints: a text header followed by a little-endian `f32` blob.
//!
//! ```text
//! PCCKPT1
//! kind pcode
//! obs_dim 2
//! ...
//! tensor encoder.in.weight 2x64 0 128
//! end
//! <blob>
//! ```
//!
//! Each `tensor` line holds the name, the shape, the byte offset into the
//! blob and the element count. Scalars that are not weights (tolerance,
//! standardizer) are written as decimal text and round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use pcode_core::baselines::{OdeRnnModel, RecurrentConfig, RnnModel};
use pcode_core::model::{AnyModel, ModelKind, SequenceModel};
use pcode_core::nn::Standardizer;
use pcode_core::pcode::{PcOdeConfig, PcOdeModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, BenchError, Result};

pub const CHECKPOINT_MAGIC: &str = "PCCKPT1";

/// Architecture needed to rebuild an empty model before loading weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub obs_dim: usize,
    pub latent: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub substeps: usize,
}

impl Architecture {
    pub fn of(model: &AnyModel) -> Self {
        match model {
            AnyModel::PcOde(m) => Self {
                kind: ModelKind::PcOde,
                obs_dim: m.config.obs_dim,
                latent: m.config.latent,
                hidden: m.config.hidden,
                leaky_slope: m.config.leaky_slope,
                substeps: 0,
            },
            AnyModel::Rnn(m) => Self::recurrent(ModelKind::Rnn, m.config(), 0),
            AnyModel::OdeRnn(m) => Self::recurrent(ModelKind::OdeRnn, m.config(), m.substeps()),
        }
    }

    fn recurrent(kind: ModelKind, c: RecurrentConfig, substeps: usize) -> Self {
        Self {
            kind,
            obs_dim: c.obs_dim,
            latent: c.latent,
            hidden: c.hidden,
            leaky_slope: 0.0,
            substeps,
        }
    }

    /// Freshly initialized model of this shape.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<AnyModel> {
        let rc = RecurrentConfig {
            obs_dim: self.obs_dim,
            latent: self.latent,
            hidden: self.hidden,
        };
        Ok(match self.kind {
            ModelKind::PcOde => AnyModel::PcOde(PcOdeModel::new(
                PcOdeConfig {
                    obs_dim: self.obs_dim,
                    latent: self.latent,
                    hidden: self.hidden,
                    leaky_slope: self.leaky_slope,
                },
                rng,
            )?),
            ModelKind::Rnn => AnyModel::Rnn(RnnModel::new(rc, rng)?),
            ModelKind::OdeRnn => AnyModel::OdeRnn(OdeRnnModel::new(rc, self.substeps, rng)?),
        })
    }
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub config_hash: String,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Serializes `model`. Weights are narrowed to 32 bits.
pub fn encode(model: &AnyModel, config_hash: &str) -> Vec<u8> {
    let a = Architecture::of(model);
    let s = model.standardizer();
    let mut head = String::new();
    let mut line = |k: &str, v: String| {
        head.push_str(k);
        head.push(' ');
        head.push_str(&v);
        head.push('\n');
    };
    line("kind", a.kind.as_str().into());
    line("obs_dim", a.obs_dim.to_string());
    line("latent", a.latent.to_string());
    line("hidden", a.hidden.to_string());
    line("leaky_slope", a.leaky_slope.to_string());
    line("substeps", a.substeps.to_string());
    line("epsilon", model.epsilon().to_string());
    line("std_mean", join(&s.mean));
    line("std_scale", join(&s.scale));
    line("config_hash", config_hash.into());
    line("dtype", "f32le".into());
    let mut blob = Vec::with_capacity(model.params().num_scalars() * 4);
    for (name, t) in model.params().iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        line("tensor", format!("{name} {} {} {}", shape.join("x"), blob.len(), t.numel()));
        for &x in t.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut out = format!("{CHECKPOINT_MAGIC}\n{head}end\n").into_bytes();
    out.extend_from_slice(&blob);
    out
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

fn corrupt(msg: impl Into<String>) -> BenchError {
    BenchError::Corrupt(msg.into())
}

fn field<T: std::str::FromStr>(key: &str, v: Option<&str>) -> Result<T> {
    v.ok_or_else(|| corrupt(format!("missing `{key}`")))?
        .parse()
        .map_err(|_| corrupt(format!("bad value for `{key}`")))
}

fn floats(key: &str, v: Option<&str>) -> Result<Vec<f64>> {
    let v = v.ok_or_else(|| corrupt(format!("missing `{key}`")))?;
    v.split_whitespace()
        .map(|x| x.parse().map_err(|_| corrupt(format!("bad value for `{key}`"))))
        .collect()
}

/// Decodes a checkpoint. When `expected_hash` is given the stored config
/// hash must match it.
pub fn decode(bytes: &[u8], expected_hash: Option<&str>) -> Result<Checkpoint> {
    let magic = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| corrupt("header is truncated"))?;
    let head = std::str::from_utf8(&bytes[magic.len()..end + 1])
        .map_err(|_| corrupt("header is not UTF-8"))?;
    let blob = &bytes[end + 5..];

    let mut fields = std::collections::HashMap::new();
    let mut tensors = Vec::new();
    for line in head.lines() {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        if k == "tensor" {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(corrupt(format!("bad tensor line `{line}`")));
            }
            let shape = parts[1]
                .split('x')
                .map(|d| d.parse().map_err(|_| corrupt(format!("bad shape in `{line}`"))))
                .collect::<Result<Vec<usize>>>()?;
            tensors.push(TensorEntry {
                name: parts[0].to_string(),
                shape,
                offset: field("offset", Some(parts[2]))?,
                count: field("count", Some(parts[3]))?,
            });
        } else {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| fields.get(k).map(String::as_str);

    let config_hash: String = field("config_hash", get("config_hash"))?;
    if let Some(want) = expected_hash {
        if want != config_hash {
            return Err(BenchError::Mismatch(format!(
                "checkpoint was written for config {config_hash}, expected {want}"
            )));
        }
    }
    if get("dtype") != Some("f32le") {
        return Err(corrupt("unsupported dtype"));
    }
    let kind: ModelKind = get("kind")
        .ok_or_else(|| corrupt("missing `kind`"))?
        .parse()
        .map_err(|_| corrupt("unknown model kind"))?;
    let arch = Architecture {
        kind,
        obs_dim: field("obs_dim", get("obs_dim"))?,
        latent: field("latent", get("latent"))?,
        hidden: field("hidden", get("hidden"))?,
        leaky_slope: field("leaky_slope", get("leaky_slope"))?,
        substeps: field("substeps", get("substeps"))?,
    };
    let epsilon: f64 = field("epsilon", get("epsilon"))?;
    let standardizer = Standardizer {
        mean: floats("std_mean", get("std_mean"))?,
        scale: floats("std_scale", get("std_scale"))?,
    };
    if standardizer.mean.len() != arch.obs_dim || standardizer.scale.len() != arch.obs_dim {
        return Err(corrupt("standardizer width does not match obs_dim"));
    }

    let total: usize = tensors.iter().map(|t| t.count).sum();
    if blob.len() != total * 4 {
        return Err(corrupt(format!(
            "blob holds {} bytes, header describes {}",
            blob.len(),
            total * 4
        )));
    }
    let mut model = arch.build(&mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    if expected.len() != tensors.len() {
        return Err(BenchError::Mismatch(format!(
            "{} tensors stored, model has {}",
            tensors.len(),
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(total);
    for (entry, (name, shape)) in tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(BenchError::Mismatch(format!(
                "stored tensor {} {:?} does not fit {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.count != shape.iter().product::<usize>() {
            return Err(corrupt(format!("count of {} disagrees with its shape", entry.name)));
        }
        let bytes = blob
            .get(entry.offset..entry.offset + entry.count * 4)
            .ok_or_else(|| corrupt(format!("{} lies outside the blob", entry.name)))?;
        values.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
        );
    }
    model.params_mut().assign_flat(&values)?;
    model.set_epsilon(epsilon);
    model.set_standardizer(standardizer);
    Ok(Checkpoint { model, config_hash })
}

pub fn save(path: &Path, model: &AnyModel, config_hash: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&encode(model, config_hash)).map_err(io_err(path))
}

pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(io_err(path))?, expected_hash)
}
