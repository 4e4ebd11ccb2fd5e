// PCOD1 dataset files.
//
// Layout:
//   "PCOD1"                     5 bytes
//   header length               u32 little-endian
//   header                      UTF-8 `key=value` lines
//   observations                n * steps * obs_dim f32 little-endian
//   states (if has_states=1)    n * steps * STATE_DIM f32 little-endian

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{Dataset, TaskId, Trajectory, WorldParams, STATE_DIM};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"PCOD1";

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

pub fn write_dataset(ds: &Dataset, mut out: impl Write) -> Result<()> {
    let steps = ds.steps();
    let obs_dim = ds.obs_dim();
    let has_states = ds.trajectories.iter().all(|t| t.states.is_some()) && !ds.is_empty();
    for t in &ds.trajectories {
        if t.len() != steps || t.obs_dim != obs_dim {
            return Err(Error::InvalidArgument("ragged dataset".into()));
        }
    }
    let mut header = String::new();
    header.push_str(&format!("task={}\n", ds.task));
    header.push_str(&format!("n={}\n", ds.len()));
    header.push_str(&format!("steps={steps}\n"));
    header.push_str(&format!("obs_dim={obs_dim}\n"));
    header.push_str(&format!("seed={}\n", ds.seed));
    header.push_str(&format!("has_states={}\n", u8::from(has_states)));
    header.push_str(&format!("state_dim={STATE_DIM}\n"));
    for (k, v) in ds.params.to_pairs() {
        header.push_str(&format!("param.{k}={v}\n"));
    }
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(ds.len() * steps * obs_dim * 4);
    for t in &ds.trajectories {
        for &x in &t.observations {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if has_states {
        for t in &ds.trajectories {
            for &x in t.states.as_ref().expect("checked") {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(mut input: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..5] != DATASET_MAGIC {
        return Err(corrupt("missing PCOD1 magic"));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = 9 + header_len;
    let header = bytes
        .get(9..header_end)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header = std::str::from_utf8(header).map_err(|_| corrupt("header is not UTF-8"))?;
    let mut kv = BTreeMap::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("bad header line `{line}`")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| corrupt(format!("header lacks `{k}`")));
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| corrupt(format!("header field `{k}` is not an integer")))
    };
    let task: TaskId = get("task")?.parse()?;
    let n = num("n")? as usize;
    let steps = num("steps")? as usize;
    let obs_dim = num("obs_dim")? as usize;
    let seed = num("seed")?;
    let has_states = num("has_states")? == 1;
    let state_dim = num("state_dim")? as usize;
    if state_dim != STATE_DIM {
        return Err(corrupt(format!("unsupported state_dim {state_dim}")));
    }
    let mut params = WorldParams::default();
    for (k, v) in &kv {
        if let Some(p) = k.strip_prefix("param.") {
            params.set(p, v)?;
        }
    }

    let obs_count = n * steps * obs_dim;
    let state_count = if has_states { n * steps * STATE_DIM } else { 0 };
    let expected = header_end + 4 * (obs_count + state_count);
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let floats: Vec<f64> = bytes[header_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (obs, states) = floats.split_at(obs_count);
    let per_obs = steps * obs_dim;
    let per_state = steps * STATE_DIM;
    let trajectories = (0..n)
        .map(|i| Trajectory {
            obs_dim,
            observations: obs[i * per_obs..(i + 1) * per_obs].to_vec(),
            states: has_states.then(|| states[i * per_state..(i + 1) * per_state].to_vec()),
        })
        .collect();
    Ok(Dataset {
        task,
        params,
        seed,
        trajectories,
    })
}
