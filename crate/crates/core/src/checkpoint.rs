//! Checkpoint I/O. Each network is one file: a magic line, a JSON header
//! describing layer shapes, head kind, and optimizer scheme, then the
//! parameters (and optimizer accumulators) as little-endian 64-bit floats.

use crate::config::RunConfig;
use crate::discriminator::Discriminator;
use crate::nn::{Head, Layer, Mlp, OptScheme, Optimizer};
use crate::replay::{BufferRole, BufferSnapshot, ReplayBuffer};
use crate::rnd::{RndModel, RunningMeanVar, RunningVar};
use crate::sac::{GaussianPolicy, SacAgent, SacHyper};
use crate::maze::ACTION_DIM;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8] = b"MLPNET1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a network checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint payload truncated or oversized (expected {want} floats, got {got})")]
    BadPayload { want: usize, got: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OptHeader {
    scheme: OptScheme,
    lr: f64,
    step_count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    layers: Vec<(usize, usize)>,
    head: Head,
    optimizer: Option<OptHeader>,
}

fn push_floats(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_network(
    path: &Path,
    mlp: &Mlp,
    opt: Option<&Optimizer>,
) -> Result<(), CheckpointError> {
    let header = NetHeader {
        layers: mlp.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect(),
        head: mlp.head,
        optimizer: opt.map(|o| OptHeader {
            scheme: o.scheme,
            lr: o.lr,
            step_count: o.step_count,
        }),
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    serde_json::to_writer(&mut bytes, &header)?;
    bytes.push(b'\n');
    for l in &mlp.layers {
        push_floats(&mut bytes, &l.w);
        push_floats(&mut bytes, &l.b);
    }
    if let Some(o) = opt {
        let (m, v) = o.accumulators();
        if let Some(m) = m {
            for g in m {
                push_floats(&mut bytes, g);
            }
        }
        for g in v {
            push_floats(&mut bytes, g);
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn load_network(path: &Path) -> Result<(Mlp, Option<Optimizer>), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CheckpointError::BadMagic)?;
    let header: NetHeader = serde_json::from_slice(&rest[..nl])?;
    let payload = &rest[nl + 1..];

    let param_count: usize = header
        .layers
        .iter()
        .map(|(i, o)| i * o + o)
        .sum();
    let opt_count: usize = match &header.optimizer {
        None => 0,
        Some(h) => {
            let groups: usize = header.layers.iter().map(|(i, o)| i * o + o).sum();
            match h.scheme {
                OptScheme::Adam { .. } => 2 * groups,
                OptScheme::RmsProp { .. } => groups,
            }
        }
    };
    let want = param_count + opt_count;
    if payload.len() != want * 8 {
        return Err(CheckpointError::BadPayload {
            want,
            got: payload.len() / 8,
        });
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };

    let mut layers = Vec::with_capacity(header.layers.len());
    for &(in_dim, out_dim) in &header.layers {
        let w = take(in_dim * out_dim);
        let b = take(out_dim);
        layers.push(Layer { in_dim, out_dim, w, b });
    }
    let mlp = Mlp {
        layers,
        head: header.head,
    };
    let opt = match header.optimizer {
        None => None,
        Some(h) => {
            let group_dims: Vec<usize> = header
                .layers
                .iter()
                .flat_map(|&(i, o)| [i * o, o])
                .collect();
            fn take_groups<I: Iterator<Item = f64>>(it: &mut I, dims: &[usize]) -> Vec<Vec<f64>> {
                dims.iter().map(|&n| it.by_ref().take(n).collect()).collect()
            }
            let m = match h.scheme {
                OptScheme::Adam { .. } => Some(take_groups(&mut floats, &group_dims)),
                OptScheme::RmsProp { .. } => None,
            };
            let v = take_groups(&mut floats, &group_dims);
            let mut opt = Optimizer::new(h.lr, h.scheme, &mlp);
            opt.step_count = h.step_count;
            opt.restore_accumulators(m, v);
            Some(opt)
        }
    };
    Ok((mlp, opt))
}

/// Counters baked into a checkpoint next to the resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: RunConfig,
    pub env_steps: u64,
    pub episodes: u64,
    pub manual_resets: u64,
    pub t_forward: usize,
    pub t_reset: usize,
    pub forward_buffer_len: usize,
    pub reset_buffer_len: usize,
}

pub fn save_manifest(dir: &Path, manifest: &CheckpointManifest) -> Result<(), CheckpointError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).map_err(io_err(&path))
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_agent(dir: &Path, prefix: &str, agent: &SacAgent) -> Result<(), CheckpointError> {
    save_network(
        &dir.join(format!("{prefix}_actor.net")),
        &agent.policy.net,
        Some(&agent.opt_actor),
    )?;
    save_network(
        &dir.join(format!("{prefix}_critic1.net")),
        &agent.critic1,
        Some(&agent.opt_critic1),
    )?;
    save_network(
        &dir.join(format!("{prefix}_critic2.net")),
        &agent.critic2,
        Some(&agent.opt_critic2),
    )?;
    save_network(&dir.join(format!("{prefix}_target1.net")), &agent.target1, None)?;
    save_network(&dir.join(format!("{prefix}_target2.net")), &agent.target2, None)?;
    Ok(())
}

pub fn load_agent(
    dir: &Path,
    prefix: &str,
    role: BufferRole,
    hyper: SacHyper,
    buffer_capacity: usize,
) -> Result<SacAgent, CheckpointError> {
    let (actor, opt_actor) = load_network(&dir.join(format!("{prefix}_actor.net")))?;
    let (critic1, opt_c1) = load_network(&dir.join(format!("{prefix}_critic1.net")))?;
    let (critic2, opt_c2) = load_network(&dir.join(format!("{prefix}_critic2.net")))?;
    let (target1, _) = load_network(&dir.join(format!("{prefix}_target1.net")))?;
    let (target2, _) = load_network(&dir.join(format!("{prefix}_target2.net")))?;
    let opt_actor = opt_actor.unwrap_or_else(|| Optimizer::new(hyper.lr, OptScheme::adam(), &actor));
    let opt_critic1 = opt_c1.unwrap_or_else(|| Optimizer::new(hyper.lr, OptScheme::adam(), &critic1));
    let opt_critic2 = opt_c2.unwrap_or_else(|| Optimizer::new(hyper.lr, OptScheme::adam(), &critic2));
    Ok(SacAgent {
        policy: GaussianPolicy {
            net: actor,
            action_dim: ACTION_DIM,
        },
        critic1,
        critic2,
        target1,
        target2,
        opt_actor,
        opt_critic1,
        opt_critic2,
        buffer: ReplayBuffer::new(role, buffer_capacity),
        hyper,
        update_count: 0,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RndStateFile {
    obs_norm: RunningMeanVar,
    rew_norm: RunningVar,
    normalize_rewards: bool,
}

pub fn save_rnd(dir: &Path, rnd: &RndModel) -> Result<(), CheckpointError> {
    save_network(&dir.join("rnd_target.net"), &rnd.target, None)?;
    save_network(&dir.join("rnd_predictor.net"), &rnd.predictor, Some(&rnd.opt))?;
    let state = RndStateFile {
        obs_norm: rnd.obs_norm.clone(),
        rew_norm: rnd.rew_norm.clone(),
        normalize_rewards: rnd.normalize_rewards,
    };
    let path = dir.join("rnd_state.json");
    std::fs::write(&path, serde_json::to_string(&state)?).map_err(io_err(&path))
}

pub fn load_rnd(dir: &Path, fallback_lr: f64) -> Result<RndModel, CheckpointError> {
    let (target, _) = load_network(&dir.join("rnd_target.net"))?;
    let (predictor, opt) = load_network(&dir.join("rnd_predictor.net"))?;
    let opt = opt.unwrap_or_else(|| Optimizer::new(fallback_lr, OptScheme::adam(), &predictor));
    let path = dir.join("rnd_state.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let state: RndStateFile = serde_json::from_str(&text)?;
    Ok(RndModel {
        target,
        predictor,
        opt,
        obs_norm: state.obs_norm,
        rew_norm: state.rew_norm,
        normalize_rewards: state.normalize_rewards,
    })
}

pub fn save_disc(dir: &Path, disc: &Discriminator) -> Result<(), CheckpointError> {
    save_network(&dir.join("discriminator.net"), &disc.net, Some(&disc.opt))
}

pub fn load_disc(dir: &Path, fallback_lr: f64) -> Result<Discriminator, CheckpointError> {
    let (net, opt) = load_network(&dir.join("discriminator.net"))?;
    let opt = opt.unwrap_or_else(|| Optimizer::new(fallback_lr, OptScheme::rms_prop(), &net));
    Ok(Discriminator { net, opt })
}

pub fn save_buffer(path: &Path, buffer: &ReplayBuffer) -> Result<(), CheckpointError> {
    std::fs::write(path, serde_json::to_string(&buffer.snapshot())?).map_err(io_err(path))
}

pub fn load_buffer(path: &Path) -> Result<ReplayBuffer, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let snap: BufferSnapshot = serde_json::from_str(&text)?;
    Ok(ReplayBuffer::from_snapshot(snap))
}
