//! Random-network-distillation curiosity: intrinsic reset rewards are the
//! prediction error of a trained network against a frozen, randomly
//! initialized target, on whitened normalized states.

use crate::maze::{EnvState, MazeSpec, STATE_DIM};
use crate::nn::{Grads, Head, Mlp, NnError, OptScheme, Optimizer};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const WHITEN_EPS: f64 = 1e-8;
const WHITEN_CLIP: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RndError {
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-dimension Welford accumulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningMeanVar {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMeanVar {
    pub fn new(dim: usize) -> Self {
        RunningMeanVar {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *m2 += d * (v - *m);
        }
    }

    pub fn var(&self, dim: usize) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2[dim] / (self.count - 1) as f64
        }
    }
}

/// Scalar Welford accumulator; only the variance is consumed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningVar {
    pub count: u64,
    mean: f64,
    m2: f64,
}

impl RunningVar {
    pub fn new() -> Self {
        RunningVar { count: 0, mean: 0.0, m2: 0.0 }
    }

    pub fn observe(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

impl Default for RunningVar {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug)]
pub struct RndModel {
    /// Frozen after construction.
    pub target: Mlp,
    pub predictor: Mlp,
    pub opt: Optimizer,
    pub obs_norm: RunningMeanVar,
    pub rew_norm: RunningVar,
    /// When false, raw squared prediction errors are returned unscaled.
    pub normalize_rewards: bool,
}

impl RndModel {
    pub fn new<R: Rng>(
        hidden: &[usize],
        embedding_dim: usize,
        lr: f64,
        normalize_rewards: bool,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![STATE_DIM];
        dims.extend_from_slice(hidden);
        dims.push(embedding_dim);
        let mut target = Mlp::new(&dims, Head::Linear, rng);
        target.randomize_biases(rng);
        let mut predictor = Mlp::new(&dims, Head::Linear, rng);
        predictor.randomize_biases(rng);
        let opt = Optimizer::new(lr, OptScheme::adam(), &predictor);
        RndModel {
            target,
            predictor,
            opt,
            obs_norm: RunningMeanVar::new(STATE_DIM),
            rew_norm: RunningVar::new(),
            normalize_rewards,
        }
    }

    fn whiten(&self, s_norm: &[f64; STATE_DIM]) -> Vec<f64> {
        (0..STATE_DIM)
            .map(|k| {
                let std = (self.obs_norm.var(k) + WHITEN_EPS).sqrt();
                ((s_norm[k] - self.obs_norm.mean[k]) / std).clamp(-WHITEN_CLIP, WHITEN_CLIP)
            })
            .collect()
    }

    fn raw_error(&self, z: &[f64]) -> f64 {
        let t = self.target.forward(z).expect("rnd input dim");
        let p = self.predictor.forward(z).expect("rnd input dim");
        t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Collection-time intrinsic reward: observes the state into the input
    /// whitener and the raw error into the reward normalizer, then returns
    /// the squared predictor-target distance divided by the running reward
    /// standard deviation.
    pub fn intrinsic_reward(&mut self, spec: &MazeSpec, state: &EnvState) -> f64 {
        let s_norm = spec.normalize_state(state);
        self.obs_norm.observe(&s_norm);
        let z = self.whiten(&s_norm);
        let raw = self.raw_error(&z);
        self.rew_norm.observe(raw);
        if self.normalize_rewards {
            let std = self.rew_norm.std();
            if std > WHITEN_EPS {
                raw / std
            } else {
                raw
            }
        } else {
            raw
        }
    }

    /// Read-only variant used for analysis; no statistics are touched.
    pub fn peek_reward(&self, spec: &MazeSpec, state: &EnvState) -> f64 {
        let s_norm = spec.normalize_state(state);
        let z = self.whiten(&s_norm);
        let raw = self.raw_error(&z);
        if self.normalize_rewards {
            let std = self.rew_norm.std();
            if std > WHITEN_EPS {
                return raw / std;
            }
        }
        raw
    }

    /// One gradient step minimizing the mean squared predictor-target error
    /// over the batch. The target never changes. Returns the pre-step loss.
    pub fn update(&mut self, spec: &MazeSpec, states: &[EnvState]) -> Result<f64, RndError> {
        let n = states.len();
        if n == 0 {
            return Err(RndError::EmptyBatch);
        }
        let mut zs = vec![0.0; n * STATE_DIM];
        for (i, s) in states.iter().enumerate() {
            let z = self.whiten(&spec.normalize_state(s));
            zs[i * STATE_DIM..(i + 1) * STATE_DIM].copy_from_slice(&z);
        }
        let (loss, grads) = prediction_loss_and_grads(&self.predictor, &self.target, &zs, n)?;
        self.opt.step(&mut self.predictor, &grads)?;
        Ok(loss)
    }

    /// FNV-style fingerprint of the target parameters; used to assert the
    /// freezing contract across a training run.
    pub fn target_fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for l in &self.target.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Mean over the batch of the squared embedding distance, with gradients for
/// the predictor only.
pub fn prediction_loss_and_grads(
    predictor: &Mlp,
    target: &Mlp,
    zs: &[f64],
    n: usize,
) -> Result<(f64, Grads), RndError> {
    let cache = predictor.forward_batch(zs, n)?;
    let t_out = target.forward_batch(zs, n)?;
    let p = cache.output();
    let t = t_out.output();
    let mut loss = 0.0;
    let mut upstream = vec![0.0; p.len()];
    for i in 0..p.len() {
        let d = p[i] - t[i];
        loss += d * d;
        upstream[i] = 2.0 * d / n as f64;
    }
    loss /= n as f64;
    let (grads, _) = predictor.backward_batch(&cache, &upstream)?;
    Ok((loss, grads))
}
