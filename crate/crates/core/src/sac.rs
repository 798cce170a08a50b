//! Off-policy maximum-entropy actor-critic: tanh-squashed Gaussian actor,
//! twin action-value critics with Polyak-averaged targets, and one gradient
//! step per call on a replayed batch.

use crate::maze::{EnvAction, MazeSpec, ACTION_DIM, STATE_DIM};
use crate::nn::{Grads, Head, Mlp, NnError, OptScheme, Optimizer};
use crate::replay::{BufferRole, ReplayBuffer, Transition};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Guard inside `log(1 - tanh²(u) + ε)` so the squash correction stays finite.
const SQUASH_EPS: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy)]
pub struct SacHyper {
    pub gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub target_update_interval: u64,
    pub lr: f64,
}

impl SacHyper {
    pub fn with_role_lr(role: BufferRole, batch_size: usize) -> Self {
        SacHyper {
            gamma: 0.99,
            alpha: 0.4,
            tau: 0.005,
            batch_size,
            target_update_interval: 1,
            // Reset learner runs at a lower rate than every other net.
            lr: match role {
                BufferRole::Reset => 3e-5,
                BufferRole::Forward => 1e-4,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub action_dim: usize,
}

impl GaussianPolicy {
    pub fn new<R: Rng>(state_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        let mut net = Mlp::new(&dims, Head::Gaussian, rng);
        net.scale_final_layer(0.01);
        GaussianPolicy { net, action_dim }
    }

    pub fn select_action<R: Rng>(
        &self,
        state_norm: &[f64],
        mode: ActionMode,
        rng: &mut R,
    ) -> EnvAction {
        let out = self.net.forward(state_norm).expect("policy input dim");
        let d = self.action_dim;
        let mut a = [0.0; ACTION_DIM];
        for k in 0..d {
            let mean = out[k];
            match mode {
                ActionMode::Deterministic => a[k] = mean.tanh(),
                ActionMode::Stochastic => {
                    let sigma = out[d + k].exp();
                    let xi: f64 = StandardNormal.sample(rng);
                    a[k] = (mean + sigma * xi).tanh();
                }
            }
        }
        EnvAction { accel: a }
    }
}

/// Reparameterized batch sample from Gaussian head outputs.
pub struct PolicySample {
    /// Squashed actions, n × d.
    pub actions: Vec<f64>,
    /// Per-sample log-probabilities including the tanh correction term.
    pub log_probs: Vec<f64>,
    /// σ·ξ per element, kept for the log-std gradient path.
    pub sigma_xi: Vec<f64>,
}

/// Applies `a = tanh(μ + σ·ξ)` with fixed noise and accumulates
/// `log π(a|s) = Σ_k [log N(u_k; μ_k, σ_k) − log(1 − tanh²(u_k) + ε)]`.
pub fn squash_sample(head_out: &[f64], noise: &[f64], n: usize, d: usize) -> PolicySample {
    let mut actions = vec![0.0; n * d];
    let mut log_probs = vec![0.0; n];
    let mut sigma_xi = vec![0.0; n * d];
    for i in 0..n {
        let row = &head_out[i * 2 * d..(i + 1) * 2 * d];
        let mut lp = 0.0;
        for k in 0..d {
            let mean = row[k];
            let log_std = row[d + k];
            let sigma = log_std.exp();
            let xi = noise[i * d + k];
            let u = mean + sigma * xi;
            let t = u.tanh();
            actions[i * d + k] = t;
            sigma_xi[i * d + k] = sigma * xi;
            lp += -0.5 * LN_2PI - log_std - 0.5 * xi * xi - (1.0 - t * t + SQUASH_EPS).ln();
        }
        log_probs[i] = lp;
    }
    PolicySample {
        actions,
        log_probs,
        sigma_xi,
    }
}

fn concat_rows(a: &[f64], ad: usize, b: &[f64], bd: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * (ad + bd)];
    for i in 0..n {
        out[i * (ad + bd)..i * (ad + bd) + ad].copy_from_slice(&a[i * ad..(i + 1) * ad]);
        out[i * (ad + bd) + ad..(i + 1) * (ad + bd)].copy_from_slice(&b[i * bd..(i + 1) * bd]);
    }
    out
}

/// Soft Bellman targets `y = r + γ·(1 − done)·(min(Q1ᵗ, Q2ᵗ)(s', a') − α·log π(a'|s'))`
/// with `a'` re-sampled from the current policy using `noise2`.
#[allow(clippy::too_many_arguments)]
pub fn compute_critic_targets(
    target1: &Mlp,
    target2: &Mlp,
    policy: &GaussianPolicy,
    next_state_norm: &[f64],
    rewards: &[f64],
    dones: &[f64],
    gamma: f64,
    alpha: f64,
    noise2: &[f64],
) -> Result<Vec<f64>, SacError> {
    let n = rewards.len();
    let d = policy.action_dim;
    let cache = policy.net.forward_batch(next_state_norm, n)?;
    let sample = squash_sample(cache.output(), noise2, n, d);
    let x2 = concat_rows(next_state_norm, STATE_DIM, &sample.actions, d, n);
    let q1 = target1.forward_batch(&x2, n)?;
    let q2 = target2.forward_batch(&x2, n)?;
    let q1 = q1.output();
    let q2 = q2.output();
    Ok((0..n)
        .map(|i| {
            let qmin = q1[i].min(q2[i]);
            rewards[i] + gamma * (1.0 - dones[i]) * (qmin - alpha * sample.log_probs[i])
        })
        .collect())
}

/// Mean-squared-error pass for one critic against fixed targets; returns the
/// pre-step loss and parameter gradients.
pub fn critic_loss_and_grads(critic: &Mlp, x: &[f64], y: &[f64]) -> Result<(f64, Grads), SacError> {
    let n = y.len();
    let cache = critic.forward_batch(x, n)?;
    let q = cache.output();
    let mut loss = 0.0;
    let mut upstream = vec![0.0; n];
    for i in 0..n {
        let diff = q[i] - y[i];
        loss += diff * diff;
        upstream[i] = 2.0 * diff / n as f64;
    }
    loss /= n as f64;
    let (grads, _) = critic.backward_batch(&cache, &upstream)?;
    Ok((loss, grads))
}

/// Actor objective `mean(α·log π(ã|s) − min(Q1, Q2)(s, ã))` under the
/// reparameterization trick with fixed noise; returns loss and gradients
/// w.r.t. the actor parameters only.
pub fn actor_loss_and_grads(
    policy: &GaussianPolicy,
    critic1: &Mlp,
    critic2: &Mlp,
    state_norm: &[f64],
    noise: &[f64],
    alpha: f64,
) -> Result<(f64, Grads), SacError> {
    let d = policy.action_dim;
    let n = state_norm.len() / STATE_DIM;
    let cache_pi = policy.net.forward_batch(state_norm, n)?;
    let head = cache_pi.output();
    let sample = squash_sample(head, noise, n, d);
    let xa = concat_rows(state_norm, STATE_DIM, &sample.actions, d, n);
    let c1 = critic1.forward_batch(&xa, n)?;
    let c2 = critic2.forward_batch(&xa, n)?;
    let q1 = c1.output();
    let q2 = c2.output();

    let mut loss = 0.0;
    let mut up1 = vec![0.0; n];
    let mut up2 = vec![0.0; n];
    for i in 0..n {
        let (qmin, first) = if q1[i] <= q2[i] { (q1[i], true) } else { (q2[i], false) };
        loss += alpha * sample.log_probs[i] - qmin;
        if first {
            up1[i] = 1.0;
        } else {
            up2[i] = 1.0;
        }
    }
    loss /= n as f64;

    // dQmin/d(action) through the selected critic's input gradient. With
    // E = d/du [−log(1 − tanh²u + ε)] = 2·tanh(u)·(1 − tanh²u)/(1 − tanh²u + ε):
    //   ∂loss/∂μ      = (α·E − ∂Q/∂a·(1 − tanh²u)) / n
    //   ∂loss/∂logσ   = (α·(−1 + E·σξ) − ∂Q/∂a·(1 − tanh²u)·σξ) / n
    let (_, gin1) = critic1.backward_batch(&c1, &up1)?;
    let (_, gin2) = critic2.backward_batch(&c2, &up2)?;
    let in_dim = STATE_DIM + d;
    let mut upstream = vec![0.0; n * 2 * d];
    for i in 0..n {
        for k in 0..d {
            let t = sample.actions[i * d + k];
            let one_m_t2 = 1.0 - t * t;
            let e = 2.0 * t * one_m_t2 / (one_m_t2 + SQUASH_EPS);
            let sx = sample.sigma_xi[i * d + k];
            let dq_da = gin1[i * in_dim + STATE_DIM + k] + gin2[i * in_dim + STATE_DIM + k];
            upstream[i * 2 * d + k] = (alpha * e - dq_da * one_m_t2) / n as f64;
            upstream[i * 2 * d + d + k] =
                (alpha * (-1.0 + e * sx) - dq_da * one_m_t2 * sx) / n as f64;
        }
    }
    let (grads, _) = policy.net.backward_batch(&cache_pi, &upstream)?;
    Ok((loss, grads))
}

/// `θᵗ ← (1 − τ)·θᵗ + τ·θ`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (tl, ol) in target.layers.iter_mut().zip(&online.layers) {
        for (t, o) in tl.w.iter_mut().zip(&ol.w) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        for (t, o) in tl.b.iter_mut().zip(&ol.b) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub opt_actor: Optimizer,
    pub opt_critic1: Optimizer,
    pub opt_critic2: Optimizer,
    pub buffer: ReplayBuffer,
    pub hyper: SacHyper,
    pub(crate) update_count: u64,
}

impl SacAgent {
    pub fn new<R: Rng>(
        role: BufferRole,
        hidden: &[usize],
        hyper: SacHyper,
        buffer_capacity: usize,
        rng: &mut R,
    ) -> Self {
        let policy = GaussianPolicy::new(STATE_DIM, hidden, ACTION_DIM, rng);
        let mut critic_dims = vec![STATE_DIM + ACTION_DIM];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        let critic1 = Mlp::new(&critic_dims, Head::Linear, rng);
        let critic2 = Mlp::new(&critic_dims, Head::Linear, rng);
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        let opt_actor = Optimizer::new(hyper.lr, OptScheme::adam(), &policy.net);
        let opt_critic1 = Optimizer::new(hyper.lr, OptScheme::adam(), &critic1);
        let opt_critic2 = Optimizer::new(hyper.lr, OptScheme::adam(), &critic2);
        SacAgent {
            policy,
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
        }
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// One critic step (both critics), one actor step, then a target polyak
    /// step, on a batch sampled by the caller from this agent's buffer.
    pub fn update<R: Rng>(
        &mut self,
        batch: &[Transition],
        spec: &MazeSpec,
        rng: &mut R,
    ) -> Result<UpdateStats, SacError> {
        let n = batch.len();
        if n == 0 {
            return Err(SacError::EmptyBatch);
        }
        let d = self.policy.action_dim;
        let mut s_norm = vec![0.0; n * STATE_DIM];
        let mut s2_norm = vec![0.0; n * STATE_DIM];
        let mut actions = vec![0.0; n * d];
        let mut rewards = vec![0.0; n];
        let mut dones = vec![0.0; n];
        for (i, t) in batch.iter().enumerate() {
            s_norm[i * STATE_DIM..(i + 1) * STATE_DIM]
                .copy_from_slice(&spec.normalize_state(&t.state));
            s2_norm[i * STATE_DIM..(i + 1) * STATE_DIM]
                .copy_from_slice(&spec.normalize_state(&t.next_state));
            actions[i * d..(i + 1) * d].copy_from_slice(&t.action.accel);
            rewards[i] = t.reward;
            dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        let noise2: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let y = compute_critic_targets(
            &self.target1,
            &self.target2,
            &self.policy,
            &s2_norm,
            &rewards,
            &dones,
            self.hyper.gamma,
            self.hyper.alpha,
            &noise2,
        )?;

        let x = concat_rows(&s_norm, STATE_DIM, &actions, d, n);
        let (loss1, g1) = critic_loss_and_grads(&self.critic1, &x, &y)?;
        let (loss2, g2) = critic_loss_and_grads(&self.critic2, &x, &y)?;
        self.opt_critic1.step(&mut self.critic1, &g1)?;
        self.opt_critic2.step(&mut self.critic2, &g2)?;

        let noise: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let (actor_loss, ag) = actor_loss_and_grads(
            &self.policy,
            &self.critic1,
            &self.critic2,
            &s_norm,
            &noise,
            self.hyper.alpha,
        )?;
        self.opt_actor.step(&mut self.policy.net, &ag)?;

        self.update_count += 1;
        if self.update_count % self.hyper.target_update_interval == 0 {
            polyak_update(&mut self.target1, &self.critic1, self.hyper.tau);
            polyak_update(&mut self.target2, &self.critic2, self.hyper.tau);
        }
        Ok(UpdateStats {
            critic_loss: 0.5 * (loss1 + loss2),
            actor_loss,
        })
    }
}
