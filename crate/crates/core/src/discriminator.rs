//! Success discriminator: a sigmoid-headed classifier over (normalized state
//! ⊕ action) estimating the probability that the forward policy solves the
//! task from there, trained on relabeled rollouts with class-balanced
//! sampling, plus the start-state gate test.

use crate::maze::{EnvAction, EnvState, MazeSpec, ACTION_DIM, STATE_DIM};
use crate::nn::{Grads, Head, Mlp, NnError, OptScheme, Optimizer};
use crate::replay::{BufferRole, LabelClass, ReplayBuffer, Transition};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("rollout transitions carry no success label")]
    Unlabeled,
    #[error("balanced sampling needs an even batch size, got {0}")]
    OddBatch(usize),
    #[error("balanced sampling requires a forward buffer")]
    WrongBuffer,
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The allowed band of estimated success probabilities for episode starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl GateThresholds {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&lambda1) || !(0.0..=1.0).contains(&lambda2) || lambda1 > lambda2 {
            return Err(format!(
                "thresholds must satisfy 0 <= lambda1 <= lambda2 <= 1, got ({lambda1}, {lambda2})"
            ));
        }
        Ok(GateThresholds { lambda1, lambda2 })
    }

    /// Inclusive at both ends: true iff λ1 ≤ p ≤ λ2.
    pub fn allows(&self, p: f64) -> bool {
        self.lambda1 <= p && p <= self.lambda2
    }
}

impl Default for GateThresholds {
    fn default() -> Self {
        GateThresholds { lambda1: 0.3, lambda2: 0.7 }
    }
}

pub fn gate_allows(thresholds: &GateThresholds, p: f64) -> bool {
    thresholds.allows(p)
}

/// Returns the rollout with every success label overwritten by the final
/// transition's label; order and all other fields are preserved.
pub fn relabel_rollout(rollout: &[Transition]) -> Result<Vec<Transition>, DiscError> {
    let last = rollout.last().ok_or(DiscError::EmptyRollout)?;
    let label = last.success.ok_or(DiscError::Unlabeled)?;
    Ok(rollout
        .iter()
        .map(|t| Transition {
            success: Some(label),
            ..*t
        })
        .collect())
}

/// Exactly class-balanced supervision batch.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    /// Row-major `n × (STATE_DIM + ACTION_DIM)` inputs.
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
    pub positives: usize,
    pub negatives: usize,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn disc_input(spec: &MazeSpec, state: &EnvState, action: &EnvAction) -> [f64; STATE_DIM + ACTION_DIM] {
    let s = spec.normalize_state(state);
    [s[0], s[1], s[2], s[3], action.accel[0], action.accel[1]]
}

/// Draws n/2 transitions from each label pool (uniform, with replacement).
/// Returns `None` while either pool is empty — the update is skipped then.
pub fn balanced_sample<R: Rng>(
    buffer: &ReplayBuffer,
    spec: &MazeSpec,
    n: usize,
    rng: &mut R,
) -> Result<Option<LabeledBatch>, DiscError> {
    if n % 2 != 0 {
        return Err(DiscError::OddBatch(n));
    }
    if buffer.role() != BufferRole::Forward {
        return Err(DiscError::WrongBuffer);
    }
    if buffer.pool_len(LabelClass::Positive) == 0 || buffer.pool_len(LabelClass::Negative) == 0 {
        return Ok(None);
    }
    let half = n / 2;
    let pos = buffer
        .sample_pool(LabelClass::Positive, half, rng)
        .expect("positive pool checked non-empty");
    let neg = buffer
        .sample_pool(LabelClass::Negative, half, rng)
        .expect("negative pool checked non-empty");
    let dim = STATE_DIM + ACTION_DIM;
    let mut inputs = vec![0.0; n * dim];
    let mut labels = vec![0.0; n];
    for (i, t) in pos.iter().chain(neg.iter()).enumerate() {
        inputs[i * dim..(i + 1) * dim].copy_from_slice(&disc_input(spec, &t.state, &t.action));
        labels[i] = if i < half { 1.0 } else { 0.0 };
    }
    Ok(Some(LabeledBatch {
        inputs,
        labels,
        positives: half,
        negatives: half,
    }))
}

/// Mean binary cross-entropy evaluated in logit space (`softplus(z) − c·z`),
/// which is the ε→0 limit of clamping the sigmoid inside the logs; gradients
/// are `(σ(z) − c)/n` at the logits.
pub fn bce_loss_and_grads(net: &Mlp, batch: &LabeledBatch) -> Result<(f64, Grads), DiscError> {
    let n = batch.len();
    if n == 0 {
        return Err(DiscError::EmptyBatch);
    }
    let cache = net.forward_batch(&batch.inputs, n)?;
    let logits = cache.logits();
    let probs = cache.output();
    let mut loss = 0.0;
    let mut delta = vec![0.0; n];
    for i in 0..n {
        let z = logits[i];
        let c = batch.labels[i];
        loss += z.max(0.0) - c * z + (-z.abs()).exp().ln_1p();
        delta[i] = (probs[i] - c) / n as f64;
    }
    loss /= n as f64;
    let (grads, _) = net.backward_from_logits(&cache, &delta)?;
    Ok((loss, grads))
}

#[derive(Debug)]
pub struct Discriminator {
    pub net: Mlp,
    pub opt: Optimizer,
}

impl Discriminator {
    pub fn new<R: Rng>(hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut dims = vec![STATE_DIM + ACTION_DIM];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = Mlp::new(&dims, Head::Sigmoid, rng);
        // Momentum-free scheme: the relabeled targets drift with the forward
        // policy, so no first moment is carried.
        let opt = Optimizer::new(lr, OptScheme::rms_prop(), &net);
        Discriminator { net, opt }
    }

    /// Estimated success probability, strictly inside (0, 1).
    pub fn estimate(&self, spec: &MazeSpec, state: &EnvState, action: &EnvAction) -> f64 {
        let x = disc_input(spec, state, action);
        self.net.forward(&x).expect("discriminator input dim")[0]
    }

    /// One rms gradient step on the batch; returns the pre-step loss.
    pub fn update(&mut self, batch: &LabeledBatch) -> Result<f64, DiscError> {
        let (loss, grads) = bce_loss_and_grads(&self.net, batch)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn spec() -> MazeSpec {
        MazeSpec::load("1way").unwrap()
    }

    fn mk(ep: u64, success: Option<bool>) -> Transition {
        Transition {
            state: EnvState::at_rest([1.5, 1.5]),
            action: EnvAction::new(0.3, -0.4),
            reward: 0.0,
            next_state: EnvState::at_rest([1.6, 1.5]),
            done: false,
            success,
            episode_id: ep,
        }
    }

    fn zeroed_disc() -> Discriminator {
        let mut d = Discriminator::new(&[8], 1e-4, &mut rng(0));
        for l in &mut d.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        d
    }

    #[test]
    fn relabel_sets_all_labels_to_terminal() {
        for final_label in [true, false] {
            let mut rollout = vec![mk(1, Some(false)), mk(1, Some(true)), mk(1, Some(false))];
            rollout.last_mut().unwrap().success = Some(final_label);
            let relabeled = relabel_rollout(&rollout).unwrap();
            assert!(relabeled.iter().all(|t| t.success == Some(final_label)));
            assert_eq!(relabeled.len(), rollout.len());
        }
    }

    #[test]
    fn relabel_single_transition_is_identity() {
        let rollout = vec![mk(1, Some(true))];
        let relabeled = relabel_rollout(&rollout).unwrap();
        assert_eq!(relabeled[0], rollout[0]);
    }

    #[test]
    fn relabel_empty_rollout_errors() {
        assert!(matches!(relabel_rollout(&[]), Err(DiscError::EmptyRollout)));
    }

    #[test]
    fn relabel_matches_in_buffer_completion() {
        let sp = spec();
        let mut buf = ReplayBuffer::new(BufferRole::Forward, 64);
        let mut rollout = Vec::new();
        let mut first = None;
        let mut last = 0;
        for i in 0..5 {
            let t = mk(3, Some(i == 4));
            rollout.push(t);
            let id = buf.push(t).unwrap();
            first.get_or_insert(id);
            last = id;
        }
        buf.complete_episode(first.unwrap(), last, true);
        let pure = relabel_rollout(&rollout).unwrap();
        for (stored, expect) in buf.iter().zip(&pure) {
            assert_eq!(stored.success, expect.success);
        }
        let _ = sp;
    }

    #[test]
    fn only_failures_skips_sampling() {
        let sp = spec();
        let mut buf = ReplayBuffer::new(BufferRole::Forward, 64);
        let a = buf.push(mk(1, Some(false))).unwrap();
        let b = buf.push(mk(1, Some(false))).unwrap();
        buf.complete_episode(a, b, false);
        let out = balanced_sample(&buf, &sp, 8, &mut rng(1)).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn single_positive_is_drawn_with_replacement() {
        let sp = spec();
        let mut buf = ReplayBuffer::new(BufferRole::Forward, 4096);
        let p = buf.push(mk(1, Some(true))).unwrap();
        buf.complete_episode(p, p, true);
        let mut first = None;
        let mut last = 0;
        for _ in 0..1000 {
            let id = buf.push(mk(2, Some(false))).unwrap();
            first.get_or_insert(id);
            last = id;
        }
        buf.complete_episode(first.unwrap(), last, false);
        let batch = balanced_sample(&buf, &sp, 256, &mut rng(2)).unwrap().unwrap();
        assert_eq!(batch.positives, 128);
        assert_eq!(batch.negatives, 128);
        assert_eq!(batch.labels.iter().filter(|&&c| c == 1.0).count(), 128);
    }

    #[test]
    fn mixed_buffer_batches_are_exactly_balanced() {
        let sp = spec();
        let mut buf = ReplayBuffer::new(BufferRole::Forward, 4096);
        let mut r = rng(3);
        for ep in 0..20 {
            let success = ep % 3 == 0;
            let mut first = None;
            let mut last = 0;
            for _ in 0..30 {
                let id = buf.push(mk(ep, Some(false))).unwrap();
                first.get_or_insert(id);
                last = id;
            }
            buf.complete_episode(first.unwrap(), last, success);
        }
        for _ in 0..50 {
            let batch = balanced_sample(&buf, &sp, 64, &mut r).unwrap().unwrap();
            let pos = batch.labels.iter().filter(|&&c| c == 1.0).count();
            assert_eq!(pos, 32);
            assert_eq!(batch.len(), 64);
        }
    }

    #[test]
    fn odd_batch_size_errors() {
        let sp = spec();
        let buf = ReplayBuffer::new(BufferRole::Forward, 8);
        assert!(matches!(
            balanced_sample(&buf, &sp, 7, &mut rng(4)),
            Err(DiscError::OddBatch(7))
        ));
    }

    #[test]
    fn zero_logit_bce_is_ln2() {
        let d = zeroed_disc();
        let mut r = rng(5);
        let n = 32;
        let dim = STATE_DIM + ACTION_DIM;
        let inputs: Vec<f64> = (0..n * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let batch = LabeledBatch { inputs, labels, positives: n / 2, negatives: n / 2 };
        let (loss, _) = bce_loss_and_grads(&d.net, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn separable_points_reach_low_loss_in_most_seeds() {
        let mut wins = 0;
        for seed in 0..5 {
            let mut d = Discriminator::new(&[16], 1e-3, &mut rng(100 + seed));
            let dim = STATE_DIM + ACTION_DIM;
            let mut inputs = vec![0.1; 2 * dim];
            inputs[dim..].iter_mut().for_each(|v| *v = 0.9);
            let batch = LabeledBatch {
                inputs,
                labels: vec![1.0, 0.0],
                positives: 1,
                negatives: 1,
            };
            let mut final_loss = f64::INFINITY;
            for _ in 0..5000 {
                final_loss = d.update(&batch).unwrap();
                if final_loss < 0.01 {
                    break;
                }
            }
            if final_loss < 0.01 {
                wins += 1;
            }
        }
        assert!(wins >= 3, "only {wins}/5 seeds separated the two points");
    }

    #[test]
    fn optimizer_is_momentum_free() {
        let d = Discriminator::new(&[8], 1e-4, &mut rng(6));
        assert!(!d.opt.has_first_moment());
        assert!(matches!(d.opt.scheme, OptScheme::RmsProp { .. }));
    }

    #[test]
    fn zero_logit_estimate_is_half_everywhere() {
        let sp = spec();
        let d = zeroed_disc();
        let mut r = rng(7);
        for _ in 0..20 {
            let s = sp.sample_uniform_valid(&mut r);
            let a = EnvAction::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            assert_eq!(d.estimate(&sp, &s, &a), 0.5);
        }
    }

    #[test]
    fn estimate_is_monotone_in_logit_and_never_saturates() {
        let sp = spec();
        let d = Discriminator::new(&[8, 8], 1e-4, &mut rng(8));
        let mut r = rng(9);
        let mut pairs = Vec::new();
        for _ in 0..100 {
            let s = sp.sample_uniform_valid(&mut r);
            let a = EnvAction::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let x = disc_input(&sp, &s, &a);
            let cache = d.net.forward_batch(&x, 1).unwrap();
            let logit = cache.logits()[0];
            let p = d.estimate(&sp, &s, &a);
            assert!(p > 0.0 && p < 1.0);
            pairs.push((logit, p));
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1, "estimate not monotone in logit");
        }
    }

    #[test]
    fn gate_band_is_inclusive() {
        let g = GateThresholds::default();
        assert!(g.allows(0.5));
        assert!(g.allows(0.3));
        assert!(g.allows(0.7));
        assert!(!g.allows(0.71));
        assert!(!g.allows(0.29));
        assert!(gate_allows(&g, 0.3));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(GateThresholds::new(0.8, 0.2).is_err());
        assert!(GateThresholds::new(-0.1, 0.5).is_err());
        assert!(GateThresholds::new(0.1, 1.5).is_err());
        assert!(GateThresholds::new(0.3, 0.7).is_ok());
    }

    #[test]
    fn bce_gradients_pass_finite_difference() {
        let mut r = rng(10);
        let net = Mlp::new(&[6, 8, 1], Head::Sigmoid, &mut r);
        let n = 6;
        let dim = STATE_DIM + ACTION_DIM;
        let inputs: Vec<f64> = (0..n * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let batch = LabeledBatch { inputs, labels, positives: 3, negatives: 3 };
        let err = finite_diff_check(&net, |m| {
            let (l, g) = bce_loss_and_grads(m, &batch).unwrap();
            (l, g)
        });
        assert!(err < 1e-4, "rel err {err}");
    }
}
