//! The outer training loop: alternate an exploratory reset phase (with gate
//! abort) and a forward phase, relabel completed rollouts, update every
//! learner once per environment step, and fall back to an extrinsic manual
//! reset when a forward episode fails. Also provides the three baseline
//! training modes.

use crate::checkpoint::{self, CheckpointError, CheckpointManifest};
use crate::config::{Algorithm, ConfigError, ManualResetDestination, RunConfig};
use crate::discriminator::{balanced_sample, DiscError, Discriminator, GateThresholds};
use crate::eval::{evaluate, export_curriculum, curriculum_csv, CurriculumSnapshot};
use crate::maze::{EnvState, MazeParseError, MazeSpec};
use crate::metrics::{EvalRow, RunMetrics};
use crate::replay::{BufferError, BufferRole, Transition};
use crate::rnd::{RndError, RndModel};
use crate::sac::{ActionMode, SacAgent, SacError, SacHyper};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Maze(#[from] MazeParseError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Rnd(#[from] RndError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where one reset phase ended.
#[derive(Debug, Clone, Copy)]
pub struct ResetPhaseOutcome {
    pub start_state: EnvState,
    /// Loop iterations entered (equals the abort iteration when the gate
    /// fired; the executed env steps are one fewer then).
    pub steps_used: usize,
    pub env_steps: usize,
    pub aborted_by_gate: bool,
    pub abort_probability: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeOutcome {
    pub episode_id: u64,
    pub start_state: EnvState,
    pub success: bool,
    pub reset_steps: usize,
    pub forward_steps: usize,
    pub aborted_by_gate: bool,
    pub abort_probability: Option<f64>,
    pub abort_step: Option<usize>,
    pub manual_reset_after: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Counters {
    pub env_steps: u64,
    pub reset_steps: u64,
    pub forward_steps: u64,
    pub episodes: u64,
    pub manual_resets: u64,
    pub gate_checks: u64,
    pub gate_aborts: u64,
    /// -1 until the first successful training episode completes.
    pub first_success_step: i64,
}

/// Final models of a run, usable for evaluation without touching disk.
pub struct TrainedModels {
    pub spec: MazeSpec,
    pub forward: SacAgent,
    pub reset: Option<SacAgent>,
    pub rnd: Option<RndModel>,
    pub disc: Option<Discriminator>,
}

pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub episode_log: Vec<EpisodeOutcome>,
    pub snapshots: Vec<CurriculumSnapshot>,
    pub counters: Counters,
    pub models: TrainedModels,
}

#[derive(Debug, Default, Clone, Copy)]
struct MeanAcc {
    total: f64,
    count: u64,
}

impl MeanAcc {
    fn add(&mut self, v: f64) {
        self.total += v;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.total / self.count as f64
        }
    }
}

#[derive(Debug, Default)]
struct Window {
    forward_critic: MeanAcc,
    forward_actor: MeanAcc,
    reset_critic: MeanAcc,
    reset_actor: MeanAcc,
    disc: MeanAcc,
    rnd: MeanAcc,
    episodes: u64,
    gate_aborts: u64,
    abort_step: MeanAcc,
}

struct Trainer {
    cfg: RunConfig,
    spec: MazeSpec,
    gate: GateThresholds,
    t_forward: usize,
    t_reset: usize,
    batch: usize,
    disc_batch: usize,
    forward: SacAgent,
    reset: Option<SacAgent>,
    rnd: Option<RndModel>,
    disc: Option<Discriminator>,
    state: EnvState,
    fixed_start: EnvState,
    counters: Counters,
    window: Window,
    metrics: RunMetrics,
    episode_log: Vec<EpisodeOutcome>,
    snapshots: Vec<CurriculumSnapshot>,
    rng_train: ChaCha8Rng,
    rng_eval: ChaCha8Rng,
    rng_snapshot: ChaCha8Rng,
    next_eval_mark: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    fn new(cfg: &RunConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = MazeSpec::load(&cfg.maze)?;
        let t_forward = cfg.t_forward.unwrap_or(spec.max_episode_steps_forward);
        let t_reset = cfg.t_reset.unwrap_or(spec.max_episode_steps_reset);
        let batch = cfg.batch();
        let disc_batch = if batch % 2 == 0 { batch } else { batch + 1 };
        let hidden = cfg.hidden();

        let mut rng_init = stream_rng(cfg.seed, 1);
        let fwd_hyper = SacHyper {
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            tau: cfg.tau,
            batch_size: batch,
            target_update_interval: cfg.target_update_interval,
            lr: cfg.lr_others,
        };
        let forward = SacAgent::new(
            BufferRole::Forward,
            &hidden,
            fwd_hyper,
            cfg.buffer_capacity,
            &mut rng_init,
        );
        let (reset, rnd) = if cfg.algorithm.has_reset_phase() {
            let reset_hyper = SacHyper {
                lr: cfg.lr_reset,
                ..fwd_hyper
            };
            let reset = SacAgent::new(
                BufferRole::Reset,
                &hidden,
                reset_hyper,
                cfg.buffer_capacity,
                &mut rng_init,
            );
            let rnd = RndModel::new(
                &cfg.rnd_hidden(),
                cfg.rnd_embedding_dim,
                cfg.lr_others,
                cfg.rnd_reward_normalization,
                &mut rng_init,
            );
            (Some(reset), Some(rnd))
        } else {
            (None, None)
        };
        let disc = cfg
            .algorithm
            .uses_gate()
            .then(|| Discriminator::new(&hidden, cfg.lr_others, &mut rng_init));

        let far_cell = spec.farthest_cell_from_goal();
        let fixed_start = EnvState::at_rest(spec.cell_center(far_cell.0, far_cell.1));

        let mut rng_train = stream_rng(cfg.seed, 2);
        let state = match cfg.algorithm {
            Algorithm::ResetRl => fixed_start,
            _ => spec.sample_uniform_valid(&mut rng_train),
        };

        Ok(Trainer {
            gate: cfg.thresholds(),
            cfg: cfg.clone(),
            spec,
            t_forward,
            t_reset,
            batch,
            disc_batch,
            forward,
            reset,
            rnd,
            disc,
            state,
            fixed_start,
            counters: Counters {
                first_success_step: -1,
                ..Counters::default()
            },
            window: Window::default(),
            metrics: RunMetrics::default(),
            episode_log: Vec::new(),
            snapshots: Vec::new(),
            rng_train,
            rng_eval: stream_rng(cfg.seed, 3),
            rng_snapshot: stream_rng(cfg.seed, 4),
            next_eval_mark: cfg.eval_interval,
        })
    }

    /// Alg-line ordering: sample the reset action, consult the gate, then
    /// step, store the intrinsic-reward transition, and update the reset
    /// learner and the reward model — once per executed step.
    fn run_reset_phase(&mut self) -> Result<ResetPhaseOutcome, TrainError> {
        let use_gate = self.cfg.algorithm.uses_gate()
            && self.counters.episodes >= self.cfg.gate_warmup_episodes;
        let mut steps_used = 0;
        let mut env_steps = 0;
        let mut aborted = false;
        let mut abort_probability = None;
        for t in 1..=self.t_reset {
            steps_used = t;
            let s_norm = self.spec.normalize_state(&self.state);
            let reset_agent = self.reset.as_mut().expect("reset phase has a reset agent");
            let action =
                reset_agent
                    .policy
                    .select_action(&s_norm, ActionMode::Stochastic, &mut self.rng_train);
            if use_gate {
                self.counters.gate_checks += 1;
                let p = self
                    .disc
                    .as_ref()
                    .expect("gate requires the discriminator")
                    .estimate(&self.spec, &self.state, &action);
                if self.gate.allows(p) {
                    aborted = true;
                    abort_probability = Some(p);
                    break;
                }
            }
            let (next, _, _) = self.spec.step(&self.state, &action);
            let r_hat = self
                .rnd
                .as_mut()
                .expect("reset phase has a reward model")
                .intrinsic_reward(&self.spec, &next);
            self.reset
                .as_mut()
                .unwrap()
                .buffer
                .push(Transition {
                    state: self.state,
                    action,
                    reward: r_hat,
                    next_state: next,
                    done: false,
                    success: None,
                    episode_id: self.counters.episodes,
                })?;
            env_steps += 1;
            let batch = self
                .reset
                .as_ref()
                .unwrap()
                .buffer
                .sample(self.batch, &mut self.rng_train)?;
            let stats = self
                .reset
                .as_mut()
                .unwrap()
                .update(&batch, &self.spec, &mut self.rng_train)?;
            self.window.reset_critic.add(stats.critic_loss);
            self.window.reset_actor.add(stats.actor_loss);
            let states: Vec<EnvState> = batch.iter().map(|tr| tr.next_state).collect();
            let rnd_loss = self.rnd.as_mut().unwrap().update(&self.spec, &states)?;
            self.window.rnd.add(rnd_loss);
            self.state = next;
        }
        self.counters.env_steps += env_steps as u64;
        self.counters.reset_steps += env_steps as u64;
        if aborted {
            self.counters.gate_aborts += 1;
            self.window.gate_aborts += 1;
            self.window.abort_step.add(steps_used as f64);
        }
        Ok(ResetPhaseOutcome {
            start_state: self.state,
            steps_used,
            env_steps,
            aborted_by_gate: aborted,
            abort_probability,
        })
    }

    /// Runs the forward policy for the full horizon, storing transitions and
    /// updating the forward learner (and, in gated mode, the discriminator)
    /// once per step. Success is membership of the final state in the goal
    /// region; the completed rollout is then relabeled with that outcome.
    fn run_forward_phase(&mut self) -> Result<(bool, usize), TrainError> {
        let ep_id = self.counters.episodes;
        let start_id = self.forward.buffer.next_id();
        let mut steps = 0usize;
        for _ in 1..=self.t_forward {
            let s_norm = self.spec.normalize_state(&self.state);
            let action =
                self.forward
                    .policy
                    .select_action(&s_norm, ActionMode::Stochastic, &mut self.rng_train);
            let (next, reward, reached) = self.spec.step(&self.state, &action);
            self.forward.buffer.push(Transition {
                state: self.state,
                action,
                reward,
                next_state: next,
                done: false,
                success: Some(reached),
                episode_id: ep_id,
            })?;
            steps += 1;
            let batch = self.forward.buffer.sample(self.batch, &mut self.rng_train)?;
            let stats = self.forward.update(&batch, &self.spec, &mut self.rng_train)?;
            self.window.forward_critic.add(stats.critic_loss);
            self.window.forward_actor.add(stats.actor_loss);
            if let Some(disc) = self.disc.as_mut() {
                if let Some(labeled) = balanced_sample(
                    &self.forward.buffer,
                    &self.spec,
                    self.disc_batch,
                    &mut self.rng_train,
                )? {
                    let loss = disc.update(&labeled)?;
                    self.window.disc.add(loss);
                }
            }
            self.state = next;
        }
        let end_id = self.forward.buffer.next_id() - 1;
        let success = self.spec.goal.contains(self.state.pos);
        self.forward.buffer.complete_episode(start_id, end_id, success);
        self.counters.env_steps += steps as u64;
        self.counters.forward_steps += steps as u64;
        self.counters.episodes += 1;
        self.window.episodes += 1;
        if success && self.counters.first_success_step < 0 {
            self.counters.first_success_step = self.counters.env_steps as i64;
        }
        Ok((success, steps))
    }

    fn manual_reset_target(&mut self) -> EnvState {
        match self.cfg.manual_reset_destination {
            ManualResetDestination::UniformValid => {
                self.spec.sample_uniform_valid(&mut self.rng_train)
            }
            ManualResetDestination::FarState => self.fixed_start,
        }
    }

    /// One outer-loop iteration: optional reset phase, one forward episode,
    /// and the failure-triggered (or baseline per-episode) manual reset.
    fn run_iteration(&mut self) -> Result<(), TrainError> {
        let ep_id = self.counters.episodes;
        match self.cfg.algorithm {
            Algorithm::Ours | Algorithm::R3l => {
                let reset_out = self.run_reset_phase()?;
                let start_state = self.state;
                let (success, forward_steps) = self.run_forward_phase()?;
                let manual = !success;
                if manual {
                    self.counters.manual_resets += 1;
                    self.state = self.manual_reset_target();
                }
                self.episode_log.push(EpisodeOutcome {
                    episode_id: ep_id,
                    start_state,
                    success,
                    reset_steps: reset_out.env_steps,
                    forward_steps,
                    aborted_by_gate: reset_out.aborted_by_gate,
                    abort_probability: reset_out.abort_probability,
                    abort_step: reset_out.aborted_by_gate.then_some(reset_out.steps_used),
                    manual_reset_after: manual,
                });
            }
            Algorithm::ResetRl | Algorithm::OracleRl => {
                self.counters.manual_resets += 1;
                self.state = match self.cfg.algorithm {
                    Algorithm::ResetRl => self.fixed_start,
                    _ => self.spec.sample_uniform_valid(&mut self.rng_train),
                };
                let start_state = self.state;
                let (success, forward_steps) = self.run_forward_phase()?;
                self.episode_log.push(EpisodeOutcome {
                    episode_id: ep_id,
                    start_state,
                    success,
                    reset_steps: 0,
                    forward_steps,
                    aborted_by_gate: false,
                    abort_probability: None,
                    abort_step: None,
                    manual_reset_after: true,
                });
            }
        }
        Ok(())
    }

    fn emit_eval_row(&mut self, out_dir: Option<&Path>) -> Result<(), TrainError> {
        let report = evaluate(
            &self.forward.policy,
            &self.spec,
            self.cfg.eval_episodes,
            self.t_forward,
            &mut self.rng_eval,
        );
        let w = std::mem::take(&mut self.window);
        let c = self.counters;
        debug_assert_eq!(c.env_steps, c.reset_steps + c.forward_steps);
        let row = EvalRow {
            env_steps: c.env_steps,
            episodes: c.episodes,
            manual_resets: c.manual_resets,
            sr: report.sr,
            avg_steps: report.avg_steps,
            forward_critic_loss: w.forward_critic.mean(),
            forward_actor_loss: w.forward_actor.mean(),
            reset_critic_loss: w.reset_critic.mean(),
            reset_actor_loss: w.reset_actor.mean(),
            disc_loss: w.disc.mean(),
            rnd_loss: w.rnd.mean(),
            gate_checks: c.gate_checks,
            gate_aborts: c.gate_aborts,
            window_episodes: w.episodes,
            window_gate_aborts: w.gate_aborts,
            abort_step_mean: w.abort_step.mean(),
            reset_steps: c.reset_steps,
            forward_steps: c.forward_steps,
            first_success_step: c.first_success_step,
        };
        log::info!(
            "{} {} seed {}: steps {} episodes {} mr {} sr {:.3} as {:.1}",
            self.cfg.algorithm.as_str(),
            self.cfg.maze,
            self.cfg.seed,
            row.env_steps,
            row.episodes,
            row.manual_resets,
            row.sr,
            row.avg_steps
        );
        self.metrics.rows.push(row);

        if let Some(dir) = out_dir {
            // Rewritten per row so long runs can be watched mid-flight.
            self.metrics.write_csv(&dir.join("metrics.csv"))?;
        }

        if let (Some(disc), Some(reset)) = (self.disc.as_ref(), self.reset.as_ref()) {
            if self.cfg.curriculum_snapshot_states > 0 {
                let snap = export_curriculum(
                    disc,
                    &reset.policy,
                    &self.spec,
                    self.cfg.curriculum_snapshot_states,
                    &self.gate,
                    c.env_steps,
                    &mut self.rng_snapshot,
                );
                if let Some(dir) = out_dir {
                    let path = dir
                        .join("curriculum")
                        .join(format!("step_{:010}.csv", c.env_steps));
                    std::fs::write(path, curriculum_csv(&snap))?;
                }
                self.snapshots.push(snap);
            }
        }
        Ok(())
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save_agent(dir, "forward", &self.forward)?;
        if let Some(reset) = &self.reset {
            checkpoint::save_agent(dir, "reset", reset)?;
        }
        if let Some(rnd) = &self.rnd {
            checkpoint::save_rnd(dir, rnd)?;
        }
        if let Some(disc) = &self.disc {
            checkpoint::save_disc(dir, disc)?;
        }
        if self.cfg.checkpoint_buffers {
            checkpoint::save_buffer(&dir.join("forward_buffer.json"), &self.forward.buffer)?;
            if let Some(reset) = &self.reset {
                checkpoint::save_buffer(&dir.join("reset_buffer.json"), &reset.buffer)?;
            }
        }
        checkpoint::save_manifest(
            dir,
            &CheckpointManifest {
                config: self.cfg.clone(),
                env_steps: self.counters.env_steps,
                episodes: self.counters.episodes,
                manual_resets: self.counters.manual_resets,
                t_forward: self.t_forward,
                t_reset: self.t_reset,
                forward_buffer_len: self.forward.buffer.len(),
                reset_buffer_len: self.reset.as_ref().map_or(0, |a| a.buffer.len()),
            },
        )?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    seed: u64,
    git_describe: String,
    config: &'a RunConfig,
    resolved_t_forward: usize,
    resolved_t_reset: usize,
    resolved_hidden: Vec<usize>,
    resolved_batch_size: usize,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Runs one full training job. With an output directory, writes
/// `metrics.csv`, `run.json`, per-eval curriculum snapshots, and a final
/// checkpoint under `checkpoints/final/`.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let mut tr = Trainer::new(cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::create_dir_all(dir.join("curriculum"))?;
        let info = RunInfo {
            seed: cfg.seed,
            git_describe: git_describe(),
            config: cfg,
            resolved_t_forward: tr.t_forward,
            resolved_t_reset: tr.t_reset,
            resolved_hidden: cfg.hidden(),
            resolved_batch_size: tr.batch,
        };
        std::fs::write(
            dir.join("run.json"),
            serde_json::to_string_pretty(&info).expect("run info serializes"),
        )?;
    }

    while tr.counters.env_steps < cfg.total_env_steps {
        tr.run_iteration()?;
        if tr.counters.env_steps >= tr.next_eval_mark {
            tr.emit_eval_row(out_dir)?;
            tr.next_eval_mark = (tr.counters.env_steps / cfg.eval_interval + 1) * cfg.eval_interval;
        }
    }
    if tr.metrics.rows.last().map(|r| r.env_steps) != Some(tr.counters.env_steps) {
        tr.emit_eval_row(out_dir)?;
    }

    if let Some(dir) = out_dir {
        tr.metrics.write_csv(&dir.join("metrics.csv"))?;
        tr.save_checkpoint(&dir.join("checkpoints").join("final"))?;
    }

    Ok(TrainOutcome {
        metrics: tr.metrics,
        episode_log: tr.episode_log,
        snapshots: tr.snapshots,
        counters: tr.counters,
        models: TrainedModels {
            spec: tr.spec,
            forward: tr.forward,
            reset: tr.reset,
            rnd: tr.rnd,
            disc: tr.disc,
        },
    })
}
