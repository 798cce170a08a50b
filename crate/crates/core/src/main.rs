use anyhow::{bail, Context, Result};
use arl::checkpoint::{load_disc, load_manifest, load_network};
use arl::config::{Algorithm, RunConfig};
use arl::discriminator::GateThresholds;
use arl::eval::{
    curriculum_csv, eval_report_csv, evaluate, export_curriculum, monte_carlo_success_map,
    oracle_map_csv,
};
use arl::maze::{MazeSpec, ACTION_DIM};
use arl::sac::GaussianPolicy;
use arl::trainer::train;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "arl",
    about = "Reset-free RL with a self-supervised start-state curriculum on point-mass mazes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one training job and write metrics, snapshots, and a checkpoint.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's algorithm: ours | reset-rl | oracle-rl | r3l.
        #[arg(long)]
        algo: Option<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpointed forward policy from uniform valid starts.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional per-episode CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score random-rollout states with the checkpointed discriminator.
    ExportCurriculum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo success probabilities of the checkpointed forward policy
    /// over a free-space grid.
    OracleMap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid points per axis over the maze bounding box.
        #[arg(long, default_value_t = 28)]
        grid: usize,
        /// Stochastic rollouts per grid point.
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_policy(dir: &Path, prefix: &str) -> Result<GaussianPolicy> {
    let (net, _) = load_network(&dir.join(format!("{prefix}_actor.net")))
        .with_context(|| format!("loading {prefix} policy from {}", dir.display()))?;
    Ok(GaussianPolicy {
        net,
        action_dim: ACTION_DIM,
    })
}

fn load_spec_and_cap(dir: &Path) -> Result<(MazeSpec, usize, RunConfig)> {
    let manifest = load_manifest(dir).with_context(|| format!("no manifest in {}", dir.display()))?;
    let spec = MazeSpec::load(&manifest.config.maze)?;
    Ok((spec, manifest.t_forward, manifest.config))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train { config, algo, seed, out } => {
            let mut cfg = RunConfig::load(config.to_str().context("config path is not utf-8")?)?;
            if let Some(a) = algo {
                cfg.algorithm = match Algorithm::parse(&a) {
                    Some(a) => a,
                    None => bail!("unknown algorithm {a:?} (ours | reset-rl | oracle-rl | r3l)"),
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg, Some(&out))?;
            let last = outcome.metrics.rows.last().context("run produced no rows")?;
            println!(
                "done: {} on {} seed {} | steps {} episodes {} manual_resets {} SR {:.3} AS {:.1}",
                cfg.algorithm.as_str(),
                cfg.maze,
                cfg.seed,
                last.env_steps,
                last.episodes,
                last.manual_resets,
                last.sr,
                last.avg_steps
            );
            println!("outputs in {}", out.display());
        }
        Cmd::Evaluate { checkpoint, episodes, seed, out } => {
            let (spec, cap, _) = load_spec_and_cap(&checkpoint)?;
            let policy = load_policy(&checkpoint, "forward")?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = evaluate(&policy, &spec, episodes, cap, &mut rng);
            println!(
                "episodes {} | SR {:.4} | AS {:.2}",
                report.n_episodes, report.sr, report.avg_steps
            );
            if let Some(path) = out {
                std::fs::write(&path, eval_report_csv(&report))?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::ExportCurriculum { checkpoint, samples, out, seed } => {
            let (spec, _, cfg) = load_spec_and_cap(&checkpoint)?;
            let disc = load_disc(&checkpoint, cfg.lr_others)
                .context("checkpoint has no discriminator (gated runs only)")?;
            let reset_policy = load_policy(&checkpoint, "reset")
                .context("checkpoint has no reset policy (reset-phase runs only)")?;
            let thresholds = GateThresholds {
                lambda1: cfg.lambda1,
                lambda2: cfg.lambda2,
            };
            let manifest = load_manifest(&checkpoint)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snap = export_curriculum(
                &disc,
                &reset_policy,
                &spec,
                samples,
                &thresholds,
                manifest.env_steps,
                &mut rng,
            );
            std::fs::write(&out, curriculum_csv(&snap))?;
            let allowed = snap.rows.iter().filter(|r| r.allowed).count();
            println!(
                "wrote {} rows ({} gate-allowed) to {}",
                snap.rows.len(),
                allowed,
                out.display()
            );
        }
        Cmd::OracleMap { checkpoint, grid, rollouts, out, seed } => {
            let (spec, cap, _) = load_spec_and_cap(&checkpoint)?;
            let policy = load_policy(&checkpoint, "forward")?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = monte_carlo_success_map(&policy, &spec, grid, rollouts, cap, &mut rng);
            std::fs::write(&out, oracle_map_csv(&map))?;
            println!(
                "wrote {} free grid points (k = {}) to {}",
                map.points.len(),
                rollouts,
                out.display()
            );
        }
    }
    Ok(())
}
