//! Evaluation from uniform valid starts, curriculum snapshot export, and the
//! Monte Carlo success-probability oracle used to validate the discriminator.

use crate::discriminator::{Discriminator, GateThresholds};
use crate::maze::{EnvAction, EnvState, MazeSpec, ACTION_DIM, STATE_DIM};
use crate::metrics::fmt_f64;
use crate::sac::{ActionMode, GaussianPolicy};
use rand::Rng;

/// Anything that can drive the point mass. Lets scripted controllers reuse
/// the evaluation machinery alongside learned policies.
pub trait Controller {
    fn act<R: Rng>(
        &self,
        spec: &MazeSpec,
        state: &EnvState,
        mode: ActionMode,
        rng: &mut R,
    ) -> EnvAction;
}

impl Controller for GaussianPolicy {
    fn act<R: Rng>(
        &self,
        spec: &MazeSpec,
        state: &EnvState,
        mode: ActionMode,
        rng: &mut R,
    ) -> EnvAction {
        self.select_action(&spec.normalize_state(state), mode, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeRecord {
    pub start: EnvState,
    pub steps: usize,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n_episodes: usize,
    /// Fraction of episodes that reached the goal region.
    pub sr: f64,
    /// Mean steps to first goal contact; failures counted at the cap.
    pub avg_steps: f64,
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs one rollout and returns (steps_to_goal, reached). A start already
/// inside the goal region counts as an immediate success at zero steps.
pub fn rollout_to_goal<C: Controller, R: Rng>(
    controller: &C,
    spec: &MazeSpec,
    start: EnvState,
    cap: usize,
    mode: ActionMode,
    rng: &mut R,
) -> (usize, bool) {
    if spec.goal.contains(start.pos) {
        return (0, true);
    }
    let mut s = start;
    for t in 1..=cap {
        let a = controller.act(spec, &s, mode, rng);
        let (next, _, reached) = spec.step(&s, &a);
        if reached {
            return (t, true);
        }
        s = next;
    }
    (cap, false)
}

/// `n` episodes from uniform valid starts under deterministic actions.
pub fn evaluate<C: Controller, R: Rng>(
    controller: &C,
    spec: &MazeSpec,
    n: usize,
    cap: usize,
    rng: &mut R,
) -> EvalReport {
    assert!(n >= 1, "evaluation needs at least one episode");
    let mut episodes = Vec::with_capacity(n);
    let mut successes = 0usize;
    let mut step_sum = 0usize;
    for _ in 0..n {
        let start = spec.sample_uniform_valid(rng);
        let (steps, success) =
            rollout_to_goal(controller, spec, start, cap, ActionMode::Deterministic, rng);
        successes += success as usize;
        step_sum += steps;
        episodes.push(EpisodeRecord { start, steps, success });
    }
    EvalReport {
        n_episodes: n,
        sr: successes as f64 / n as f64,
        avg_steps: step_sum as f64 / n as f64,
        episodes,
    }
}

pub fn eval_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("start_x,start_y,steps,success\n");
    for e in &report.episodes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(e.start.pos[0]),
            fmt_f64(e.start.pos[1]),
            e.steps,
            e.success as u8
        ));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct SnapshotRow {
    pub state_norm: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub probability: f64,
    pub allowed: bool,
}

/// States sampled from random-policy rollouts, scored by the discriminator
/// with the reset policy's action, at one moment of training.
#[derive(Debug, Clone)]
pub struct CurriculumSnapshot {
    pub training_step: u64,
    pub rows: Vec<SnapshotRow>,
}

impl CurriculumSnapshot {
    /// Mean normalized Euclidean distance to the goal over gate-allowed rows.
    pub fn mean_allowed_goal_distance(&self, spec: &MazeSpec) -> Option<f64> {
        let g = spec.normalized_goal_center();
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in self.rows.iter().filter(|r| r.allowed) {
            let dx = r.state_norm[0] - g[0];
            let dy = r.state_norm[1] - g[1];
            sum += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
        (count > 0).then(|| sum / count as f64)
    }
}

const SNAPSHOT_ROLLOUT_LEN: usize = 50;

/// Collects `n_states` states from uniform-start uniform-action rollouts and
/// records the discriminator estimate plus gate flag for each, with the
/// action drawn from the reset policy at that state.
pub fn export_curriculum<R: Rng>(
    disc: &Discriminator,
    reset_policy: &GaussianPolicy,
    spec: &MazeSpec,
    n_states: usize,
    thresholds: &GateThresholds,
    training_step: u64,
    rng: &mut R,
) -> CurriculumSnapshot {
    let mut rows = Vec::with_capacity(n_states);
    'outer: loop {
        let mut s = spec.sample_uniform_valid(rng);
        for _ in 0..SNAPSHOT_ROLLOUT_LEN {
            if rows.len() == n_states {
                break 'outer;
            }
            let reset_action = reset_policy.select_action(
                &spec.normalize_state(&s),
                ActionMode::Stochastic,
                rng,
            );
            let p = disc.estimate(spec, &s, &reset_action);
            rows.push(SnapshotRow {
                state_norm: spec.normalize_state(&s),
                action: reset_action.accel,
                probability: p,
                allowed: thresholds.allows(p),
            });
            let random_action = EnvAction::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            s = spec.step(&s, &random_action).0;
        }
    }
    CurriculumSnapshot { training_step, rows }
}

pub fn curriculum_csv(snapshot: &CurriculumSnapshot) -> String {
    let mut out = String::from("training_step,sx,sy,svx,svy,ax,ay,probability,allowed\n");
    for r in &snapshot.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            snapshot.training_step,
            fmt_f64(r.state_norm[0]),
            fmt_f64(r.state_norm[1]),
            fmt_f64(r.state_norm[2]),
            fmt_f64(r.state_norm[3]),
            fmt_f64(r.action[0]),
            fmt_f64(r.action[1]),
            fmt_f64(r.probability),
            r.allowed as u8
        ));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct OraclePoint {
    pub pos: [f64; 2],
    pub success_fraction: f64,
}

/// Empirical success probabilities for a frozen forward policy, estimated by
/// `k` stochastic rollouts from every free grid point (zero velocity).
#[derive(Debug, Clone)]
pub struct OracleMap {
    pub points: Vec<OraclePoint>,
    pub rollouts_per_point: usize,
}

pub fn monte_carlo_success_map<C: Controller, R: Rng>(
    controller: &C,
    spec: &MazeSpec,
    grid_resolution: usize,
    k: usize,
    cap: usize,
    rng: &mut R,
) -> OracleMap {
    assert!(k >= 1, "need at least one rollout per grid point");
    assert!(grid_resolution >= 1);
    let mut points = Vec::new();
    for j in 0..grid_resolution {
        for i in 0..grid_resolution {
            let pos = [
                (i as f64 + 0.5) * spec.width() / grid_resolution as f64,
                (j as f64 + 0.5) * spec.height() / grid_resolution as f64,
            ];
            if !spec.is_free_position(pos) {
                continue;
            }
            let mut wins = 0usize;
            for _ in 0..k {
                let (_, success) = rollout_to_goal(
                    controller,
                    spec,
                    EnvState::at_rest(pos),
                    cap,
                    ActionMode::Stochastic,
                    rng,
                );
                wins += success as usize;
            }
            points.push(OraclePoint {
                pos,
                success_fraction: wins as f64 / k as f64,
            });
        }
    }
    OracleMap {
        points,
        rollouts_per_point: k,
    }
}

pub fn oracle_map_csv(map: &OracleMap) -> String {
    let mut out = String::from("x,y,success_fraction\n");
    for p in &map.points {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(p.pos[0]),
            fmt_f64(p.pos[1]),
            fmt_f64(p.success_fraction)
        ));
    }
    out
}

/// Spearman rank correlation with average ranks over ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("no NaN in rank inputs"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &id in &idx[i..=j] {
            ranks[id] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Head;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Never moves.
    struct Still;

    impl Controller for Still {
        fn act<R: Rng>(&self, _: &MazeSpec, _: &EnvState, _: ActionMode, _: &mut R) -> EnvAction {
            EnvAction::new(0.0, 0.0)
        }
    }

    /// Steers toward the goal along the grid-shortest path: aims at the
    /// center of the next cell closer to the goal with a
    /// proportional-derivative rule.
    pub struct ScriptedController {
        dist: Vec<Option<u32>>,
    }

    impl ScriptedController {
        pub fn new(spec: &MazeSpec) -> Self {
            let goal_cell = (
                (spec.goal.center[1] / spec.cell_size) as usize,
                (spec.goal.center[0] / spec.cell_size) as usize,
            );
            ScriptedController {
                dist: spec.bfs_distances(goal_cell),
            }
        }
    }

    impl Controller for ScriptedController {
        fn act<R: Rng>(
            &self,
            spec: &MazeSpec,
            state: &EnvState,
            _: ActionMode,
            _: &mut R,
        ) -> EnvAction {
            let row = (state.pos[1] / spec.cell_size) as usize;
            let col = (state.pos[0] / spec.cell_size) as usize;
            let here = self.dist[row * spec.cols + col].unwrap_or(u32::MAX);
            let mut target = spec.goal.center;
            if here > 0 {
                let mut best = here;
                for (nr, nc) in [
                    (row.wrapping_sub(1), col),
                    (row + 1, col),
                    (row, col.wrapping_sub(1)),
                    (row, col + 1),
                ] {
                    if nr < spec.rows && nc < spec.cols {
                        if let Some(d) = self.dist[nr * spec.cols + nc] {
                            if d < best {
                                best = d;
                                target = spec.cell_center(nr, nc);
                            }
                        }
                    }
                }
            }
            let ax = 4.0 * (target[0] - state.pos[0]) - 2.0 * state.vel[0];
            let ay = 4.0 * (target[1] - state.pos[1]) - 2.0 * state.vel[1];
            EnvAction::new(ax.clamp(-1.0, 1.0), ay.clamp(-1.0, 1.0))
        }
    }

    #[test]
    fn still_policy_fails_everywhere_outside_goal() {
        let spec = MazeSpec::load("1way").unwrap();
        let report = evaluate(&Still, &spec, 30, 50, &mut rng(1));
        for e in &report.episodes {
            if spec.goal.contains(e.start.pos) {
                assert!(e.success);
                assert_eq!(e.steps, 0);
            } else {
                assert!(!e.success);
                assert_eq!(e.steps, 50, "failures count at the cap");
            }
        }
        assert_eq!(
            report.sr,
            report.episodes.iter().filter(|e| e.success).count() as f64 / 30.0
        );
    }

    #[test]
    fn scripted_controller_solves_every_builtin_maze() {
        for name in MazeSpec::builtin_names() {
            let spec = MazeSpec::load(name).unwrap();
            let ctl = ScriptedController::new(&spec);
            let report = evaluate(&ctl, &spec, 20, spec.max_episode_steps_forward, &mut rng(2));
            assert_eq!(report.sr, 1.0, "{name}: {:?}", report.avg_steps);
            assert!(report.avg_steps < spec.max_episode_steps_forward as f64);
        }
    }

    #[test]
    fn degenerate_start_inside_goal() {
        // The 3x3 maze's only free cell is the goal cell, so every start is
        // already a success.
        let spec = MazeSpec::parse("###\n#G#\n###\n").unwrap();
        let report = evaluate(&Still, &spec, 1, 10, &mut rng(3));
        assert_eq!(report.sr, 1.0);
        assert!(report.avg_steps <= 1.0);
    }

    fn zero_disc() -> Discriminator {
        let mut d = Discriminator::new(&[8], 1e-4, &mut rng(0));
        for l in &mut d.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        d
    }

    #[test]
    fn zero_logit_snapshot_allows_everything_at_half() {
        let spec = MazeSpec::load("2way").unwrap();
        let disc = zero_disc();
        let policy = GaussianPolicy::new(STATE_DIM, &[8], ACTION_DIM, &mut rng(4));
        let snap = export_curriculum(
            &disc,
            &policy,
            &spec,
            64,
            &GateThresholds::default(),
            123,
            &mut rng(5),
        );
        assert_eq!(snap.rows.len(), 64);
        for r in &snap.rows {
            assert_eq!(r.probability, 0.5);
            assert!(r.allowed);
        }
        assert!(snap.mean_allowed_goal_distance(&spec).unwrap() > 0.0);
    }

    #[test]
    fn snapshot_csv_is_byte_stable_under_fixed_seed() {
        let spec = MazeSpec::load("2way").unwrap();
        let disc = zero_disc();
        let policy = GaussianPolicy::new(STATE_DIM, &[8], ACTION_DIM, &mut rng(6));
        let mk = || {
            let snap = export_curriculum(
                &disc,
                &policy,
                &spec,
                32,
                &GateThresholds::default(),
                9,
                &mut rng(7),
            );
            curriculum_csv(&snap)
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn oracle_goal_points_are_certain_and_fractions_are_multiples() {
        let spec = MazeSpec::load("1way").unwrap();
        let k = 7;
        let map = monte_carlo_success_map(&Still, &spec, 18, k, 30, &mut rng(8));
        assert!(map.points.len() >= 20);
        for p in &map.points {
            let scaled = p.success_fraction * k as f64;
            assert!((scaled - scaled.round()).abs() < 1e-12, "fraction not a multiple of 1/k");
            if spec.goal.contains(p.pos) {
                assert_eq!(p.success_fraction, 1.0);
            } else {
                assert_eq!(p.success_fraction, 0.0, "still policy cannot reach from {:?}", p.pos);
            }
        }
        let csv1 = oracle_map_csv(&map);
        let map2 = monte_carlo_success_map(&Still, &spec, 18, k, 30, &mut rng(8));
        assert_eq!(csv1, oracle_map_csv(&map2));
    }

    #[test]
    fn spearman_handles_monotone_reversed_and_tied_data() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [10.0, 20.0, 30.0, 40.0, 50.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &down) + 1.0).abs() < 1e-12);
        // Ties: ranks averaged.
        let tied = [1.0, 1.0, 2.0, 2.0, 3.0];
        let other = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rho = spearman(&tied, &other);
        assert!(rho > 0.8 && rho < 1.0);
        // Constant input has no defined ordering; conventionally zero here.
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn monotone_net_scores_track_logits() {
        // Sanity for the fidelity pipeline: a discriminator whose logit is
        // higher at low x should produce estimates ranked accordingly.
        let spec = MazeSpec::load("1way").unwrap();
        let mut d = zero_disc();
        // logit = -4·sx + 2 => probability decreasing in normalized x.
        d.net.layers.last_mut().unwrap().b[0] = 2.0;
        let mut first = d.net.layers.first_mut().unwrap();
        let _ = &mut first;
        // Single hidden layer of 8; wire input sx through unit weights.
        for o in 0..8 {
            d.net.layers[0].w[0 * 8 + o] = if o == 0 { 1.0 } else { 0.0 };
        }
        d.net.layers[1].w[0] = -4.0;
        let mut xs = Vec::new();
        let mut ps = Vec::new();
        for i in 0..20 {
            let x = 1.1 + 0.3 * i as f64;
            if !spec.is_free_position([x, 1.5]) {
                continue;
            }
            let s = EnvState::at_rest([x, 1.5]);
            let p = d.estimate(&spec, &s, &EnvAction::new(0.0, 0.0));
            xs.push(-x);
            ps.push(p);
        }
        assert!(spearman(&xs, &ps) > 0.99);
    }

    #[test]
    fn gaussian_policy_controller_dispatch() {
        let spec = MazeSpec::load("1way").unwrap();
        let policy = GaussianPolicy::new(STATE_DIM, &[8], ACTION_DIM, &mut rng(10));
        assert_eq!(policy.net.head, Head::Gaussian);
        let report = evaluate(&policy, &spec, 5, 20, &mut rng(11));
        assert_eq!(report.n_episodes, 5);
        assert!((report.sr * 5.0).round() == report.sr * 5.0);
    }
}
