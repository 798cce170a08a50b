//! Deterministic 2D point-mass maze simulator: damped double-integrator
//! dynamics on an ASCII-defined wall grid, sparse goal indicator rewards,
//! per-axis collision clamping, and uniform valid-state sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Positions are clamped this far inside a wall face on collision so states
/// stay strictly inside free space.
const WALL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MazeParseError {
    #[error("map is empty")]
    Empty,
    #[error("map rows have differing lengths (row {0})")]
    Ragged(usize),
    #[error("map must be at least 3x3")]
    TooSmall,
    #[error("invalid map character {ch:?} at row {row}, col {col}")]
    BadChar { ch: char, row: usize, col: usize },
    #[error("border cell at row {row}, col {col} is not a wall")]
    UnwalledBorder { row: usize, col: usize },
    #[error("no goal cell `G` in map")]
    NoGoal,
    #[error("multiple goal cells: second `G` at row {row}, col {col}")]
    MultipleGoals { row: usize, col: usize },
    #[error("goal in wall: goal center ({x}, {y}) lies in a wall cell")]
    GoalInWall { x: f64, y: f64 },
    #[error("free cell at row {row}, col {col} is unreachable from the goal")]
    Disconnected { row: usize, col: usize },
    #[error("bad parameter line {0:?}")]
    BadParam(String),
    #[error("unknown parameter key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {msg}")]
    BadValue { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: [f64; 2],
    pub radius: f64,
}

impl GoalRegion {
    /// Euclidean membership test, inclusive at the boundary.
    pub fn contains(&self, pos: [f64; 2]) -> bool {
        let dx = pos[0] - self.center[0];
        let dy = pos[1] - self.center[1];
        (dx * dx + dy * dy).sqrt() <= self.radius
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major occupancy; `true` is a wall cell.
    pub walls: Vec<bool>,
    pub cell_size: f64,
    pub goal: GoalRegion,
    pub dt: f64,
    pub max_speed: f64,
    pub damping: f64,
    pub max_episode_steps_forward: usize,
    pub max_episode_steps_reset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl EnvState {
    pub fn at_rest(pos: [f64; 2]) -> Self {
        EnvState { pos, vel: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAction {
    pub accel: [f64; 2],
}

impl EnvAction {
    pub fn new(ax: f64, ay: f64) -> Self {
        EnvAction { accel: [ax, ay] }
    }
}

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

const BUILTIN_1WAY: &str = include_str!("../../../mazes/1way.txt");
const BUILTIN_2WAY: &str = include_str!("../../../mazes/2way.txt");
const BUILTIN_4WAY: &str = include_str!("../../../mazes/4way.txt");

impl MazeSpec {
    /// Parses an ASCII map (`#` wall, `.` free, `G` goal) followed by a blank
    /// line and `key = value` parameter lines.
    pub fn parse(text: &str) -> Result<Self, MazeParseError> {
        let mut map_lines: Vec<&str> = Vec::new();
        let mut rest_start = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if map_lines.is_empty() && line.trim().is_empty() {
                continue;
            }
            if line.trim().is_empty() {
                rest_start = Some(i + 1);
                break;
            }
            map_lines.push(line);
        }
        if map_lines.is_empty() {
            return Err(MazeParseError::Empty);
        }
        let rows = map_lines.len();
        let cols = map_lines[0].chars().count();
        for (r, line) in map_lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(MazeParseError::Ragged(r));
            }
        }
        if rows < 3 || cols < 3 {
            return Err(MazeParseError::TooSmall);
        }

        let mut walls = vec![false; rows * cols];
        let mut goal_cell: Option<(usize, usize)> = None;
        for (r, line) in map_lines.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls[r * cols + c] = true,
                    '.' => {}
                    'G' => {
                        if let Some(_) = goal_cell {
                            return Err(MazeParseError::MultipleGoals { row: r, col: c });
                        }
                        goal_cell = Some((r, c));
                    }
                    other => return Err(MazeParseError::BadChar { ch: other, row: r, col: c }),
                }
            }
        }
        let (gr, gc) = goal_cell.ok_or(MazeParseError::NoGoal)?;

        for r in 0..rows {
            for c in 0..cols {
                let border = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
                if border && !walls[r * cols + c] {
                    return Err(MazeParseError::UnwalledBorder { row: r, col: c });
                }
            }
        }

        // Defaults; the parameter block may override any of them.
        let mut name = String::from("maze");
        let mut cell_size = 1.0;
        let mut dt = 0.1;
        let mut damping = 0.9;
        let mut max_speed = 2.0;
        let mut goal_radius: Option<f64> = None;
        let mut goal_x: Option<f64> = None;
        let mut goal_y: Option<f64> = None;
        let mut steps_forward = 500usize;
        let mut steps_reset = 500usize;

        if let Some(start) = rest_start {
            for raw in text.lines().skip(start) {
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| MazeParseError::BadParam(line.to_string()))?;
                let key = key.trim();
                let value = value.trim();
                let parse_f64 = |v: &str| -> Result<f64, MazeParseError> {
                    v.parse::<f64>().map_err(|e| MazeParseError::BadValue {
                        key: key.to_string(),
                        msg: e.to_string(),
                    })
                };
                let parse_usize = |v: &str| -> Result<usize, MazeParseError> {
                    v.parse::<usize>().map_err(|e| MazeParseError::BadValue {
                        key: key.to_string(),
                        msg: e.to_string(),
                    })
                };
                match key {
                    "name" => name = value.to_string(),
                    "cell_size" => cell_size = parse_f64(value)?,
                    "dt" => dt = parse_f64(value)?,
                    "damping" => damping = parse_f64(value)?,
                    "max_speed" => max_speed = parse_f64(value)?,
                    "goal_radius" => goal_radius = Some(parse_f64(value)?),
                    "goal_x" => goal_x = Some(parse_f64(value)?),
                    "goal_y" => goal_y = Some(parse_f64(value)?),
                    "max_episode_steps_forward" => steps_forward = parse_usize(value)?,
                    "max_episode_steps_reset" => steps_reset = parse_usize(value)?,
                    other => return Err(MazeParseError::UnknownKey(other.to_string())),
                }
            }
        }

        let bad = |key: &str, msg: &str| MazeParseError::BadValue {
            key: key.to_string(),
            msg: msg.to_string(),
        };
        if !(dt > 0.0) {
            return Err(bad("dt", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&damping) {
            return Err(bad("damping", "must be in [0, 1]"));
        }
        if !(max_speed > 0.0) {
            return Err(bad("max_speed", "must be > 0"));
        }
        if !(cell_size > 0.0) {
            return Err(bad("cell_size", "must be > 0"));
        }
        let goal_radius = goal_radius.unwrap_or(0.5 * cell_size);
        if !(goal_radius > 0.0) {
            return Err(bad("goal_radius", "must be > 0"));
        }

        let center = [
            goal_x.unwrap_or((gc as f64 + 0.5) * cell_size),
            goal_y.unwrap_or((gr as f64 + 0.5) * cell_size),
        ];
        let spec = MazeSpec {
            name,
            rows,
            cols,
            walls,
            cell_size,
            goal: GoalRegion { center, radius: goal_radius },
            dt,
            max_speed,
            damping,
            max_episode_steps_forward: steps_forward,
            max_episode_steps_reset: steps_reset,
        };

        if !spec.is_free_position(center) {
            return Err(MazeParseError::GoalInWall { x: center[0], y: center[1] });
        }

        // Every free cell must reach the goal cell.
        let goal_cell_idx = spec.cell_index(center);
        let dist = spec.bfs_distances(goal_cell_idx);
        for r in 0..rows {
            for c in 0..cols {
                if !spec.walls[r * cols + c] && dist[r * cols + c].is_none() {
                    return Err(MazeParseError::Disconnected { row: r, col: c });
                }
            }
        }
        Ok(spec)
    }

    /// The three shipped maps, compiled in so runs do not depend on the
    /// working directory. Falls back to reading `name` as a file path.
    pub fn load(name: &str) -> Result<Self, MazeParseError> {
        match name {
            "1way" => Self::parse(BUILTIN_1WAY),
            "2way" => Self::parse(BUILTIN_2WAY),
            "4way" => Self::parse(BUILTIN_4WAY),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    MazeParseError::BadValue {
                        key: "maze".to_string(),
                        msg: format!("{path}: {e}"),
                    }
                })?;
                Self::parse(&text)
            }
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["1way", "2way", "4way"]
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn is_wall_cell(&self, row: usize, col: usize) -> bool {
        row >= self.rows || col >= self.cols || self.walls[row * self.cols + col]
    }

    fn cell_index(&self, pos: [f64; 2]) -> (usize, usize) {
        let c = (pos[0] / self.cell_size).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = (pos[1] / self.cell_size).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (r, c)
    }

    pub fn is_free_position(&self, pos: [f64; 2]) -> bool {
        if pos[0] <= 0.0 || pos[1] <= 0.0 || pos[0] >= self.width() || pos[1] >= self.height() {
            return false;
        }
        let (r, c) = self.cell_index(pos);
        !self.walls[r * self.cols + c]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.walls[r * self.cols + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Grid-shortest-path cell distances from `from` over free cells.
    pub fn bfs_distances(&self, from: (usize, usize)) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.rows * self.cols];
        if self.is_wall_cell(from.0, from.1) {
            return dist;
        }
        let mut q = VecDeque::new();
        dist[from.0 * self.cols + from.1] = Some(0);
        q.push_back(from);
        while let Some((r, c)) = q.pop_front() {
            let d = dist[r * self.cols + c].unwrap();
            let neighbors = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (nr, nc) in neighbors {
                if nr < self.rows && nc < self.cols && !self.walls[nr * self.cols + nc] {
                    let slot = &mut dist[nr * self.cols + nc];
                    if slot.is_none() {
                        *slot = Some(d + 1);
                        q.push_back((nr, nc));
                    }
                }
            }
        }
        dist
    }

    /// The free cell with maximum grid distance to the goal; ties break to
    /// the lowest row, then lowest column. Used as the fixed start position
    /// for agents trained from a single designated state.
    pub fn farthest_cell_from_goal(&self) -> (usize, usize) {
        let goal_cell = self.cell_index(self.goal.center);
        let dist = self.bfs_distances(goal_cell);
        let mut best = goal_cell;
        let mut best_d = 0u32;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(d) = dist[r * self.cols + c] {
                    if d > best_d {
                        best_d = d;
                        best = (r, c);
                    }
                }
            }
        }
        best
    }

    /// One integration step: `v' = damping·v + a·dt` (clamped componentwise),
    /// `p' = p + v'·dt` with per-axis wall collision; the blocked axis is
    /// clamped at the wall face and its velocity zeroed. Reward is the sparse
    /// goal indicator on the next position.
    pub fn step(&self, state: &EnvState, action: &EnvAction) -> (EnvState, f64, bool) {
        let ms = self.max_speed;
        let mut vel = [0.0; 2];
        for k in 0..2 {
            let a = action.accel[k].clamp(-1.0, 1.0);
            vel[k] = (self.damping * state.vel[k] + a * self.dt).clamp(-ms, ms);
        }
        let mut pos = state.pos;
        // X axis first, then Y against the updated column.
        let (nx, hit_x) = self.slide_axis(pos, 0, vel[0] * self.dt);
        pos[0] = nx;
        if hit_x {
            vel[0] = 0.0;
        }
        let (ny, hit_y) = self.slide_axis(pos, 1, vel[1] * self.dt);
        pos[1] = ny;
        if hit_y {
            vel[1] = 0.0;
        }
        let next = EnvState { pos, vel };
        let reached = self.goal.contains(pos);
        (next, if reached { 1.0 } else { 0.0 }, reached)
    }

    /// Moves coordinate `axis` by `delta`, stopping at the first wall-cell
    /// boundary crossed. Returns the new coordinate and whether a wall was hit.
    fn slide_axis(&self, pos: [f64; 2], axis: usize, delta: f64) -> (f64, bool) {
        if delta == 0.0 {
            return (pos[axis], false);
        }
        let cs = self.cell_size;
        let mut cur = pos[axis];
        let target = cur + delta;
        let dir = delta.signum();
        loop {
            let cell = (cur / cs).floor();
            let boundary = if dir > 0.0 { (cell + 1.0) * cs } else { cell * cs };
            let crosses = if dir > 0.0 { target > boundary } else { target < boundary };
            if !crosses {
                return (target, false);
            }
            // Probe the cell just past the boundary.
            let mut probe = pos;
            probe[axis] = boundary + dir * (cs * 0.5);
            let (r, c) = self.cell_index(probe);
            if self.walls[r * self.cols + c] {
                return (boundary - dir * WALL_EPS, true);
            }
            cur = boundary + dir * WALL_EPS;
        }
    }

    /// Uniform sample over free space (rejection over the bounding box),
    /// velocity zero.
    pub fn sample_uniform_valid<R: Rng>(&self, rng: &mut R) -> EnvState {
        loop {
            let x = rng.gen_range(0.0..self.width());
            let y = rng.gen_range(0.0..self.height());
            // Discard exact-boundary draws so positions stay strictly inside
            // a free cell.
            if (x / self.cell_size).fract() == 0.0 || (y / self.cell_size).fract() == 0.0 {
                continue;
            }
            if self.is_free_position([x, y]) {
                return EnvState::at_rest([x, y]);
            }
        }
    }

    /// Affine map of the state into the unit box: position over the bounding
    /// box, velocity via `(v + max_speed) / (2·max_speed)`.
    pub fn normalize_state(&self, state: &EnvState) -> [f64; STATE_DIM] {
        [
            state.pos[0] / self.width(),
            state.pos[1] / self.height(),
            (state.vel[0] + self.max_speed) / (2.0 * self.max_speed),
            (state.vel[1] + self.max_speed) / (2.0 * self.max_speed),
        ]
    }

    pub fn denormalize_state(&self, u: &[f64; STATE_DIM]) -> EnvState {
        EnvState {
            pos: [u[0] * self.width(), u[1] * self.height()],
            vel: [
                u[2] * 2.0 * self.max_speed - self.max_speed,
                u[3] * 2.0 * self.max_speed - self.max_speed,
            ],
        }
    }

    pub fn normalized_goal_center(&self) -> [f64; 2] {
        [
            self.goal.center[0] / self.width(),
            self.goal.center[1] / self.height(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TINY: &str = "###\n#G#\n###\n";

    const UWAY: &str = "\
#########
#G......#
#######.#
#.......#
#########

name = uway
";

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent connectivity oracle: count components over free cells.
    fn component_count(spec: &MazeSpec) -> usize {
        let mut seen = vec![false; spec.rows * spec.cols];
        let mut comps = 0;
        for start_r in 0..spec.rows {
            for start_c in 0..spec.cols {
                let idx = start_r * spec.cols + start_c;
                if spec.walls[idx] || seen[idx] {
                    continue;
                }
                comps += 1;
                let mut stack = vec![(start_r, start_c)];
                seen[idx] = true;
                while let Some((r, c)) = stack.pop() {
                    for (nr, nc) in [(r + 1, c), (r.wrapping_sub(1), c), (r, c + 1), (r, c.wrapping_sub(1))] {
                        if nr < spec.rows && nc < spec.cols {
                            let ni = nr * spec.cols + nc;
                            if !spec.walls[ni] && !seen[ni] {
                                seen[ni] = true;
                                stack.push((nr, nc));
                            }
                        }
                    }
                }
            }
        }
        comps
    }

    #[test]
    fn smallest_legal_maze_parses() {
        let spec = MazeSpec::parse(TINY).unwrap();
        assert_eq!(spec.free_cells(), vec![(1, 1)]);
        assert_eq!(spec.goal.center, [1.5, 1.5]);
    }

    #[test]
    fn u_corridor_is_one_component() {
        let spec = MazeSpec::parse(UWAY).unwrap();
        assert_eq!(component_count(&spec), 1);
        assert_eq!(spec.name, "uway");
    }

    #[test]
    fn goal_in_wall_is_rejected() {
        let text = "###\n#G#\n###\n\ngoal_x = 0.5\ngoal_y = 0.5\n";
        let err = MazeSpec::parse(text).unwrap_err();
        assert!(err.to_string().contains("goal in wall"), "{err}");
    }

    #[test]
    fn zero_or_multiple_goals_rejected() {
        assert!(matches!(MazeSpec::parse("###\n#.#\n###\n"), Err(MazeParseError::NoGoal)));
        let err = MazeSpec::parse("####\n#GG#\n####\n").unwrap_err();
        assert!(matches!(err, MazeParseError::MultipleGoals { row: 1, col: 2 }));
    }

    #[test]
    fn unwalled_border_rejected() {
        let err = MazeSpec::parse("###\n#G.\n###\n").unwrap_err();
        assert!(matches!(err, MazeParseError::UnwalledBorder { row: 1, col: 2 }));
    }

    #[test]
    fn disconnected_free_space_rejected() {
        let text = "#####\n#G#.#\n#####\n";
        let err = MazeSpec::parse(text).unwrap_err();
        assert!(matches!(err, MazeParseError::Disconnected { row: 1, col: 3 }));
    }

    #[test]
    fn rest_state_with_zero_action_is_fixed_point() {
        let spec = MazeSpec::parse(UWAY).unwrap();
        let s = EnvState::at_rest([3.5, 3.5]);
        let (next, r, reached) = spec.step(&s, &EnvAction::new(0.0, 0.0));
        assert_eq!(next, s);
        assert_eq!(r, 0.0);
        assert!(!reached);
    }

    #[test]
    fn wall_push_clamps_normal_axis_and_keeps_tangential() {
        let spec = MazeSpec::parse(UWAY).unwrap();
        // Near the top wall of the lower corridor (wall face at y = 3.0).
        let s = EnvState {
            pos: [2.5, 3.05],
            vel: [0.5, -1.0],
        };
        let a = EnvAction::new(0.0, -1.0);
        let (next, _, _) = spec.step(&s, &a);
        // Independent oracle: where would each axis land without walls?
        let vy = (0.9_f64 * -1.0 + -1.0 * 0.1).clamp(-2.0, 2.0);
        let vx = (0.9_f64 * 0.5).clamp(-2.0, 2.0);
        let free_y = 3.05 + vy * 0.1;
        assert!(free_y < 3.0, "test setup must actually cross the face");
        assert!((next.pos[1] - 3.0).abs() <= 1e-8, "clamped at face, got {}", next.pos[1]);
        assert!(next.pos[1] > 3.0, "strictly inside free space");
        assert_eq!(next.vel[1], 0.0, "normal velocity zeroed");
        assert!((next.pos[0] - (2.5 + vx * 0.1)).abs() < 1e-12, "tangential motion preserved");
        assert!((next.vel[0] - vx).abs() < 1e-12);
    }

    #[test]
    fn one_euler_step_into_goal_rewards() {
        let spec = MazeSpec::parse(UWAY).unwrap();
        // Hand-integrated: v' = 0.9·(-1,0) + (0,0)·0.1 = (-0.9, 0);
        // p' = (2.0, 1.5) + (-0.09, 0) = (1.91, 1.5); |p' - (1.5,1.5)| = 0.41 ≤ 0.5.
        let s = EnvState {
            pos: [2.0, 1.5],
            vel: [-1.0, 0.0],
        };
        let (next, r, reached) = spec.step(&s, &EnvAction::new(0.0, 0.0));
        assert!((next.pos[0] - 1.91).abs() < 1e-12);
        assert_eq!(r, 1.0);
        assert!(reached);
    }

    #[test]
    fn reward_iff_within_goal_radius() {
        let spec = MazeSpec::parse(UWAY).unwrap();
        let mut r = rng(3);
        for _ in 0..2000 {
            let s = spec.sample_uniform_valid(&mut r);
            let a = EnvAction::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let (next, reward, reached) = spec.step(&s, &a);
            let inside = spec.goal.contains(next.pos);
            assert_eq!(reward == 1.0, inside);
            assert_eq!(reached, inside);
        }
    }

    #[test]
    fn single_free_cell_sampling_stays_inside() {
        let spec = MazeSpec::parse(TINY).unwrap();
        let mut r = rng(1);
        for _ in 0..100 {
            let s = spec.sample_uniform_valid(&mut r);
            assert!(s.pos[0] > 1.0 && s.pos[0] < 2.0);
            assert!(s.pos[1] > 1.0 && s.pos[1] < 2.0);
            assert_eq!(s.vel, [0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_sampling_counts_within_three_sigma() {
        let spec = MazeSpec::load("2way").unwrap();
        let free = spec.free_cells();
        let n = 10_000usize;
        let p = 1.0 / free.len() as f64;
        let mut counts = vec![0usize; free.len()];
        let mut r = rng(42);
        for _ in 0..n {
            let s = spec.sample_uniform_valid(&mut r);
            let cell = (
                (s.pos[1] / spec.cell_size).floor() as usize,
                (s.pos[0] / spec.cell_size).floor() as usize,
            );
            let idx = free.iter().position(|&c| c == cell).expect("sample in free cell");
            counts[idx] += 1;
        }
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "cell {:?}: count {} vs mean {:.1} (3σ = {:.1})",
                free[i],
                c,
                mean,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_samples() {
        let spec = MazeSpec::load("1way").unwrap();
        let seq = |seed| {
            let mut r = rng(seed);
            (0..50).map(|_| spec.sample_uniform_valid(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let spec = MazeSpec::parse(TINY).unwrap();
        let lo = spec.normalize_state(&EnvState {
            pos: [0.0, 0.0],
            vel: [-2.0, -2.0],
        });
        assert_eq!(lo, [0.0, 0.0, 0.0, 0.0]);
        let hi = spec.normalize_state(&EnvState {
            pos: [3.0, 3.0],
            vel: [2.0, 2.0],
        });
        assert_eq!(hi, [1.0, 1.0, 1.0, 1.0]);
        let mid = spec.normalize_state(&EnvState {
            pos: [1.5, 1.5],
            vel: [0.0, 0.0],
        });
        assert_eq!(mid, [0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn normalize_round_trip_under_1e9() {
        let spec = MazeSpec::load("2way").unwrap();
        let mut r = rng(5);
        for _ in 0..1000 {
            let s = EnvState {
                pos: [r.gen_range(0.0..spec.width()), r.gen_range(0.0..spec.height())],
                vel: [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
            };
            let back = spec.denormalize_state(&spec.normalize_state(&s));
            assert!((back.pos[0] - s.pos[0]).abs() < 1e-9);
            assert!((back.pos[1] - s.pos[1]).abs() < 1e-9);
            assert!((back.vel[0] - s.vel[0]).abs() < 1e-9);
            assert!((back.vel[1] - s.vel[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn random_walk_never_penetrates_walls() {
        for name in MazeSpec::builtin_names() {
            let spec = MazeSpec::load(name).unwrap();
            let mut r = rng(7);
            let mut s = spec.sample_uniform_valid(&mut r);
            for i in 0..100_000 {
                let a = EnvAction::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
                let (next, _, _) = spec.step(&s, &a);
                assert!(
                    spec.is_free_position(next.pos),
                    "{name}: step {i} entered wall at {:?}",
                    next.pos
                );
                assert!(next.vel[0].abs() <= spec.max_speed && next.vel[1].abs() <= spec.max_speed);
                s = next;
            }
        }
    }

    #[test]
    fn step_is_pure_and_byte_identical() {
        let spec = MazeSpec::load("4way").unwrap();
        let mut r = rng(11);
        for _ in 0..200 {
            let s = spec.sample_uniform_valid(&mut r);
            let a = EnvAction::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let (n1, r1, g1) = spec.step(&s, &a);
            let (n2, r2, g2) = spec.step(&s, &a);
            assert_eq!(n1.pos[0].to_bits(), n2.pos[0].to_bits());
            assert_eq!(n1.pos[1].to_bits(), n2.pos[1].to_bits());
            assert_eq!(n1.vel[0].to_bits(), n2.vel[0].to_bits());
            assert_eq!(n1.vel[1].to_bits(), n2.vel[1].to_bits());
            assert_eq!(r1.to_bits(), r2.to_bits());
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn farthest_cell_matches_hand_bfs() {
        let spec = MazeSpec::load("1way").unwrap();
        assert_eq!(spec.farthest_cell_from_goal(), (3, 1));
        // 4way arms tie at the same distance; lowest row wins.
        let spec4 = MazeSpec::load("4way").unwrap();
        assert_eq!(spec4.farthest_cell_from_goal(), (1, 4));
    }

    #[test]
    fn builtin_mazes_parse_and_validate() {
        for name in MazeSpec::builtin_names() {
            let spec = MazeSpec::load(name).unwrap();
            assert_eq!(component_count(&spec), 1, "{name}");
            assert!(spec.is_free_position(spec.goal.center), "{name}");
        }
    }
}
