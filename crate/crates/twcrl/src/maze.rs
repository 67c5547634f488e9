//! Continuous point-mass maze environments with absorbing goal and trap discs.
//!
//! Mazes are described by ASCII maps (`#` wall, `.` free, `S` start, `G` goal
//! candidate, `X` trap). A cell spans one `cell_size` square of world space;
//! actions are displacements scaled by [`STEP_SCALE`], resolved against walls
//! by axis-separated clipping. Entering the goal disc or a trap disc freezes
//! the agent in place for the rest of the episode; episodes always run to the
//! horizon, so failed episodes end in a trap or a timeout state and successful
//! ones end absorbed at the goal.
//!
//! The observation is `(x, y, gx, gy)`: agent position plus the goal sampled
//! at reset.

use crate::error::{Error, Result};
use crate::mdp::{ClassificationRule, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// World-units moved per unit action component.
pub const STEP_SCALE: f64 = 0.2;
/// Inset kept from wall faces so positions stay strictly inside free cells.
const WALL_EPS: f64 = 1e-9;
/// Start-position jitter, in cells.
const START_JITTER: f64 = 0.1;
/// Goal-position jitter inside its cell, in cells.
const GOAL_JITTER: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Free,
    Start,
    GoalCandidate,
    Trap,
}

/// Which cells the per-episode goal may be sampled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GoalMode {
    /// The designated goal cell (first `G` in row-major order).
    #[default]
    One,
    /// Uniform over the first three `G` cells.
    Three,
    /// Uniform over every free cell that is neither the start nor a trap.
    Any,
}

/// Parsed maze description.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeSpec {
    grid: Vec<Vec<Cell>>,
    pub cell_size: f64,
    pub goal_radius: f64,
    pub trap_radius: f64,
    pub horizon: u32,
    pub goal_mode: GoalMode,
    start: (usize, usize),
    goal_cells: Vec<(usize, usize)>,
    trap_cells: Vec<(usize, usize)>,
}

/// Parse an ASCII map. Defaults: cell size 1, disc radii 0.45, horizon 300,
/// goal mode [`GoalMode::One`].
pub fn parse_map(text: &str) -> Result<MazeSpec> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < 3 {
        return Err(Error::MapGlobal("map needs at least three rows".into()));
    }
    let width = lines[0].chars().count();
    let mut grid = Vec::new();
    let mut start = None;
    let mut goal_cells = Vec::new();
    let mut trap_cells = Vec::new();
    for (r, line) in lines.iter().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        if chars.len() != width {
            return Err(Error::Map { row: r, col: chars.len(), msg: "ragged row".into() });
        }
        let mut row = Vec::with_capacity(width);
        for (c, ch) in chars.iter().enumerate() {
            let cell = match ch {
                '#' => Cell::Wall,
                '.' => Cell::Free,
                'S' => {
                    if start.replace((r, c)).is_some() {
                        return Err(Error::Map { row: r, col: c, msg: "multiple start cells".into() });
                    }
                    Cell::Start
                }
                'G' => {
                    goal_cells.push((r, c));
                    Cell::GoalCandidate
                }
                'X' => {
                    trap_cells.push((r, c));
                    Cell::Trap
                }
                other => {
                    return Err(Error::Map {
                        row: r,
                        col: c,
                        msg: format!("unknown character {other:?}"),
                    })
                }
            };
            row.push(cell);
        }
        grid.push(row);
    }
    let rows = grid.len();
    for c in 0..width {
        if grid[0][c] != Cell::Wall || grid[rows - 1][c] != Cell::Wall {
            return Err(Error::Map { row: 0, col: c, msg: "boundary must be wall".into() });
        }
    }
    for (r, row) in grid.iter().enumerate() {
        if row[0] != Cell::Wall || row[width - 1] != Cell::Wall {
            return Err(Error::Map { row: r, col: 0, msg: "boundary must be wall".into() });
        }
    }
    let Some(start) = start else {
        return Err(Error::MapGlobal("map has no start cell".into()));
    };
    if goal_cells.is_empty() {
        return Err(Error::MapGlobal("map has no goal candidate cell".into()));
    }
    Ok(MazeSpec {
        grid,
        cell_size: 1.0,
        goal_radius: 0.45,
        trap_radius: 0.45,
        horizon: 300,
        goal_mode: GoalMode::One,
        start,
        goal_cells,
        trap_cells,
    })
}

impl MazeSpec {
    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.grid[0].len()
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.grid[r][c]
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal_cells(&self) -> &[(usize, usize)] {
        &self.goal_cells
    }

    pub fn trap_cells(&self) -> &[(usize, usize)] {
        &self.trap_cells
    }

    pub fn cell_center(&self, cell: (usize, usize)) -> (f64, f64) {
        ((cell.1 as f64 + 0.5) * self.cell_size, (cell.0 as f64 + 0.5) * self.cell_size)
    }

    pub fn world_width(&self) -> f64 {
        self.cols() as f64 * self.cell_size
    }

    pub fn world_height(&self) -> f64 {
        self.rows() as f64 * self.cell_size
    }

    pub fn with_goal_mode(mut self, mode: GoalMode) -> Result<Self> {
        if mode == GoalMode::Three && self.goal_cells.len() < 3 {
            return Err(Error::MapGlobal(format!(
                "goal mode 'three' needs 3 goal candidate cells, map has {}",
                self.goal_cells.len()
            )));
        }
        self.goal_mode = mode;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: u32) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidHorizon("horizon must be >= 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    fn cell_at(&self, x: f64, y: f64) -> Cell {
        let c = (x / self.cell_size).floor() as isize;
        let r = (y / self.cell_size).floor() as isize;
        if r < 0 || c < 0 || r as usize >= self.rows() || c as usize >= self.cols() {
            return Cell::Wall;
        }
        self.grid[r as usize][c as usize]
    }

    fn is_wall(&self, x: f64, y: f64) -> bool {
        self.cell_at(x, y) == Cell::Wall
    }

    /// Cells eligible for goal sampling in [`GoalMode::Any`].
    fn any_mode_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if matches!(self.grid[r][c], Cell::Free | Cell::GoalCandidate) {
                    cells.push((r, c));
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frozen {
    Mobile,
    AtGoal,
    InTrap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeState {
    pub position: (f64, f64),
    pub goal: (f64, f64),
    pub frozen: Frozen,
}

/// A running episode. The spec is immutable and shareable; the environment
/// itself is single-owner mutable state.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    spec: MazeSpec,
    state: MazeState,
    t: u32,
}

/// Success predicate over observations: agent within the goal disc.
pub fn goal_reached(obs: &[f64], goal_radius: f64) -> bool {
    let dx = obs[0] - obs[2];
    let dy = obs[1] - obs[3];
    (dx * dx + dy * dy).sqrt() <= goal_radius
}

impl MazeEnv {
    pub fn new(spec: MazeSpec) -> Result<Self> {
        if STEP_SCALE > spec.cell_size {
            return Err(Error::Config("cell size must be at least one step".into()));
        }
        if spec.goal_mode == GoalMode::Three && spec.goal_cells.len() < 3 {
            return Err(Error::MapGlobal("goal mode 'three' needs 3 goal candidate cells".into()));
        }
        let center = spec.cell_center(spec.start);
        let goal = spec.cell_center(spec.goal_cells[0]);
        let state = MazeState { position: center, goal, frozen: Frozen::Mobile };
        Ok(Self { spec, state, t: 0 })
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn state(&self) -> &MazeState {
        &self.state
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.state.position.0, self.state.position.1, self.state.goal.0, self.state.goal.1]
    }

    pub fn obs_dim() -> usize {
        4
    }

    pub fn action_dim() -> usize {
        2
    }

    /// Start a new episode: agent at the start-cell center plus small jitter,
    /// goal sampled per the spec's goal mode. Deterministic given the RNG.
    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> Vec<f64> {
        let s = self.spec.cell_size;
        let (cx, cy) = self.spec.cell_center(self.spec.start);
        let position = (
            cx + rng.gen_range(-START_JITTER..=START_JITTER) * s,
            cy + rng.gen_range(-START_JITTER..=START_JITTER) * s,
        );
        let goal_cell = match self.spec.goal_mode {
            GoalMode::One => self.spec.goal_cells[0],
            GoalMode::Three => self.spec.goal_cells[rng.gen_range(0..3)],
            GoalMode::Any => {
                let cells = self.spec.any_mode_cells();
                cells[rng.gen_range(0..cells.len())]
            }
        };
        let (gx, gy) = self.spec.cell_center(goal_cell);
        let goal = (
            gx + rng.gen_range(-GOAL_JITTER..=GOAL_JITTER) * s,
            gy + rng.gen_range(-GOAL_JITTER..=GOAL_JITTER) * s,
        );
        self.state = MazeState { position, goal, frozen: Frozen::Mobile };
        self.t = 0;
        self.observation()
    }

    /// Advance one step. Returns `(observation, env_reward, truncated)`;
    /// the reward is +1 whenever the agent sits in the goal disc.
    pub fn step(&mut self, action: [f64; 2]) -> (Vec<f64>, f64, bool) {
        if self.state.frozen == Frozen::Mobile {
            let scale = STEP_SCALE * self.spec.cell_size;
            let dx = action[0].clamp(-1.0, 1.0) * scale;
            let dy = action[1].clamp(-1.0, 1.0) * scale;
            let (x0, y0) = self.state.position;
            let x1 = self.move_axis(x0, dx, y0, true);
            let y1 = self.move_axis(y0, dy, x1, false);
            self.state.position = (x1, y1);
            let (gx, gy) = self.state.goal;
            if dist(x1, y1, gx, gy) <= self.spec.goal_radius {
                self.state.frozen = Frozen::AtGoal;
            } else {
                for &trap in &self.spec.trap_cells {
                    let (tx, ty) = self.spec.cell_center(trap);
                    if dist(x1, y1, tx, ty) <= self.spec.trap_radius {
                        self.state.frozen = Frozen::InTrap;
                        break;
                    }
                }
            }
        }
        self.t += 1;
        let reward = if self.state.frozen == Frozen::AtGoal { 1.0 } else { 0.0 };
        (self.observation(), reward, self.t >= self.spec.horizon)
    }

    /// Move along one axis, clipping at the first wall face. A step never
    /// spans more than one cell, so a single boundary check suffices.
    fn move_axis(&self, from: f64, delta: f64, other: f64, horizontal: bool) -> f64 {
        if delta == 0.0 {
            return from;
        }
        let target = from + delta;
        let blocked = if horizontal {
            self.spec.is_wall(target, other)
        } else {
            self.spec.is_wall(other, target)
        };
        if !blocked {
            return target;
        }
        let s = self.spec.cell_size;
        if delta > 0.0 {
            (target / s).floor() * s - WALL_EPS
        } else {
            (target / s).floor() * s + s + WALL_EPS
        }
    }
}

fn dist(x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let dx = x0 - x1;
    let dy = y0 - y1;
    (dx * dx + dy * dy).sqrt()
}

/// Greedy waypoint follower used to synthesize expert demonstrations.
///
/// Steers toward each waypoint center in turn with a clipped proportional
/// controller; the final leg targets the episode's actual goal position. The
/// last waypoint must be a goal-candidate cell and no waypoint may be a wall
/// or trap cell. Fails with `ExpertStuck` if the horizon passes without goal
/// absorption.
pub fn scripted_expert(
    spec: &MazeSpec,
    seed: u64,
    waypoints: &[(usize, usize)],
) -> Result<Trajectory> {
    if waypoints.is_empty() {
        return Err(Error::Validation("waypoint path is empty".into()));
    }
    for &(r, c) in waypoints {
        if r >= spec.rows() || c >= spec.cols() {
            return Err(Error::Validation(format!("waypoint ({r},{c}) outside the map")));
        }
        match spec.cell(r, c) {
            Cell::Wall => {
                return Err(Error::Validation(format!("waypoint ({r},{c}) is a wall cell")))
            }
            Cell::Trap => {
                return Err(Error::Validation(format!("waypoint ({r},{c}) is a trap cell")))
            }
            _ => {}
        }
    }
    let last = *waypoints.last().unwrap();
    if !spec.goal_cells.contains(&last) {
        return Err(Error::Validation(format!(
            "last waypoint ({},{}) is not a goal candidate cell",
            last.0, last.1
        )));
    }

    let mut env = MazeEnv::new(spec.clone())?;
    let mut rng = crate::rng::stream(seed, "expert", 0);
    let mut states = vec![env.reset(&mut rng)];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();

    // Intermediate targets are waypoint centers; the last leg homes on the goal.
    let mut targets: Vec<(f64, f64)> =
        waypoints[..waypoints.len() - 1].iter().map(|&wp| spec.cell_center(wp)).collect();
    targets.push(env.state().goal);
    let mut leg = 0usize;
    let switch_radius = 0.2 * spec.cell_size;

    loop {
        let action = if env.state().frozen != Frozen::Mobile {
            [0.0, 0.0]
        } else {
            let (x, y) = env.state().position;
            while leg + 1 < targets.len()
                && dist(x, y, targets[leg].0, targets[leg].1) <= switch_radius
            {
                leg += 1;
            }
            let (tx, ty) = targets[leg];
            let scale = STEP_SCALE * spec.cell_size;
            [((tx - x) / scale).clamp(-1.0, 1.0), ((ty - y) / scale).clamp(-1.0, 1.0)]
        };
        let (obs, reward, truncated) = env.step(action);
        states.push(obs);
        actions.push(action.to_vec());
        rewards.push(reward);
        if truncated {
            break;
        }
    }
    if env.state().frozen != Frozen::AtGoal {
        return Err(Error::ExpertStuck(format!(
            "goal not reached within horizon {}",
            spec.horizon
        )));
    }
    let radius = spec.goal_radius;
    let pred = move |s: &[f64]| goal_reached(s, radius);
    let rule = ClassificationRule::TerminalGoal(&pred);
    Trajectory::from_steps(states, actions, rewards, spec.horizon, &rule)
}

/// Evaluate `scorer` on a `resolution x resolution` lattice of world points.
/// Wall points are emitted as NaN; the observation passed to the scorer is
/// `(x, y, gx, gy)` with the provided goal.
pub fn reward_heatmap<F: Fn(&[f64]) -> f64>(
    spec: &MazeSpec,
    scorer: F,
    resolution: u32,
    goal: (f64, f64),
) -> Result<Vec<Vec<f64>>> {
    if resolution < 8 {
        return Err(Error::OutOfRange(format!("resolution must be >= 8, got {resolution}")));
    }
    let (w, h) = (spec.world_width(), spec.world_height());
    let mut grid = Vec::with_capacity(resolution as usize);
    for i in 0..resolution {
        let y = (i as f64 + 0.5) * h / resolution as f64;
        let mut row = Vec::with_capacity(resolution as usize);
        for j in 0..resolution {
            let x = (j as f64 + 0.5) * w / resolution as f64;
            if spec.is_wall(x, y) {
                row.push(f64::NAN);
            } else {
                row.push(scorer(&[x, y, goal.0, goal.1]));
            }
        }
        grid.push(row);
    }
    Ok(grid)
}

/// Row-major CSV; walls are written as `NaN`.
pub fn write_heatmap_csv<W: Write>(grid: &[Vec<f64>], mut out: W) -> Result<()> {
    for row in grid {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// 8-bit binary PGM, linearly min-max scaled; walls are black.
pub fn write_heatmap_pgm<W: Write>(grid: &[Vec<f64>], mut out: W) -> Result<()> {
    let height = grid.len();
    let width = grid.first().map_or(0, Vec::len);
    let finite: Vec<f64> = grid.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    write!(out, "P5\n{width} {height}\n255\n")?;
    let mut bytes = Vec::with_capacity(width * height);
    for row in grid {
        for &v in row {
            let px = if !v.is_finite() {
                0u8
            } else if max > min {
                (1.0 + (v - min) / (max - min) * 254.0).round() as u8
            } else {
                255u8
            };
            bytes.push(px);
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Built-in maze layouts shipped with the crate.
pub fn builtin_map(name: &str) -> Option<&'static str> {
    match name {
        "umaze" => Some(include_str!("../data/umaze.map")),
        "trapmaze1" => Some(include_str!("../data/trapmaze1.map")),
        "trapmaze2" => Some(include_str!("../data/trapmaze2.map")),
        _ => None,
    }
}

/// Demonstration waypoint routes for the built-in maps (the long main path;
/// the trapmaze shortcut gap is deliberately not part of any route).
pub fn builtin_waypoints(name: &str) -> Option<Vec<(usize, usize)>> {
    match name {
        "umaze" => Some(vec![(1, 3), (3, 3), (3, 1)]),
        "trapmaze1" | "trapmaze2" => Some(vec![(1, 7), (3, 7), (3, 1)]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Outcome;
    use crate::rng::stream;

    fn umaze() -> MazeSpec {
        parse_map(builtin_map("umaze").unwrap()).unwrap()
    }

    fn trapmaze1() -> MazeSpec {
        parse_map(builtin_map("trapmaze1").unwrap()).unwrap()
    }

    #[test]
    fn parses_builtin_maps() {
        let spec = umaze();
        assert_eq!((spec.rows(), spec.cols()), (5, 5));
        assert_eq!(spec.start_cell(), (1, 1));
        assert_eq!(spec.goal_cells(), &[(3, 1), (3, 2), (3, 3)]);
        assert!(spec.trap_cells().is_empty());

        let spec = trapmaze1();
        assert_eq!((spec.rows(), spec.cols()), (5, 9));
        assert_eq!(spec.trap_cells(), &[(2, 3), (2, 5)]);
        let v2 = parse_map(builtin_map("trapmaze2").unwrap()).unwrap();
        assert_eq!(v2.cell(2, 1), Cell::Wall); // the shortcut gap is closed
        assert_eq!(trapmaze1().cell(2, 1), Cell::Free);
    }

    #[test]
    fn map_errors_carry_positions() {
        assert!(matches!(parse_map("###\n#S#\n###"), Err(Error::MapGlobal(_)))); // no goal
        assert!(matches!(parse_map("###\n#G#\n###"), Err(Error::MapGlobal(_)))); // no start
        match parse_map("####\n#SG#\n#Q.#\n####") {
            Err(Error::Map { row: 2, col: 1, .. }) => {}
            other => panic!("expected position error, got {other:?}"),
        }
        match parse_map("####\n#SG\n####") {
            Err(Error::Map { row: 1, .. }) => {}
            other => panic!("expected ragged-row error, got {other:?}"),
        }
        // All-wall maps have no start.
        assert!(parse_map("###\n###\n###").is_err());
    }

    #[test]
    fn reset_is_deterministic_and_jittered() {
        let mut env = MazeEnv::new(umaze()).unwrap();
        let a = env.reset(&mut stream(3, "env", 0));
        let b = env.reset(&mut stream(3, "env", 0));
        assert_eq!(a, b);
        let c = env.reset(&mut stream(4, "env", 0));
        assert_ne!(a, c);
    }

    #[test]
    fn one_mode_fixes_the_cell_but_not_the_position() {
        let spec = umaze();
        let mut env = MazeEnv::new(spec.clone()).unwrap();
        let mut positions = Vec::new();
        for seed in 0..20 {
            env.reset(&mut stream(seed, "env", 0));
            let (gx, gy) = env.state().goal;
            let cell = ((gy / spec.cell_size) as usize, (gx / spec.cell_size) as usize);
            assert_eq!(cell, (3, 1));
            positions.push((gx, gy));
        }
        positions.dedup();
        assert!(positions.len() > 10, "goal position should vary per episode");
    }

    #[test]
    fn any_mode_avoids_start_and_traps() {
        let spec = trapmaze1().with_goal_mode(GoalMode::Any).unwrap();
        let mut env = MazeEnv::new(spec.clone()).unwrap();
        for seed in 0..1000 {
            env.reset(&mut stream(seed, "env", 1));
            let (gx, gy) = env.state().goal;
            let cell = ((gy / spec.cell_size) as usize, (gx / spec.cell_size) as usize);
            assert_ne!(spec.cell(cell.0, cell.1), Cell::Wall);
            assert_ne!(spec.cell(cell.0, cell.1), Cell::Trap);
            assert_ne!(cell, spec.start_cell());
        }
    }

    #[test]
    fn three_mode_needs_three_candidates() {
        let spec = parse_map("#####\n#S.G#\n#####").unwrap();
        assert!(spec.with_goal_mode(GoalMode::Three).is_err());
    }

    #[test]
    fn walls_block_movement() {
        let mut env = MazeEnv::new(umaze()).unwrap();
        env.reset(&mut stream(0, "env", 0));
        // Push left into the outer wall for a while.
        for _ in 0..20 {
            env.step([-1.0, 0.0]);
        }
        let (x, _) = env.state().position;
        assert!(x >= 1.0, "agent passed through a wall: x = {x}");
        assert!((x - 1.0) < 1e-6, "agent should be pinned at the wall face");
    }

    #[test]
    fn wall_safety_fuzz() {
        let spec = trapmaze1();
        let mut env = MazeEnv::new(spec.clone()).unwrap();
        let mut rng = stream(12, "fuzz", 0);
        let mut steps = 0u64;
        while steps < 1_000_000 {
            env.reset(&mut rng);
            for _ in 0..spec.horizon {
                let action = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
                env.step(action);
                steps += 1;
                let (x, y) = env.state().position;
                let r = (y / spec.cell_size).floor() as usize;
                let c = (x / spec.cell_size).floor() as usize;
                assert_ne!(spec.cell(r, c), Cell::Wall, "inside wall at ({x}, {y})");
                if steps >= 1_000_000 {
                    break;
                }
            }
        }
    }

    #[test]
    fn absorption_is_permanent() {
        let spec = trapmaze1();
        let mut env = MazeEnv::new(spec).unwrap();
        let mut rng = stream(9, "absorb", 0);
        let mut absorbed_seen = 0;
        for seed in 0..200u64 {
            env.reset(&mut stream(seed, "absorb-ep", 0));
            let mut frozen_pos = None;
            for _ in 0..300 {
                let action = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
                let (_, reward, _) = env.step(action);
                match env.state().frozen {
                    Frozen::Mobile => assert_eq!(reward, 0.0),
                    Frozen::AtGoal => {
                        assert_eq!(reward, 1.0);
                        let p = env.state().position;
                        if let Some(fp) = frozen_pos {
                            assert_eq!(fp, p, "absorbed position moved");
                        }
                        frozen_pos = Some(p);
                    }
                    Frozen::InTrap => {
                        assert_eq!(reward, 0.0);
                        let p = env.state().position;
                        if let Some(fp) = frozen_pos {
                            assert_eq!(fp, p, "trapped position moved");
                        }
                        frozen_pos = Some(p);
                    }
                }
            }
            if frozen_pos.is_some() {
                absorbed_seen += 1;
            }
        }
        assert!(absorbed_seen > 0, "random walk never absorbed; traps unreachable?");
    }

    #[test]
    fn goal_sitting_accumulates_reward() {
        // Drive straight to the goal with the expert, then count rewards.
        let spec = umaze();
        let traj = scripted_expert(&spec, 5, &builtin_waypoints("umaze").unwrap()).unwrap();
        assert_eq!(traj.outcome(), Outcome::Success);
        assert_eq!(traj.len() as u32, spec.horizon);
        let ret = traj.episodic_return();
        assert!(ret > 200.0, "expert should sit at the goal most of the episode: {ret}");
        // Reward is exactly the number of in-goal steps.
        let ones = traj.transitions().iter().filter(|t| t.env_reward == 1.0).count();
        assert_eq!(ones as f64, ret);
    }

    #[test]
    fn observation_is_position_then_goal() {
        let mut env = MazeEnv::new(umaze()).unwrap();
        let obs = env.reset(&mut stream(2, "env", 0));
        assert_eq!(obs.len(), 4);
        assert_eq!((obs[0], obs[1]), env.state().position);
        assert_eq!((obs[2], obs[3]), env.state().goal);
        let goal_before = env.state().goal;
        for _ in 0..50 {
            env.step([0.3, -0.2]);
            assert_eq!(env.state().goal, goal_before, "goal must only change at reset");
        }
    }

    #[test]
    fn deterministic_given_seed_and_actions() {
        let spec = trapmaze1();
        let run = |seed: u64| -> Vec<(f64, f64)> {
            let mut env = MazeEnv::new(spec.clone()).unwrap();
            env.reset(&mut stream(seed, "det", 0));
            let mut act_rng = stream(seed, "det-act", 0);
            (0..300)
                .map(|_| {
                    let a = [act_rng.gen_range(-1.0..=1.0), act_rng.gen_range(-1.0..=1.0)];
                    env.step(a);
                    env.state().position
                })
                .collect()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn expert_succeeds_across_seeds_and_makes_leg_progress() {
        let spec = trapmaze1();
        let waypoints = builtin_waypoints("trapmaze1").unwrap();
        for seed in 0..50 {
            let traj = scripted_expert(&spec, seed, &waypoints).unwrap();
            assert_eq!(traj.outcome(), Outcome::Success);
        }
        // Distance to the first waypoint decreases monotonically on leg one.
        let mut env = MazeEnv::new(spec.clone()).unwrap();
        env.reset(&mut stream(1, "expert", 0));
        let target = spec.cell_center((1, 7));
        let mut prev =
            dist(env.state().position.0, env.state().position.1, target.0, target.1);
        for _ in 0..20 {
            let (x, y) = env.state().position;
            let scale = STEP_SCALE * spec.cell_size;
            let a = [
                ((target.0 - x) / scale).clamp(-1.0, 1.0),
                ((target.1 - y) / scale).clamp(-1.0, 1.0),
            ];
            env.step(a);
            let d = dist(env.state().position.0, env.state().position.1, target.0, target.1);
            assert!(d <= prev + 1e-12, "distance increased: {d} > {prev}");
            prev = d;
        }
    }

    #[test]
    fn expert_rejects_bad_waypoints() {
        let spec = trapmaze1();
        // Through a wall cell.
        assert!(matches!(
            scripted_expert(&spec, 0, &[(2, 2), (3, 1)]),
            Err(Error::Validation(_))
        ));
        // Through a trap cell.
        assert!(matches!(
            scripted_expert(&spec, 0, &[(2, 3), (3, 1)]),
            Err(Error::Validation(_))
        ));
        // Last waypoint not a goal candidate.
        assert!(matches!(scripted_expert(&spec, 0, &[(1, 7)]), Err(Error::Validation(_))));
    }

    #[test]
    fn short_direct_expert_path() {
        // A single goal-adjacent waypoint still reaches the goal quickly.
        let spec = parse_map("#####\n#S.G#\n#####").unwrap();
        let traj = scripted_expert(&spec, 3, &[(1, 3)]).unwrap();
        assert_eq!(traj.outcome(), Outcome::Success);
        let first_goal_step =
            traj.transitions().iter().position(|t| t.env_reward == 1.0).unwrap();
        assert!(first_goal_step < 15, "direct approach took {first_goal_step} steps");
    }

    #[test]
    fn heatmap_constant_and_distance_scorers() {
        let spec = umaze();
        let goal = spec.cell_center((3, 1));
        let grid = reward_heatmap(&spec, |_| 0.0, 16, goal).unwrap();
        let mut wall_nans = 0;
        for row in &grid {
            for &v in row {
                if v.is_nan() {
                    wall_nans += 1;
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(wall_nans > 0);

        let grid = reward_heatmap(&spec, |o| -dist(o[0], o[1], o[2], o[3]), 32, goal).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for (i, row) in grid.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.0 {
                    let y = (i as f64 + 0.5) * spec.world_height() / 32.0;
                    let x = (j as f64 + 0.5) * spec.world_width() / 32.0;
                    best = (v, x, y);
                }
            }
        }
        assert!(dist(best.1, best.2, goal.0, goal.1) < 0.2, "argmax far from goal");
        assert!(matches!(reward_heatmap(&spec, |_| 0.0, 4, goal), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn heatmap_export_formats() {
        let spec = umaze();
        let grid = reward_heatmap(&spec, |o| o[0], 8, spec.cell_center((3, 1))).unwrap();
        let mut csv = Vec::new();
        write_heatmap_csv(&grid, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.contains("NaN"));
        // Every CSV token parses back as f64.
        for token in text.lines().flat_map(|l| l.split(',')) {
            token.parse::<f64>().unwrap();
        }
        let mut pgm = Vec::new();
        write_heatmap_pgm(&grid, &mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(pgm.len(), b"P5\n8 8\n255\n".len() + 64);
    }
}
