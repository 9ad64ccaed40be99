use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EnvError;

pub const CHANNELS: usize = 5;
pub const NUM_ACTIONS: usize = 4;

pub const GOAL_REWARD: f64 = 1.0;
pub const COLLECTIBLE_REWARD: f64 = 0.1;
pub const HAZARD_REWARD: f64 = -1.0;

const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Self::ALL.get(i).copied().ok_or(EnvError::InvalidAction(i))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Seed of one procedurally generated level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelSeed(pub u64);

/// Level-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub size: usize,
    pub step_cap: usize,
    pub wall_density: f64,
    pub hazards: usize,
    pub collectibles: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 9,
            step_cap: 64,
            wall_density: 0.2,
            hazards: 3,
            collectibles: 3,
        }
    }
}

impl GridConfig {
    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn obs_dim(&self) -> usize {
        CHANNELS * self.cells()
    }

    fn validate(&self) -> Result<(), EnvError> {
        let needed = 2 + self.hazards + self.collectibles;
        if self.size < 2
            || self.step_cap == 0
            || !(0.0..1.0).contains(&self.wall_density)
            || needed > self.cells()
        {
            return Err(EnvError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive a fresh seed after a failed layout.
pub fn mix_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Gridworld with walls, a goal, hazards and collectibles.
///
/// Cells are addressed `(row, col)` from the top-left corner. Moving off the
/// grid or into a wall leaves the agent in place.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcGridEnv {
    size: usize,
    step_cap: usize,
    walls: Vec<bool>,
    hazards: Vec<bool>,
    start_collectibles: Vec<bool>,
    collectibles: Vec<bool>,
    start: (usize, usize),
    agent: (usize, usize),
    goal: (usize, usize),
    steps: usize,
    done: bool,
}

impl ProcGridEnv {
    /// Deterministically generates the level for `seed`, retrying with
    /// mixed seeds until the goal is reachable without crossing a hazard.
    pub fn generate(seed: LevelSeed, config: &GridConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let mut s = seed.0;
        for _ in 0..MAX_RETRIES {
            let env = Self::layout(s, config);
            if env.solvable() {
                return Ok(env);
            }
            s = mix_seed(s);
        }
        Err(EnvError::GenerationFailed {
            seed: seed.0,
            retries: MAX_RETRIES,
        })
    }

    fn layout(seed: u64, config: &GridConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.size;
        let cells = n * n;
        let walls: Vec<bool> = (0..cells)
            .map(|_| rng.random_bool(config.wall_density))
            .collect();
        let mut free: Vec<usize> = (0..cells).filter(|&i| !walls[i]).collect();
        // Keep enough free cells for every object by clearing walls if needed.
        let mut walls = walls;
        let needed = 2 + config.hazards + config.collectibles;
        let mut cursor = 0;
        while free.len() < needed {
            if walls[cursor] {
                walls[cursor] = false;
                free.push(cursor);
            }
            cursor += 1;
        }
        let picks = rand::seq::index::sample(&mut rng, free.len(), needed).into_vec();
        let cell = |k: usize| free[picks[k]];
        let pos = |c: usize| (c / n, c % n);
        let mut hazards = vec![false; cells];
        let mut collectibles = vec![false; cells];
        for k in 0..config.hazards {
            hazards[cell(2 + k)] = true;
        }
        for k in 0..config.collectibles {
            collectibles[cell(2 + config.hazards + k)] = true;
        }
        let start = pos(cell(0));
        Self {
            size: n,
            step_cap: config.step_cap,
            walls,
            hazards,
            start_collectibles: collectibles.clone(),
            collectibles,
            start,
            agent: start,
            goal: pos(cell(1)),
            steps: 0,
            done: false,
        }
    }

    /// Builds a level from ASCII art: `#` wall, `A` agent, `G` goal,
    /// `H` hazard, `C` collectible, `.` empty. The grid must be square.
    pub fn from_ascii(art: &str, step_cap: usize) -> Result<Self, EnvError> {
        let rows: Vec<&str> = art
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let n = rows.len();
        let bad = |reason: &str| EnvError::InvalidLayout(reason.to_string());
        if n < 2 || rows.iter().any(|r| r.chars().count() != n) {
            return Err(bad("layout must be a square grid of side at least 2"));
        }
        if step_cap == 0 {
            return Err(bad("step cap must be positive"));
        }
        let cells = n * n;
        let (mut walls, mut hazards, mut collectibles) =
            (vec![false; cells], vec![false; cells], vec![false; cells]);
        let (mut agent, mut goal) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let i = r * n + c;
                match ch {
                    '#' => walls[i] = true,
                    'H' => hazards[i] = true,
                    'C' => collectibles[i] = true,
                    'A' if agent.is_none() => agent = Some((r, c)),
                    'G' if goal.is_none() => goal = Some((r, c)),
                    '.' => {}
                    _ => return Err(bad(&format!("unexpected `{ch}` at row {r}, column {c}"))),
                }
            }
        }
        let (Some(agent), Some(goal)) = (agent, goal) else {
            return Err(bad("layout needs exactly one `A` and one `G`"));
        };
        Ok(Self {
            size: n,
            step_cap,
            walls,
            hazards,
            start_collectibles: collectibles.clone(),
            collectibles,
            start: agent,
            agent,
            goal,
            steps: 0,
            done: false,
        })
    }

    fn idx(&self, (r, c): (usize, usize)) -> usize {
        r * self.size + c
    }

    fn neighbor(&self, (r, c): (usize, usize), a: Action) -> (usize, usize) {
        let (dr, dc) = a.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        let n = self.size as isize;
        if nr < 0 || nc < 0 || nr >= n || nc >= n {
            return (r, c);
        }
        let next = (nr as usize, nc as usize);
        if self.walls[self.idx(next)] {
            (r, c)
        } else {
            next
        }
    }

    /// Whether the goal is reachable from the start without entering a
    /// hazard.
    pub fn solvable(&self) -> bool {
        let mut seen = vec![false; self.size * self.size];
        let mut queue = VecDeque::from([self.start]);
        seen[self.idx(self.start)] = true;
        while let Some(p) = queue.pop_front() {
            if p == self.goal {
                return true;
            }
            for a in Action::ALL {
                let q = self.neighbor(p, a);
                let i = self.idx(q);
                if !seen[i] && !self.hazards[i] {
                    seen[i] = true;
                    queue.push_back(q);
                }
            }
        }
        false
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn obs_dim(&self) -> usize {
        CHANNELS * self.size * self.size
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn hazards(&self) -> &[bool] {
        &self.hazards
    }

    pub fn collectibles(&self) -> &[bool] {
        &self.collectibles
    }

    pub fn start_collectible_count(&self) -> usize {
        self.start_collectibles.iter().filter(|&&c| c).count()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Restores the level's initial state and returns the observation.
    pub fn reset(&mut self) -> Vec<f64> {
        self.agent = self.start;
        self.collectibles.clone_from(&self.start_collectibles);
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    /// One-hot channels (wall, agent, goal, hazard, collectible), each a
    /// row-major `size×size` plane.
    pub fn observe(&self) -> Vec<f64> {
        let cells = self.size * self.size;
        let mut obs = vec![0.0; CHANNELS * cells];
        self.write_observation(&mut obs);
        obs
    }

    /// Writes the observation into `out`, which must have length
    /// [`ProcGridEnv::obs_dim`].
    pub fn write_observation(&self, out: &mut [f64]) {
        let cells = self.size * self.size;
        out.fill(0.0);
        for i in 0..cells {
            if self.walls[i] {
                out[i] = 1.0;
            }
            if self.hazards[i] {
                out[3 * cells + i] = 1.0;
            }
            if self.collectibles[i] {
                out[4 * cells + i] = 1.0;
            }
        }
        out[cells + self.idx(self.agent)] = 1.0;
        out[2 * cells + self.idx(self.goal)] = 1.0;
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let (reward, done) = self.step_inner(action)?;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
        })
    }

    /// [`ProcGridEnv::step`] without building the observation.
    pub fn step_inner(&mut self, action: Action) -> Result<(f64, bool), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.agent = self.neighbor(self.agent, action);
        self.steps += 1;
        let i = self.idx(self.agent);
        let mut reward = 0.0;
        if self.agent == self.goal {
            reward = GOAL_REWARD;
            self.done = true;
        } else if self.hazards[i] {
            reward = HAZARD_REWARD;
            self.done = true;
        } else if self.collectibles[i] {
            self.collectibles[i] = false;
            reward = COLLECTIBLE_REWARD;
        }
        if self.steps >= self.step_cap {
            self.done = true;
        }
        Ok((reward, self.done))
    }

    pub fn render_ascii(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ProcGridEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.size {
            for c in 0..self.size {
                let i = self.idx((r, c));
                let ch = if (r, c) == self.agent {
                    'A'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.walls[i] {
                    '#'
                } else if self.hazards[i] {
                    'H'
                } else if self.collectibles[i] {
                    'C'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
