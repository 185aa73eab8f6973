//! Key-and-locked-door grid world with MiniGrid's DoorKey movement rules.

use rand::Rng as _;

use super::{check_action, Action, ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::numerics::{Rng, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Wall,
    Key,
    Door { locked: bool, open: bool },
    Goal,
}

/// Channels of the per-cell one-hot code.
pub const N_CELL_TYPES: usize = 7;

impl Cell {
    fn code(self) -> usize {
        match self {
            Cell::Empty => 0,
            Cell::Wall => 1,
            Cell::Key => 2,
            Cell::Door { locked: true, .. } => 3,
            Cell::Door { open: false, .. } => 4,
            Cell::Door { open: true, .. } => 5,
            Cell::Goal => 6,
        }
    }

    fn passable(self) -> bool {
        matches!(self, Cell::Empty | Cell::Goal | Cell::Door { open: true, .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DoorKeyAction {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Toggle = 4,
}

impl DoorKeyAction {
    pub const ALL: [DoorKeyAction; 5] = [
        DoorKeyAction::Left,
        DoorKeyAction::Right,
        DoorKeyAction::Forward,
        DoorKeyAction::Pickup,
        DoorKeyAction::Toggle,
    ];
}

/// Randomised parts of an episode's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DoorKeyLayout {
    pub wall_x: usize,
    pub door_y: usize,
    pub key: (usize, usize),
    pub agent: (usize, usize),
    /// 0 = +x, 1 = +y, 2 = −x, 3 = −y
    pub dir: usize,
}

const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// `size × size` grid including the outer wall. A wall column splits it in
/// two with a locked door; the agent and key start on the left, the goal sits
/// in the bottom-right interior corner. Reward on reaching the goal is
/// `1 − 0.9·steps/max_steps`, with `max_steps = 10·size²`.
///
/// Observation: a `size × size` forward-facing egocentric window, agent at
/// the bottom centre, each cell one-hot over [`N_CELL_TYPES`] (cells outside
/// the grid read as wall), followed by a carrying-key flag.
#[derive(Clone, Debug)]
pub struct DoorKey {
    spec: EnvSpec,
    size: usize,
    grid: Vec<Cell>,
    agent: (usize, usize),
    dir: usize,
    carrying: bool,
    steps: usize,
    done: bool,
    layout: Option<DoorKeyLayout>,
    rng: Rng,
}

impl DoorKey {
    pub fn new(size: usize, seed: u64) -> Result<Self, EnvError> {
        if size < 5 {
            return Err(EnvError::Config(format!(
                "door-key grid needs size >= 5 to fit two rooms, got {size}"
            )));
        }
        let spec = EnvSpec {
            name: format!("doorkey-{size}x{size}"),
            obs_dim: size * size * N_CELL_TYPES + 1,
            action_space: ActionSpace::Discrete(DoorKeyAction::ALL.len()),
            max_steps: 10 * size * size,
            noop_action: None,
        };
        Ok(Self {
            spec,
            size,
            grid: vec![Cell::Empty; size * size],
            agent: (1, 1),
            dir: 0,
            carrying: false,
            steps: 0,
            done: true,
            layout: None,
            rng: RngStream::new(seed).substream("doorkey"),
        })
    }

    pub fn layout(&self) -> Option<DoorKeyLayout> {
        self.layout
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.grid[y * self.size + x]
    }

    pub fn agent(&self) -> ((usize, usize), usize) {
        (self.agent, self.dir)
    }

    pub fn carrying(&self) -> bool {
        self.carrying
    }

    /// Installs an explicit layout and starts an episode from it.
    pub fn reset_to(&mut self, layout: DoorKeyLayout) -> Result<Vec<f64>, EnvError> {
        let n = self.size;
        let interior = |(x, y): (usize, usize)| x > 0 && y > 0 && x < n - 1 && y < n - 1;
        let ok = layout.wall_x >= 2
            && layout.wall_x <= n - 3
            && layout.door_y >= 1
            && layout.door_y <= n - 2
            && interior(layout.key)
            && interior(layout.agent)
            && layout.key.0 < layout.wall_x
            && layout.agent.0 < layout.wall_x
            && layout.key != layout.agent
            && layout.dir < 4;
        if !ok {
            return Err(EnvError::Config(format!("invalid layout {layout:?}")));
        }
        self.grid = vec![Cell::Empty; n * n];
        for i in 0..n {
            self.grid[i] = Cell::Wall;
            self.grid[(n - 1) * n + i] = Cell::Wall;
            self.grid[i * n] = Cell::Wall;
            self.grid[i * n + n - 1] = Cell::Wall;
        }
        for y in 0..n {
            self.grid[y * n + layout.wall_x] = Cell::Wall;
        }
        self.grid[layout.door_y * n + layout.wall_x] = Cell::Door { locked: true, open: false };
        self.grid[(n - 2) * n + (n - 2)] = Cell::Goal;
        self.grid[layout.key.1 * n + layout.key.0] = Cell::Key;
        self.agent = layout.agent;
        self.dir = layout.dir;
        self.carrying = false;
        self.steps = 0;
        self.done = false;
        self.layout = Some(layout);
        Ok(self.observe())
    }

    fn sample_layout(&mut self) -> DoorKeyLayout {
        let n = self.size;
        let wall_x = self.rng.random_range(2..n - 2);
        let door_y = self.rng.random_range(1..n - 2);
        let left: Vec<(usize, usize)> =
            (1..wall_x).flat_map(|x| (1..n - 1).map(move |y| (x, y))).collect();
        let agent = left[self.rng.random_range(0..left.len())];
        let dir = self.rng.random_range(0..4);
        let rest: Vec<(usize, usize)> = left.iter().copied().filter(|c| *c != agent).collect();
        let key = rest[self.rng.random_range(0..rest.len())];
        DoorKeyLayout { wall_x, door_y, key, agent, dir }
    }

    fn at(&self, x: i64, y: i64) -> Cell {
        let n = self.size as i64;
        if x < 0 || y < 0 || x >= n || y >= n {
            Cell::Wall
        } else {
            self.grid[(y * n + x) as usize]
        }
    }

    fn front(&self) -> (i64, i64) {
        let (dx, dy) = DIRS[self.dir];
        (self.agent.0 as i64 + dx, self.agent.1 as i64 + dy)
    }

    fn observe(&self) -> Vec<f64> {
        let v = self.size as i64;
        let (fx, fy) = DIRS[self.dir];
        // lateral axis pointing to the agent's right
        let (rx, ry) = (-fy, fx);
        let mut out = vec![0.0; self.spec.obs_dim];
        for row in 0..v {
            let ahead = v - 1 - row;
            for col in 0..v {
                let side = col - v / 2;
                let x = self.agent.0 as i64 + ahead * fx + side * rx;
                let y = self.agent.1 as i64 + ahead * fy + side * ry;
                let idx = (row * v + col) as usize;
                out[idx * N_CELL_TYPES + self.at(x, y).code()] = 1.0;
            }
        }
        out[self.spec.obs_dim - 1] = self.carrying as u8 as f64;
        out
    }
}

impl Env for DoorKey {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let layout = self.sample_layout();
        self.reset_to(layout).expect("sampled layouts are valid")
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_action(&self.spec, action)?;
        self.steps += 1;
        let mut reward = 0.0;
        let mut terminated = false;
        let (fx, fy) = self.front();
        let fidx = (fy * self.size as i64 + fx) as usize;
        match DoorKeyAction::ALL[action.discrete().expect("checked")] {
            DoorKeyAction::Left => self.dir = (self.dir + 3) % 4,
            DoorKeyAction::Right => self.dir = (self.dir + 1) % 4,
            DoorKeyAction::Forward => {
                let cell = self.at(fx, fy);
                if cell.passable() {
                    self.agent = (fx as usize, fy as usize);
                }
                if cell == Cell::Goal {
                    terminated = true;
                    reward = 1.0 - 0.9 * self.steps as f64 / self.spec.max_steps as f64;
                }
            }
            DoorKeyAction::Pickup => {
                if self.at(fx, fy) == Cell::Key && !self.carrying {
                    self.carrying = true;
                    self.grid[fidx] = Cell::Empty;
                }
            }
            DoorKeyAction::Toggle => {
                if let Cell::Door { locked, open } = self.at(fx, fy) {
                    self.grid[fidx] = if locked {
                        if self.carrying {
                            Cell::Door { locked: false, open: true }
                        } else {
                            Cell::Door { locked, open }
                        }
                    } else {
                        Cell::Door { locked: false, open: !open }
                    };
                }
            }
        }
        let truncated = !terminated && self.steps >= self.spec.max_steps;
        self.done = terminated || truncated;
        Ok(StepResult { obs: self.observe(), reward, terminated, truncated })
    }
}
