use rand::seq::SliceRandom;
use rand::Rng as _;

use super::observation::ObservationMap;
use super::{Environment, Step};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
/// Toward row 0.
pub const UP: usize = 2;
pub const DOWN: usize = 3;

pub type Cell = (usize, usize);

/// Returns the action the environment actually executes: `a` with
/// probability `1 - p`, otherwise one of the other actions uniformly.
pub fn apply_stochastic_transition(a: usize, n_actions: usize, p: f64, rng: &mut Rng) -> usize {
    if p <= 0.0 || n_actions < 2 || rng.gen::<f64>() >= p {
        return a;
    }
    let k = rng.gen_range(0..n_actions - 1);
    if k >= a {
        k + 1
    } else {
        k
    }
}

/// Four-action gridworld with an invisible goal.
#[derive(Clone, Debug)]
pub struct GridEnv {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    goal: Option<usize>,
    agent: usize,
    terminal: bool,
    success: bool,
    p: f64,
    obs_map: ObservationMap,
    /// Replacement transition table, `next[cell * 4 + action]`.
    transitions: Option<Vec<usize>>,
}

impl GridEnv {
    pub fn new(side: usize, goal: Option<Cell>) -> Result<Self> {
        Self::with_walls(side, side, &[], goal)
    }

    pub fn with_walls(
        width: usize,
        height: usize,
        walls: &[Cell],
        goal: Option<Cell>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        let mut mask = vec![false; width * height];
        for &(x, y) in walls {
            if x >= width || y >= height {
                return Err(Error::Config(format!("wall ({x},{y}) is outside the grid")));
            }
            mask[y * width + x] = true;
        }
        let mut env = GridEnv {
            width,
            height,
            walls: mask,
            goal: None,
            agent: 0,
            terminal: false,
            success: false,
            p: 0.0,
            obs_map: ObservationMap::Plain,
            transitions: None,
        };
        env.agent = env
            .open_cells()
            .first()
            .copied()
            .ok_or_else(|| Error::Config("grid has no open cell".into()))?;
        if let Some(g) = goal {
            env.set_goal(g)?;
        }
        Ok(env)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn side(&self) -> usize {
        self.width.max(self.height)
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    pub fn is_open(&self, (x, y): Cell) -> bool {
        x < self.width && y < self.height && !self.walls[y * self.width + x]
    }

    /// Open cells as row-major indices.
    pub fn open_cells(&self) -> Vec<usize> {
        (0..self.width * self.height)
            .filter(|&i| !self.walls[i])
            .collect()
    }

    pub fn goal(&self) -> Option<Cell> {
        self.goal.map(|g| self.cell(g))
    }

    pub fn set_goal(&mut self, goal: Cell) -> Result<()> {
        if !self.is_open(goal) {
            return Err(Error::Config(format!("goal {goal:?} is not an open cell")));
        }
        self.goal = Some(self.index(goal));
        Ok(())
    }

    pub fn agent(&self) -> Cell {
        self.cell(self.agent)
    }

    pub fn set_agent(&mut self, cell: Cell) -> Result<()> {
        if !self.is_open(cell) {
            return Err(Error::Contract(format!("agent cell {cell:?} is not open")));
        }
        self.agent = self.index(cell);
        self.terminal = false;
        self.success = false;
        Ok(())
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn stochasticity(&self) -> f64 {
        self.p
    }

    pub fn set_stochasticity(&mut self, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "transition noise {p} is outside [0, 1]"
            )));
        }
        self.p = p;
        Ok(())
    }

    pub fn observation_map(&self) -> &ObservationMap {
        &self.obs_map
    }

    pub fn set_observation_map(&mut self, map: ObservationMap) -> Result<()> {
        if let ObservationMap::ImageBank(bank) = &map {
            if bank.images.len() != self.width * self.height {
                return Err(Error::Config(format!(
                    "image bank holds {} images for a {}x{} grid",
                    bank.images.len(),
                    self.width,
                    self.height
                )));
            }
        }
        if let ObservationMap::Shuffled { perm } = &map {
            if perm.len() != self.width * self.height {
                return Err(Error::Config(
                    "pixel permutation does not match the grid size".into(),
                ));
            }
        }
        self.obs_map = map;
        Ok(())
    }

    /// Geometric neighbour of a cell; blocked moves stay put.
    pub fn geometric_move(&self, cell: usize, action: usize) -> usize {
        let (x, y) = self.cell(cell);
        let target = match action {
            LEFT if x > 0 => (x - 1, y),
            RIGHT => (x + 1, y),
            UP if y > 0 => (x, y - 1),
            DOWN => (x, y + 1),
            _ => (x, y),
        };
        if self.is_open(target) {
            self.index(target)
        } else {
            cell
        }
    }

    /// Successor under the active transition function.
    pub fn successor(&self, cell: usize, action: usize) -> usize {
        match &self.transitions {
            Some(table) => table[cell * 4 + action],
            None => self.geometric_move(cell, action),
        }
    }

    /// Replaces connectivity by relabeling open cells with a random bijection
    /// that fixes the goal: `next(s, a) = π(move(π⁻¹(s), a))`.
    ///
    /// The relabeled graph is isomorphic to the arena, so every move is still
    /// undone by its opposite action.
    pub fn shuffle_transitions(&mut self, rng: &mut Rng) {
        let open = self.open_cells();
        let movable: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&c| Some(c) != self.goal)
            .collect();
        let mut shuffled = movable.clone();
        shuffled.shuffle(rng);
        let n = self.width * self.height;
        let mut pi: Vec<usize> = (0..n).collect();
        for (from, to) in movable.iter().zip(&shuffled) {
            pi[*from] = *to;
        }
        let mut pi_inv = vec![0; n];
        for (i, &p) in pi.iter().enumerate() {
            pi_inv[p] = i;
        }
        let mut table: Vec<usize> = (0..n * 4).map(|i| i / 4).collect();
        for &s in &open {
            for a in 0..4 {
                table[s * 4 + a] = pi[self.geometric_move(pi_inv[s], a)];
            }
        }
        self.transitions = Some(table);
    }

    pub fn clear_transition_shuffle(&mut self) {
        self.transitions = None;
    }

    pub fn has_shuffled_transitions(&self) -> bool {
        self.transitions.is_some()
    }

    pub fn render_cell(&self, cell: usize) -> Tensor<f32> {
        self.obs_map.render(self.width, self.height, cell)
    }

    pub fn render_observation(&self) -> Tensor<f32> {
        self.render_cell(self.agent)
    }

    /// Moves without applying transition noise.
    pub fn step_exact(&mut self, action: usize) -> Result<Step> {
        if self.terminal {
            return Err(Error::Contract(
                "step called on a terminal environment".into(),
            ));
        }
        if action >= 4 {
            return Err(Error::Contract(format!(
                "action {action} is not one of the 4 grid actions"
            )));
        }
        self.agent = self.successor(self.agent, action);
        let reached = Some(self.agent) == self.goal;
        if reached {
            self.terminal = true;
            self.success = true;
        }
        Ok(Step {
            obs: self.render_observation(),
            reward: if reached { 1.0 } else { 0.0 },
            terminal: reached,
        })
    }

    /// Places the agent on a uniformly random open non-goal cell.
    pub fn random_start(&mut self, rng: &mut Rng) {
        let starts: Vec<usize> = self
            .open_cells()
            .into_iter()
            .filter(|&c| Some(c) != self.goal)
            .collect();
        self.agent = *starts.choose(rng).expect("grid has a non-goal cell");
        self.terminal = false;
        self.success = false;
    }
}

impl Environment for GridEnv {
    fn n_actions(&self) -> usize {
        4
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn obs_shape(&self) -> Vec<usize> {
        self.obs_map.shape(self.width, self.height).to_vec()
    }

    fn reset(&mut self, rng: &mut Rng) -> Tensor<f32> {
        self.random_start(rng);
        self.render_observation()
    }

    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<Step> {
        let effective = apply_stochastic_transition(action, 4, self.p, rng);
        self.step_exact(effective)
    }

    fn observe(&self) -> Tensor<f32> {
        self.render_observation()
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn step_cap(&self) -> usize {
        4 * self.side()
    }
}
