//! Task suite: open-arena gridworld family, circular track, alternating-T
//! maze, the grating corridor and a short chain.

mod chain;
mod circular;
mod corridor;
mod grid;
mod observation;
mod tmaze;

pub use chain::{Chain, CHAIN_LEFT, CHAIN_RIGHT};
pub use circular::{CircularTrack, CCW, CW, RING_LEN};
pub use corridor::{Corridor, CorridorKind, APPROACH_LEN, CORRIDOR_LEN, FORWARD, NOOP};
pub use grid::{apply_stochastic_transition, Cell, GridEnv, DOWN, LEFT, RIGHT, UP};
pub use observation::{write_noise_bank, ImageBank, ObservationMap};
pub use tmaze::{AltTMaze, MazeInput, Phase, TrialKind, TRACE_DECAY, TRACE_LEN};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Tensor<f32>,
    pub reward: f32,
    pub terminal: bool,
}

/// Common surface used by experience collection and evaluation.
pub trait Environment: Send {
    fn n_actions(&self) -> usize;

    fn boxed_clone(&self) -> Box<dyn Environment>;

    /// Per-sample agent input shape (`[C, H, W]`, or `[L, C, H, W]` windows).
    fn obs_shape(&self) -> Vec<usize>;

    /// Starts a training episode from a random start state.
    fn reset(&mut self, rng: &mut Rng) -> Tensor<f32>;

    /// Starts an evaluation episode. Defaults to [`Environment::reset`].
    fn eval_reset(&mut self, rng: &mut Rng) -> Tensor<f32> {
        self.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<Step>;

    fn observe(&self) -> Tensor<f32>;

    /// Whether the current evaluation episode has reached its goal.
    fn succeeded(&self) -> bool;

    /// Steps allowed per evaluation episode.
    fn step_cap(&self) -> usize;

    /// Length after which a training episode is cut and restarted.
    fn episode_limit(&self) -> usize {
        4 * self.step_cap()
    }
}
