use rand::Rng as _;

use super::observation::ObservationMap;
use super::{Environment, Step};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const CW: usize = 0;
pub const CCW: usize = 1;
pub const RING_LEN: usize = 28;
const SIDE: usize = 8;

/// Perimeter of the 8x8 arena traversed as a ring.
///
/// Ring index 0 is the top-left corner; increasing indices run clockwise
/// (along the top row, down the right column, back along the bottom row and
/// up the left column).
#[derive(Clone, Debug)]
pub struct CircularTrack {
    reward: usize,
    pos: usize,
    terminal: bool,
    success: bool,
    obs_map: ObservationMap,
}

pub fn ring_cell(i: usize) -> (usize, usize) {
    let i = i % RING_LEN;
    let e = SIDE - 1;
    match i {
        _ if i < e => (i, 0),
        _ if i < 2 * e => (e, i - e),
        _ if i < 3 * e => (e - (i - 2 * e), e),
        _ => (0, e - (i - 3 * e)),
    }
}

impl CircularTrack {
    pub fn new(reward: usize) -> Result<Self> {
        if reward >= RING_LEN {
            return Err(Error::Config(format!(
                "reward state {reward} is not on the {RING_LEN}-state ring"
            )));
        }
        Ok(CircularTrack {
            reward,
            pos: 0,
            terminal: false,
            success: false,
            obs_map: ObservationMap::Plain,
        })
    }

    pub fn with_random_reward(rng: &mut Rng) -> Self {
        Self::new(rng.gen_range(0..RING_LEN)).unwrap()
    }

    pub fn reward_state(&self) -> usize {
        self.reward
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn set_position(&mut self, pos: usize) {
        self.pos = pos % RING_LEN;
        self.terminal = false;
        self.success = false;
    }

    pub fn render_state(&self, i: usize) -> Tensor<f32> {
        let (x, y) = ring_cell(i);
        self.obs_map.render(SIDE, SIDE, y * SIDE + x)
    }

    pub fn step_exact(&mut self, action: usize) -> Result<Step> {
        if self.terminal {
            return Err(Error::Contract(
                "step called on a terminal environment".into(),
            ));
        }
        self.pos = match action {
            CW => (self.pos + 1) % RING_LEN,
            CCW => (self.pos + RING_LEN - 1) % RING_LEN,
            _ => {
                return Err(Error::Contract(format!(
                    "action {action} is not clockwise (0) or counterclockwise (1)"
                )))
            }
        };
        let rewarded = action == CW && self.pos == self.reward;
        if rewarded {
            self.terminal = true;
            self.success = true;
        }
        Ok(Step {
            obs: self.observe(),
            reward: if rewarded { 1.0 } else { 0.0 },
            terminal: rewarded,
        })
    }
}

impl Environment for CircularTrack {
    fn n_actions(&self) -> usize {
        2
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn obs_shape(&self) -> Vec<usize> {
        vec![1, SIDE, SIDE]
    }

    fn reset(&mut self, rng: &mut Rng) -> Tensor<f32> {
        let offset = rng.gen_range(1..RING_LEN);
        self.set_position(self.reward + offset);
        self.observe()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<Step> {
        self.step_exact(action)
    }

    fn observe(&self) -> Tensor<f32> {
        self.render_state(self.pos)
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn step_cap(&self) -> usize {
        RING_LEN
    }
}
