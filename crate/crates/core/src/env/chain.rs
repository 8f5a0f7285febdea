use rand::Rng as _;

use super::{Environment, Step};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

/// Deterministic chain of `n` states; entering the last one pays 1 and ends
/// the episode. State `s` is shown as a lit column `s` of an `n x n` image.
#[derive(Clone, Debug)]
pub struct Chain {
    n: usize,
    pos: usize,
}

impl Chain {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config(format!(
                "chain needs at least 4 states to render, got {n}"
            )));
        }
        Ok(Chain { n, pos: 0 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn set_position(&mut self, pos: usize) {
        self.pos = pos.min(self.n - 1);
    }

    pub fn render_state(&self, s: usize) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[1, self.n, self.n]);
        for row in 0..self.n {
            t.data_mut()[row * self.n + s] = 1.0;
        }
        t
    }

    pub fn step_exact(&mut self, action: usize) -> Result<Step> {
        if self.pos == self.n - 1 {
            return Err(Error::Contract("step after the chain episode ended".into()));
        }
        self.pos = match action {
            CHAIN_LEFT => self.pos.saturating_sub(1),
            CHAIN_RIGHT => self.pos + 1,
            a => return Err(Error::Contract(format!("action {a} is not a chain action"))),
        };
        let done = self.pos == self.n - 1;
        Ok(Step {
            obs: self.observe(),
            reward: if done { 1.0 } else { 0.0 },
            terminal: done,
        })
    }
}

impl Environment for Chain {
    fn n_actions(&self) -> usize {
        2
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn obs_shape(&self) -> Vec<usize> {
        vec![1, self.n, self.n]
    }

    fn reset(&mut self, rng: &mut Rng) -> Tensor<f32> {
        self.pos = rng.gen_range(0..self.n - 1);
        self.observe()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<Step> {
        self.step_exact(action)
    }

    fn observe(&self) -> Tensor<f32> {
        self.render_state(self.pos)
    }

    fn succeeded(&self) -> bool {
        self.pos == self.n - 1
    }

    fn step_cap(&self) -> usize {
        2 * self.n
    }
}
