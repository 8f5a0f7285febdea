use rand::Rng as _;

use super::{Environment, Step};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const FORWARD: usize = 0;
pub const NOOP: usize = 1;
pub const APPROACH_LEN: usize = 4;
pub const CORRIDOR_LEN: usize = 6;
const SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorridorKind {
    Vertical,
    Angled,
}

/// Linear track: a gray approach section followed by a striped corridor whose
/// pattern decides whether the end is rewarded.
///
/// Positions `0..APPROACH_LEN` show uniform 0.5; the next `CORRIDOR_LEN`
/// positions show the corridor pattern. Moving forward from the last corridor
/// position ends the trial, with reward 1 for vertical corridors.
#[derive(Clone, Debug)]
pub struct Corridor {
    kind: CorridorKind,
    pos: usize,
    terminal: bool,
    success: bool,
}

impl Corridor {
    pub fn new(kind: CorridorKind) -> Self {
        Corridor {
            kind,
            pos: 0,
            terminal: false,
            success: false,
        }
    }

    pub fn kind(&self) -> CorridorKind {
        self.kind
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn start(&mut self, kind: CorridorKind) {
        *self = Corridor::new(kind);
    }

    pub fn approach_image() -> Tensor<f32> {
        Tensor::full(&[1, SIDE, SIDE], 0.5)
    }

    /// Vertical stripes light even columns; angled stripes light diagonal
    /// bands `(x + y) mod 4 < 2`, the same pattern turned by 45 degrees.
    pub fn pattern_image(kind: CorridorKind) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[1, SIDE, SIDE]);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let on = match kind {
                    CorridorKind::Vertical => x % 2 == 0,
                    CorridorKind::Angled => (x + y) % 4 < 2,
                };
                if on {
                    t.data_mut()[y * SIDE + x] = 1.0;
                }
            }
        }
        t
    }

    pub fn render(kind: CorridorKind, pos: usize) -> Tensor<f32> {
        if pos < APPROACH_LEN {
            Self::approach_image()
        } else {
            Self::pattern_image(kind)
        }
    }

    pub fn step_exact(&mut self, action: usize) -> Result<Step> {
        if self.terminal {
            return Err(Error::Contract(
                "step called on a terminal environment".into(),
            ));
        }
        let mut reward = 0.0;
        match action {
            FORWARD if self.pos + 1 == APPROACH_LEN + CORRIDOR_LEN => {
                self.terminal = true;
                self.success = true;
                if self.kind == CorridorKind::Vertical {
                    reward = 1.0;
                }
            }
            FORWARD => self.pos += 1,
            NOOP => {}
            _ => {
                return Err(Error::Contract(format!(
                    "action {action} is not forward (0) or no-op (1)"
                )))
            }
        }
        Ok(Step {
            obs: self.observe(),
            reward,
            terminal: self.terminal,
        })
    }
}

impl Environment for Corridor {
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
        let kind = if rng.gen::<bool>() {
            CorridorKind::Vertical
        } else {
            CorridorKind::Angled
        };
        self.start(kind);
        self.observe()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<Step> {
        self.step_exact(action)
    }

    fn observe(&self) -> Tensor<f32> {
        Self::render(self.kind, self.pos)
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn step_cap(&self) -> usize {
        4 * SIDE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_have_matched_intensity() {
        let v: f32 = Corridor::pattern_image(CorridorKind::Vertical)
            .data()
            .iter()
            .sum();
        let mut a = 0usize;
        for y in 0..8 {
            for x in 0..8 {
                a += usize::from((x + y) % 4 < 2);
            }
        }
        assert_eq!(v, 32.0);
        assert_eq!(a, 32);
        assert_ne!(
            Corridor::pattern_image(CorridorKind::Vertical),
            Corridor::pattern_image(CorridorKind::Angled)
        );
    }

    #[test]
    fn approach_is_shared_and_corridor_identifiable() {
        for p in 0..APPROACH_LEN {
            assert_eq!(
                Corridor::render(CorridorKind::Vertical, p),
                Corridor::render(CorridorKind::Angled, p)
            );
        }
        for p in APPROACH_LEN..APPROACH_LEN + CORRIDOR_LEN {
            assert_ne!(
                Corridor::render(CorridorKind::Vertical, p),
                Corridor::render(CorridorKind::Angled, p)
            );
        }
    }

    #[test]
    fn only_vertical_end_is_rewarded() {
        for (kind, r) in [(CorridorKind::Vertical, 1.0), (CorridorKind::Angled, 0.0)] {
            let mut c = Corridor::new(kind);
            c.step_exact(NOOP).unwrap();
            let mut total = 0.0;
            let mut steps = 0;
            loop {
                let s = c.step_exact(FORWARD).unwrap();
                total += s.reward;
                steps += 1;
                if s.terminal {
                    break;
                }
            }
            assert_eq!(steps, APPROACH_LEN + CORRIDOR_LEN);
            assert_eq!(total, r);
        }
    }
}
