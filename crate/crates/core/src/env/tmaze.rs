use std::collections::VecDeque;

use rand::Rng as _;

use super::grid::{DOWN, LEFT, RIGHT, UP};
use super::{Environment, Step};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const TRACE_LEN: usize = 6;
pub const TRACE_DECAY: f32 = 0.9;
const SIDE: usize = 5;
const STEM_X: usize = 2;
const TOP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrialKind {
    Left,
    Right,
}

impl TrialKind {
    pub fn flip(self) -> Self {
        match self {
            TrialKind::Left => TrialKind::Right,
            TrialKind::Right => TrialKind::Left,
        }
    }

    fn arm_x(self) -> usize {
        match self {
            TrialKind::Left => 0,
            TrialKind::Right => SIDE - 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Up the center stem and into the correct arm.
    Outbound,
    /// Down the outer arm and along the bottom row back to the stem.
    Return,
}

/// What the agent receives each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MazeInput {
    /// Current frame only.
    Frame,
    /// Decayed sum of the last [`TRACE_LEN`] frames.
    Trace,
    /// Stack of the last `n` frames, oldest first, zero-padded.
    Window(usize),
}

/// Figure-8 alternation task on a 5x5 grid.
///
/// Open cells are the three columns x = 0, 2, 4 and the rows y = 0 and y = 4;
/// the stem is x = 2 and the decision point is (2, 4). Invisible barriers
/// make the route one-way: outbound the agent goes up the stem and into the
/// arm of the current trial, on the return leg down that outer column and
/// along the bottom row back to (2, 0). Any move off the route, backwards or
/// into the wrong arm, leaves the agent in place. Entering (2, 0) from the
/// side begins the next trial, which turns the other way.
///
/// Rewards of 1 are given on the first entry to (2, 4) in a trial and on
/// reaching the arm end (0, 4) or (4, 4). Episodes never terminate; an
/// evaluation episode succeeds when the agent reaches the correct arm end of
/// the trial it started on.
#[derive(Clone, Debug)]
pub struct AltTMaze {
    input: MazeInput,
    cell: (usize, usize),
    kind: TrialKind,
    phase: Phase,
    decision_rewarded: bool,
    trials_started: usize,
    success: bool,
    frames: VecDeque<Tensor<f32>>,
}

impl AltTMaze {
    pub fn new(input: MazeInput) -> Self {
        let mut maze = AltTMaze {
            input,
            cell: (STEM_X, 0),
            kind: TrialKind::Left,
            phase: Phase::Outbound,
            decision_rewarded: false,
            trials_started: 0,
            success: false,
            frames: VecDeque::new(),
        };
        maze.start_return(TrialKind::Right);
        maze
    }

    pub fn input(&self) -> MazeInput {
        self.input
    }

    pub fn cell(&self) -> (usize, usize) {
        self.cell
    }

    pub fn trial(&self) -> TrialKind {
        self.kind
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn trials_started(&self) -> usize {
        self.trials_started
    }

    /// Puts the agent at the arm end of a finished `previous` trial with an
    /// empty frame history. The next trial turns the other way.
    pub fn start_return(&mut self, previous: TrialKind) {
        self.kind = previous;
        self.phase = Phase::Return;
        self.cell = (previous.arm_x(), TOP);
        self.decision_rewarded = true;
        self.success = false;
        self.frames.clear();
        self.push_frame();
    }

    /// The only cell a move may reach from here.
    pub fn next_on_route(&self) -> (usize, usize) {
        let (x, y) = self.cell;
        match self.scripted_action() {
            UP => (x, y - 1),
            DOWN => (x, y + 1),
            LEFT => (x - 1, y),
            _ => (x + 1, y),
        }
    }

    pub fn frame(cell: (usize, usize)) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[1, SIDE, SIDE]);
        t.data_mut()[cell.1 * SIDE + cell.0] = 1.0;
        t
    }

    fn push_frame(&mut self) {
        let cap = match self.input {
            MazeInput::Frame => 1,
            MazeInput::Trace => TRACE_LEN,
            MazeInput::Window(n) => n,
        };
        self.frames.push_front(Self::frame(self.cell));
        self.frames.truncate(cap);
    }

    /// Decayed sum of recent frames, most recent weighted 1.
    pub fn trace<'a>(frames: impl IntoIterator<Item = &'a Tensor<f32>>) -> Tensor<f32> {
        let mut out = Tensor::zeros(&[1, SIDE, SIDE]);
        let mut w = 1.0f32;
        for f in frames.into_iter().take(TRACE_LEN) {
            for (o, v) in out.data_mut().iter_mut().zip(f.data()) {
                *o += w * v;
            }
            w *= TRACE_DECAY;
        }
        out
    }

    pub fn step_exact(&mut self, action: usize) -> Result<Step> {
        let (x, y) = self.cell;
        let target = match action {
            LEFT if x > 0 => (x - 1, y),
            RIGHT => (x + 1, y),
            UP if y > 0 => (x, y - 1),
            DOWN => (x, y + 1),
            a if a >= 4 => {
                return Err(Error::Contract(format!(
                    "action {a} is not one of the 4 grid actions"
                )))
            }
            _ => (x, y),
        };
        let mut reward = 0.0;
        if target == self.next_on_route() {
            self.cell = target;
            match self.phase {
                Phase::Outbound if self.cell == (STEM_X, TOP) && !self.decision_rewarded => {
                    self.decision_rewarded = true;
                    reward = 1.0;
                }
                Phase::Outbound if self.cell == (self.kind.arm_x(), TOP) => {
                    self.phase = Phase::Return;
                    self.success = true;
                    reward = 1.0;
                }
                Phase::Return if self.cell == (STEM_X, 0) => {
                    self.kind = self.kind.flip();
                    self.phase = Phase::Outbound;
                    self.decision_rewarded = false;
                    self.trials_started += 1;
                }
                _ => {}
            }
        }
        self.push_frame();
        Ok(Step {
            obs: self.observe(),
            reward,
            terminal: false,
        })
    }

    /// Action of the figure-8 policy that always takes the rewarded route.
    pub fn scripted_action(&self) -> usize {
        let (x, y) = self.cell;
        let arm = self.kind.arm_x();
        match self.phase {
            Phase::Return if x == arm && y > 0 => UP,
            Phase::Return if arm < STEM_X => RIGHT,
            Phase::Return => LEFT,
            Phase::Outbound if y < TOP => DOWN,
            Phase::Outbound if arm < STEM_X => LEFT,
            Phase::Outbound => RIGHT,
        }
    }

    /// The observation of a single state with no history.
    pub fn raw_observation(&self, cell: (usize, usize)) -> Tensor<f32> {
        match self.input {
            MazeInput::Window(n) => {
                let mut data = vec![0.0; n * SIDE * SIDE];
                let f = Self::frame(cell);
                data[(n - 1) * SIDE * SIDE..].copy_from_slice(f.data());
                Tensor::new(vec![n, 1, SIDE, SIDE], data).unwrap()
            }
            _ => Self::frame(cell),
        }
    }
}

impl Environment for AltTMaze {
    fn n_actions(&self) -> usize {
        4
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn obs_shape(&self) -> Vec<usize> {
        match self.input {
            MazeInput::Window(n) => vec![n, 1, SIDE, SIDE],
            _ => vec![1, SIDE, SIDE],
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> Tensor<f32> {
        let previous = if rng.gen::<bool>() {
            TrialKind::Left
        } else {
            TrialKind::Right
        };
        self.start_return(previous);
        self.observe()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<Step> {
        self.step_exact(action)
    }

    fn observe(&self) -> Tensor<f32> {
        match self.input {
            MazeInput::Frame => self.frames[0].clone(),
            MazeInput::Trace => Self::trace(&self.frames),
            MazeInput::Window(n) => {
                let plane = SIDE * SIDE;
                let mut data = vec![0.0; n * plane];
                for (age, f) in self.frames.iter().enumerate() {
                    let slot = n - 1 - age;
                    data[slot * plane..(slot + 1) * plane].copy_from_slice(f.data());
                }
                Tensor::new(vec![n, 1, SIDE, SIDE], data).unwrap()
            }
        }
    }

    fn succeeded(&self) -> bool {
        self.success
    }

    fn step_cap(&self) -> usize {
        4 * SIDE
    }

    fn episode_limit(&self) -> usize {
        100
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_open((x, y): (usize, usize)) -> bool {
        x < SIDE && y < SIDE && (x % 2 == 0 || y == 0 || y == TOP)
    }

    fn scripted_action(m: &AltTMaze) -> usize {
        m.scripted_action()
    }

    #[test]
    fn trace_weights_are_geometric() {
        let six: Vec<_> = [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (0, 1), (2, 2)]
            .iter()
            .map(|&c| AltTMaze::frame(c))
            .collect();
        let t = AltTMaze::trace(&six);
        let expect = [1.0, 0.9, 0.81, 0.729, 0.6561, 0.59049];
        for (i, e) in expect.iter().enumerate() {
            let (x, y) = [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (0, 1)][i];
            assert!((t.data()[y * 5 + x] - e).abs() < 1e-6);
        }
        assert_eq!(t.data()[2 * 5 + 2], 0.0);
    }

    #[test]
    fn reset_trace_equals_raw_frame() {
        let mut m = AltTMaze::new(MazeInput::Trace);
        m.start_return(TrialKind::Left);
        assert_eq!(m.observe(), AltTMaze::frame((0, 4)));
    }

    #[test]
    fn trials_strictly_alternate_and_route_is_one_way() {
        let mut m = AltTMaze::new(MazeInput::Trace);
        m.start_return(TrialKind::Right);
        let mut kinds = Vec::new();
        let mut rewards = 0.0;
        for _ in 0..200 {
            let before = m.trials_started();
            rewards += m.step_exact(scripted_action(&m)).unwrap().reward;
            if m.trials_started() != before {
                kinds.push(m.trial());
            }
        }
        assert!(kinds.len() >= 10);
        for w in kinds.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        let lefts = kinds.iter().filter(|k| **k == TrialKind::Left).count();
        assert!(lefts.abs_diff(kinds.len() - lefts) <= 1);
        assert!(rewards >= 2.0 * (kinds.len() - 1) as f32);

        // on a left trial the right arm is unreachable
        let mut m = AltTMaze::new(MazeInput::Frame);
        m.start_return(TrialKind::Right);
        while m.trial() != TrialKind::Left || m.phase() != Phase::Outbound {
            m.step_exact(scripted_action(&m)).unwrap();
        }
        for _ in 0..4 {
            m.step_exact(DOWN).unwrap();
        }
        assert_eq!(m.cell(), (2, 4));
        m.step_exact(RIGHT).unwrap();
        assert_eq!(m.cell(), (2, 4));
        m.step_exact(UP).unwrap();
        assert_eq!(m.cell(), (2, 4), "moved backwards down the stem");
        let mut rng = crate::seed::stream(1, "env");
        for _ in 0..500 {
            let a = rng.gen_range(0..4);
            m.step_exact(a).unwrap();
            assert!(is_open(m.cell()));
            if m.trial() == TrialKind::Left {
                assert!(m.cell().0 <= 2, "{:?}", m.cell());
            }
        }
    }

    #[test]
    fn window_stacks_history_oldest_first() {
        let mut m = AltTMaze::new(MazeInput::Window(3));
        m.start_return(TrialKind::Left);
        m.step_exact(UP).unwrap();
        let obs = m.observe();
        assert_eq!(obs.shape(), &[3, 1, 5, 5]);
        assert!(obs.data()[..25].iter().all(|v| *v == 0.0));
        assert_eq!(obs.data()[25 + 4 * 5], 1.0);
        assert_eq!(obs.data()[50 + 3 * 5], 1.0);
    }
}
