//! Experience collection, greedy evaluation and loss-weight selection.

use std::collections::HashMap;

use rand::Rng as _;

use crate::agent::{AgentBundle, LossWeights};
use crate::autodiff::Tensor;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    Random,
    /// Random action with probability ε, otherwise greedy under the online Q.
    EpsilonGreedy(f64),
}

pub fn choose_action(
    policy: Policy,
    bundle: &AgentBundle,
    obs: &Tensor<f32>,
    n_actions: usize,
    rng: &mut Rng,
) -> Result<usize> {
    match policy {
        Policy::Random => Ok(rng.gen_range(0..n_actions)),
        Policy::EpsilonGreedy(eps) => {
            if rng.gen::<f64>() < eps {
                Ok(rng.gen_range(0..n_actions))
            } else {
                bundle.greedy_action(obs)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CollectStats {
    pub steps: usize,
    pub episodes: usize,
    pub reward: f64,
}

/// Runs a behaviour policy in an environment across calls, so that each
/// stored transition carries the action actually taken next.
#[derive(Clone, Debug, Default)]
pub struct Collector {
    pending: Option<(Tensor<f32>, usize)>,
    episode_steps: usize,
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forgets the current episode; the next call starts a fresh one.
    pub fn restart(&mut self) {
        self.pending = None;
        self.episode_steps = 0;
    }

    pub fn collect(
        &mut self,
        env: &mut dyn Environment,
        bundle: &AgentBundle,
        policy: Policy,
        n_steps: usize,
        buffer: &mut ReplayBuffer,
        env_rng: &mut Rng,
        policy_rng: &mut Rng,
    ) -> Result<CollectStats> {
        let n_actions = env.n_actions();
        let mut stats = CollectStats::default();
        for _ in 0..n_steps {
            let (obs, action) = match self.pending.take() {
                Some(p) => p,
                None => {
                    let obs = env.reset(env_rng);
                    self.episode_steps = 0;
                    let a = choose_action(policy, bundle, &obs, n_actions, policy_rng)?;
                    (obs, a)
                }
            };
            let step = env.step(action, env_rng)?;
            self.episode_steps += 1;
            stats.steps += 1;
            stats.reward += step.reward as f64;
            if step.terminal {
                buffer.push(&obs, action, step.reward, &step.obs, None, true)?;
                stats.episodes += 1;
                continue;
            }
            let next = choose_action(policy, bundle, &step.obs, n_actions, policy_rng)?;
            buffer.push(&obs, action, step.reward, &step.obs, Some(next), false)?;
            if self.episode_steps >= env.episode_limit() {
                stats.episodes += 1;
            } else {
                self.pending = Some((step.obs, next));
            }
        }
        Ok(stats)
    }
}

/// Fraction of episodes reaching the goal within `step_cap` steps when
/// actions come from `choose`.
pub fn evaluate_with(
    env: &mut dyn Environment,
    n_episodes: usize,
    step_cap: usize,
    rng: &mut Rng,
    mut choose: impl FnMut(&Tensor<f32>, &dyn Environment) -> Result<usize>,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut wins = 0usize;
    for _ in 0..n_episodes {
        let mut obs = env.eval_reset(rng);
        for _ in 0..step_cap {
            let a = choose(&obs, env)?;
            let step = env.step(a, rng)?;
            obs = step.obs;
            if env.succeeded() || step.terminal {
                break;
            }
        }
        if env.succeeded() {
            wins += 1;
        }
    }
    Ok(wins as f64 / n_episodes as f64)
}

/// Greedy-policy episode score in `[0, 1]`.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    bundle: &AgentBundle,
    n_episodes: usize,
    step_cap: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut memo: HashMap<Vec<u32>, usize> = HashMap::new();
    evaluate_with(env, n_episodes, step_cap, rng, |obs, _| {
        let key: Vec<u32> = obs.data().iter().map(|v| v.to_bits()).collect();
        if let Some(a) = memo.get(&key) {
            return Ok(*a);
        }
        let a = bundle.greedy_action(obs)?;
        memo.insert(key, a);
        Ok(a)
    })
}

/// Model families whose loss weights are chosen by grid search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    MfOnly,
    NegOnly,
    Predictive { gamma: f64 },
}

fn triples(list: &[[f64; 3]]) -> Vec<LossWeights> {
    list.iter()
        .map(|[q, neg, pos]| LossWeights::new(*q, *neg, *pos))
        .collect()
}

impl Family {
    /// Candidate `(w_Q, w_-, w_+)` triples searched for this family.
    pub fn candidates(self) -> Result<Vec<LossWeights>> {
        Ok(match self {
            Family::MfOnly => triples(&[[1e-5, 0.0, 0.0], [1e-4, 0.0, 0.0], [1e-3, 0.0, 0.0]]),
            Family::NegOnly => triples(&[
                [1e-4, 1e-6, 0.0],
                [1e-4, 1e-5, 0.0],
                [1e-4, 1e-4, 0.0],
                [1e-4, 1e-3, 0.0],
                [1e-4, 1e-2, 0.0],
            ]),
            Family::Predictive { gamma } if gamma == 0.0 => triples(&[
                [1e-4, 1e-6, 1e-6],
                [1e-4, 1e-5, 1e-6],
                [1e-4, 1e-4, 1e-6],
                [1e-4, 1e-3, 1e-6],
            ]),
            Family::Predictive { gamma } if gamma == 0.25 || gamma == 0.5 => triples(&[
                [1e-4, 1e-6, 1e-6],
                [1e-4, 1e-5, 1e-6],
                [1e-4, 1e-4, 1e-6],
                [1e-4, 1e-3, 1e-6],
                [1e-4, 1e-6, 1e-7],
                [1e-4, 1e-5, 1e-7],
                [1e-4, 1e-4, 1e-7],
                [1e-4, 1e-3, 1e-7],
            ]),
            Family::Predictive { gamma } if gamma == 0.8 => triples(&[
                [1e-4, 1e-6, 1e-7],
                [1e-4, 1e-5, 1e-7],
                [1e-4, 1e-4, 1e-7],
                [1e-4, 1e-3, 1e-7],
                [1e-4, 1e-6, 1e-8],
                [1e-4, 1e-5, 1e-7],
                [1e-4, 1e-4, 1e-8],
                [1e-4, 1e-3, 1e-8],
            ]),
            Family::Predictive { gamma } => {
                return Err(Error::Config(format!(
                    "no weight candidates for gamma = {gamma}"
                )))
            }
        })
    }

    /// Reference weights for the base architecture.
    pub fn default_weights(self) -> Result<LossWeights> {
        Ok(match self {
            Family::MfOnly => LossWeights::new(1e-4, 0.0, 0.0),
            Family::NegOnly => LossWeights::new(1e-4, 1e-4, 0.0),
            Family::Predictive { gamma } if gamma == 0.0 => LossWeights::new(1e-4, 1e-5, 1e-6),
            Family::Predictive { gamma } if gamma == 0.25 => LossWeights::new(1e-4, 1e-4, 1e-6),
            Family::Predictive { gamma } if gamma == 0.5 => LossWeights::new(1e-4, 1e-4, 1e-7),
            Family::Predictive { gamma } if gamma == 0.8 => LossWeights::new(1e-4, 1e-4, 1e-8),
            Family::Predictive { gamma } => {
                return Err(Error::Config(format!(
                    "no reference weights for gamma = {gamma}"
                )))
            }
        })
    }
}

/// Picks the candidate with the highest score; ties go to the lower `w_+`,
/// then the lower `w_-`. Returns the winner and every evaluated score.
pub fn grid_search_weights(
    candidates: &[LossWeights],
    mut score: impl FnMut(LossWeights) -> Result<f64>,
) -> Result<(LossWeights, Vec<(LossWeights, f64)>)> {
    if candidates.is_empty() {
        return Err(Error::Contract(
            "grid search needs at least one candidate".into(),
        ));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &c in candidates {
        scored.push((c, score(c)?));
    }
    let best = scored
        .iter()
        .copied()
        .reduce(|best, cur| {
            let better = cur.1 > best.1
                || (cur.1 == best.1
                    && (cur.0.pos < best.0.pos
                        || (cur.0.pos == best.0.pos && cur.0.neg < best.0.neg)));
            if better {
                cur
            } else {
                best
            }
        })
        .unwrap();
    Ok((best.0, scored))
}
