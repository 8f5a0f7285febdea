//! A single training run: environment, agent, replay and seeded streams.

use crate::agent::AgentBundle;
use crate::env::Environment;
use crate::error::Result;
use crate::objectives::{train_step, LossReport, TrainConfig};
use crate::replay::ReplayBuffer;
use crate::seed::{self, Rng};
use crate::training::{evaluate_policy, Collector, Policy};

pub const DEFAULT_CAPACITY: usize = 10_000;
pub const DEFAULT_PREFILL: usize = 1_000;

pub struct Session {
    pub bundle: AgentBundle,
    pub buffer: ReplayBuffer,
    pub env: Box<dyn Environment>,
    pub train: TrainConfig,
    pub policy: Policy,
    /// Environment steps collected before each update.
    pub collect_per_update: usize,
    pub updates: usize,
    collector: Collector,
    env_rng: Rng,
    buffer_rng: Rng,
    policy_rng: Rng,
    seed: u64,
}

impl Session {
    /// Sets up a run and prefills the buffer with random-policy transitions.
    pub fn new(
        bundle: AgentBundle,
        env: Box<dyn Environment>,
        train: TrainConfig,
        policy: Policy,
        capacity: usize,
        prefill: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut s = Session {
            bundle,
            buffer: ReplayBuffer::new(capacity)?,
            env,
            train,
            policy,
            collect_per_update: 1,
            updates: 0,
            collector: Collector::new(),
            env_rng: seed::stream(seed, "env"),
            buffer_rng: seed::stream(seed, "buffer"),
            policy_rng: seed::stream(seed, "policy"),
            seed,
        };
        s.collect(Policy::Random, prefill)?;
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn collect(&mut self, policy: Policy, n: usize) -> Result<()> {
        self.collector.collect(
            self.env.as_mut(),
            &self.bundle,
            policy,
            n,
            &mut self.buffer,
            &mut self.env_rng,
            &mut self.policy_rng,
        )?;
        Ok(())
    }

    /// Swaps in a new environment (e.g. a task-B variant) and starts a fresh episode.
    pub fn replace_env(&mut self, env: Box<dyn Environment>) {
        self.env = env;
        self.collector.restart();
    }

    pub fn replace_buffer(&mut self, buffer: ReplayBuffer) {
        self.buffer = buffer;
    }

    /// Collects experience with the behaviour policy, then performs one update.
    pub fn step(&mut self) -> Result<LossReport> {
        self.collect(self.policy, self.collect_per_update)?;
        self.update()
    }

    /// One update on the current buffer without collecting.
    pub fn update(&mut self) -> Result<LossReport> {
        let report = train_step(
            &mut self.bundle,
            &self.buffer,
            &self.train,
            self.updates,
            &mut self.buffer_rng,
        )?;
        self.updates += 1;
        Ok(report)
    }

    /// Greedy score on a copy of the environment. Start states come from a
    /// fixed stream, so every evaluation of a run sees the same starts.
    pub fn evaluate(&self, episodes: usize) -> Result<f64> {
        let mut env = self.env.boxed_clone();
        let cap = env.step_cap();
        evaluate_policy(
            env.as_mut(),
            &self.bundle,
            episodes,
            cap,
            &mut seed::stream(self.seed, "eval"),
        )
    }
}
