//! Experience storage: interned observations and a bounded transition ring.

use std::collections::HashMap;

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Deduplicating observation table. Identical observations (bitwise) share an id,
/// which lets a training batch encode each distinct observation once.
#[derive(Clone, Debug, Default)]
pub struct ObsStore {
    ids: HashMap<Vec<u32>, usize>,
    items: Vec<Tensor<f32>>,
}

fn key(obs: &Tensor<f32>) -> Vec<u32> {
    obs.data().iter().map(|v| v.to_bits()).collect()
}

impl ObsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, obs: &Tensor<f32>) -> usize {
        if let Some(id) = self.ids.get(&key(obs)) {
            return *id;
        }
        let id = self.items.len();
        self.ids.insert(key(obs), id);
        self.items.push(obs.clone());
        id
    }

    pub fn lookup(&self, obs: &Tensor<f32>) -> Option<usize> {
        self.ids.get(&key(obs)).copied()
    }

    pub fn get(&self, id: usize) -> &Tensor<f32> {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One replayed step `(o_t, a_t, r_t, o_{t+1}, a_{t+1})`; observations are [`ObsStore`] ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub obs: usize,
    pub action: usize,
    pub reward: f32,
    pub next_obs: usize,
    /// Action taken from `next_obs`; absent only on terminal transitions.
    pub next_action: Option<usize>,
    pub terminal: bool,
}

/// Bounded ring of transitions with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
    store: ObsStore,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            store: ObsStore::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn store(&self) -> &ObsStore {
        &self.store
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn obs(&self, id: usize) -> &Tensor<f32> {
        self.store.get(id)
    }

    pub fn push(
        &mut self,
        obs: &Tensor<f32>,
        action: usize,
        reward: f32,
        next_obs: &Tensor<f32>,
        next_action: Option<usize>,
        terminal: bool,
    ) -> Result<()> {
        if !terminal && next_action.is_none() {
            return Err(Error::Contract(
                "non-terminal transition needs its successor action".into(),
            ));
        }
        let t = Transition {
            obs: self.store.intern(obs),
            action,
            reward,
            next_obs: self.store.intern(next_obs),
            next_action: if terminal { None } else { next_action },
            terminal,
        };
        self.push_transition(t);
        Ok(())
    }

    /// Appends an already-interned transition, overwriting the oldest when full.
    pub fn push_transition(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        rng.gen_range(0..self.items.len())
    }
}
