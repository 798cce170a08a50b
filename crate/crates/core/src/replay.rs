//! Ring-buffer transition storage for the forward and reset learners, with
//! FIFO eviction and, for the forward buffer, class pools over completed
//! (relabeled) episodes that feed the discriminator's balanced sampling.

use crate::maze::{EnvAction, EnvState};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("transition does not match buffer role: {0}")]
    RoleMismatch(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferRole {
    Forward,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: EnvAction,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    /// Success label; present on forward-buffer transitions only. Holds the
    /// per-step goal indicator until the episode completes, then the
    /// episode's terminal label after relabeling.
    pub success: Option<bool>,
    pub episode_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    Positive,
    Negative,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    role: BufferRole,
    capacity: usize,
    items: VecDeque<Transition>,
    /// Global id of `items[0]`; ids are assigned monotonically on push.
    first_id: u64,
    /// Global ids of completed-episode transitions by label. Stale ids from
    /// evicted entries are pruned lazily.
    pos_pool: VecDeque<u64>,
    neg_pool: VecDeque<u64>,
}

impl ReplayBuffer {
    pub fn new(role: BufferRole, capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer {
            role,
            capacity,
            items: VecDeque::new(),
            first_id: 0,
            pos_pool: VecDeque::new(),
            neg_pool: VecDeque::new(),
        }
    }

    pub fn role(&self) -> BufferRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a transition, evicting the oldest entry at capacity. Returns
    /// the transition's global id.
    pub fn push(&mut self, t: Transition) -> Result<u64, BufferError> {
        match self.role {
            BufferRole::Forward if t.success.is_none() => {
                return Err(BufferError::RoleMismatch(
                    "forward transitions carry a success label",
                ))
            }
            BufferRole::Reset if t.success.is_some() => {
                return Err(BufferError::RoleMismatch(
                    "reset transitions carry no success label",
                ))
            }
            _ => {}
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.first_id += 1;
            self.prune_pools();
        }
        let id = self.first_id + self.items.len() as u64;
        self.items.push_back(t);
        Ok(id)
    }

    fn prune_pools(&mut self) {
        while self.pos_pool.front().is_some_and(|&id| id < self.first_id) {
            self.pos_pool.pop_front();
        }
        while self.neg_pool.front().is_some_and(|&id| id < self.first_id) {
            self.neg_pool.pop_front();
        }
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        if id < self.first_id {
            return None;
        }
        self.items.get((id - self.first_id) as usize)
    }

    pub fn next_id(&self) -> u64 {
        self.first_id + self.items.len() as u64
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::Empty);
        }
        Ok((0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }

    /// Overwrites the success labels of the (still live) transitions in
    /// `[start_id, end_id]` with the episode's terminal label and registers
    /// them in the class pools. Called once per completed forward episode.
    pub fn complete_episode(&mut self, start_id: u64, end_id: u64, success: bool) {
        debug_assert_eq!(self.role, BufferRole::Forward);
        let live_start = start_id.max(self.first_id);
        for id in live_start..=end_id {
            let idx = (id - self.first_id) as usize;
            if let Some(t) = self.items.get_mut(idx) {
                t.success = Some(success);
            }
            if success {
                self.pos_pool.push_back(id);
            } else {
                self.neg_pool.push_back(id);
            }
        }
    }

    pub fn pool_len(&self, class: LabelClass) -> usize {
        match class {
            LabelClass::Positive => self.pos_pool.len(),
            LabelClass::Negative => self.neg_pool.len(),
        }
    }

    /// Uniform with-replacement draw from one class pool.
    pub fn sample_pool<R: Rng>(
        &self,
        class: LabelClass,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>, BufferError> {
        let pool = match class {
            LabelClass::Positive => &self.pos_pool,
            LabelClass::Negative => &self.neg_pool,
        };
        if pool.is_empty() {
            return Err(BufferError::Empty);
        }
        let mut out = Vec::with_capacity(n);
        let mut drawn = 0;
        while drawn < n {
            let id = pool[rng.gen_range(0..pool.len())];
            if let Some(t) = self.get(id) {
                out.push(*t);
                drawn += 1;
            }
        }
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        BufferSnapshot {
            role: self.role,
            capacity: self.capacity,
            first_id: self.first_id,
            items: self.items.iter().copied().collect(),
            pos_pool: self.pos_pool.iter().copied().collect(),
            neg_pool: self.neg_pool.iter().copied().collect(),
        }
    }

    pub fn from_snapshot(s: BufferSnapshot) -> Self {
        ReplayBuffer {
            role: s.role,
            capacity: s.capacity,
            first_id: s.first_id,
            items: s.items.into(),
            pos_pool: s.pos_pool.into(),
            neg_pool: s.neg_pool.into(),
        }
    }
}

/// Serializable image of a buffer, for optional checkpoint inclusion.
#[derive(Debug, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub role: BufferRole,
    pub capacity: usize,
    pub first_id: u64,
    pub items: Vec<Transition>,
    pub pos_pool: Vec<u64>,
    pub neg_pool: Vec<u64>,
}
