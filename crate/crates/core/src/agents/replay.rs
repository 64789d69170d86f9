use rand::Rng;

use super::AgentError;
use crate::scalar::Scalar;

/// One experience tuple. Observations are flattened frame stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub terminal: bool,
}

/// A sampled minibatch; observations are sample-major `[size, obs_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub obs: Vec<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    pub next_obs: Vec<T>,
    pub terminals: Vec<bool>,
}

/// FIFO ring of transitions. Rendered frames are binary, so observations are
/// stored one bit per value, which keeps desk-scale buffers in memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_len: usize,
    words: usize,
    obs: Vec<u64>,
    next_obs: Vec<u64>,
    actions: Vec<u8>,
    rewards: Vec<f32>,
    terminals: Vec<bool>,
    size: usize,
    cursor: usize,
}

fn pack(values: &[f32], out: &mut [u64]) -> Result<(), AgentError> {
    out.fill(0);
    for (i, &v) in values.iter().enumerate() {
        if v == 1.0 {
            out[i / 64] |= 1 << (i % 64);
        } else if v != 0.0 {
            return Err(AgentError::NonBinaryObservation { index: i, value: v });
        }
    }
    Ok(())
}

fn unpack_into<T: Scalar>(words: &[u64], len: usize, out: &mut Vec<T>) {
    for i in 0..len {
        out.push(if words[i / 64] >> (i % 64) & 1 == 1 { T::one() } else { T::zero() });
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_len: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_len,
            words: obs_len.div_ceil(64),
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            size: 0,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn store(&mut self, t: &Transition) -> Result<(), AgentError> {
        if t.obs.len() != self.obs_len || t.next_obs.len() != self.obs_len {
            return Err(AgentError::ObservationLength { expected: self.obs_len, found: t.obs.len().max(t.next_obs.len()) });
        }
        if !t.reward.is_finite() {
            return Err(AgentError::NonFiniteReward);
        }
        let action = u8::try_from(t.action).map_err(|_| AgentError::ActionOutOfRange(t.action))?;
        let mut packed = vec![0u64; self.words];
        let mut packed_next = vec![0u64; self.words];
        pack(&t.obs, &mut packed)?;
        pack(&t.next_obs, &mut packed_next)?;
        if self.size < self.capacity {
            self.obs.extend_from_slice(&packed);
            self.next_obs.extend_from_slice(&packed_next);
            self.actions.push(action);
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
            self.size += 1;
        } else {
            let slot = self.cursor;
            self.obs[slot * self.words..(slot + 1) * self.words].copy_from_slice(&packed);
            self.next_obs[slot * self.words..(slot + 1) * self.words].copy_from_slice(&packed_next);
            self.actions[slot] = action;
            self.rewards[slot] = t.reward;
            self.terminals[slot] = t.terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    fn slot_of(&self, logical: usize) -> usize {
        if self.size < self.capacity {
            logical
        } else {
            (self.cursor + logical) % self.capacity
        }
    }

    /// Transition `i` counted from the oldest entry.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.size {
            return None;
        }
        let slot = self.slot_of(i);
        let mut obs = Vec::with_capacity(self.obs_len);
        let mut next_obs = Vec::with_capacity(self.obs_len);
        unpack_into(&self.obs[slot * self.words..(slot + 1) * self.words], self.obs_len, &mut obs);
        unpack_into(&self.next_obs[slot * self.words..(slot + 1) * self.words], self.obs_len, &mut next_obs);
        Some(Transition {
            obs,
            action: self.actions[slot] as usize,
            reward: self.rewards[slot],
            next_obs,
            terminal: self.terminals[slot],
        })
    }

    /// Uniform draws with replacement; `NotReady` while fewer than `batch_size` entries exist.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if batch_size == 0 || self.size < batch_size {
            return Err(AgentError::NotReady { size: self.size, needed: batch_size });
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.size)).collect())
    }

    pub fn batch_from_indices<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let n = indices.len();
        let mut batch = Batch {
            size: n,
            obs: Vec::with_capacity(n * self.obs_len),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n * self.obs_len),
            terminals: Vec::with_capacity(n),
        };
        for &i in indices {
            let slot = self.slot_of(i);
            unpack_into(&self.obs[slot * self.words..(slot + 1) * self.words], self.obs_len, &mut batch.obs);
            unpack_into(&self.next_obs[slot * self.words..(slot + 1) * self.words], self.obs_len, &mut batch.next_obs);
            batch.actions.push(self.actions[slot] as usize);
            batch.rewards.push(T::from_f32(self.rewards[slot]).expect("finite reward"));
            batch.terminals.push(self.terminals[slot]);
        }
        batch
    }

    pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<T>, AgentError> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.batch_from_indices(&idx))
    }
}
