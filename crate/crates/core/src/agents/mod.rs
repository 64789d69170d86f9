//! Intention-specific D3QN agents: one online/target network pair, optimizer
//! and replay buffer per turning intention.

mod replay;

pub use replay::{Batch, ReplayBuffer, Transition};

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::neural::{backprop_loss, Architecture, Checkpoint, DuelingQNetwork, NeuralError, RmsProp};
use crate::scalar::Scalar;
use crate::sim::Intention;

pub const AGENT_COUNT: usize = 3;
pub const AGENT_NAMES: [&str; AGENT_COUNT] = ["left", "straight", "right"];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer not ready: {size} transitions, batch needs {needed}")]
    NotReady { size: usize, needed: usize },
    #[error("observation has {found} values, buffer expects {expected}")]
    ObservationLength { expected: usize, found: usize },
    #[error("observation value {value} at {index} is not binary")]
    NonBinaryObservation { index: usize, value: f32 },
    #[error("reward is not finite")]
    NonFiniteReward,
    #[error("action {0} out of range")]
    ActionOutOfRange(usize),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Fixed intention → agent mapping.
pub fn assign_agent(intention: Intention) -> usize {
    match intention {
        Intention::Left => 0,
        Intention::Straight => 1,
        Intention::Right => 2,
    }
}

/// Argmax with ties going to the lowest index.
pub fn greedy_action<T: Scalar>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy over `net`'s Q-values for one flattened observation.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &DuelingQNetwork<T>,
    obs: &[T],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NeuralError> {
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.actions()));
    }
    let out = net.forward(obs, 1)?;
    Ok(greedy_action(&out.q))
}

pub fn anneal_epsilon(epsilon: f64, decay: f64) -> f64 {
    (epsilon - decay).max(0.0)
}

/// ε after `steps` anneals from `start`, clamped to `[0, 1]`.
pub fn epsilon_after(start: f64, decay: f64, steps: u64) -> f64 {
    (start - steps as f64 * decay).clamp(0.0, 1.0)
}

/// Double-DQN targets: the online net picks `a'`, the target net scores it.
pub fn compute_targets<T: Scalar>(
    online: &DuelingQNetwork<T>,
    target: &DuelingQNetwork<T>,
    batch: &Batch<T>,
    gamma: T,
) -> Result<Vec<T>, NeuralError> {
    let q_online = online.forward(&batch.next_obs, batch.size)?;
    let q_target = target.forward(&batch.next_obs, batch.size)?;
    Ok((0..batch.size)
        .map(|i| {
            if batch.terminals[i] {
                batch.rewards[i]
            } else {
                let a = greedy_action(q_online.q_row(i));
                batch.rewards[i] + gamma * q_target.q_row(i)[a]
            }
        })
        .collect())
}

/// Single-network max-form target, `r + γ·max_a' Q(s', a')`.
pub fn max_form_targets<T: Scalar>(net: &DuelingQNetwork<T>, batch: &Batch<T>, gamma: T) -> Result<Vec<T>, NeuralError> {
    let q = net.forward(&batch.next_obs, batch.size)?;
    Ok((0..batch.size)
        .map(|i| {
            if batch.terminals[i] {
                batch.rewards[i]
            } else {
                let row = q.q_row(i);
                batch.rewards[i] + gamma * row[greedy_action(row)]
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Agent<T> {
    pub online: DuelingQNetwork<T>,
    pub target: DuelingQNetwork<T>,
    pub optimizer: RmsProp<T>,
    pub buffer: ReplayBuffer,
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, learning_rate: T, capacity: usize, rng: &mut R) -> Result<Self, NeuralError> {
        let online = DuelingQNetwork::new(arch.clone(), rng)?;
        let target = online.clone();
        let optimizer = RmsProp::for_network(learning_rate, &online);
        Ok(Self { online, target, optimizer, buffer: ReplayBuffer::new(capacity, arch.input_len()) })
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    /// One gradient step on a sampled batch. Returns `Ok(None)` while the buffer is not ready.
    pub fn update<R: Rng + ?Sized>(&mut self, batch_size: usize, gamma: T, rng: &mut R) -> Result<Option<T>, AgentError> {
        let batch = match self.buffer.sample_batch::<T, _>(batch_size, rng) {
            Ok(b) => b,
            Err(AgentError::NotReady { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let targets = compute_targets(&self.online, &self.target, &batch, gamma)?;
        let (loss, grads) = backprop_loss(&self.online, &batch.obs, batch.size, &batch.actions, &targets)?;
        self.optimizer.step(&mut self.online, &grads);
        Ok(Some(loss))
    }
}

/// The three intention agents plus the shared exploration schedule.
#[derive(Debug, Clone)]
pub struct AgentSet<T> {
    pub agents: Vec<Agent<T>>,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    /// Number of anneal calls so far; ε is evaluated in closed form from it
    /// so that long runs do not accumulate subtraction error.
    pub anneal_steps: u64,
    pub gamma: T,
}

impl<T: Scalar> AgentSet<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        arch: &Architecture,
        learning_rate: T,
        capacity: usize,
        epsilon: f64,
        epsilon_decay: f64,
        gamma: T,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let agents = (0..AGENT_COUNT).map(|_| Agent::new(arch, learning_rate, capacity, rng)).collect::<Result<_, _>>()?;
        Ok(Self { agents, epsilon_start: epsilon, epsilon_decay, anneal_steps: 0, gamma })
    }

    pub fn architecture(&self) -> &Architecture {
        self.agents[0].online.architecture()
    }

    pub fn agent_for(&self, intention: Intention) -> &Agent<T> {
        &self.agents[assign_agent(intention)]
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_after(self.epsilon_start, self.epsilon_decay, self.anneal_steps)
    }

    pub fn anneal(&mut self) {
        self.anneal_steps += 1;
    }

    pub fn sync_targets(&mut self) {
        for a in &mut self.agents {
            a.sync_target();
        }
    }

    /// Online and target networks of every agent in one file.
    pub fn to_checkpoint(&self, metadata: &[(&str, String)]) -> Result<Checkpoint, NeuralError> {
        let mut ckpt = Checkpoint::new(self.architecture().clone());
        for (name, agent) in AGENT_NAMES.iter().zip(&self.agents) {
            ckpt.insert_network(&format!("{name}.online."), &agent.online)?;
            ckpt.insert_network(&format!("{name}.target."), &agent.target)?;
        }
        ckpt.metadata.insert("epsilon".into(), format!("{:e}", self.epsilon()));
        for (k, v) in metadata {
            ckpt.metadata.insert((*k).to_string(), v.clone());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path, metadata: &[(&str, String)]) -> Result<(), NeuralError> {
        self.to_checkpoint(metadata)?.save(path)
    }
}

/// Greedy-only view of trained online networks, as loaded for evaluation.
#[derive(Debug, Clone)]
pub struct PolicySet<T> {
    pub networks: Vec<DuelingQNetwork<T>>,
}

impl<T: Scalar> PolicySet<T> {
    pub fn from_agents(set: &AgentSet<T>) -> Self {
        Self { networks: set.agents.iter().map(|a| a.online.clone()).collect() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, expected: &Architecture) -> Result<Self, NeuralError> {
        let networks = AGENT_NAMES
            .iter()
            .map(|name| ckpt.network(&format!("{name}.online."), expected))
            .collect::<Result<_, _>>()?;
        Ok(Self { networks })
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let ckpt = Checkpoint::load(path)?;
        let arch = ckpt.architecture.clone();
        Self::from_checkpoint(&ckpt, &arch)
    }

    pub fn architecture(&self) -> &Architecture {
        self.networks[0].architecture()
    }
}
