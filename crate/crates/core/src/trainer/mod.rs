//! Self-play training of the three intention agents with prioritized
//! scenario replay.

mod bank;
pub mod config;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bank::{apply_floor, pre_floor_probabilities, scenario_intentions, scenario_label, ScenarioBank, SCENARIO_COUNT};
pub use config::{NetworkKind, Profile, TrainConfig};

use crate::agents::{assign_agent, AgentSet, PolicySet, Transition, AGENT_COUNT};
use crate::control::{batched_greedy, run_controlled, LearnedController, RunLimits};
use crate::error::Result;
use crate::harness::metrics::{compute_metrics, MetricsRecord};
use crate::observation::StackTracker;
use crate::sim::{IntersectionGeometry, ScenarioSpec, VehicleId, WorldConfig, WorldState};

/// Speeds below this count as not moving for the reward.
pub const MOVING_THRESHOLD: f64 = 0.1;

/// Per-vehicle step reward. Exactly one case applies, checked in the order
/// collision, completion, standing still, progress.
pub fn compute_reward(delta_s: f64, moving: bool, collided: bool, completed: bool, k: f64) -> f64 {
    if collided {
        -10.0 * k
    } else if completed {
        10.0 * k
    } else if !moving {
        -k
    } else {
        delta_s
    }
}

/// Greedy run of one bank scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub scenario: usize,
    pub label: String,
    /// Mean undiscounted return over the scenario's vehicles.
    pub mean_return: f64,
    pub steps: u64,
    pub collided: bool,
    pub metrics: Vec<MetricsRecord>,
}

/// Runs every scenario of `bank` once with the greedy policy, in bank order.
pub fn run_evaluation_cycle(
    policy: &PolicySet<f32>,
    bank: &ScenarioBank,
    config: &TrainConfig,
    geometry: &Arc<IntersectionGeometry>,
) -> Result<Vec<EvaluationRecord>> {
    let limits = RunLimits { max_steps: config.max_episode_steps, stop_on_collision: true, wait_for_pending: false };
    bank.scenarios()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut world = WorldState::spawn_scenario(geometry.clone(), config.world_config(), spec)?;
            let mut ctl = LearnedController::new(
                policy.clone(),
                config.render_params(),
                config.frame_stack,
                config.action_speeds.clone(),
            )?;
            let run = run_controlled(&mut world, &mut ctl, limits, config.reward_k, true)?;
            Ok(EvaluationRecord {
                scenario: i,
                label: scenario_label(i),
                mean_return: run.mean_return(),
                steps: run.steps,
                collided: !run.collided.is_empty(),
                metrics: compute_metrics(&run.trajectory, config.dt),
            })
        })
        .collect()
}

/// One row of the training log, written after every evaluation cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epsilon: f64,
    pub episodes: u64,
    pub updates: u64,
    pub loss_left: f64,
    pub loss_straight: f64,
    pub loss_right: f64,
    pub eval_mean_return: f64,
    pub eval_min_return: f64,
    /// Fraction of scenarios that ended in a collision.
    pub eval_collision_rate: f64,
    /// Fraction of scenarios that hit the step cap.
    pub eval_timeout_rate: f64,
    pub eval_mean_steps: f64,
    pub max_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub steps: u64,
    pub transitions: usize,
    pub collided: bool,
    pub completed: usize,
}

/// Training state for one seed. Randomness comes from four independent
/// streams so that, for example, evaluation never shifts exploration draws.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub geometry: Arc<IntersectionGeometry>,
    pub agents: AgentSet<f32>,
    pub bank: ScenarioBank,
    pub step: u64,
    pub episodes: u64,
    pub updates: u64,
    pub log: Vec<LogRow>,
    scenario_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    loss_sum: [f64; AGENT_COUNT],
    loss_count: [u64; AGENT_COUNT],
    out_dir: Option<PathBuf>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = stream(config.seed, 0);
        let agents = AgentSet::new(
            &config.architecture(),
            config.learning_rate as f32,
            config.buffer_capacity,
            config.epsilon_start,
            config.epsilon_decay,
            config.gamma as f32,
            &mut init_rng,
        )?;
        let mut agents = agents;
        if config.grad_clip > 0.0 {
            for a in &mut agents.agents {
                a.optimizer.clip_norm = Some(config.grad_clip as f32);
            }
        }
        Ok(Self {
            geometry: Arc::new(IntersectionGeometry::default()),
            bank: ScenarioBank::new(config.priority_shift, config.priority_floor),
            agents,
            step: 0,
            episodes: 0,
            updates: 0,
            log: Vec::new(),
            scenario_rng: stream(config.seed, 1),
            explore_rng: stream(config.seed, 2),
            replay_rng: stream(config.seed, 3),
            loss_sum: [0.0; AGENT_COUNT],
            loss_count: [0; AGENT_COUNT],
            out_dir: None,
            config,
        })
    }

    /// Directory for the log and checkpoints; nothing is written without one.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(format!("train_log_seed{}.csv", self.config.seed)))
    }

    pub fn checkpoint_path(&self, tag: &str) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(format!("ckpt_seed{}_{tag}.bin", self.config.seed)))
    }

    pub fn policy(&self) -> PolicySet<f32> {
        PolicySet::from_agents(&self.agents)
    }

    fn world_config(&self) -> WorldConfig {
        self.config.world_config()
    }

    fn done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Trains until the global step budget is spent. `on_eval` sees each log
    /// row as it is produced.
    pub fn run(&mut self, mut on_eval: impl FnMut(&LogRow)) -> Result<()> {
        if let Some(path) = self.log_path() {
            // Header only, so an N = 0 run still leaves a valid log.
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(LOG_HEADER)?;
            w.flush()?;
        }
        while !self.done() {
            let spec = self.bank.sample(&mut self.scenario_rng).clone();
            self.run_episode(&spec, &mut on_eval)?;
        }
        self.save_checkpoint("final")?;
        Ok(())
    }

    /// One training episode. Stops on a collision, when every vehicle is
    /// gone, at the episode cap, or when the global budget runs out.
    pub fn run_episode(&mut self, spec: &ScenarioSpec, on_eval: &mut impl FnMut(&LogRow)) -> Result<EpisodeStats> {
        let mut world = WorldState::spawn_scenario(self.geometry.clone(), self.world_config(), spec)?;
        let mut tracker = StackTracker::new(self.config.render_params(), self.config.frame_stack);
        tracker.update(&world)?;
        let mut stats = EpisodeStats { steps: 0, transitions: 0, collided: false, completed: 0 };
        let actions_n = self.config.actions();
        while stats.steps < self.config.max_episode_steps && !self.done() && world.active_count() > 0 {
            let eps = self.agents.epsilon();
            let mut ids: Vec<VehicleId> = Vec::new();
            let mut obs: Vec<(usize, Vec<f32>)> = Vec::new();
            let mut chosen: Vec<Option<usize>> = Vec::new();
            for v in world.active_vehicles() {
                ids.push(v.id);
                obs.push((assign_agent(v.route.intention), tracker.get(v.id).expect("tracked").to_vec()));
                let explore = self.explore_rng.gen::<f64>() < eps;
                chosen.push(explore.then(|| self.explore_rng.gen_range(0..actions_n)));
            }
            let greedy_items: Vec<(usize, &[f32])> = obs
                .iter()
                .zip(&chosen)
                .filter(|(_, c)| c.is_none())
                .map(|((a, o), _)| (*a, o.as_slice()))
                .collect();
            let nets: Vec<_> = self.agents.agents.iter().map(|a| &a.online).collect();
            let greedy = batched_greedy(&nets, &greedy_items)?;
            let mut greedy_iter = greedy.into_iter();
            let actions: Vec<usize> =
                chosen.iter().map(|c| c.unwrap_or_else(|| greedy_iter.next().expect("one greedy action per slot"))).collect();
            let commands = ids.iter().zip(&actions).map(|(&id, &a)| (id, self.config.action_speeds[a])).collect();

            let report = world.step(&commands)?;
            tracker.update(&world)?;
            for (i, st) in report.vehicles.iter().enumerate() {
                debug_assert_eq!(st.id, ids[i]);
                let reward = compute_reward(st.delta_s, st.speed >= MOVING_THRESHOLD, st.collided, st.completed, self.config.reward_k);
                let terminal = st.collided || st.completed;
                let next_obs = if terminal { obs[i].1.clone() } else { tracker.get(st.id).expect("tracked").to_vec() };
                let t = Transition { obs: std::mem::take(&mut obs[i].1), action: actions[i], reward: reward as f32, next_obs, terminal };
                self.agents.agents[obs[i].0].buffer.store(&t)?;
                stats.transitions += 1;
                stats.completed += usize::from(st.completed && !st.collided);
            }
            stats.steps += 1;
            self.step += 1;
            self.after_step(on_eval)?;
            if report.any_collision() {
                stats.collided = true;
                break;
            }
        }
        self.episodes += 1;
        Ok(stats)
    }

    fn after_step(&mut self, on_eval: &mut impl FnMut(&LogRow)) -> Result<()> {
        let ready = self.agents.agents.iter().all(|a| a.buffer.len() >= self.config.batch_size);
        if ready && self.step.is_multiple_of(self.config.update_period) {
            let gamma = self.agents.gamma;
            for (i, agent) in self.agents.agents.iter_mut().enumerate() {
                if let Some(loss) = agent.update(self.config.batch_size, gamma, &mut self.replay_rng)? {
                    self.loss_sum[i] += f64::from(loss);
                    self.loss_count[i] += 1;
                }
            }
            self.updates += 1;
        }
        self.agents.anneal();
        if self.step.is_multiple_of(self.config.target_period) {
            self.agents.sync_targets();
        }
        if self.step.is_multiple_of(self.config.eval_period) {
            let row = self.evaluate()?;
            on_eval(&row);
        }
        if self.config.checkpoint_period > 0 && self.step.is_multiple_of(self.config.checkpoint_period) {
            self.save_checkpoint(&format!("step{}", self.step))?;
        }
        Ok(())
    }

    /// Evaluation cycle, scenario distribution update and one log row.
    pub fn evaluate(&mut self) -> Result<LogRow> {
        let records = run_evaluation_cycle(&self.policy(), &self.bank, &self.config, &self.geometry)?;
        let returns: Vec<f64> = records.iter().map(|r| r.mean_return).collect();
        self.bank.update(&returns)?;
        let n = records.len() as f64;
        let mean_loss = |i: usize| if self.loss_count[i] == 0 { 0.0 } else { self.loss_sum[i] / self.loss_count[i] as f64 };
        let row = LogRow {
            step: self.step,
            epsilon: self.agents.epsilon(),
            episodes: self.episodes,
            updates: self.updates,
            loss_left: mean_loss(0),
            loss_straight: mean_loss(1),
            loss_right: mean_loss(2),
            eval_mean_return: returns.iter().sum::<f64>() / n,
            eval_min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
            eval_collision_rate: records.iter().filter(|r| r.collided).count() as f64 / n,
            eval_timeout_rate: records.iter().filter(|r| r.steps >= self.config.max_episode_steps).count() as f64 / n,
            eval_mean_steps: records.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            max_probability: self.bank.probabilities().iter().copied().fold(0.0, f64::max),
        };
        self.loss_sum = [0.0; AGENT_COUNT];
        self.loss_count = [0; AGENT_COUNT];
        if let Some(path) = self.log_path() {
            let file = fs::OpenOptions::new().append(true).create(true).open(&path)?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.serialize(&row)?;
            w.flush()?;
        }
        self.log.push(row.clone());
        Ok(row)
    }

    pub fn save_checkpoint(&self, tag: &str) -> Result<()> {
        let Some(path) = self.checkpoint_path(tag) else {
            return Ok(());
        };
        let meta = [
            ("seed", self.config.seed.to_string()),
            ("step", self.step.to_string()),
            ("config_hash", self.config.hash()),
        ];
        self.agents.save(&path, &meta)?;
        Ok(())
    }
}

const LOG_HEADER: [&str; 13] = [
    "step",
    "epsilon",
    "episodes",
    "updates",
    "loss_left",
    "loss_straight",
    "loss_right",
    "eval_mean_return",
    "eval_min_return",
    "eval_collision_rate",
    "eval_timeout_rate",
    "eval_mean_steps",
    "max_probability",
];

/// Trains one seed end to end, writing the log, the resolved config and
/// checkpoints under `out_dir` when given.
pub fn train(config: TrainConfig, out_dir: Option<&Path>, on_eval: impl FnMut(&LogRow)) -> Result<Trainer> {
    let mut trainer = Trainer::new(config)?;
    if let Some(dir) = out_dir {
        trainer = trainer.with_output(dir)?;
        let mut f = File::create(dir.join(format!("config_seed{}.toml", trainer.config.seed)))?;
        f.write_all(trainer.config.to_toml().as_bytes())?;
    }
    trainer.run(on_eval)?;
    Ok(trainer)
}
