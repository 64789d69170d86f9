use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::PolicySet;
use crate::baselines::{ArrivalProcess, RandomController, SignalController, SignalPlan};
use crate::control::{run_controlled, LearnedController, RunLimits};
use crate::error::{Error, Result};
use crate::neural::Checkpoint;
use crate::sim::{IntersectionGeometry, ScenarioSpec, WorldConfig, WorldState};
use crate::trainer::{ScenarioBank, TrainConfig};

use super::metrics::{compute_metrics, summarize, MetricSummary, MetricsRecord};
use super::report::{round6, EvaluationReport, MetricStats, SeedReport};

/// Evaluation traffic: 600 veh/h for 600 s.
pub const DEFAULT_FLOW_RATE: f64 = 600.0;
pub const DEFAULT_HORIZON: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Trained agents, one final checkpoint per seed in `checkpoint_dir`.
    Learned { checkpoint_dir: PathBuf },
    Random,
    Signal(SignalPlan),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Learned { .. } => "mad4qn-ps".into(),
            Method::Random => "random".into(),
            Method::Signal(p) => p.name.clone(),
        }
    }

    /// `random` or a signal plan name.
    pub fn baseline(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(Method::Random),
            other => SignalPlan::by_name(other)
                .map(Method::Signal)
                .ok_or_else(|| Error::Usage(format!("unknown baseline `{other}` (expected fttl1, fttl2, fttlopt, atl1, atl2 or random)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub seeds: Vec<u64>,
    pub flow_rate: f64,
    /// Continuous-flow horizon, s.
    pub horizon: f64,
    pub config: TrainConfig,
}

impl BenchmarkSpec {
    pub fn new(config: TrainConfig, seeds: Vec<u64>) -> Self {
        Self { seeds, flow_rate: DEFAULT_FLOW_RATE, horizon: DEFAULT_HORIZON, config }
    }
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("ckpt_seed{seed}_final.bin"))
}

/// Arrivals of the flow run for `seed`, shared by every method.
pub fn flow_scenario(seed: u64, flow_rate: f64, horizon: f64) -> Result<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    Ok(ArrivalProcess::new(flow_rate)?.generate(horizon, &mut rng))
}

/// Flow world: collided vehicles leave so that traffic keeps moving.
pub fn flow_world_config(config: &TrainConfig) -> WorldConfig {
    WorldConfig { remove_collided: true, ..config.world_config() }
}

fn load_policy(dir: &Path, seed: u64, config: &TrainConfig) -> Result<PolicySet<f32>> {
    let path = checkpoint_path(dir, seed);
    if !path.exists() {
        return Err(Error::MissingCheckpoint { seed, path: path.display().to_string() });
    }
    let ckpt = Checkpoint::load(&path)?;
    Ok(PolicySet::from_checkpoint(&ckpt, &config.architecture())?)
}

/// One run's trajectory metrics plus decision latency for learned control.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub inference: Option<(u64, f64)>,
}

/// Runs `spec` under `method` to completion or `max_steps`.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    method: &Method,
    policy: Option<&PolicySet<f32>>,
    seed: u64,
    stream: u64,
    spec: &ScenarioSpec,
    world_config: WorldConfig,
    config: &TrainConfig,
    max_steps: u64,
    geometry: &Arc<IntersectionGeometry>,
) -> Result<RunOutcome> {
    let mut world = WorldState::spawn_scenario(geometry.clone(), world_config, spec)?;
    let limits = RunLimits { max_steps, stop_on_collision: false, wait_for_pending: true };
    match method {
        Method::Learned { .. } => {
            let policy = policy.expect("learned runs carry a policy").clone();
            let mut ctl = LearnedController::new(policy, config.render_params(), config.frame_stack, config.action_speeds.clone())?;
            let run = run_controlled(&mut world, &mut ctl, limits, config.reward_k, true)?;
            let secs = ctl.mean_inference_secs() * ctl.decisions() as f64;
            Ok(RunOutcome { records: compute_metrics(&run.trajectory, config.dt), inference: Some((ctl.decisions(), secs)) })
        }
        Method::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut ctl = RandomController::new(config.action_speeds.clone(), rng);
            let run = run_controlled(&mut world, &mut ctl, limits, config.reward_k, true)?;
            Ok(RunOutcome { records: compute_metrics(&run.trajectory, config.dt), inference: None })
        }
        Method::Signal(plan) => {
            let mut ctl = SignalController::new(plan.clone(), geometry, world_config.vehicle);
            let run = run_controlled(&mut world, &mut ctl, limits, config.reward_k, true)?;
            Ok(RunOutcome { records: compute_metrics(&run.trajectory, config.dt), inference: None })
        }
    }
}

/// Every seed runs the 81-scenario suite and one continuous-flow run.
/// Headline metrics come from the flow runs; suite figures are reported
/// alongside. Missing checkpoints are reported together before any run.
pub fn run_benchmark(method: &Method, spec: &BenchmarkSpec) -> Result<EvaluationReport> {
    if let Method::Learned { checkpoint_dir } = method {
        let missing: Vec<u64> = spec.seeds.iter().copied().filter(|&s| !checkpoint_path(checkpoint_dir, s).exists()).collect();
        if let Some(&first) = missing.first() {
            let list = missing.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
            return Err(Error::MissingCheckpoint {
                seed: first,
                path: format!("no final checkpoint in {} for seed(s) {list}", checkpoint_dir.display()),
            });
        }
    }
    let geometry = Arc::new(IntersectionGeometry::default());
    let bank = ScenarioBank::new(spec.config.priority_shift, spec.config.priority_floor);
    let flow_steps = (spec.horizon / spec.config.dt).round() as u64;
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut per_seed = Vec::with_capacity(seeds.len());
    let (mut decisions, mut secs) = (0u64, 0.0f64);
    for &seed in &seeds {
        let policy = match method {
            Method::Learned { checkpoint_dir } => Some(load_policy(checkpoint_dir, seed, &spec.config)?),
            _ => None,
        };
        let mut suite_records = Vec::new();
        for (i, scenario) in bank.scenarios().iter().enumerate() {
            let out = run_method(
                method,
                policy.as_ref(),
                seed,
                100 + i as u64,
                scenario,
                flow_world_config(&spec.config),
                &spec.config,
                spec.config.max_episode_steps,
                &geometry,
            )?;
            if let Some((d, s)) = out.inference {
                decisions += d;
                secs += s;
            }
            suite_records.extend(out.records);
        }
        let flow = flow_scenario(seed, spec.flow_rate, spec.horizon)?;
        let out = run_method(method, policy.as_ref(), seed, 4, &flow, flow_world_config(&spec.config), &spec.config, flow_steps, &geometry)?;
        if let Some((d, s)) = out.inference {
            decisions += d;
            secs += s;
        }
        per_seed.push(SeedReport::new(seed, &summarize(&out.records), &summarize(&suite_records)));
    }
    let inference = (decisions > 0).then(|| secs / decisions as f64);
    Ok(EvaluationReport::assemble(method.name(), spec.config.hash(), spec.flow_rate, spec.horizon, per_seed, inference))
}

impl SeedReport {
    pub fn new(seed: u64, flow: &MetricSummary, suite: &MetricSummary) -> Self {
        Self {
            seed,
            vehicles: flow.vehicles as u64,
            finished: flow.finished as u64,
            collided: flow.collided as u64,
            censored: flow.censored as u64,
            travel_time: round6(flow.mean_travel_time),
            waiting_time: round6(flow.mean_waiting_time),
            average_speed: round6(flow.mean_average_speed),
            collision_rate: round6(flow.collision_rate),
            suite_collision_rate: round6(suite.collision_rate),
            suite_waiting_time: round6(suite.mean_waiting_time),
        }
    }
}

impl MetricStats {
    pub fn over(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean: round6(mean), std: round6(var.sqrt()) }
    }
}
