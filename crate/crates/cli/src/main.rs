use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aim_core::agents::PolicySet;
use aim_core::baselines::{RandomController, SignalController};
use aim_core::control::{Controller, LearnedController};
use aim_core::harness::benchmark::{checkpoint_path, flow_scenario, flow_world_config, BenchmarkSpec, Method};
use aim_core::harness::{export_report, run_benchmark, EvaluationReport, ReportFormat};
use aim_core::neural::Checkpoint;
use aim_core::observation::render_frame;
use aim_core::sim::trajectory::{write_trajectory_csv, TrajectoryRecorder};
use aim_core::sim::{IntersectionGeometry, ScenarioSpec, VehicleId, WorldState};
use aim_core::trainer::{train, Profile, TrainConfig};
use aim_core::{Error, ErrorKind, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CONTRACT: u8 = 4;

#[derive(Parser)]
#[command(name = "aim", version, about = "Signal-free intersection control with intention-specific D3QN agents")]
struct Cli {
    /// TOML file overriding keys of the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed, and the default evaluation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Hyperparameter profile.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three agents for one seed.
    Train {
        /// Output directory for the log, resolved config and checkpoints.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override the total step budget.
        #[arg(long)]
        steps: Option<u64>,
        /// Suppress per-cycle progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Benchmark trained checkpoints.
    Evaluate {
        /// Directory holding ckpt_seed{seed}_final.bin files.
        #[arg(long, default_value = "runs")]
        checkpoint_dir: PathBuf,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Benchmark a reference controller.
    Baseline {
        /// fttl1, fttl2, fttlopt, atl1, atl2 or random.
        #[arg(long)]
        baseline: String,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Benchmark every baseline, plus trained checkpoints when a directory is given.
    Bench {
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Directory receiving one report per method.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        flow: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Print the resolved configuration, network and hash.
    Describe,
    /// Run one scenario or flow and write its trajectory CSV.
    DumpTrajectory {
        /// Scenario text file; without it a Poisson flow is generated from the seed.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// random, a signal plan name, or learned.
        #[arg(long, default_value = "random")]
        controller: String,
        /// Checkpoint for the learned controller.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trajectory CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write raw observation frames of this vehicle, one file per step.
        #[arg(long)]
        frames_vehicle: Option<u32>,
        #[arg(long, default_value = "frames")]
        frames_dir: PathBuf,
        #[arg(long)]
        max_steps: Option<u64>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated seeds; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Report path; the format follows the extension unless --format is set.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Vehicles per hour over all approaches.
    #[arg(long)]
    flow: Option<f64>,
    /// Continuous-flow horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let profile: Profile = cli.profile.parse()?;
    let base = TrainConfig::for_profile(profile);
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::from_toml_over(&base, &text)?
        }
        None => base,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bench_spec(cfg: &TrainConfig, seeds: &[u64], flow: Option<f64>, horizon: Option<f64>) -> Result<BenchmarkSpec> {
    let mut spec = BenchmarkSpec::new(cfg.clone(), if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() });
    if let Some(f) = flow {
        spec.flow_rate = f;
    }
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Usage("--horizon must be positive".into()));
        }
        spec.horizon = h;
    }
    Ok(spec)
}

fn print_report(r: &EvaluationReport) {
    println!(
        "{:<10} seeds {:>2}  travel {:8.3} s  waiting {:8.3} s  speed {:7.3} m/s  collisions {:6.2}%{}",
        r.method,
        r.seeds.len(),
        r.travel_time.mean,
        r.waiting_time.mean,
        r.average_speed.mean,
        100.0 * r.collision_rate.mean,
        r.inference_secs.map(|s| format!("  inference {:.3} ms/decision", s * 1e3)).unwrap_or_default()
    );
}

fn write_report(r: &EvaluationReport, path: &Option<PathBuf>, format: &Option<String>) -> Result<()> {
    let Some(path) = path else {
        return Ok(());
    };
    let fmt = match format {
        Some(f) => f.parse()?,
        None => ReportFormat::from_path(path)?,
    };
    export_report(r, path, fmt)
}

fn benchmark(method: Method, cfg: &TrainConfig, args: &BenchArgs) -> Result<()> {
    let spec = bench_spec(cfg, &args.seeds, args.flow, args.horizon)?;
    if let Some(f) = &args.format {
        f.parse::<ReportFormat>()?;
    }
    let report = run_benchmark(&method, &spec)?;
    print_report(&report);
    write_report(&report, &args.report, &args.format)
}

fn controller_for(name: &str, cfg: &TrainConfig, checkpoint: Option<&Path>, geometry: &IntersectionGeometry) -> Result<Box<dyn Controller>> {
    if name == "learned" {
        let path = checkpoint.ok_or_else(|| Error::Usage("--controller learned needs --checkpoint".into()))?;
        if !path.exists() {
            return Err(Error::MissingCheckpoint { seed: cfg.seed, path: path.display().to_string() });
        }
        let policy = PolicySet::from_checkpoint(&Checkpoint::load(path)?, &cfg.architecture())?;
        return Ok(Box::new(LearnedController::new(policy, cfg.render_params(), cfg.frame_stack, cfg.action_speeds.clone())?));
    }
    match Method::baseline(name)? {
        Method::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(4);
            Ok(Box::new(RandomController::new(cfg.action_speeds.clone(), rng)))
        }
        Method::Signal(plan) => Ok(Box::new(SignalController::new(plan, geometry, cfg.world_config().vehicle))),
        Method::Learned { .. } => unreachable!("handled above"),
    }
}

#[allow(clippy::too_many_arguments)]
fn dump_trajectory(
    cfg: &TrainConfig,
    scenario: Option<&Path>,
    controller: &str,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    frames_vehicle: Option<u32>,
    frames_dir: &Path,
    max_steps: Option<u64>,
) -> Result<()> {
    let geometry = Arc::new(IntersectionGeometry::default());
    let (spec, default_steps) = match scenario {
        Some(p) => (ScenarioSpec::load(p)?, cfg.max_episode_steps),
        None => (flow_scenario(cfg.seed, 600.0, 600.0)?, 6_000),
    };
    let mut world = WorldState::spawn_scenario(geometry.clone(), flow_world_config(cfg), &spec)?;
    let mut ctl = controller_for(controller, cfg, checkpoint, &geometry)?;
    let mut recorder = TrajectoryRecorder::new();
    recorder.record(&world);
    if frames_vehicle.is_some() {
        fs::create_dir_all(frames_dir)?;
    }
    let params = cfg.render_params();
    for _ in 0..max_steps.unwrap_or(default_steps) {
        if world.is_finished() {
            break;
        }
        if let Some(id) = frames_vehicle {
            if world.vehicle(VehicleId(id)).is_some_and(|v| v.is_active()) {
                let frame = render_frame(&world, VehicleId(id), &params)?;
                let path = frames_dir.join(format!("vehicle{id}_step{:06}.raw", world.time_step_index()));
                frame.write_raw(BufWriter::new(File::create(path)?))?;
            }
        }
        let commands = if world.active_count() == 0 { BTreeMap::new() } else { ctl.commands(&world)? };
        let report = world.step(&commands)?;
        ctl.observe(&world, &report);
        recorder.record(&world);
    }
    let rows = recorder.into_rows();
    match out {
        Some(p) => write_trajectory_csv(&rows, BufWriter::new(File::create(p)?))?,
        None => write_trajectory_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Train { out, steps, quiet } => {
            let mut cfg = cfg;
            if let Some(n) = steps {
                cfg.total_steps = n;
            }
            let start = Instant::now();
            let seed = cfg.seed;
            let trainer = train(cfg, Some(&out), |r| {
                if !quiet {
                    eprintln!(
                        "[{:>6.0}s] step {:>8} eps {:.3} episodes {:>6} eval return {:>9.3} collisions {:>5.1}% timeouts {:>5.1}%",
                        start.elapsed().as_secs_f64(),
                        r.step,
                        r.epsilon,
                        r.episodes,
                        r.eval_mean_return,
                        100.0 * r.eval_collision_rate,
                        100.0 * r.eval_timeout_rate
                    );
                }
            })?;
            println!("trained seed {seed}: {} steps, {} episodes", trainer.step, trainer.episodes);
            if let Some(p) = trainer.checkpoint_path("final") {
                println!("checkpoint {}", p.display());
            }
            Ok(())
        }
        Command::Evaluate { checkpoint_dir, bench } => benchmark(Method::Learned { checkpoint_dir }, &cfg, &bench),
        Command::Baseline { baseline, bench } => benchmark(Method::baseline(&baseline)?, &cfg, &bench),
        Command::Bench { checkpoint_dir, out, format, seeds, flow, horizon } => {
            let fmt: ReportFormat = format.parse()?;
            let spec = bench_spec(&cfg, &seeds, flow, horizon)?;
            fs::create_dir_all(&out)?;
            let mut methods: Vec<Method> = ["random", "fttl1", "fttl2", "fttlopt", "atl1", "atl2"]
                .iter()
                .map(|n| Method::baseline(n))
                .collect::<Result<_>>()?;
            if let Some(dir) = checkpoint_dir {
                methods.insert(0, Method::Learned { checkpoint_dir: dir });
            }
            for m in methods {
                let report = run_benchmark(&m, &spec)?;
                print_report(&report);
                let ext = if fmt == ReportFormat::Csv { "csv" } else { "json" };
                export_report(&report, &out.join(format!("{}.{ext}", report.method)), fmt)?;
            }
            Ok(())
        }
        Command::Describe => {
            let arch = cfg.architecture();
            println!("profile      {}", cli.profile);
            println!("config hash  {}", cfg.hash());
            println!("network      {arch}");
            println!("parameters   {} per network, 3 agents", arch.parameter_count()?);
            println!("checkpoint   {}", checkpoint_path(Path::new("runs"), cfg.seed).display());
            println!();
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::DumpTrajectory { scenario, controller, checkpoint, out, frames_vehicle, frames_dir, max_steps } => dump_trajectory(
            &cfg,
            scenario.as_deref(),
            &controller,
            checkpoint.as_deref(),
            out.as_deref(),
            frames_vehicle,
            &frames_dir,
            max_steps,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Io => EXIT_IO,
                ErrorKind::Contract => EXIT_CONTRACT,
            })
        }
    }
}
