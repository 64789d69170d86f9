//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criteria 9 and 10 train four desk-profile
//! runs through the `aim` binary, which takes around three hours on one core.
//! Numeric arguments restrict the run to those criteria.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use aim_core::agents::{compute_targets, epsilon_after, max_form_targets, Batch};
use aim_core::baselines::{atl_step, fttl_state_at, Phase, PhaseGroup, SignalPlan, SignalState};
use aim_core::harness::benchmark::{flow_scenario, flow_world_config, run_method, Method, DEFAULT_FLOW_RATE, DEFAULT_HORIZON};
use aim_core::harness::{import_report, EvaluationReport, ReportFormat};
use aim_core::neural::{backprop_loss, conv2d, Architecture, ConvSpec, DuelingQNetwork};
use aim_core::sim::{Approach, Intention, IntersectionGeometry, Route, WorldConfig, WorldState};
use aim_core::trainer::{apply_floor, compute_reward, pre_floor_probabilities, ScenarioBank, TrainConfig, SCENARIO_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeds trained and benchmarked for the qualitative comparison.
const DESK_SEEDS: [u64; 3] = [7, 8, 9];
/// Seeds that must satisfy (a) and (c) out of `DESK_SEEDS`.
const REQUIRED_SEEDS: usize = 2;
const MAX_LEARNED_COLLISION_RATE: f64 = 0.2;
const MIN_RANDOM_COLLISION_RATE: f64 = 0.5;
const SIGNAL_SAFETY_SEEDS: u64 = 10;
const MIN_STEPS_PER_SEC: f64 = 10_000.0;
const MAX_DECISION_LATENCY: Duration = Duration::from_millis(100);

type Outcome = Result<String, String>;
type Criterion<'a> = (u32, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dueling_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arch = Architecture::compact(9, 16, [4, 8, 8], 16, 2);
    let mut worst = 0.0f32;
    for _ in 0..1000 {
        let net: DuelingQNetwork<f32> = DuelingQNetwork::new(arch.clone(), &mut rng).map_err(|e| e.to_string())?;
        let x: Vec<f32> = (0..arch.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = net.forward(&x, 1).map_err(|e| e.to_string())?;
        let mean = out.q.iter().map(|q| q - out.v[0]).sum::<f32>() / out.q.len() as f32;
        worst = worst.max(mean.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 10.0, format!("1000 draws, max |mean(Q - V)| = {worst:.2e}, {secs:.2} s"))
}

fn small_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let side = rng.gen_range(5..=7);
    Architecture {
        input_channels: rng.gen_range(1..=2),
        input_height: side,
        input_width: side,
        convs: vec![
            ConvSpec { filters: rng.gen_range(1..=3), kernel: 3, stride: rng.gen_range(1..=2) },
            ConvSpec { filters: rng.gen_range(1..=2), kernel: 2, stride: 1 },
        ],
        hidden: rng.gen_range(2..=6),
        actions: 2,
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let arch = small_arch(&mut rng);
        if arch.parameter_count().map_err(|e| e.to_string())? > 1000 {
            return Err("oracle network exceeds 1k parameters".into());
        }
        let mut net: DuelingQNetwork<f64> = DuelingQNetwork::new(arch.clone(), &mut rng).map_err(|e| e.to_string())?;
        // Random biases keep units off the ReLU kink, where differences are meaningless.
        let names = net.tensor_names();
        for (name, t) in names.iter().zip(net.tensors_mut()) {
            if name.ends_with("bias") {
                t.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
            }
        }
        let batch = rng.gen_range(1..=3);
        let x: Vec<f64> = (0..batch * arch.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..2)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let loss = |n: &DuelingQNetwork<f64>| backprop_loss(n, &x, batch, &actions, &targets).map_err(|e| e.to_string());
        let (_, grads) = loss(&net)?;
        let eps = 1e-6;
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (ti, g) in grads.tensors.iter().enumerate() {
            for (pi, &a) in g.iter().enumerate() {
                let mut plus = net.clone();
                plus.tensors_mut()[ti][pi] += eps;
                let mut minus = net.clone();
                minus.tensors_mut()[ti][pi] -= eps;
                let numeric = (loss(&plus)?.0 - loss(&minus)?.0) / (2.0 * eps);
                diff += (a - numeric) * (a - numeric);
                na += a * a;
                nn += numeric * numeric;
            }
        }
        worst = worst.max(diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-5 && secs < 60.0, format!("100 cases, max relative error {worst:.2e}, {secs:.2} s"))
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, filters: &[f64], o: usize, k: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += input[(ic * h + y * s + i) * w + x * s + j] * filters[((oc * c + ic) * k + i) * k + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst32 = 0.0f64;
    for case in 0..200 {
        let (c, o, k, s) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(k..k + 9), rng.gen_range(k..k + 9));
        // Integer data makes double-precision sums exact in any order.
        let input: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-8i32..=8) as f64).collect();
        let filters: Vec<f64> = (0..o * c * k * k).map(|_| rng.gen_range(-8i32..=8) as f64).collect();
        let expected = naive_conv(&input, c, h, w, &filters, o, k, s);
        let (fast, _, _) = conv2d(&input, c, h, w, &filters, o, k, s).map_err(|e| e.to_string())?;
        if fast != expected {
            return Err(format!("case {case}: double precision differs from the direct loop"));
        }
        let real: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = naive_conv(&real, c, h, w, &filters, o, k, s);
        let in32: Vec<f32> = real.iter().map(|&v| v as f32).collect();
        let f32s: Vec<f32> = filters.iter().map(|&v| v as f32).collect();
        let (fast32, _, _) = conv2d(&in32, c, h, w, &f32s, o, k, s).map_err(|e| e.to_string())?;
        let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (e, a) in expected.iter().zip(&fast32) {
            worst32 = worst32.max((e - *a as f64).abs() / scale);
        }
    }
    let chain = Architecture::parity().conv_output_sizes().map_err(|e| e.to_string())?;
    let ok = worst32 <= 1e-5 && chain == vec![(11, 11), (4, 4), (2, 2)];
    check(ok, format!("200 shapes exact in f64, f32 max relative error {worst32:.2e}, 48x48 chain {chain:?}"))
}

fn reward_table() -> Outcome {
    let cases = [
        (compute_reward(1.5, true, false, false, 1.0), 1.5),
        (compute_reward(0.0, false, false, false, 1.0), -1.0),
        (compute_reward(1.5, true, true, false, 1.0), -10.0),
        (compute_reward(1.5, true, false, true, 1.0), 10.0),
    ];
    if let Some((got, want)) = cases.iter().find(|(g, w)| g != w) {
        return Err(format!("expected {want}, got {got}"));
    }
    // Every flag combination: collision beats completion beats standing still.
    for bits in 0..8u8 {
        let (moving, collided, completed) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
        let want = if collided {
            -10.0
        } else if completed {
            10.0
        } else if !moving {
            -1.0
        } else {
            0.75
        };
        let got = compute_reward(0.75, moving, collided, completed, 1.0);
        if got != want {
            return Err(format!("flags {bits:03b}: expected {want}, got {got}"));
        }
    }
    Ok("(+ds, -1, -10, +10) and all 8 flag combinations".into())
}

fn double_dqn_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arch = Architecture::compact(3, 16, [2, 3, 3], 8, 2);
    for case in 0..100 {
        let online: DuelingQNetwork<f64> = DuelingQNetwork::new(arch.clone(), &mut rng).map_err(|e| e.to_string())?;
        let size = rng.gen_range(1..16);
        let len = arch.input_len();
        let batch = Batch {
            size,
            obs: (0..size * len).map(|_| rng.gen_range(0.0..1.0)).collect(),
            actions: (0..size).map(|_| rng.gen_range(0..2)).collect(),
            rewards: (0..size).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            next_obs: (0..size * len).map(|_| rng.gen_range(0.0..1.0)).collect(),
            terminals: (0..size).map(|_| rng.gen_bool(0.2)).collect(),
        };
        let double = compute_targets(&online, &online.clone(), &batch, 0.99).map_err(|e| e.to_string())?;
        let max_form = max_form_targets(&online, &batch, 0.99).map_err(|e| e.to_string())?;
        if double != max_form {
            return Err(format!("batch {case} differs"));
        }
    }
    Ok("100 batches bit-identical".into())
}

fn schedules() -> Outcome {
    let parity = TrainConfig::parity();
    let half = epsilon_after(parity.epsilon_start, parity.epsilon_decay, 500_000);
    let end = epsilon_after(parity.epsilon_start, parity.epsilon_decay, 1_000_000);
    if half != 0.5 || end != 0.0 {
        return Err(format!("epsilon(5e5) = {half}, epsilon(1e6) = {end}"));
    }
    let plan = SignalPlan::fttl1();
    let expected = [
        (0.0, PhaseGroup::NorthSouth, Phase::Green),
        (24.9, PhaseGroup::NorthSouth, Phase::Green),
        (25.0, PhaseGroup::NorthSouth, Phase::Yellow),
        (30.0, PhaseGroup::EastWest, Phase::Green),
        (55.0, PhaseGroup::EastWest, Phase::Yellow),
        (60.0, PhaseGroup::NorthSouth, Phase::Green),
    ];
    for (t, group, phase) in expected {
        let s = fttl_state_at(&plan, t);
        if (s.active_group, s.phase) != (group, phase) {
            return Err(format!("FTTL1 at {t} s is {:?} {:?}", s.active_group, s.phase));
        }
    }
    if plan.period() != 60.0 {
        return Err(format!("FTTL1 period {}", plan.period()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dt = 0.1;
    let mut greens = 0usize;
    for atl in [SignalPlan::atl1(), SignalPlan::atl2()] {
        let (min, max) = (atl.min_green.unwrap_or(atl.green), atl.max_green.unwrap_or(atl.green));
        let mut state = SignalState::initial();
        let mut ticks = 0u32;
        let mut density: f64 = 0.3;
        for step in 0..36_000 {
            if step % 600 == 0 {
                density = rng.gen_range(0.0..1.0);
            }
            let det = std::array::from_fn(|_| rng.gen_bool(density));
            let next = atl_step(&state, &atl, det, dt);
            if state.phase == Phase::Green {
                ticks += 1;
                if next.phase == Phase::Yellow {
                    let g = ticks as f64 * dt;
                    if g < min - 1e-6 || g > max + 1e-6 {
                        return Err(format!("{} green lasted {g} s outside [{min}, {max}]", atl.name));
                    }
                    greens += 1;
                    ticks = 0;
                }
            }
            state = next;
        }
    }
    Ok(format!("epsilon 0.5 / 0, FTTL1 boundaries 25/30/55/60, {greens} actuated greens within bounds"))
}

fn signal_safety() -> Outcome {
    let cfg = TrainConfig::desk();
    let geometry = Arc::new(IntersectionGeometry::default());
    let steps = (DEFAULT_HORIZON / cfg.dt).round() as u64;
    let mut summary = Vec::new();
    for plan in SignalPlan::all() {
        let (mut vehicles, mut collided) = (0usize, 0usize);
        for seed in 0..SIGNAL_SAFETY_SEEDS {
            let flow = flow_scenario(seed, DEFAULT_FLOW_RATE, DEFAULT_HORIZON).map_err(|e| e.to_string())?;
            let method = Method::Signal(plan.clone());
            let out = run_method(&method, None, seed, 4, &flow, flow_world_config(&cfg), &cfg, steps, &geometry).map_err(|e| e.to_string())?;
            vehicles += out.records.len();
            collided += out.records.iter().filter(|r| r.collided).count();
        }
        if collided > 0 {
            return Err(format!("{}: {collided} of {vehicles} vehicles collided", plan.name));
        }
        summary.push(format!("{} 0/{vehicles}", plan.name));
    }
    Ok(format!("{} seeds at 600 veh/h: {}", SIGNAL_SAFETY_SEEDS, summary.join(", ")))
}

fn scenario_distribution() -> Outcome {
    let floor = TrainConfig::parity().priority_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let spread = [1.0, 50.0, 2000.0][case % 3];
        let returns: Vec<f64> = (0..SCENARIO_COUNT).map(|_| rng.gen_range(-spread..spread)).collect();
        let mut bank = ScenarioBank::new(1.0, floor);
        bank.update(&returns).map_err(|e| e.to_string())?;
        let p = bank.probabilities();
        let pre = pre_floor_probabilities(&returns, 1.0);
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < floor - 1e-12) {
            return Err(format!("vector {case}: sum or floor violated"));
        }
        if p != apply_floor(&pre, floor).as_slice() {
            return Err(format!("vector {case}: bank disagrees with the floor rule"));
        }
        for i in 0..SCENARIO_COUNT {
            for j in 0..SCENARIO_COUNT {
                if returns[i] < returns[j] && pre[i] < pre[j] {
                    return Err(format!("vector {case}: G_{i} < G_{j} but p_{i} < p_{j}"));
                }
            }
        }
    }
    Ok("1000 return vectors: sums, floor and anti-monotonicity hold".into())
}

fn aim(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_aim")).args(args).status().map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("`aim {}` exited with {status}", args.join(" ")))
    }
}

fn train(seed: u64, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    aim(&["--profile", "desk", "--seed", &seed.to_string(), "train", "--quiet", "--out", out.to_str().unwrap()])?;
    Ok(start.elapsed())
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let seed = DESK_SEEDS[0];
    let t1 = train(seed, first)?;
    let t2 = train(seed, second)?;
    let mut same = Vec::new();
    for name in [format!("ckpt_seed{seed}_final.bin"), format!("train_log_seed{seed}.csv")] {
        let a = std::fs::read(first.join(&name)).map_err(|e| format!("{name}: {e}"))?;
        let b = std::fs::read(second.join(&name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            return Err(format!("{name} differs between the two runs"));
        }
        same.push(format!("{name} ({} bytes)", a.len()));
    }
    check(
        t1.max(t2) < Duration::from_secs(8 * 3600),
        format!("identical {}; runs took {:.0} s and {:.0} s", same.join(", "), t1.as_secs_f64(), t2.as_secs_f64()),
    )
}

fn benchmark(method: &[&str], seeds: &str, out: &Path) -> Result<EvaluationReport, String> {
    let mut args = vec!["--profile", "desk"];
    args.extend_from_slice(method);
    args.extend_from_slice(&["--seeds", seeds, "--report", out.to_str().unwrap()]);
    aim(&args)?;
    import_report(out, ReportFormat::Json).map_err(|e| e.to_string())
}

fn per_seed(r: &EvaluationReport) -> BTreeMap<u64, (f64, f64)> {
    r.per_seed.iter().map(|s| (s.seed, (s.collision_rate, s.waiting_time))).collect()
}

fn qualitative(runs: &Path, reports: &Path) -> Outcome {
    for &seed in &DESK_SEEDS[1..] {
        train(seed, runs)?;
    }
    let seeds = DESK_SEEDS.map(|s| s.to_string()).join(",");
    let learned = benchmark(&["evaluate", "--checkpoint-dir", runs.to_str().unwrap()], &seeds, &reports.join("learned.json"))?;
    let random = benchmark(&["baseline", "--baseline", "random"], &seeds, &reports.join("random.json"))?;
    let mut signals = Vec::new();
    for plan in SignalPlan::all() {
        signals.push(benchmark(&["baseline", "--baseline", &plan.name], &seeds, &reports.join(format!("{}.json", plan.name)))?);
    }
    let learned_seeds = per_seed(&learned);
    let random_seeds = per_seed(&random);
    let mut lines = Vec::new();
    let mut good = 0;
    for &seed in &DESK_SEEDS {
        let (coll, wait) = learned_seeds[&seed];
        let (rand_coll, _) = random_seeds[&seed];
        let best_signal =
            signals.iter().map(|r| (per_seed(r)[&seed].1, r.method.clone())).min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
        let a = coll < MAX_LEARNED_COLLISION_RATE && coll <= 0.5 * rand_coll;
        let c = wait < best_signal.0;
        good += usize::from(a && c);
        lines.push(format!(
            "seed {seed}: collisions {:.1}% (random {:.1}%) {}, wait {wait:.2} s vs {} {:.2} s {}",
            100.0 * coll,
            100.0 * rand_coll,
            if a { "ok" } else { "FAIL" },
            best_signal.1,
            best_signal.0,
            if c { "ok" } else { "FAIL" },
        ));
    }
    let b = random.collision_rate.mean > MIN_RANDOM_COLLISION_RATE;
    lines.push(format!("random collision rate {:.1}% {}", 100.0 * random.collision_rate.mean, if b { "ok" } else { "FAIL" }));
    lines.push(format!("{good}/{} seeds satisfy (a) and (c)", DESK_SEEDS.len()));
    check(b && good >= REQUIRED_SEEDS, lines.join("; "))
}

fn performance() -> Outcome {
    let geometry = Arc::new(IntersectionGeometry::default());
    let fresh = || {
        let mut world = WorldState::empty(geometry.clone(), WorldConfig::default());
        for a in Approach::ALL {
            world.insert_vehicle(Route::new(a, Intention::Straight), 0.0, 0.0);
            world.insert_vehicle(Route::new(a, Intention::Right), 40.0, 0.0);
        }
        world
    };
    // 1000 steps at 1 m/s keep all eight vehicles short of their exits.
    let (rounds, steps) = (50u32, 1000u32);
    let mut elapsed = Duration::ZERO;
    for _ in 0..rounds {
        let mut world = fresh();
        let commands: BTreeMap<_, _> = world.active_vehicles().map(|v| (v.id, 1.0)).collect();
        let start = Instant::now();
        for _ in 0..steps {
            world.step(&commands).map_err(|e| e.to_string())?;
        }
        elapsed += start.elapsed();
        if world.active_count() != 8 {
            return Err(format!("only {} of 8 vehicles stayed active", world.active_count()));
        }
    }
    let rate = (rounds * steps) as f64 / elapsed.as_secs_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = Architecture::parity();
    let net: DuelingQNetwork<f32> = DuelingQNetwork::new(arch.clone(), &mut rng).map_err(|e| e.to_string())?;
    let x: Vec<f32> = (0..arch.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut times: Vec<Duration> = (0..21)
        .map(|_| {
            let t = Instant::now();
            let _ = net.forward(&x, 1);
            t.elapsed()
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];
    check(
        rate >= MIN_STEPS_PER_SEC && median < MAX_DECISION_LATENCY,
        format!(
            "{rate:.0} world steps/s with 8 vehicles; parity forward {:.2} ms per decision (reference hardware: 1 ms)",
            median.as_secs_f64() * 1e3
        ),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let runs_a = scratch.path().join("runs_a");
    let runs_b = scratch.path().join("runs_b");
    let reports = scratch.path().join("reports");
    std::fs::create_dir_all(&reports).expect("report directory");

    let criteria: Vec<Criterion> = vec![
        (1, "dueling identity", Box::new(dueling_identity)),
        (2, "gradient oracle", Box::new(gradient_oracle)),
        (3, "convolution oracle", Box::new(conv_oracle)),
        (4, "reward table", Box::new(reward_table)),
        (5, "double-DQN degeneracy", Box::new(double_dqn_degeneracy)),
        (6, "schedule arithmetic", Box::new(schedules)),
        (7, "signal safety", Box::new(signal_safety)),
        (8, "scenario distribution", Box::new(scenario_distribution)),
        (9, "training determinism", Box::new(|| determinism(&runs_a, &runs_b))),
        // Reuses the seed-7 run from criterion 9.
        (10, "qualitative reproduction", Box::new(|| qualitative(&runs_a, &reports))),
        (11, "performance", Box::new(performance)),
    ];
    // Numeric arguments select a subset, e.g. `cargo test --test acceptance -- 1 4 11`.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, run) in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.0)) {
        ran += 1;
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
