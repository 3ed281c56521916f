#![allow(clippy::needless_range_loop)]

//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Every oracle here is computed independently of the crate.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teleop_core::controller::HeightServo;
use teleop_core::curriculum::{sample_rho_prime, CommandMode, CurriculumConfig, Scheduler};
use teleop_core::gateway::{read_records, replay, run_session, Script, SessionConfig};
use teleop_core::golden::{golden_verify_dir, golden_verify_with, PresetBundle};
use teleop_core::harness::{eval_batch, EvalConfig, METRIC_COLUMNS};
use teleop_core::observation::{net_shape, net_shape_of, ObservationFrame, ObservationStack};
use teleop_core::plant::{pd_torque, pd_torque_with, ActionCommand, Plant, PlantConfig, SurrogatePlant, TorqueLaw};
use teleop_core::protocol::{self, CommandPayload, Packet, PacketError, PACKET_LEN, PAYLOAD_LEN};
use teleop_core::reward::{r_knee, r_knee_normalized, RewardTerm};
use teleop_core::robot::{load_preset, JointGroup, JointSpec, Side};
use teleop_core::symmetry::{symmetry_losses, MirrorSpec, RolloutStorage, Transition};
use teleop_core::transport::{simulated_transport, TransportConfig};
use teleop_core::{Command, RobotDescription};

// Tolerances and sizes, as fixed by the acceptance criteria.
const KS_SAMPLES: usize = 1_000_000;
const KS_TOL: f64 = 0.005;
const KS_UNIFORM_TOL: f64 = 0.01;
const KS_BUDGET: Duration = Duration::from_secs(10);
const TORQUE_DRAWS: usize = 100_000;
const TORQUE_ULPS: u64 = 1;
const RKNEE_GRID: usize = 101;
const RKNEE_POINT_TOL: f64 = 1e-12;
const MIRROR_FRAMES: usize = 10_000;
const ACTOR_LOSS_TOL: f64 = 1e-12;
const FUZZ_PACKETS: usize = 100_000;
const LATENCY: f64 = 0.016;
const JITTER: f64 = 0.002;
const LATENCY_MESSAGES: usize = 10_000;
const LATENCY_MEAN_TOL: f64 = 1e-4;
const SQUAT_RESAMPLES: usize = 10_000;
const RAMP_JUMP_TOL: f64 = 1e-9;
const EVAL_ENVS: usize = 1000;
const EVAL_SECONDS: f64 = 20.0;
const EVAL_BUDGET: Duration = Duration::from_secs(60);
const SERVO_HEIGHT_TOL: f64 = 0.03;
const NET_CONFIGS: usize = 100;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Truncated exponential CDF written from the density, without the
// cancellation-safe forms the crate uses.
fn oracle_cdf(rho_a: f64, x: f64) -> f64 {
    let lam = 20.0 * (1.0 - rho_a);
    if lam == 0.0 {
        return x.clamp(0.0, 1.0);
    }
    (1.0 - (-lam * x.clamp(0.0, 1.0)).exp()) / (1.0 - (-lam).exp())
}

fn ks(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

fn curriculum_fidelity() -> Result<String, String> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (k, rho) in [0.0, 0.25, 0.5, 0.75, 0.9].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let mut xs: Vec<f64> = (0..KS_SAMPLES).map(|_| sample_rho_prime(rho, rng.random())).collect();
        let d = ks(&mut xs, |x| oracle_cdf(rho, x));
        ensure(d < KS_TOL, || format!("rho_a={rho}: KS {d:.5} >= {KS_TOL}"))?;
        worst = worst.max(d);
    }
    let mut worst_uniform: f64 = 0.0;
    for (k, rho) in [0.999, 1.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + k as u64);
        let mut xs: Vec<f64> = (0..KS_SAMPLES).map(|_| sample_rho_prime(rho, rng.random())).collect();
        let d = ks(&mut xs, |x| x.clamp(0.0, 1.0));
        ensure(d < KS_UNIFORM_TOL, || format!("rho_a={rho} vs uniform: KS {d:.5}"))?;
        worst_uniform = worst_uniform.max(d);
    }
    let took = start.elapsed();
    ensure(took < KS_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "max KS {worst:.5} (< {KS_TOL}), uniform limit {worst_uniform:.5} (< {KS_UNIFORM_TOL}), {:.2} s",
        took.as_secs_f64()
    ))
}

fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

fn torque_exactness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut saturated = 0;
    let mut edges = 0;
    for i in 0..TORQUE_DRAWS {
        let spec = JointSpec {
            name: "j".into(),
            group: JointGroup::Lower,
            side: Side::Left,
            pos_min: -3.0,
            pos_max: 3.0,
            vel_max: 30.0,
            torque_max: rng.random_range(1.0..300.0),
            kp: rng.random_range(5.0..300.0),
            kd: rng.random_range(0.1..10.0),
            default_pos: rng.random_range(-1.0..1.0),
        };
        let q = rng.random_range(-3.0..3.0);
        let qd = rng.random_range(-20.0..20.0);
        let reach = 2.0 * spec.torque_max / spec.kp;
        let mut a = spec.default_pos + rng.random_range(-reach..reach);
        if i % 4 == 0 {
            // Put the unclamped torque right at a saturation edge.
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            a = spec.default_pos + (sign * spec.torque_max + spec.kd * qd) / spec.kp;
            edges += 1;
        }
        let raw = spec.kp * (a - spec.default_pos) - spec.kd * qd;
        let oracle = raw.max(-spec.torque_max).min(spec.torque_max);
        let got = pd_torque(&spec, a, q, qd);
        ensure(ulps(got, oracle) <= TORQUE_ULPS, || {
            format!("draw {i}: {got:e} vs {oracle:e}")
        })?;
        let raw_c = spec.kp * (a - q) - spec.kd * qd;
        let oracle_c = raw_c.max(-spec.torque_max).min(spec.torque_max);
        let got_c = pd_torque_with(TorqueLaw::Conventional, &spec, a, q, qd);
        ensure(ulps(got_c, oracle_c) <= TORQUE_ULPS, || {
            format!("draw {i} (conventional): {got_c:e} vs {oracle_c:e}")
        })?;
        if oracle.abs() == spec.torque_max {
            saturated += 1;
        }
    }
    Ok(format!(
        "{TORQUE_DRAWS} draws within {TORQUE_ULPS} ulp, {saturated} saturated, {edges} at the edge"
    ))
}

fn r_knee_properties() -> Result<String, String> {
    let half = (RKNEE_GRID - 1) / 2;
    let dh = |i: usize| (i as f64 - half as f64) / 100.0;
    let n = |j: usize| j as f64 / (RKNEE_GRID - 1) as f64;
    let grid: Vec<Vec<f64>> = (0..RKNEE_GRID)
        .map(|i| (0..RKNEE_GRID).map(|j| r_knee_normalized(dh(i), n(j))).collect())
        .collect();
    for i in 0..RKNEE_GRID {
        for j in 0..RKNEE_GRID {
            let zero_expected = i == half || j == half;
            ensure((grid[i][j] == 0.0) == zero_expected, || {
                format!("zero set wrong at dh={}, n={}: {}", dh(i), n(j), grid[i][j])
            })?;
            ensure(grid[i][j] <= 0.0, || format!("positive value at ({i},{j})"))?;
        }
    }
    // Moving away from the zero lines never increases the value.
    for i in 0..RKNEE_GRID {
        for j in 0..RKNEE_GRID {
            if i != half {
                let inner = if i > half { i - 1 } else { i + 1 };
                ensure(grid[i][j] <= grid[inner][j], || format!("not monotone in |dh| at ({i},{j})"))?;
            }
            if j != half {
                let inner = if j > half { j - 1 } else { j + 1 };
                ensure(grid[i][j] <= grid[i][inner], || format!("not monotone in |n - 1/2| at ({i},{j})"))?;
            }
        }
    }
    let v = r_knee_normalized(0.1, 0.75);
    ensure((v - (-0.025)).abs() <= RKNEE_POINT_TOL, || format!("r(0.1, 0.75) = {v}"))?;
    // Same point through the raw knee angle form.
    let raw = r_knee(0.8, 0.7, 1.5, 0.0, 2.0).map_err(|e| e.to_string())?;
    ensure((raw - (-0.025)).abs() <= RKNEE_POINT_TOL, || format!("raw form gives {raw}"))?;
    ensure(r_knee(0.8, 0.7, 1.0, 1.0, 1.0).is_err(), || "degenerate knee range accepted".into())?;
    Ok(format!("{RKNEE_GRID}x{RKNEE_GRID} grid, r(0.1, 0.75) = {v}"))
}

fn random_frame(rng: &mut ChaCha8Rng, len: usize) -> ObservationFrame {
    ObservationFrame((0..len).map(|_| rng.random_range(-3.0..3.0)).collect())
}

fn symmetry() -> Result<String, String> {
    let desc = load_preset("g1").map_err(|e| e.to_string())?;
    let spec = MirrorSpec::new(&desc);
    let len = spec.layout.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..MIRROR_FRAMES {
        let f = random_frame(&mut rng, len);
        let back = spec
            .mirror_frame(&spec.mirror_frame(&f).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let exact = f.0.iter().zip(&back.0).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(exact, || format!("frame {k} not restored bit-exactly"))?;
    }

    // g is an arbitrary linear map; g(o) + M g(M o) commutes with M.
    let n_out = desc.n_lower();
    let n_in = 6 * len;
    let w: Vec<f64> = (0..n_out * n_in).map(|_| rng.random_range(-0.1..0.1)).collect();
    let g = |x: &[f64]| -> Vec<f64> {
        (0..n_out)
            .map(|r| w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mirror_flat = |x: &[f64]| -> Vec<f64> {
        x.chunks(len)
            .flat_map(|c| spec.mirror_frame(&ObservationFrame(c.to_vec())).unwrap().0)
            .collect()
    };
    let policy = |x: &[f64]| -> Vec<f64> {
        let a = g(x);
        let b = spec.mirror_action(&g(&mirror_flat(x))).unwrap();
        a.iter().zip(&b).map(|(p, q)| p + q).collect()
    };
    let value = |x: &[f64]| -> f64 { x.iter().sum::<f64>() + mirror_flat(x).iter().sum::<f64>() };
    let batch: Vec<ObservationStack> = (0..64)
        .map(|_| {
            let mut s = ObservationStack::new(random_frame(&mut rng, len));
            for _ in 0..5 {
                s.push(random_frame(&mut rng, len)).unwrap();
            }
            s
        })
        .collect();
    let losses = symmetry_losses(&policy, &value, &batch, &spec, false).map_err(|e| e.to_string())?;
    ensure(losses.actor <= ACTOR_LOSS_TOL, || format!("actor loss {:e}", losses.actor))?;

    let transitions: Vec<Transition> = batch
        .windows(2)
        .map(|w| Transition {
            obs: w[0].clone(),
            action: (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(-5.0..5.0),
            next_obs: w[1].clone(),
        })
        .collect();
    let mut storage = RolloutStorage::new();
    storage.add_augmented(&transitions, &spec).map_err(|e| e.to_string())?;
    ensure(storage.len() == 2 * transitions.len(), || format!("storage holds {}", storage.len()))?;
    for (k, t) in transitions.iter().enumerate() {
        let (a, b) = (&storage.transitions[2 * k], &storage.transitions[2 * k + 1]);
        ensure(a == t, || format!("original {k} altered"))?;
        ensure(b.reward.to_bits() == t.reward.to_bits(), || format!("reward {k} changed"))?;
    }
    Ok(format!(
        "{MIRROR_FRAMES} involutions exact, actor loss {:.1e}, storage {} -> {}",
        losses.actor,
        transitions.len(),
        storage.len()
    ))
}

fn golden_tables() -> Result<String, String> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/golden");
    let report = golden_verify_dir(dir).map_err(|e| e.to_string())?;
    let bad: Vec<String> = report
        .failures()
        .map(|c| format!("{}/{}/{}: {} vs {}", c.table, c.preset, c.key, c.expected, c.actual))
        .collect();
    ensure(bad.is_empty(), || bad.join("; "))?;

    let g1 = PresetBundle::builtin("g1").map_err(|e| e.to_string())?;
    let gr1 = PresetBundle::builtin("gr1").map_err(|e| e.to_string())?;
    ensure(
        g1.reward.weight(RewardTerm::TorqueLimits) == -0.1 && gr1.reward.weight(RewardTerm::TorqueLimits) == -0.2,
        || "torque-limit weights not distinguished".into(),
    )?;
    let mut tampered = g1.clone();
    tampered.reward.set_weight(RewardTerm::FeetSlip, -0.3);
    let bundles = [("g1".to_string(), tampered), ("gr1".to_string(), gr1)].into_iter().collect();
    let r = golden_verify_with(&bundles).map_err(|e| e.to_string())?;
    let named: Vec<_> = r.failures().map(|c| c.key.as_str()).collect();
    ensure(named == ["feet_slip"], || format!("tampering reported as {named:?}"))?;
    Ok(format!("{} values across {} tables match", report.checks.len(), report.summary().len()))
}

// Bitwise reflected CRC-32 (polynomial 0xEDB88320), one bit at a time.
fn crc32_oracle(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn reference_packet() -> Packet {
    let mut p = CommandPayload::zeros();
    p.v_x = 0.5;
    p.omega_yaw = -0.25;
    p.h = 0.7;
    for (k, v) in p.arm.iter_mut().enumerate() {
        *v = k as f32 * 0.1 - 0.7;
    }
    for (k, v) in p.hand.iter_mut().enumerate() {
        *v = k as f32 * 0.05;
    }
    Packet::command(42, p)
}

fn protocol() -> Result<String, String> {
    let floats = reference_packet().payload.unwrap().to_floats().map_err(|e| e.to_string())?;
    let payload_bytes: usize = floats.iter().map(|f| f.to_le_bytes().len()).sum();
    ensure(payload_bytes == 128 && PAYLOAD_LEN == 128, || format!("payload is {payload_bytes} bytes"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..FUZZ_PACKETS {
        let raw: [f32; 32] = std::array::from_fn(|_| f32::from_bits(rng.random()));
        let pkt = Packet::command(rng.random(), CommandPayload::from_floats(&raw));
        let bytes = protocol::encode(&pkt).map_err(|e| e.to_string())?;
        let back = protocol::decode(&bytes).map_err(|e| format!("packet {k}: {e}"))?;
        let again = back.payload.as_ref().unwrap().to_floats().map_err(|e| e.to_string())?;
        ensure(again.iter().zip(&raw).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("packet {k} payload not bit-exact")
        })?;
        ensure(back.seq == pkt.seq, || format!("packet {k} seq changed"))?;
        ensure(protocol::encode(&back).map_err(|e| e.to_string())? == bytes, || format!("packet {k} re-encodes differently"))?;
    }

    let reference = protocol::encode(&reference_packet()).map_err(|e| e.to_string())?;
    ensure(reference.len() == PACKET_LEN, || format!("packet is {} bytes", reference.len()))?;
    let body = &reference[..reference.len() - 4];
    let stored = u32::from_le_bytes(reference[reference.len() - 4..].try_into().unwrap());
    ensure(stored == crc32_oracle(body), || format!("trailer {stored:08x} vs oracle {:08x}", crc32_oracle(body)))?;
    ensure(crc32_oracle(b"123456789") == 0xCBF4_3926, || "oracle check value".into())?;
    let mut flips = 0;
    for bit in 0..reference.len() * 8 {
        let mut b = reference.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        match protocol::decode(&b) {
            Err(PacketError::BadCrc { .. }) => flips += 1,
            other => return Err(format!("bit {bit}: {other:?}")),
        }
    }

    let (tx, rx) = simulated_transport::<u32>(TransportConfig::from_millis(LATENCY * 1e3, 0.0, 0.0), 5).map_err(|e| e.to_string())?;
    for k in 0..1000u32 {
        let now = f64::from(k) * 0.1;
        tx.send(now, k).map_err(|e| e.to_string())?;
        let got = rx.recv_due(now + LATENCY).map_err(|e| e.to_string())?;
        ensure(got.len() == 1 && got[0].delivered_at == now + LATENCY, || format!("message {k} not at +16 ms"))?;
    }
    let (tx, rx) = simulated_transport::<u32>(TransportConfig::from_millis(LATENCY * 1e3, JITTER * 1e3, 0.0), 6).map_err(|e| e.to_string())?;
    for k in 0..LATENCY_MESSAGES as u32 {
        tx.send(f64::from(k) * 0.1, k).map_err(|e| e.to_string())?;
    }
    let got = rx.recv_due(f64::INFINITY).map_err(|e| e.to_string())?;
    ensure(got.len() == LATENCY_MESSAGES, || format!("{} delivered", got.len()))?;
    let mean = got.iter().map(|d| d.delivered_at - d.sent_at).sum::<f64>() / got.len() as f64;
    ensure((mean - LATENCY).abs() <= LATENCY_MEAN_TOL, || format!("mean delay {:.4} ms", mean * 1e3))?;
    Ok(format!(
        "{FUZZ_PACKETS} round trips exact, {flips}/{flips} bit flips caught, jittered mean {:.4} ms",
        mean * 1e3
    ))
}

fn scheduling() -> Result<String, String> {
    let desc = Arc::new(load_preset("g1").map_err(|e| e.to_string())?);
    let hz = 50.0;
    let cmd_period = 200u64;
    let per_env = SQUAT_RESAMPLES / 100;
    let mut squats = 0usize;
    let mut draws = 0usize;
    let mut max_jump: f64 = 0.0;
    for env in 0..100u64 {
        let mut s = Scheduler::new(Arc::clone(&desc), CurriculumConfig::default(), hz, 1000 + env).map_err(|e| e.to_string())?;
        let mut prev: Option<Vec<f64>> = None;
        for k in 0..per_env as u64 * cmd_period {
            let st = s.tick(k, 1.0).map_err(|e| e.to_string())?;
            let t = k as f64 / hz;
            if st.resample_pose {
                ensure(t % 1.0 == 0.0, || format!("pose resample at t={t}"))?;
            }
            ensure(st.resample_pose == (k > 0 && k % 50 == 0), || format!("pose resample missing at tick {k}"))?;
            ensure(st.resample_cmd == (k > 0 && k % cmd_period == 0), || format!("command resample wrong at tick {k}"))?;
            if st.resample_cmd {
                ensure(t % 4.0 == 0.0, || format!("command resample at t={t}"))?;
            }
            if k % cmd_period == 0 {
                draws += 1;
                squats += usize::from(st.mode == CommandMode::Squat);
            }
            if st.resample_pose {
                if let Some(p) = &prev {
                    let jump = p.iter().zip(&st.upper).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    max_jump = max_jump.max(jump);
                }
            }
            prev = Some(st.upper);
        }
    }
    let p = 1.0 / 3.0;
    let frac = squats as f64 / draws as f64;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    ensure((frac - p).abs() <= 3.0 * sigma, || format!("squat fraction {frac:.4}, sigma {sigma:.4}"))?;
    ensure(max_jump < RAMP_JUMP_TOL, || format!("jump {max_jump:e} rad at a resample"))?;
    Ok(format!(
        "squat fraction {frac:.4} over {draws} draws (1/3 ± {:.4}), max boundary jump {max_jump:e} rad",
        3.0 * sigma
    ))
}

/// Mean absolute height error over the last second of each step.
fn servo_step_errors(desc: &Arc<RobotDescription>, heights: &[f64], hold: f64) -> Vec<f64> {
    let cfg = PlantConfig::default();
    let hz = cfg.control_hz;
    let mut plant = SurrogatePlant::new(Arc::clone(desc), cfg.clone(), 1).unwrap();
    let servo = HeightServo::new(Arc::clone(desc), cfg.torque_law);
    let upper: Vec<f64> = desc.upper_indices().iter().map(|&i| desc.joints[i].default_pos).collect();
    let mut state = plant.reset();
    let ticks = (hold * hz) as usize;
    let tail = hz as usize;
    heights
        .iter()
        .map(|&h| {
            let cmd = Command::new(0.0, 0.0, h);
            let mut err = 0.0;
            for k in 0..ticks {
                let action = ActionCommand {
                    lower_targets: servo.act(&cmd, &state),
                    upper_targets: upper.clone(),
                };
                state = plant.step(&state, &action, &cmd).unwrap();
                if k >= ticks - tail {
                    err += (state.base_height - h).abs();
                }
            }
            err / tail as f64
        })
        .collect()
}

fn eval_protocol_shape() -> Result<String, String> {
    let start = Instant::now();
    let cfg = EvalConfig {
        n_envs: EVAL_ENVS,
        seconds: EVAL_SECONDS,
        ..EvalConfig::default()
    };
    let (table, per_env) = eval_batch(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(took < EVAL_BUDGET, || format!("eval-batch took {took:?}"))?;
    ensure(table.columns() == METRIC_COLUMNS, || format!("columns {:?}", table.columns()))?;
    ensure(per_env.len() == EVAL_ENVS, || format!("{} envs", per_env.len()))?;
    ensure(table.rows.iter().all(|r| r.mean.is_finite() && r.sd.is_finite()), || "non-finite metric".into())?;

    let mut worst: f64 = 0.0;
    for name in ["g1", "gr1"] {
        let desc = Arc::new(load_preset(name).map_err(|e| e.to_string())?);
        let reach = HeightServo::new(Arc::clone(&desc), TorqueLaw::Literal).reachable();
        let squat = desc.squat_command_range();
        let lo = reach.lo().max(squat.lo());
        let hi = reach.hi().min(squat.hi());
        // High, low, middle, back up: every step crosses a good part of the range.
        let heights: Vec<f64> = [0.95, 0.1, 0.5, 0.8, 0.3].iter().map(|f| lo + f * (hi - lo)).collect();
        let errs = servo_step_errors(&desc, &heights, 3.0);
        for (h, e) in heights.iter().zip(&errs) {
            ensure(*e < SERVO_HEIGHT_TOL, || format!("{name}: step to {h:.3} m leaves {e:.4} m error"))?;
            worst = worst.max(*e);
        }
    }
    Ok(format!(
        "{EVAL_ENVS} envs x {EVAL_SECONDS} s in {:.1} s, columns ok, worst servo step error {worst:.2e} m",
        took.as_secs_f64()
    ))
}

fn determinism() -> Result<String, String> {
    let cfg = SessionConfig {
        seconds: 6.0,
        seed: 99,
        transport: TransportConfig::from_millis(16.0, 2.0, 0.05),
        ..SessionConfig::default()
    };
    let script = Script::from_json(
        r#"{"segments":[{"t":0,"v_x":0.4,"omega_yaw":0.2,"h":0.74},
                        {"t":2,"v_x":0.0,"omega_yaw":-0.3,"h":0.55,"arm":[0.3,0.2,0.1]},
                        {"t":4,"v_x":-0.3,"omega_yaw":0.0,"h":0.65}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut first = Vec::new();
    let mut second = Vec::new();
    let a = run_session(&cfg, &script, Some(&mut first)).map_err(|e| e.to_string())?;
    let b = run_session(&cfg, &script, Some(&mut second)).map_err(|e| e.to_string())?;
    ensure(a.digest == b.digest, || "two runs disagree".into())?;
    ensure(first == second, || "record files differ".into())?;
    let file = read_records(first.as_slice()).map_err(|e| e.to_string())?;
    let same = replay(&file, None).map_err(|e| e.to_string())?;
    ensure(same.matches, || format!("replay digest {} vs {}", same.digest, same.recorded_digest))?;
    let other = replay(&file, Some(100)).map_err(|e| e.to_string())?;
    ensure(!other.matches, || "different seed reproduced the digest".into())?;
    Ok(format!("{} ticks, digest {}…", file.ticks.len(), &a.digest[..16]))
}

fn network_shapes() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..NET_CONFIGS {
        let n_joints = rng.random_range(1..=80usize);
        let n_lower = rng.random_range(1..=n_joints);
        let s = net_shape(n_joints, n_lower).map_err(|e| e.to_string())?;
        let frame = 9 + 2 * n_joints + n_lower;
        ensure(s.encoder_in == 6 * frame, || format!("encoder_in for ({n_joints}, {n_lower})"))?;
        ensure(s.target_in == frame && s.actor_in == 35 + frame && s.critic_in == 2 + frame, || {
            format!("input widths for ({n_joints}, {n_lower})")
        })?;
        ensure(s.actor_out == n_lower && s.critic_out == 1, || "output widths".into())?;
        ensure(s.encoder_out == 35 && s.target_out == 32 && s.proto == (64, 32), || "fixed widths".into())?;
    }
    ensure(net_shape(10, 0).is_err() && net_shape(3, 4).is_err(), || "degenerate shapes accepted".into())?;
    let g1 = load_preset("g1").map_err(|e| e.to_string())?;
    let s = net_shape_of(&g1).map_err(|e| e.to_string())?;
    // 41 joints, 12 of them in the legs: 6 * (9 + 82 + 12).
    ensure(g1.n_joints() == 41 && g1.n_lower() == 12, || "unexpected G1 joint counts".into())?;
    ensure(s.encoder_in == 618, || format!("G1 encoder_in {}", s.encoder_in))?;
    Ok(format!("{NET_CONFIGS} random configurations, G1 encoder_in = {}", s.encoder_in))
}

#[test]
fn acceptance_suite() {
    let checks: [(&str, Check); 10] = [
        ("curriculum fidelity", curriculum_fidelity),
        ("PD torque exactness", torque_exactness),
        ("knee height-tracking reward", r_knee_properties),
        ("symmetry", symmetry),
        ("golden tables", golden_tables),
        ("protocol and transport", protocol),
        ("scheduling", scheduling),
        ("evaluation protocol shape", eval_protocol_shape),
        ("determinism", determinism),
        ("network shapes", network_shapes),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
