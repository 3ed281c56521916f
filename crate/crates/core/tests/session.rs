use std::sync::Arc;

use teleop_core::gateway::{
    metrics, read_records, replay, run_session, CommandGate, LinkStatus, Script, SessionConfig, StateSummary,
    TickRecord, RECORD_VERSION,
};
use teleop_core::plant::interpolate_upper;
use teleop_core::protocol::{CommandPayload, Packet};
use teleop_core::{load_preset, Command, Error, RobotDescription};

fn g1() -> Arc<RobotDescription> {
    Arc::new(load_preset("g1").unwrap())
}

fn record(t: f64, cmd: Command, vel: f64, yaw: f64, h: f64, terminated: bool) -> TickRecord {
    TickRecord {
        tick: (t * 50.0).round() as u64,
        t,
        command: cmd,
        upper_targets: vec![],
        state: StateSummary {
            base_height: h,
            base_vel: [vel, 0.0, 0.0],
            base_yaw_rate: yaw,
            gravity_proj: [0.0, 0.0, -1.0],
            base_xy: [0.0, 0.0],
            yaw: 0.0,
            foot_contact: vec![true, true],
            q: vec![],
        },
        reward: 0.0,
        terms: None,
        terminated,
        reason: None,
    }
}

#[test]
fn five_second_zero_command_gives_250_records() {
    let cfg = SessionConfig {
        seconds: 5.0,
        ..SessionConfig::default()
    };
    let desc = g1();
    let script = Script::constant(Command::new(0.0, 0.0, desc.height_target_walk));
    let out = run_session(&cfg, &script, None).unwrap();
    assert_eq!(out.records.len(), 250);
    assert!(out.termination.is_none());
    for (k, r) in out.records.iter().enumerate() {
        assert_eq!(r.tick, k as u64);
        assert_eq!(r.t, k as f64 / 50.0);
    }
    assert_eq!(out.metrics.living_time, 5.0);
}

#[test]
fn silent_cockpit_never_moves_the_robot() {
    let cfg = SessionConfig {
        seconds: 3.0,
        ..SessionConfig::default()
    };
    let desc = g1();
    let script = Script {
        silent_after: Some(0.0),
        ..Script::constant(Command::new(1.0, 0.5, 0.5))
    };
    let out = run_session(&cfg, &script, None).unwrap();
    assert_eq!(out.packets_sent, 0);
    for r in &out.records {
        assert_eq!(r.command, Command::new(0.0, 0.0, desc.height_clamp.hi()));
    }
}

#[test]
fn failsafe_decays_velocity_within_half_a_second() {
    let desc = g1();
    let cfg = SessionConfig::default();
    let mut gate = CommandGate::new(Arc::clone(&desc), &cfg);
    let mut p = CommandPayload::zeros();
    p.v_x = 0.75;
    p.omega_yaw = 0.5;
    p.h = 0.625;
    gate.on_packet(1.0, &Packet::command(1, p));
    assert_eq!(gate.applied(1.5).0, Command::new(0.75, 0.5, 0.625));
    let mid = gate.applied(1.75).0;
    assert!((mid.v_x - 0.375).abs() < 1e-12 && (mid.omega_yaw - 0.25).abs() < 1e-12);
    assert_eq!(mid.h, 0.625);
    assert_eq!(gate.status(1.75), LinkStatus::Failsafe);
    let held = gate.applied(2.0).0;
    assert_eq!((held.v_x, held.omega_yaw, held.h), (0.0, 0.0, 0.625));
    // A heartbeat revives the last command.
    gate.on_packet(2.1, &Packet::heartbeat(2));
    assert_eq!(gate.applied(2.1).0, Command::new(0.75, 0.5, 0.625));
}

#[test]
fn commands_are_clamped_at_the_gateway() {
    let desc = g1();
    let mut gate = CommandGate::new(Arc::clone(&desc), &SessionConfig::default());
    let mut p = CommandPayload::zeros();
    p.v_x = 9.0;
    p.omega_yaw = -9.0;
    p.h = 5.0;
    p.arm = vec![100.0; 14];
    gate.on_packet(0.0, &Packet::command(1, p));
    let (cmd, _) = gate.applied(0.0);
    assert_eq!(cmd.v_x, desc.cmd_ranges.v_x.hi());
    assert_eq!(cmd.omega_yaw, desc.cmd_ranges.yaw.lo());
    assert_eq!(cmd.h, desc.height_clamp.hi());
    let upper = desc.upper_indices();
    let target = gate.upper_from_payload(&{
        let mut q = CommandPayload::zeros();
        q.arm = vec![100.0; 14];
        q
    });
    for (k, &i) in upper.iter().enumerate() {
        assert!(desc.joints[i].limits().contains(target[k]));
    }
}

#[test]
fn upper_targets_ramp_in_five_steps_per_command() {
    let desc = g1();
    let cfg = SessionConfig {
        seconds: 1.0,
        transport: teleop_core::transport::TransportConfig::from_millis(0.0, 0.0, 0.0),
        ..SessionConfig::default()
    };
    let script = Script::from_json(
        r#"{"segments":[{"t":0,"v_x":0,"omega_yaw":0,"h":0.7,"arm":[0.0]},
                        {"t":0.1,"v_x":0,"omega_yaw":0,"h":0.7,"arm":[0.5]},
                        {"t":0.2,"v_x":0,"omega_yaw":0,"h":0.7,"arm":[-0.5]}]}"#,
    )
    .unwrap();
    let out = run_session(&cfg, &script, None).unwrap();
    let slot = desc
        .upper_indices()
        .iter()
        .position(|&i| desc.joints[i].group == teleop_core::robot::JointGroup::UpperArm)
        .unwrap();
    let arm: Vec<f64> = out.records.iter().map(|r| r.upper_targets[slot]).collect();
    // Command k arrives on tick 5k and is reached on tick 5k + 4.
    let expect = [0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5];
    for (k, e) in expect.iter().enumerate() {
        assert!((arm[k] - e).abs() < 1e-6, "tick {k}: {} vs {e}", arm[k]);
    }
}

#[test]
fn fifty_step_interpolation_is_piecewise_linear() {
    let prev = vec![0.0, 1.0, -2.0];
    let next = vec![1.0, 0.0, 2.0];
    let mut last = prev.clone();
    for k in 1..=50 {
        let v = interpolate_upper(&prev, &next, k, 50);
        for j in 0..3 {
            let step = (next[j] - prev[j]) / 50.0;
            assert!((v[j] - last[j] - step).abs() < 1e-12);
        }
        last = v;
    }
    assert_eq!(last, next);
}

#[test]
fn disconnect_ends_the_session_cleanly() {
    let cfg = SessionConfig {
        seconds: 10.0,
        ..SessionConfig::default()
    };
    let script = Script {
        disconnect_at: Some(2.0),
        ..Script::constant(Command::new(0.2, 0.0, 0.7))
    };
    let mut buf = Vec::new();
    let out = run_session(&cfg, &script, Some(&mut buf)).unwrap();
    assert!(out.disconnected);
    let last = out.records.last().unwrap().t;
    assert!((1.9..2.0).contains(&last), "{last}");
    let file = read_records(buf.as_slice()).unwrap();
    assert_eq!(file.ticks.len(), out.records.len());
}

#[test]
fn state_packets_arrive_at_thirty_hertz_with_the_link_delay() {
    let cfg = SessionConfig {
        seconds: 4.0,
        ..SessionConfig::default()
    };
    let out = run_session(&cfg, &Script::constant(Command::new(0.0, 0.0, 0.74)), None).unwrap();
    // 30 per second over 4 s, less the one still in flight.
    assert!(out.state_packets >= 119, "{}", out.state_packets);
    let lat = out.mean_state_latency.unwrap();
    assert!((lat - 0.016).abs() < 0.02 + 1e-9, "{lat}");
}

#[test]
fn truncated_or_foreign_records_are_rejected() {
    let cfg = SessionConfig {
        seconds: 1.0,
        ..SessionConfig::default()
    };
    let mut buf = Vec::new();
    run_session(&cfg, &Script::constant(Command::new(0.1, 0.0, 0.7)), Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();

    let lines: Vec<&str> = text.lines().collect();
    let without_footer = lines[..lines.len() - 1].join("\n");
    assert!(matches!(read_records(without_footer.as_bytes()), Err(Error::Truncated(_))));

    let cut = &text[..text.len() / 2];
    assert!(matches!(read_records(cut.as_bytes()), Err(Error::Truncated(_))));

    let mut dropped = lines.clone();
    dropped.remove(3);
    assert!(matches!(read_records(dropped.join("\n").as_bytes()), Err(Error::Truncated(_))));

    let bumped = text.replacen(
        &format!("\"version\":{RECORD_VERSION}"),
        &format!("\"version\":{}", RECORD_VERSION + 1),
        1,
    );
    assert!(matches!(
        read_records(bumped.as_bytes()),
        Err(Error::Version { expected, found }) if expected == RECORD_VERSION && found == RECORD_VERSION + 1
    ));
    assert!(read_records(&b""[..]).is_err());
}

#[test]
fn replay_matches_and_seed_changes_digest() {
    let cfg = SessionConfig {
        seconds: 2.0,
        seed: 5,
        ..SessionConfig::default()
    };
    let mut buf = Vec::new();
    let out = run_session(&cfg, &Script::constant(Command::new(0.5, -0.2, 0.6)), Some(&mut buf)).unwrap();
    let file = read_records(buf.as_slice()).unwrap();
    assert_eq!(file.footer.digest, out.digest);
    assert!(replay(&file, None).unwrap().matches);
    assert!(!replay(&file, Some(6)).unwrap().matches);
}

#[test]
fn metric_examples() {
    let cmd = Command::new(0.5, 0.2, 0.7);
    let perfect: Vec<_> = (0..1000).map(|k| record(k as f64 / 50.0, cmd, 0.5, 0.2, 0.7, false)).collect();
    let m = metrics(&perfect, 20.0).unwrap();
    assert_eq!((m.lin_vel_err, m.ang_vel_err, m.height_err), (0.0, 0.0, 0.0));
    assert_eq!(m.living_time, 20.0);

    let low: Vec<_> = (0..100).map(|k| record(k as f64 / 50.0, cmd, 0.5, 0.2, 0.6, false)).collect();
    assert!((metrics(&low, 20.0).unwrap().height_err - 0.1).abs() < 1e-12);

    let mut fell = perfect[..300].to_vec();
    fell.last_mut().unwrap().terminated = true;
    let m = metrics(&fell, 20.0).unwrap();
    assert_eq!(m.living_time, 299.0 / 50.0);
    // One record per tick up to and including the terminal one.
    assert_eq!(m.n_records, (m.living_time * 50.0).floor() as usize + 1);
}
