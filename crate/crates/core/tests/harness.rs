use teleop_core::gateway::{Script, SessionConfig};
use teleop_core::golden::golden_verify_dir;
use teleop_core::harness::{dist_check, eval_batch, reward_dump, EvalConfig, PlantKind, METRIC_COLUMNS};
use teleop_core::reward::N_TERMS;
use teleop_core::{Command, Error};

#[test]
fn same_seed_same_table() {
    let cfg = EvalConfig {
        n_envs: 16,
        seconds: 4.0,
        seed: 3,
        ..EvalConfig::default()
    };
    let (a, per_a) = eval_batch(&cfg).unwrap();
    let (b, per_b) = eval_batch(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(per_a, per_b);
    assert_eq!(a.columns(), METRIC_COLUMNS);
    let (c, _) = eval_batch(&EvalConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn perfect_tracking_batch_is_exact() {
    let cfg = EvalConfig {
        n_envs: 1000,
        seconds: 2.0,
        plant_kind: PlantKind::Perfect,
        ..EvalConfig::default()
    };
    let (t, _) = eval_batch(&cfg).unwrap();
    let lin = t.row("Lin. Vel Error").unwrap();
    assert_eq!((lin.mean, lin.sd), (0.0, 0.0));
    assert!(t.to_csv().starts_with("metric,unit,mean,sd\nLin. Vel Error,m/s,0,0\n"));
}

#[test]
fn zero_envs_is_rejected() {
    let cfg = EvalConfig {
        n_envs: 0,
        ..EvalConfig::default()
    };
    assert!(matches!(eval_batch(&cfg), Err(Error::Config(_))));
}

#[test]
fn dist_report_is_machine_readable() {
    let r = dist_check(&[0.0, 0.999], 100_000, 1).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(r.rows[0].ks < 0.01);
    assert!(r.rows[1].ks_uniform < 0.01);
    // Far from uniform at the easiest level.
    assert!(r.rows[0].ks_uniform > 0.5);
}

#[test]
fn reward_dump_has_one_column_per_term() {
    let mut out = Vec::new();
    let cfg = SessionConfig {
        seconds: 1.0,
        ..SessionConfig::default()
    };
    let n = reward_dump(&cfg, &Script::constant(Command::new(0.3, 0.0, 0.74)), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(n, 50);
    assert_eq!(lines.len(), 51);
    assert!(lines[0].starts_with("tick,t,total,x_vel_tracking,"));
    for l in &lines {
        assert_eq!(l.split(',').count(), 3 + N_TERMS);
    }
}

#[test]
fn golden_dir_must_be_complete() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(golden_verify_dir(dir.path()), Err(Error::Config(_))));
    let src = concat!(env!("CARGO_MANIFEST_DIR"), "/golden");
    for f in ["reward_weights.toml", "randomization.toml", "key_parameters.toml"] {
        std::fs::copy(format!("{src}/{f}"), dir.path().join(f)).unwrap();
    }
    assert!(golden_verify_dir(dir.path()).unwrap().passed());

    let path = dir.path().join("key_parameters.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("max_contact_force = \"400.00\"", "max_contact_force = \"450.00\"", 1)).unwrap();
    let r = golden_verify_dir(dir.path()).unwrap();
    let bad: Vec<_> = r.failures().map(|c| (c.preset.as_str(), c.key.as_str())).collect();
    assert_eq!(bad, [("g1", "max_contact_force")]);
}
