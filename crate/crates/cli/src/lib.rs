pub mod live;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use teleop_core::gateway::{replay_file, run_session, Script, SessionConfig};
use teleop_core::golden::{golden_verify, golden_verify_dir};
use teleop_core::harness::{dist_check, eval_batch, reward_dump, EvalConfig, PlantKind};
use teleop_core::protocol::{self, PacketJson};
use teleop_core::transport::TransportConfig;
use teleop_core::{load_robot, Command};

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Teleoperation gateway and whole-body control simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Serve the browser cockpit over WebSocket.
    Gateway(GatewayArgs),
    /// Run one scripted session on the virtual clock.
    Rollout(RolloutArgs),
    /// Re-execute a recorded episode and compare digests.
    Replay(ReplayArgs),
    /// Evaluate many environments and print the metric table.
    EvalBatch(EvalArgs),
    /// Compare curriculum draws against their target distribution.
    DistCheck(DistArgs),
    /// Write per-tick reward terms of a scripted session as CSV.
    RewardDump(DumpArgs),
    /// Check the built-in presets against the golden parameter tables.
    GoldenVerify(GoldenArgs),
    /// Decode and validate one binary packet.
    PacketInspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// Robot preset name or description file.
    #[arg(long, default_value = "g1")]
    pub robot: String,
    /// Reward preset name or config file; defaults to the robot preset.
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long, default_value_t = 16.0)]
    pub latency_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub command_hz: f64,
    #[arg(long, default_value_t = 5)]
    pub interp_steps: u32,
    #[arg(long, default_value_t = 30.0)]
    pub state_hz: f64,
}

impl SessionArgs {
    pub fn config(&self, seconds: f64) -> SessionConfig {
        let reward = match &self.reward {
            Some(r) => r.clone(),
            None if teleop_core::robot::PRESET_NAMES.contains(&self.robot.as_str()) => self.robot.clone(),
            None => "g1".into(),
        };
        SessionConfig {
            robot: self.robot.clone(),
            reward,
            transport: TransportConfig::from_millis(self.latency_ms, self.jitter_ms, self.drop_prob),
            command_hz: self.command_hz,
            interp_steps: self.interp_steps,
            state_hz: self.state_hz,
            seed: self.seed,
            seconds,
            ..SessionConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub listen: SocketAddr,
    /// Record every connection from its first tick to this file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Directory for recordings started from the cockpit.
    #[arg(long, default_value = ".")]
    pub record_dir: PathBuf,
    /// Episode cap, seconds; the episode restarts when it is reached.
    #[arg(long, default_value_t = 3600.0)]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// JSON command script; without one the robot is held at the idle command.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    pub seconds: f64,
    /// Write the episode metrics as JSON to this file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Write the episode record to this file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Store raw reward terms in every tick record.
    #[arg(long)]
    pub record_terms: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub file: PathBuf,
    /// Replay with a different seed than the one recorded.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "g1")]
    pub robot: String,
    #[arg(long, default_value_t = 1000)]
    pub n_envs: usize,
    #[arg(long, default_value_t = 20.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_a: f64,
    #[arg(long, value_enum, default_value_t = PlantChoice::Surrogate)]
    pub plant: PlantChoice,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the table and per-env metrics as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PlantChoice {
    Surrogate,
    Perfect,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    /// Curriculum levels to test.
    #[arg(long = "rho", value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 0.999])]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub seconds: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GoldenArgs {
    /// Directory holding the golden tables; the embedded copies when absent.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Packet bytes as hex.
    #[arg(conflicts_with = "file", required_unless_present = "file")]
    pub hex: Option<String>,
    /// File holding the raw packet bytes.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

fn load_script(path: Option<&PathBuf>, cfg: &SessionConfig) -> anyhow::Result<Script> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Script::from_json(&text)?)
        }
        None => {
            let desc = load_robot(&cfg.robot)?;
            Ok(Script::constant(Command::idle(&desc)))
        }
    }
}

/// Runs one subcommand, writing its report to `out`. Returns the exit code.
pub fn run(cmd: Cmd, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cmd {
        Cmd::Gateway(a) => {
            let cfg = live::LiveConfig {
                session: a.session.config(a.seconds),
                record: a.record,
                record_dir: a.record_dir,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = live::bind(a.listen).await?;
                live::serve(listener, cfg).await
            })?;
            Ok(0)
        }
        Cmd::Rollout(a) => {
            let mut cfg = a.session.config(a.seconds);
            cfg.record_terms = a.record_terms;
            let script = load_script(a.script.as_ref(), &cfg)?;
            let outcome = match &a.record {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
                    let o = run_session(&cfg, &script, Some(&mut w))?;
                    w.flush()?;
                    o
                }
                None => run_session(&cfg, &script, None)?,
            };
            if let Some(p) = &a.metrics {
                std::fs::write(p, serde_json::to_string_pretty(&outcome.metrics)?)?;
            }
            let m = &outcome.metrics;
            writeln!(out, "ticks            {}", outcome.records.len())?;
            writeln!(out, "living time      {:.2} s", m.living_time)?;
            match outcome.termination {
                Some(r) => writeln!(out, "terminated       {r:?}")?,
                None if outcome.disconnected => writeln!(out, "ended            cockpit disconnected")?,
                None => writeln!(out, "ended            time cap")?,
            }
            writeln!(out, "lin vel error    {:.4} m/s", m.lin_vel_err)?;
            writeln!(out, "ang vel error    {:.4} rad/s", m.ang_vel_err)?;
            writeln!(out, "height error     {:.4} m", m.height_err)?;
            writeln!(
                out,
                "packets          sent {} received {} bad {}",
                outcome.packets_sent, outcome.packets_received, outcome.bad_packets
            )?;
            writeln!(out, "digest           {}", outcome.digest)?;
            Ok(0)
        }
        Cmd::Replay(a) => {
            let r = replay_file(&a.file, a.seed)?;
            writeln!(out, "ticks     {}", r.ticks)?;
            writeln!(out, "recorded  {}", r.recorded_digest)?;
            writeln!(out, "replayed  {}", r.digest)?;
            writeln!(out, "{}", if r.matches { "match" } else { "MISMATCH" })?;
            Ok(if r.matches { 0 } else { 1 })
        }
        Cmd::EvalBatch(a) => {
            let cfg = EvalConfig {
                robot: a.robot,
                n_envs: a.n_envs,
                seconds: a.seconds,
                seed: a.seed,
                rho_a: a.rho_a,
                plant_kind: match a.plant {
                    PlantChoice::Surrogate => PlantKind::Surrogate,
                    PlantChoice::Perfect => PlantKind::Perfect,
                },
                ..EvalConfig::default()
            };
            let (table, per_env) = eval_batch(&cfg)?;
            write!(out, "{}", table.to_text())?;
            if let Some(p) = &a.csv {
                std::fs::write(p, table.to_csv())?;
            }
            if let Some(p) = &a.json {
                let v = serde_json::json!({ "table": table, "episodes": per_env });
                std::fs::write(p, serde_json::to_string_pretty(&v)?)?;
            }
            Ok(0)
        }
        Cmd::DistCheck(a) => {
            let r = dist_check(&a.rho, a.samples, a.seed)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&r)?)?;
            Ok(0)
        }
        Cmd::RewardDump(a) => {
            let cfg = a.session.config(a.seconds);
            let script = load_script(a.script.as_ref(), &cfg)?;
            match &a.out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p)?);
                    let n = reward_dump(&cfg, &script, &mut w)?;
                    w.flush()?;
                    writeln!(out, "wrote {n} ticks to {}", p.display())?;
                }
                None => {
                    reward_dump(&cfg, &script, out)?;
                }
            }
            Ok(0)
        }
        Cmd::GoldenVerify(a) => {
            let report = match &a.dir {
                Some(d) => golden_verify_dir(d)?,
                None => golden_verify()?,
            };
            for s in report.summary() {
                let mark = if s.failed == 0 { "PASS" } else { "FAIL" };
                writeln!(out, "{mark}  {:<16} {:<4} {} checked, {} failed", s.table, s.preset, s.checked, s.failed)?;
            }
            for c in report.failures() {
                writeln!(out, "  {} {} {}: expected {} got {}", c.table, c.preset, c.key, c.expected, c.actual)?;
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Cmd::PacketInspect(a) => {
            let bytes = match (&a.hex, &a.file) {
                (Some(h), _) => protocol::parse_hex(h)?,
                (None, Some(p)) => std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
                (None, None) => bail!("give packet hex or --file"),
            };
            match protocol::decode(&bytes) {
                Ok(p) => {
                    writeln!(out, "{}", serde_json::to_string_pretty(&PacketJson::from(&p))?)?;
                    Ok(0)
                }
                Err(e) => {
                    writeln!(out, "invalid packet ({} bytes): {e}", bytes.len())?;
                    Ok(1)
                }
            }
        }
    }
}
