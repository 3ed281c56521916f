//! Teleoperation session: command intake, the control loop, episode records,
//! replay and episode metrics.
//!
//! The loop runs at the plant's control rate. Tick `k` happens at `k / hz`
//! seconds: the latest command is taken from the [`CommandGate`], the tick is
//! recorded, and unless the state is terminal the plant is stepped. The same
//! [`SessionCore`] drives virtual-clock sessions, replays and the live
//! gateway.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::HeightServo;
use crate::domain_rand::{sample_episode, RandomizationConfig};
use crate::error::{Error, Result};
use crate::observation::{assemble_frame, Command, ObservationStack, RobotState};
use crate::plant::{
    interpolate_upper, is_terminated, ActionCommand, Plant, PlantConfig, SurrogatePlant, TerminationReason,
};
use crate::protocol::{self, CommandPayload, Packet, PacketType, ARM_SLOTS, HAND_SLOTS};
use crate::reward::{RewardConfig, RewardEngine, RewardInputs};
use crate::robot::{preset_source, JointGroup, RobotDescription};
use crate::transport::{simulated_transport, TransportConfig};

pub const RECORD_SCHEMA: &str = "teleop-episode";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Preset name or path to a robot description.
    pub robot: String,
    /// Reward preset name or path to a reward config.
    pub reward: String,
    pub plant: PlantConfig,
    pub randomization: RandomizationConfig,
    pub transport: TransportConfig,
    pub command_hz: f64,
    /// Upper-body interpolation steps per command interval.
    pub interp_steps: u32,
    /// Silence after which the failsafe engages, seconds.
    pub heartbeat_timeout: f64,
    /// Time for the failsafe to ramp velocities to zero, seconds.
    pub failsafe_decay: f64,
    pub state_hz: f64,
    pub seed: u64,
    /// Episode cap, seconds.
    pub seconds: f64,
    /// Store raw reward terms in every tick record.
    pub record_terms: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            robot: "g1".into(),
            reward: "g1".into(),
            plant: PlantConfig::default(),
            randomization: RandomizationConfig::default(),
            transport: TransportConfig::default(),
            command_hz: 10.0,
            interp_steps: 5,
            heartbeat_timeout: 0.5,
            failsafe_decay: 0.5,
            state_hz: 30.0,
            seed: 0,
            seconds: 20.0,
            record_terms: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.randomization.validate()?;
        self.transport.validate()?;
        if !(self.command_hz > 0.0) {
            return Err(Error::Config("session.command_hz must be positive".into()));
        }
        let ratio = self.plant.control_hz / self.command_hz;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config("control rate must be a whole multiple of the command rate".into()));
        }
        if self.interp_steps == 0 {
            return Err(Error::Config("session.interp_steps must be positive".into()));
        }
        if !(self.heartbeat_timeout > 0.0 && self.failsafe_decay > 0.0 && self.state_hz > 0.0) {
            return Err(Error::Config("session timeouts and state rate must be positive".into()));
        }
        if !(self.seconds > 0.0) {
            return Err(Error::Config("session.seconds must be positive".into()));
        }
        Ok(())
    }

    /// Control ticks between two command packets.
    pub fn command_period_ticks(&self) -> u64 {
        (self.plant.control_hz / self.command_hz).round() as u64
    }

    pub fn max_ticks(&self) -> u64 {
        (self.seconds * self.plant.control_hz).round() as u64
    }
}

/// Robot description text for a `--robot` argument, so records carry
/// everything needed to replay.
pub fn robot_source(arg: &str) -> Result<String> {
    if let Some(text) = preset_source(arg) {
        return Ok(text.to_string());
    }
    if Path::new(arg).exists() {
        return Ok(std::fs::read_to_string(arg)?);
    }
    Err(Error::NotFound(format!("robot '{arg}' is neither a preset nor a file")))
}

/// Compact state carried by each tick record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub base_height: f64,
    pub base_vel: [f64; 3],
    pub base_yaw_rate: f64,
    pub gravity_proj: [f64; 3],
    pub base_xy: [f64; 2],
    pub yaw: f64,
    pub foot_contact: Vec<bool>,
    pub q: Vec<f64>,
}

impl StateSummary {
    pub fn of(s: &RobotState) -> Self {
        StateSummary {
            base_height: s.base_height,
            base_vel: s.base_vel,
            base_yaw_rate: s.base_yaw_rate,
            gravity_proj: s.gravity_proj,
            base_xy: s.base_xy,
            yaw: s.yaw,
            foot_contact: s.foot_contact.clone(),
            q: s.q.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub command: Command,
    pub upper_targets: Vec<f64>,
    pub state: StateSummary,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<f64>>,
    pub terminated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<TerminationReason>,
}

fn hash_f64s(h: &mut Sha256, xs: &[f64]) {
    for x in xs {
        h.update(x.to_le_bytes());
    }
}

/// Plant, scripted lower-body controller and reward for one episode.
pub struct SessionCore {
    desc: Arc<RobotDescription>,
    plant: SurrogatePlant,
    servo: HeightServo,
    reward: RewardEngine,
    state: RobotState,
    prev: RobotState,
    actions: [Vec<f64>; 3],
    stack: ObservationStack,
    tick: u64,
    hasher: Sha256,
    finished: Option<TerminationReason>,
    record_terms: bool,
    control_hz: f64,
}

impl SessionCore {
    pub fn new(desc: Arc<RobotDescription>, reward: RewardConfig, cfg: &SessionConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rand = sample_episode(&cfg.randomization, desc.n_joints(), &mut rng);
        let plant_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut plant =
            SurrogatePlant::new(Arc::clone(&desc), cfg.plant.clone(), plant_seed)?.with_randomization(rand)?;
        let state = plant.reset();
        let servo = HeightServo::new(Arc::clone(&desc), cfg.plant.torque_law);
        let reward = RewardEngine::new(Arc::clone(&desc), reward)?;
        let rest: Vec<f64> = desc.lower_indices().iter().map(|&i| desc.joints[i].default_pos).collect();
        let frame = assemble_frame(&desc, &Command::idle(&desc), &state)?;
        Ok(SessionCore {
            servo,
            reward,
            prev: state.clone(),
            state,
            actions: [rest.clone(), rest.clone(), rest],
            stack: ObservationStack::new(frame),
            tick: 0,
            hasher: Sha256::new(),
            finished: None,
            record_terms: cfg.record_terms,
            control_hz: cfg.plant.control_hz,
            plant,
            desc,
        })
    }

    pub fn description(&self) -> &Arc<RobotDescription> {
        &self.desc
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn observation(&self) -> &ObservationStack {
        &self.stack
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.control_hz
    }

    pub fn finished(&self) -> Option<TerminationReason> {
        self.finished
    }

    /// Hex SHA-256 over every tick's inputs and state so far.
    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    /// Records the current tick under `cmd` and `upper`, then advances the
    /// plant unless the current state is terminal.
    pub fn step(&mut self, cmd: Command, upper: &[f64]) -> Result<TickRecord> {
        if self.finished.is_some() {
            return Err(Error::Config("session already terminated".into()));
        }
        let desc = Arc::clone(&self.desc);
        let upper_idx = desc.upper_indices();
        if upper.len() != upper_idx.len() {
            return Err(Error::shape("upper targets", upper_idx.len(), upper.len()));
        }
        let t = self.time();
        let mut targets = vec![0.0; desc.n_joints()];
        for (k, &i) in desc.lower_indices().iter().enumerate() {
            targets[i] = self.actions[0][k];
        }
        for (k, &i) in upper_idx.iter().enumerate() {
            targets[i] = upper[k];
        }
        let breakdown = self.reward.evaluate(&RewardInputs {
            state: &self.state,
            prev: &self.prev,
            cmd: &cmd,
            actions: [&self.actions[0], &self.actions[1], &self.actions[2]],
            joint_targets: &targets,
        })?;
        let term = is_terminated(&self.state, self.plant.config());

        let s = &self.state;
        self.hasher.update(self.tick.to_le_bytes());
        hash_f64s(&mut self.hasher, &cmd.as_array());
        hash_f64s(&mut self.hasher, upper);
        hash_f64s(&mut self.hasher, &[t, s.base_height, s.base_yaw_rate, s.yaw]);
        hash_f64s(&mut self.hasher, &s.base_vel);
        hash_f64s(&mut self.hasher, &s.tilt);
        hash_f64s(&mut self.hasher, &s.tilt_rate);
        hash_f64s(&mut self.hasher, &s.base_xy);
        hash_f64s(&mut self.hasher, &s.q);
        hash_f64s(&mut self.hasher, &s.qd);

        let record = TickRecord {
            tick: self.tick,
            t,
            command: cmd,
            upper_targets: upper.to_vec(),
            state: StateSummary::of(s),
            reward: breakdown.total,
            terms: self.record_terms.then(|| breakdown.terms.iter().map(|v| v.raw).collect()),
            terminated: term.terminated,
            reason: term.reason,
        };
        if term.terminated {
            self.finished = term.reason;
            return Ok(record);
        }

        let lower = self.servo.act(&cmd, &self.state);
        let action = ActionCommand {
            lower_targets: lower.clone(),
            upper_targets: upper.to_vec(),
        };
        let next = self.plant.step(&self.state, &action, &cmd)?;
        self.prev = std::mem::replace(&mut self.state, next);
        self.actions.rotate_right(1);
        self.actions[0] = lower;
        self.stack.push(assemble_frame(&desc, &cmd, &self.state)?)?;
        self.tick += 1;
        Ok(record)
    }
}

/// Turns received packets into the command and upper-body targets applied on
/// each tick: latest command wins, arm targets ramp linearly over
/// `interp_steps` ticks, and silence engages the failsafe.
#[derive(Debug, Clone)]
pub struct CommandGate {
    desc: Arc<RobotDescription>,
    heartbeat_timeout: f64,
    failsafe_decay: f64,
    interp_steps: u32,
    arm_idx: Vec<usize>,
    hand_idx: Vec<usize>,
    command: Option<Command>,
    last_heard: Option<f64>,
    last_seq: Option<u32>,
    ramp_prev: Vec<f64>,
    ramp_next: Vec<f64>,
    ramp_k: u32,
    emitted: Vec<f64>,
    pub accepted: u64,
    pub stale: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkStatus {
    /// No command received yet.
    Waiting,
    Live,
    /// Heartbeat timeout; velocities decaying.
    Failsafe,
}

impl CommandGate {
    pub fn new(desc: Arc<RobotDescription>, cfg: &SessionConfig) -> Self {
        let upper = desc.upper_indices();
        let slot = |group: JointGroup| -> Vec<usize> {
            upper
                .iter()
                .enumerate()
                .filter(|(_, &i)| desc.joints[i].group == group)
                .map(|(k, _)| k)
                .collect()
        };
        let rest: Vec<f64> = upper.iter().map(|&i| desc.joints[i].default_pos).collect();
        CommandGate {
            arm_idx: slot(JointGroup::UpperArm),
            hand_idx: slot(JointGroup::Hand),
            heartbeat_timeout: cfg.heartbeat_timeout,
            failsafe_decay: cfg.failsafe_decay,
            interp_steps: cfg.interp_steps,
            command: None,
            last_heard: None,
            last_seq: None,
            ramp_prev: rest.clone(),
            ramp_next: rest.clone(),
            ramp_k: cfg.interp_steps,
            emitted: rest,
            accepted: 0,
            stale: 0,
            desc,
        }
    }

    /// Upper-body targets encoded in a payload, clamped to joint limits.
    /// Slots beyond the robot's joints are ignored; missing slots keep the
    /// current target.
    pub fn upper_from_payload(&self, p: &CommandPayload) -> Vec<f64> {
        let upper = self.desc.upper_indices();
        let mut out = self.ramp_next.clone();
        for (slots, values) in [(&self.arm_idx, &p.arm), (&self.hand_idx, &p.hand)] {
            for (&k, &v) in slots.iter().zip(values.iter()) {
                if v.is_finite() {
                    out[k] = self.desc.joints[upper[k]].limits().clamp(f64::from(v));
                }
            }
        }
        out
    }

    pub fn on_packet(&mut self, t: f64, packet: &Packet) {
        if let Some(last) = self.last_seq {
            if packet.seq <= last && packet.kind == PacketType::Command {
                self.stale += 1;
                return;
            }
        }
        match packet.kind {
            PacketType::Heartbeat => {
                self.last_heard = Some(t);
            }
            PacketType::Command => {
                let Some(p) = &packet.payload else { return };
                self.last_seq = Some(packet.seq);
                self.last_heard = Some(t);
                self.accepted += 1;
                let cmd = Command::new(f64::from(p.v_x), f64::from(p.omega_yaw), f64::from(p.h));
                self.command = Some(cmd.clamped(&self.desc));
                let next = self.upper_from_payload(p);
                self.ramp_prev = self.emitted.clone();
                self.ramp_next = next;
                self.ramp_k = 0;
            }
            PacketType::State => {}
        }
    }

    pub fn status(&self, t: f64) -> LinkStatus {
        match self.last_heard {
            None => LinkStatus::Waiting,
            Some(h) if t - h > self.heartbeat_timeout => LinkStatus::Failsafe,
            Some(_) => LinkStatus::Live,
        }
    }

    /// Command and upper targets for the tick at time `t`. Call once per tick.
    pub fn applied(&mut self, t: f64) -> (Command, Vec<f64>) {
        if self.ramp_k < self.interp_steps {
            self.ramp_k += 1;
        }
        self.emitted = interpolate_upper(&self.ramp_prev, &self.ramp_next, self.ramp_k, self.interp_steps);
        let cmd = match (self.command, self.last_heard) {
            (Some(c), Some(heard)) => {
                let silent = t - heard - self.heartbeat_timeout;
                if silent > 0.0 {
                    let f = (1.0 - silent / self.failsafe_decay).max(0.0);
                    Command::new(c.v_x * f, c.omega_yaw * f, c.h)
                } else {
                    c
                }
            }
            _ => Command::idle(&self.desc),
        };
        (cmd, self.emitted.clone())
    }
}

/// One piece of a scripted command stream, held from `t` until the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub t: f64,
    pub v_x: f64,
    pub omega_yaw: f64,
    pub h: f64,
    #[serde(default)]
    pub arm: Option<Vec<f64>>,
    #[serde(default)]
    pub hand: Option<Vec<f64>>,
}

/// Scripted cockpit: a piecewise-constant command stream sent at the command
/// rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub segments: Vec<ScriptSegment>,
    /// Stop sending (without closing the link) from this time on.
    #[serde(default)]
    pub silent_after: Option<f64>,
    /// Close the link at this time.
    #[serde(default)]
    pub disconnect_at: Option<f64>,
}

impl Script {
    pub fn constant(cmd: Command) -> Self {
        Script {
            segments: vec![ScriptSegment {
                t: 0.0,
                v_x: cmd.v_x,
                omega_yaw: cmd.omega_yaw,
                h: cmd.h,
                arm: None,
                hand: None,
            }],
            silent_after: None,
            disconnect_at: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Script = serde_json::from_str(text)?;
        if s.segments.is_empty() {
            return Err(Error::Config("script has no segments".into()));
        }
        if s.segments.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Config("script segments must be sorted by time".into()));
        }
        Ok(s)
    }

    pub fn at(&self, t: f64) -> Option<&ScriptSegment> {
        self.segments.iter().rev().find(|s| s.t <= t)
    }

    fn payload(&self, t: f64, desc: &RobotDescription) -> Option<CommandPayload> {
        let seg = self.at(t)?;
        let defaults = |group: JointGroup, slots: usize| -> Vec<f32> {
            let mut v: Vec<f32> = desc
                .indices_of_group(group)
                .iter()
                .map(|&i| desc.joints[i].default_pos as f32)
                .collect();
            v.resize(slots, 0.0);
            v
        };
        let fill = |given: &Option<Vec<f64>>, group: JointGroup, slots: usize| -> Vec<f32> {
            let mut v = defaults(group, slots);
            if let Some(g) = given {
                for (dst, src) in v.iter_mut().zip(g) {
                    *dst = *src as f32;
                }
            }
            v
        };
        Some(CommandPayload {
            v_x: seg.v_x as f32,
            omega_yaw: seg.omega_yaw as f32,
            h: seg.h as f32,
            arm: fill(&seg.arm, JointGroup::UpperArm, ARM_SLOTS),
            hand: fill(&seg.hand, JointGroup::Hand, HAND_SLOTS),
            reserved: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Mean planar velocity error `‖(v_x - v_rx, -v_ry)‖`.
    pub lin_vel_err: f64,
    pub lin_vel_err_x: f64,
    pub lin_vel_err_y: f64,
    pub ang_vel_err: f64,
    pub height_err: f64,
    pub living_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry_loss: Option<f64>,
    pub n_records: usize,
}

/// Running sums behind [`EpisodeMetrics`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    sums: [crate::stats::KahanSum; 5],
    n: usize,
    last_t: f64,
    terminated: bool,
}

impl MetricAccumulator {
    /// Adds one tick: the command in force and the measured planar base
    /// velocity, yaw rate and height.
    pub fn push(&mut self, cmd: &Command, base_vel: [f64; 3], yaw_rate: f64, height: f64, t: f64, terminated: bool) {
        let ex = (base_vel[0] - cmd.v_x).abs();
        let ey = base_vel[1].abs();
        self.sums[0].add(ex.hypot(ey));
        self.sums[1].add(ex);
        self.sums[2].add(ey);
        self.sums[3].add((yaw_rate - cmd.omega_yaw).abs());
        self.sums[4].add((height - cmd.h).abs());
        self.n += 1;
        self.last_t = t;
        self.terminated = terminated;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Living time is `cap` unless the last tick was terminal.
    pub fn finish(&self, cap: f64) -> Result<EpisodeMetrics> {
        if self.n == 0 {
            return Err(Error::EmptyEpisode);
        }
        let n = self.n as f64;
        Ok(EpisodeMetrics {
            lin_vel_err: self.sums[0].value() / n,
            lin_vel_err_x: self.sums[1].value() / n,
            lin_vel_err_y: self.sums[2].value() / n,
            ang_vel_err: self.sums[3].value() / n,
            height_err: self.sums[4].value() / n,
            living_time: if self.terminated { self.last_t } else { cap },
            symmetry_loss: None,
            n_records: self.n,
        })
    }
}

/// Tracking errors averaged over all records.
pub fn metrics(records: &[TickRecord], cap: f64) -> Result<EpisodeMetrics> {
    let mut acc = MetricAccumulator::default();
    for r in records {
        acc.push(&r.command, r.state.base_vel, r.state.base_yaw_rate, r.state.base_height, r.t, r.terminated);
    }
    acc.finish(cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub robot: String,
    pub robot_source: String,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFooter {
    pub n: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum RecordLine {
    Header(RecordHeader),
    Tick(TickRecord),
    End(RecordFooter),
}

/// Line-delimited episode writer: header, one line per tick, footer.
pub struct RecordWriter<W: Write> {
    out: W,
    n: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, header: &RecordHeader) -> Result<Self> {
        serde_json::to_writer(&mut out, &RecordLine::Header(header.clone()))?;
        out.write_all(b"\n")?;
        Ok(RecordWriter { out, n: 0 })
    }

    pub fn write_tick(&mut self, r: &TickRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, &RecordLine::Tick(r.clone()))?;
        self.out.write_all(b"\n")?;
        self.n += 1;
        Ok(())
    }

    pub fn finish(mut self, digest: &str) -> Result<W> {
        let footer = RecordFooter {
            n: self.n,
            digest: digest.to_string(),
        };
        serde_json::to_writer(&mut self.out, &RecordLine::End(footer))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFile {
    pub header: RecordHeader,
    pub ticks: Vec<TickRecord>,
    pub footer: RecordFooter,
}

/// Parses a record stream, rejecting anything incomplete.
pub fn read_records(reader: impl BufRead) -> Result<EpisodeFile> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Truncated("empty file".into()))??;
    let probe: serde_json::Value =
        serde_json::from_str(&first).map_err(|_| Error::Truncated("unreadable header line".into()))?;
    let header = probe
        .get("header")
        .ok_or_else(|| Error::Truncated("first line is not a header".into()))?;
    let schema = header.get("schema").and_then(|v| v.as_str()).unwrap_or_default();
    if schema != RECORD_SCHEMA {
        return Err(Error::Config(format!("not an episode record (schema '{schema}')")));
    }
    let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != RECORD_VERSION {
        return Err(Error::Version {
            expected: RECORD_VERSION,
            found: version,
        });
    }
    let header: RecordHeader = serde_json::from_value(header.clone())?;

    let mut ticks = Vec::new();
    let mut footer = None;
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(Error::Config(format!("data after footer at line {}", k + 2)));
        }
        match serde_json::from_str::<RecordLine>(&line) {
            Ok(RecordLine::Tick(t)) => ticks.push(t),
            Ok(RecordLine::End(f)) => footer = Some(f),
            Ok(RecordLine::Header(_)) => return Err(Error::Config(format!("second header at line {}", k + 2))),
            Err(e) => return Err(Error::Truncated(format!("line {}: {e}", k + 2))),
        }
    }
    let footer = footer.ok_or_else(|| Error::Truncated("missing footer".into()))?;
    if footer.n != ticks.len() as u64 {
        return Err(Error::Truncated(format!(
            "footer counts {} ticks, file holds {}",
            footer.n,
            ticks.len()
        )));
    }
    Ok(EpisodeFile { header, ticks, footer })
}

pub fn read_record_file(path: impl AsRef<Path>) -> Result<EpisodeFile> {
    let f = std::fs::File::open(path)?;
    read_records(BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub digest: String,
    pub recorded_digest: String,
    pub ticks: u64,
    pub matches: bool,
}

/// Re-executes a recorded command stream and returns the resulting digest.
/// `seed` overrides the recorded seed.
pub fn replay(file: &EpisodeFile, seed: Option<u64>) -> Result<ReplayOutcome> {
    let desc = Arc::new(RobotDescription::from_toml_str(&file.header.robot_source)?);
    let mut cfg = file.header.config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let reward = RewardConfig::load(&cfg.reward)?;
    let mut core = SessionCore::new(desc, reward, &cfg)?;
    for r in &file.ticks {
        if core.finished().is_some() {
            break;
        }
        core.step(r.command, &r.upper_targets)?;
    }
    let digest = core.digest();
    Ok(ReplayOutcome {
        matches: digest == file.footer.digest,
        recorded_digest: file.footer.digest.clone(),
        digest,
        ticks: file.ticks.len() as u64,
    })
}

pub fn replay_file(path: impl AsRef<Path>, seed: Option<u64>) -> Result<ReplayOutcome> {
    replay(&read_record_file(path)?, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub records: Vec<TickRecord>,
    pub digest: String,
    pub metrics: EpisodeMetrics,
    pub termination: Option<TerminationReason>,
    pub disconnected: bool,
    pub packets_sent: u64,
    pub packets_received: u64,
    pub bad_packets: u64,
    pub state_packets: u64,
    /// Mean cockpit-side delay of state packets, seconds.
    pub mean_state_latency: Option<f64>,
}

/// Runs a session on the virtual clock with a scripted cockpit on the far
/// side of a simulated link. Writes the episode to `record` when given.
pub fn run_session(cfg: &SessionConfig, script: &Script, record: Option<&mut dyn Write>) -> Result<SessionOutcome> {
    cfg.validate()?;
    let source = robot_source(&cfg.robot)?;
    let desc = Arc::new(RobotDescription::from_toml_str(&source)?);
    let reward = RewardConfig::load(&cfg.reward)?;
    let mut core = SessionCore::new(Arc::clone(&desc), reward, cfg)?;
    let mut gate = CommandGate::new(Arc::clone(&desc), cfg);

    let (up_tx, up_rx) = simulated_transport::<Vec<u8>>(cfg.transport, cfg.seed.wrapping_add(1))?;
    let (down_tx, down_rx) = simulated_transport::<Vec<u8>>(cfg.transport, cfg.seed.wrapping_add(2))?;
    let mut up_tx = Some(up_tx);

    let mut writer = match record {
        Some(w) => Some(RecordWriter::new(
            w,
            &RecordHeader {
                schema: RECORD_SCHEMA.into(),
                version: RECORD_VERSION,
                seed: cfg.seed,
                robot: desc.name.clone(),
                robot_source: source.clone(),
                config: cfg.clone(),
            },
        )?),
        None => None,
    };

    let hz = cfg.plant.control_hz;
    let cmd_period = cfg.command_period_ticks();
    // State snapshots go out whenever k * state_hz / hz crosses an integer.
    let state_slot = |k: u64| (k as f64 * cfg.state_hz / hz).floor() as u64;
    let mut records = Vec::new();
    let mut seq = 0u32;
    let mut state_seq = 0u32;
    let (mut sent, mut received, mut bad, mut state_packets) = (0u64, 0u64, 0u64, 0u64);
    let mut latency_sum = 0.0;
    let mut disconnected = false;

    for k in 0..cfg.max_ticks() {
        let t = k as f64 / hz;
        if script.disconnect_at.is_some_and(|d| t >= d) {
            up_tx = None;
        }
        if let Some(tx) = &up_tx {
            let talking = script.silent_after.is_none_or(|s| t < s);
            if talking && k % cmd_period == 0 {
                if let Some(p) = script.payload(t, &desc) {
                    seq += 1;
                    tx.send(t, protocol::encode(&Packet::command(seq, p))?)?;
                    sent += 1;
                }
            }
        }
        match up_rx.recv_due(t) {
            Ok(msgs) => {
                for m in msgs {
                    match protocol::decode(&m.msg) {
                        Ok(p) => {
                            received += 1;
                            gate.on_packet(t, &p);
                        }
                        Err(e) => {
                            bad += 1;
                            log::warn!("dropping packet: {e}");
                        }
                    }
                }
            }
            Err(Error::Disconnected) => {
                disconnected = true;
                break;
            }
            Err(e) => return Err(e),
        }

        let (cmd, upper) = gate.applied(t);
        let rec = core.step(cmd, &upper)?;
        if let Some(w) = writer.as_mut() {
            w.write_tick(&rec)?;
        }
        let done = rec.terminated;
        records.push(rec);

        if k == 0 || state_slot(k) > state_slot(k - 1) {
            let s = core.state();
            let mut payload = CommandPayload::zeros();
            payload.v_x = s.base_vel[0] as f32;
            payload.omega_yaw = s.base_yaw_rate as f32;
            payload.h = s.base_height as f32;
            state_seq += 1;
            down_tx.send(t, protocol::encode(&Packet::state(state_seq, payload))?)?;
        }
        for m in down_rx.recv_due(t)? {
            state_packets += 1;
            latency_sum += m.delivered_at - m.sent_at;
        }
        if done {
            break;
        }
    }

    let digest = core.digest();
    if let Some(w) = writer {
        w.finish(&digest)?;
    }
    let metrics = metrics(&records, cfg.seconds)?;
    Ok(SessionOutcome {
        digest,
        metrics,
        termination: core.finished(),
        disconnected,
        packets_sent: sent,
        packets_received: received,
        bad_packets: bad,
        state_packets,
        mean_state_latency: (state_packets > 0).then(|| latency_sum / state_packets as f64),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SessionConfig {
        SessionConfig {
            seconds: 2.0,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn config_rejects_fractional_rate_ratio() {
        let cfg = SessionConfig {
            command_hz: 15.0,
            ..SessionConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gate_waits_with_idle_command() {
        let desc = Arc::new(crate::robot::load_preset("g1").unwrap());
        let mut gate = CommandGate::new(Arc::clone(&desc), &quiet());
        let (cmd, upper) = gate.applied(3.0);
        assert_eq!(cmd, Command::idle(&desc));
        let rest: Vec<f64> = desc.upper_indices().iter().map(|&i| desc.joints[i].default_pos).collect();
        assert_eq!(upper, rest);
        assert_eq!(gate.status(3.0), LinkStatus::Waiting);
    }

    #[test]
    fn stale_sequence_numbers_are_ignored() {
        let desc = Arc::new(crate::robot::load_preset("g1").unwrap());
        let mut gate = CommandGate::new(Arc::clone(&desc), &quiet());
        let mut p = CommandPayload::zeros();
        p.v_x = 0.5;
        p.h = 0.7;
        gate.on_packet(0.0, &Packet::command(5, p.clone()));
        p.v_x = 0.1;
        gate.on_packet(0.1, &Packet::command(4, p));
        assert_eq!(gate.applied(0.1).0.v_x, 0.5);
        assert_eq!(gate.stale, 1);
    }

    #[test]
    fn metrics_reject_empty() {
        assert!(matches!(metrics(&[], 20.0), Err(Error::EmptyEpisode)));
    }

    #[test]
    fn script_parsing() {
        let s = Script::from_json(r#"{"segments":[{"t":0,"v_x":0.2,"omega_yaw":0,"h":0.7},{"t":2,"v_x":0,"omega_yaw":0.3,"h":0.6}]}"#)
            .unwrap();
        assert_eq!(s.at(1.0).unwrap().v_x, 0.2);
        assert_eq!(s.at(2.5).unwrap().omega_yaw, 0.3);
        assert!(Script::from_json(r#"{"segments":[]}"#).is_err());
    }
}
