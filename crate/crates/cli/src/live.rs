//! Browser-facing live gateway.
//!
//! Each WebSocket connection gets its own session: a control loop at the
//! plant's rate, fed through a latest-command inbox. Inbound and outbound
//! messages pass through delay lines that inject the configured latency,
//! jitter and loss.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::Context;
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::time::{Instant, MissedTickBehavior};

use teleop_core::gateway::{
    robot_source, CommandGate, LinkStatus, RecordHeader, RecordWriter, SessionConfig, SessionCore, RECORD_SCHEMA,
    RECORD_VERSION,
};
use teleop_core::protocol::{self, Packet, PacketJson, PacketType};
use teleop_core::reward::RewardConfig;
use teleop_core::robot::{Interval, JointGroup};
use teleop_core::transport::DelaySampler;
use teleop_core::{Command, RobotDescription};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub session: SessionConfig,
    /// Record from the start of every connection to this file.
    pub record: Option<PathBuf>,
    /// Where toggled recordings go when no record path is given.
    pub record_dir: PathBuf,
}

struct Shared {
    cfg: LiveConfig,
    source: String,
    desc: Arc<RobotDescription>,
    reward: RewardConfig,
    next_connection: Mutex<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointLimit {
    pub name: String,
    pub group: JointGroup,
    pub lo: f64,
    pub hi: f64,
    pub default: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Handshake {
    pub robot: String,
    pub protocol_versions: Vec<u8>,
    pub control_hz: f64,
    pub command_hz: f64,
    pub state_hz: f64,
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub joints: Vec<JointLimit>,
    /// Joints addressed by the payload's arm slots, in slot order.
    pub arm_slots: Vec<JointLimit>,
    /// Joints addressed by the payload's hand slots, in slot order.
    pub hand_slots: Vec<JointLimit>,
    pub v_x: Interval,
    pub omega_yaw: Interval,
    pub height: Interval,
    pub recording: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Echo {
    /// `client_time` of the newest command the loop has taken in.
    pub client_time: f64,
    /// Milliseconds that command waited on the server before this snapshot.
    pub hold_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u32,
    pub tick: u64,
    pub t: f64,
    pub status: LinkStatus,
    pub command: Command,
    pub upper: Vec<f64>,
    pub base_height: f64,
    pub base_vel: [f64; 3],
    pub yaw_rate: f64,
    pub gravity: [f64; 3],
    pub base_xy: [f64; 2],
    pub yaw: f64,
    pub q: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub recording: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo: Option<Echo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordAck {
    pub on: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub ticks: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    Packet {
        packet: PacketJson,
        #[serde(default)]
        client_time: Option<f64>,
    },
    Record {
        on: bool,
    },
    Ping {
        client_time: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Handshake),
    State(StateSnapshot),
    Record(RecordAck),
    Pong { client_time: f64 },
    Error { message: String },
}

fn limit(desc: &RobotDescription, i: usize) -> JointLimit {
    let j = &desc.joints[i];
    JointLimit {
        name: j.name.clone(),
        group: j.group,
        lo: j.pos_min,
        hi: j.pos_max,
        default: j.default_pos,
    }
}

fn handshake(shared: &Shared, recording: bool) -> Handshake {
    let desc = &*shared.desc;
    let cfg = &shared.cfg.session;
    let slots = |g: JointGroup| desc.upper_indices().into_iter().filter(|&i| desc.joints[i].group == g).map(|i| limit(desc, i)).collect();
    Handshake {
        robot: desc.name.clone(),
        protocol_versions: vec![1, 2],
        control_hz: cfg.plant.control_hz,
        command_hz: cfg.command_hz,
        state_hz: cfg.state_hz,
        latency_ms: cfg.transport.latency * 1e3,
        jitter_ms: cfg.transport.jitter * 1e3,
        joints: (0..desc.n_joints()).map(|i| limit(desc, i)).collect(),
        arm_slots: slots(JointGroup::UpperArm),
        hand_slots: slots(JointGroup::Hand),
        v_x: desc.cmd_ranges.v_x,
        omega_yaw: desc.cmd_ranges.yaw,
        height: desc.height_clamp,
        recording,
    }
}

pub fn router(cfg: LiveConfig) -> anyhow::Result<Router> {
    cfg.session.validate()?;
    let source = robot_source(&cfg.session.robot)?;
    let desc = Arc::new(RobotDescription::from_toml_str(&source)?);
    let reward = RewardConfig::load(&cfg.session.reward)?;
    let shared = Arc::new(Shared {
        cfg,
        source,
        desc,
        reward,
        next_connection: Mutex::new(0),
    });
    Ok(Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(shared))
}

/// Serves until the listener fails or the process is interrupted.
pub async fn serve(listener: tokio::net::TcpListener, cfg: LiveConfig) -> anyhow::Result<()> {
    let app = router(cfg)?;
    log::info!("gateway listening on ws://{}/ws", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub async fn bind(addr: SocketAddr) -> anyhow::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| async move {
        if let Err(e) = connection(socket, shared).await {
            log::warn!("session ended with error: {e:#}");
        }
    })
}

/// What the control loop takes from the network between two ticks.
#[derive(Default)]
struct Inbox {
    command: Option<Packet>,
    heartbeat: Option<Packet>,
    echo: Option<(f64, Instant)>,
    record: Option<bool>,
    pings: Vec<f64>,
    errors: Vec<String>,
    closed: bool,
}

enum Inbound {
    Packet(Packet, Option<f64>),
    Record(bool),
    Ping(f64),
}

fn parse_client(msg: Message) -> Option<Result<Inbound, String>> {
    match msg {
        Message::Text(text) => Some(match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Packet { packet, client_time }) => {
                let p: Packet = packet.into();
                // Re-encoding applies the binary format's own checks.
                protocol::encode(&p).map(|_| Inbound::Packet(p, client_time)).map_err(|e| e.to_string())
            }
            Ok(ClientMessage::Record { on }) => Ok(Inbound::Record(on)),
            Ok(ClientMessage::Ping { client_time }) => Ok(Inbound::Ping(client_time)),
            Err(e) => Err(format!("unreadable message: {e}")),
        }),
        Message::Binary(bytes) => Some(protocol::decode(&bytes).map(|p| Inbound::Packet(p, None)).map_err(|e| e.to_string())),
        _ => None,
    }
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(Utf8Bytes::from(serde_json::to_string(msg).expect("server messages serialize")))
}

struct Recording {
    writer: RecordWriter<BufWriter<File>>,
    path: PathBuf,
    ticks: u64,
}

fn record_path(shared: &Shared, connection: u64, count: u64) -> PathBuf {
    match &shared.cfg.record {
        Some(p) if count == 0 => p.clone(),
        Some(p) => {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("episode");
            p.with_file_name(format!("{stem}-{count}.jsonl"))
        }
        None => shared.cfg.record_dir.join(format!("episode-{connection}-{count}.jsonl")),
    }
}

fn start_recording(shared: &Shared, path: &Path) -> anyhow::Result<Recording> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let header = RecordHeader {
        schema: RECORD_SCHEMA.into(),
        version: RECORD_VERSION,
        seed: shared.cfg.session.seed,
        robot: shared.desc.name.clone(),
        robot_source: shared.source.clone(),
        config: shared.cfg.session.clone(),
    };
    Ok(Recording {
        writer: RecordWriter::new(BufWriter::new(file), &header)?,
        path: path.to_path_buf(),
        ticks: 0,
    })
}

fn new_core(shared: &Shared) -> anyhow::Result<SessionCore> {
    Ok(SessionCore::new(Arc::clone(&shared.desc), shared.reward.clone(), &shared.cfg.session)?)
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) -> anyhow::Result<()> {
    let id = {
        let mut n = shared.next_connection.lock().expect("counter lock");
        *n += 1;
        *n
    };
    let cfg = shared.cfg.session.clone();
    let epoch = Instant::now();
    let (mut sink, mut stream) = socket.split();

    // Outbound delay line: messages leave in order once due.
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<(Instant, Message)>();
    let writer = tokio::spawn(async move {
        while let Some((due, msg)) = out_rx.recv().await {
            tokio::time::sleep_until(due).await;
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let mut down = DelaySampler::new(cfg.transport, cfg.seed.wrapping_add(2))?;
    let mut send = move |msg: &ServerMessage, droppable: bool| {
        let now = epoch.elapsed().as_secs_f64();
        let at = match down.delivery(now) {
            Some(at) => at,
            None if droppable => return,
            None => now + cfg.transport.latency,
        };
        let _ = out_tx.send((epoch + Duration::from_secs_f64(at), text(msg)));
    };

    // Inbound delay line into the inbox.
    let inbox = Arc::new(Mutex::new(Inbox::default()));
    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<(Instant, Inbound)>();
    let deliver = {
        let inbox = Arc::clone(&inbox);
        tokio::spawn(async move {
            while let Some((due, msg)) = in_rx.recv().await {
                tokio::time::sleep_until(due).await;
                let mut b = inbox.lock().expect("inbox lock");
                match msg {
                    Inbound::Packet(p, client_time) => match p.kind {
                        PacketType::Command => {
                            if let Some(ct) = client_time {
                                b.echo = Some((ct, Instant::now()));
                            }
                            b.command = Some(p);
                        }
                        PacketType::Heartbeat => b.heartbeat = Some(p),
                        PacketType::State => b.errors.push("state packets only flow from the gateway".into()),
                    },
                    Inbound::Record(on) => b.record = Some(on),
                    Inbound::Ping(t) => b.pings.push(t),
                }
            }
            inbox.lock().expect("inbox lock").closed = true;
        })
    };
    let reader = {
        let inbox = Arc::clone(&inbox);
        let mut up = DelaySampler::new(cfg.transport, cfg.seed.wrapping_add(1))?;
        tokio::spawn(async move {
            while let Some(Ok(msg)) = stream.next().await {
                if matches!(msg, Message::Close(_)) {
                    break;
                }
                match parse_client(msg) {
                    Some(Ok(m)) => {
                        let now = epoch.elapsed().as_secs_f64();
                        let at = match up.delivery(now) {
                            Some(at) => at,
                            None if matches!(m, Inbound::Packet(..)) => continue,
                            None => now + up.config().latency,
                        };
                        let _ = in_tx.send((epoch + Duration::from_secs_f64(at), m));
                    }
                    Some(Err(e)) => {
                        log::debug!("connection {id}: {e}");
                        inbox.lock().expect("inbox lock").errors.push(e);
                    }
                    None => {}
                }
            }
        })
    };

    let mut core = new_core(&shared)?;
    let mut gate = CommandGate::new(Arc::clone(&shared.desc), &cfg);
    let mut recording: Option<Recording> = None;
    let mut n_recordings = 0u64;
    if shared.cfg.record.is_some() {
        recording = Some(start_recording(&shared, &record_path(&shared, id, 0))?);
        n_recordings = 1;
    }
    send(&ServerMessage::Hello(handshake(&shared, recording.is_some())), false);
    log::info!("connection {id}: session started");

    let hz = cfg.plant.control_hz;
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let state_slot = |k: u64| (k as f64 * cfg.state_hz / hz).floor() as u64;
    let mut state_seq = 0u32;
    let mut echo: Option<(f64, Instant)> = None;

    loop {
        ticker.tick().await;
        let taken = std::mem::take(&mut *inbox.lock().expect("inbox lock"));
        if taken.closed {
            break;
        }
        if let Some(on) = taken.record {
            match (on, recording.take()) {
                (true, None) => {
                    // Recording starts a fresh episode.
                    core = new_core(&shared)?;
                    gate = CommandGate::new(Arc::clone(&shared.desc), &cfg);
                    let path = record_path(&shared, id, n_recordings);
                    n_recordings += 1;
                    let r = start_recording(&shared, &path)?;
                    let ack = RecordAck {
                        on: true,
                        path: Some(r.path.display().to_string()),
                        ticks: 0,
                    };
                    recording = Some(r);
                    send(&ServerMessage::Record(ack), false);
                }
                (false, Some(r)) => finish_recording(r, &core, &mut send)?,
                (on, current) => {
                    let ack = RecordAck {
                        on,
                        path: current.as_ref().map(|r| r.path.display().to_string()),
                        ticks: current.as_ref().map_or(0, |r| r.ticks),
                    };
                    recording = current;
                    send(&ServerMessage::Record(ack), false);
                }
            }
        }

        let t = core.time();
        let mut packets: Vec<&Packet> = taken.heartbeat.iter().chain(&taken.command).collect();
        packets.sort_by_key(|p| p.seq);
        for p in packets {
            gate.on_packet(t, p);
        }
        if taken.echo.is_some() {
            echo = taken.echo;
        }
        for message in taken.errors {
            send(&ServerMessage::Error { message }, false);
        }
        for client_time in taken.pings {
            send(&ServerMessage::Pong { client_time }, false);
        }
        let (cmd, upper) = gate.applied(t);
        let rec = core.step(cmd, &upper)?;
        if let Some(r) = recording.as_mut() {
            r.writer.write_tick(&rec)?;
            r.ticks += 1;
        }
        let k = rec.tick;
        if k == 0 || state_slot(k) > state_slot(k - 1) || rec.terminated {
            state_seq = state_seq.wrapping_add(1);
            let s = core.state();
            let snapshot = StateSnapshot {
                seq: state_seq,
                tick: k,
                t: rec.t,
                status: gate.status(t),
                command: cmd,
                upper,
                base_height: s.base_height,
                base_vel: s.base_vel,
                yaw_rate: s.base_yaw_rate,
                gravity: s.gravity_proj,
                base_xy: s.base_xy,
                yaw: s.yaw,
                q: s.q.clone(),
                reward: rec.reward,
                terminated: rec.terminated,
                recording: recording.is_some(),
                echo: echo.map(|(client_time, at)| Echo {
                    client_time,
                    hold_ms: at.elapsed().as_secs_f64() * 1e3,
                }),
            };
            send(&ServerMessage::State(snapshot), true);
        }
        if rec.terminated {
            log::info!("connection {id}: episode terminated at t={:.2} ({:?})", rec.t, rec.reason);
            if let Some(r) = recording.take() {
                finish_recording(r, &core, &mut send)?;
            }
            core = new_core(&shared)?;
            gate = CommandGate::new(Arc::clone(&shared.desc), &cfg);
        }
    }

    if let Some(r) = recording.take() {
        finish_recording(r, &core, &mut send)?;
    }
    log::info!("connection {id}: closed after {} ticks", core.tick_index());
    reader.abort();
    deliver.abort();
    drop(send);
    let _ = writer.await;
    Ok(())
}

fn finish_recording(r: Recording, core: &SessionCore, send: &mut impl FnMut(&ServerMessage, bool)) -> anyhow::Result<()> {
    r.writer.finish(&core.digest())?;
    log::info!("wrote {} ticks to {}", r.ticks, r.path.display());
    send(
        &ServerMessage::Record(RecordAck {
            on: false,
            path: Some(r.path.display().to_string()),
            ticks: r.ticks,
        }),
        false,
    );
    Ok(())
}
