//! Python bindings. Structured results come back as plain dicts and lists.

use std::fs::File;
use std::io::BufWriter;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use teleop_core::controller::HeightServo;
use teleop_core::curriculum;
use teleop_core::gateway::{self, Script, SessionConfig, SessionCore};
use teleop_core::golden;
use teleop_core::harness::{self, EvalConfig, PlantKind};
use teleop_core::plant::pd_torque_with;
use teleop_core::protocol::{self, CommandPayload, Packet, PacketJson};
use teleop_core::reward::{RewardConfig, RewardTerm};
use teleop_core::symmetry::MirrorSpec;
use teleop_core::transport::TransportConfig;
use teleop_core::{
    load_robot, ActionCommand, Command, Plant as _, PlantConfig, RobotDescription, RobotState,
    SurrogatePlant, TorqueLaw,
};

create_exception!(teleop, TeleopError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    TeleopError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn law(name: &str) -> PyResult<TorqueLaw> {
    match name {
        "literal" => Ok(TorqueLaw::Literal),
        "conventional" => Ok(TorqueLaw::Conventional),
        other => Err(err(format!("unknown torque law {other:?}"))),
    }
}

/// Robot description loaded from a preset name or a TOML file.
#[pyclass(frozen)]
struct Robot {
    desc: Arc<RobotDescription>,
}

#[pymethods]
impl Robot {
    #[new]
    #[pyo3(signature = (name = "g1"))]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Robot {
            desc: Arc::new(load_robot(name).map_err(err)?),
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.desc.name.clone()
    }

    #[getter]
    fn n_joints(&self) -> usize {
        self.desc.n_joints()
    }

    #[getter]
    fn n_lower(&self) -> usize {
        self.desc.n_lower()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.desc.joints.iter().map(|j| j.name.clone()).collect()
    }

    #[getter]
    fn limits(&self) -> Vec<(f64, f64)> {
        self.desc.joints.iter().map(|j| (j.pos_min, j.pos_max)).collect()
    }

    #[getter]
    fn default_pose(&self) -> Vec<f64> {
        self.desc.default_pose()
    }

    #[getter]
    fn height_range(&self) -> (f64, f64) {
        (self.desc.height_clamp.lo(), self.desc.height_clamp.hi())
    }

    /// Mirror image of a lower-body action.
    fn mirror_action(&self, action: Vec<f64>) -> PyResult<Vec<f64>> {
        MirrorSpec::new(&self.desc).mirror_action(&action).map_err(err)
    }

    /// Clamped PD torque of joint `joint` for target `a` at position `q` and velocity `qd`.
    #[pyo3(signature = (joint, a, q, qd, law = "literal"))]
    fn torque(&self, joint: usize, a: f64, q: f64, qd: f64, law: &str) -> PyResult<f64> {
        let spec = self.desc.joints.get(joint).ok_or_else(|| err(format!("no joint {joint}")))?;
        Ok(pd_torque_with(self::law(law)?, spec, a, q, qd))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &*self.desc)
    }

    fn __repr__(&self) -> String {
        format!("Robot({:?}, joints={})", self.desc.name, self.desc.n_joints())
    }
}

/// Surrogate plant driven directly by joint targets.
#[pyclass(unsendable)]
struct Plant {
    plant: SurrogatePlant,
    servo: HeightServo,
    state: RobotState,
}

#[pymethods]
impl Plant {
    #[new]
    #[pyo3(signature = (robot, seed = 0, law = "literal"))]
    fn new(robot: &Robot, seed: u64, law: &str) -> PyResult<Self> {
        let cfg = PlantConfig {
            torque_law: self::law(law)?,
            ..PlantConfig::default()
        };
        let mut plant = SurrogatePlant::new(Arc::clone(&robot.desc), cfg.clone(), seed).map_err(err)?;
        let state = plant.reset();
        Ok(Plant {
            plant,
            servo: HeightServo::new(Arc::clone(&robot.desc), cfg.torque_law),
            state,
        })
    }

    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.state = self.plant.reset();
        to_py(py, &self.state)
    }

    #[getter]
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.state)
    }

    /// Lower-body targets of the built-in height servo for a command.
    fn servo_action(&self, v_x: f64, omega_yaw: f64, h: f64) -> Vec<f64> {
        self.servo.act(&Command::new(v_x, omega_yaw, h), &self.state)
    }

    /// Advances one control tick. Upper targets default to the default pose.
    #[pyo3(signature = (lower, v_x = 0.0, omega_yaw = 0.0, h = None, upper = None))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        lower: Vec<f64>,
        v_x: f64,
        omega_yaw: f64,
        h: Option<f64>,
        upper: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let desc = self.plant.description();
        let cmd = Command::new(v_x, omega_yaw, h.unwrap_or(desc.height_target_walk));
        let mut action = ActionCommand::hold_default(desc);
        action.lower_targets = lower;
        if let Some(u) = upper {
            action.upper_targets = u;
        }
        self.state = self.plant.step(&self.state, &action, &cmd).map_err(err)?;
        to_py(py, &self.state)
    }
}

/// Gateway session core: reward, termination and digest around a plant.
#[pyclass(unsendable)]
struct Session {
    core: SessionCore,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (robot = "g1", seed = 0, seconds = 20.0, record_terms = false))]
    fn new(robot: &str, seed: u64, seconds: f64, record_terms: bool) -> PyResult<Self> {
        let cfg = SessionConfig {
            robot: robot.into(),
            reward: robot.into(),
            seed,
            seconds,
            record_terms,
            ..SessionConfig::default()
        };
        let desc = Arc::new(RobotDescription::from_toml_str(&gateway::robot_source(robot).map_err(err)?).map_err(err)?);
        let reward = RewardConfig::load(&cfg.reward).map_err(err)?;
        Ok(Session {
            core: SessionCore::new(desc, reward, &cfg).map_err(err)?,
        })
    }

    /// Applies one command and returns the tick record.
    #[pyo3(signature = (v_x, omega_yaw, h, upper = None))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        v_x: f64,
        omega_yaw: f64,
        h: f64,
        upper: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let desc = Arc::clone(self.core.description());
        let upper = upper.unwrap_or_else(|| desc.upper_indices().iter().map(|&i| desc.joints[i].default_pos).collect());
        let cmd = Command::new(v_x, omega_yaw, h).clamped(&desc);
        let rec = self.core.step(cmd, &upper).map_err(err)?;
        to_py(py, &rec)
    }

    #[getter]
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.core.state())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.core.time()
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.core.tick_index()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.core.finished().is_some()
    }

    #[getter]
    fn digest(&self) -> String {
        self.core.digest()
    }
}

#[pyfunction]
fn sample_rho_prime(rho_a: f64, u: f64) -> f64 {
    curriculum::sample_rho_prime(rho_a, u)
}

#[pyfunction]
fn sample_ratio(rho_a: f64, u1: f64, u2: f64) -> f64 {
    curriculum::sample_ratio(rho_a, u1, u2)
}

#[pyfunction]
fn curriculum_cdf(rho_a: f64, x: f64) -> f64 {
    curriculum::cdf(rho_a, x)
}

#[pyfunction]
fn reward_terms() -> Vec<&'static str> {
    RewardTerm::ALL.iter().map(|t| t.id()).collect()
}

#[pyfunction]
#[pyo3(signature = (preset = "g1"))]
fn reward_weights(preset: &str) -> PyResult<Vec<(&'static str, f64)>> {
    let cfg = RewardConfig::preset(preset).map_err(err)?;
    Ok(RewardTerm::ALL.iter().map(|&t| (t.id(), cfg.weight(t))).collect())
}

#[pyfunction]
#[pyo3(signature = (seq, v_x, omega_yaw, h, arm = vec![], hand = vec![]))]
fn encode_command<'py>(
    py: Python<'py>,
    seq: u32,
    v_x: f32,
    omega_yaw: f32,
    h: f32,
    arm: Vec<f32>,
    hand: Vec<f32>,
) -> PyResult<Bound<'py, PyBytes>> {
    let mut p = CommandPayload::zeros();
    p.v_x = v_x;
    p.omega_yaw = omega_yaw;
    p.h = h;
    for (slot, v) in p.arm.iter_mut().zip(arm) {
        *slot = v;
    }
    for (slot, v) in p.hand.iter_mut().zip(hand) {
        *slot = v;
    }
    let bytes = protocol::encode(&Packet::command(seq, p)).map_err(err)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn encode_heartbeat(py: Python<'_>, seq: u32) -> PyResult<Bound<'_, PyBytes>> {
    let bytes = protocol::encode(&Packet::heartbeat(seq)).map_err(err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes a packet into its JSON mirror; raises `TeleopError` on any defect.
#[pyfunction]
fn decode_packet<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let p = protocol::decode(data).map_err(err)?;
    to_py(py, &PacketJson::from(&p))
}

#[pyfunction]
fn crc32(data: &[u8]) -> u32 {
    protocol::crc32(data)
}

#[pyfunction]
#[pyo3(signature = (n_envs = 1000, seconds = 20.0, seed = 0, robot = "g1", rho_a = 1.0, perfect = false))]
fn eval_batch<'py>(
    py: Python<'py>,
    n_envs: usize,
    seconds: f64,
    seed: u64,
    robot: &str,
    rho_a: f64,
    perfect: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = EvalConfig {
        robot: robot.into(),
        n_envs,
        seconds,
        seed,
        rho_a,
        plant_kind: if perfect { PlantKind::Perfect } else { PlantKind::Surrogate },
        ..EvalConfig::default()
    };
    let (table, _) = py.detach(|| harness::eval_batch(&cfg)).map_err(err)?;
    to_py(py, &table)
}

#[pyfunction]
#[pyo3(signature = (rhos, samples = 100_000, seed = 0))]
fn dist_check<'py>(py: Python<'py>, rhos: Vec<f64>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let r = harness::dist_check(&rhos, samples, seed).map_err(err)?;
    to_py(py, &r)
}

/// Runs a scripted session on the virtual clock and returns its summary.
/// `script` is the JSON script text; the idle command is held without one.
#[pyfunction]
#[pyo3(signature = (seconds = 20.0, seed = 0, robot = "g1", latency_ms = 16.0, jitter_ms = 0.0, drop_prob = 0.0, script = None, record = None))]
#[allow(clippy::too_many_arguments)]
fn run_session<'py>(
    py: Python<'py>,
    seconds: f64,
    seed: u64,
    robot: &str,
    latency_ms: f64,
    jitter_ms: f64,
    drop_prob: f64,
    script: Option<&str>,
    record: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SessionConfig {
        robot: robot.into(),
        reward: robot.into(),
        transport: TransportConfig::from_millis(latency_ms, jitter_ms, drop_prob),
        seed,
        seconds,
        ..SessionConfig::default()
    };
    let script = match script {
        Some(text) => Script::from_json(text).map_err(err)?,
        None => Script::constant(Command::idle(&load_robot(robot).map_err(err)?)),
    };
    let outcome = match record {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(err)?);
            gateway::run_session(&cfg, &script, Some(&mut w)).map_err(err)?
        }
        None => gateway::run_session(&cfg, &script, None).map_err(err)?,
    };
    let summary = serde_json::json!({
        "n_records": outcome.records.len(),
        "digest": outcome.digest,
        "metrics": outcome.metrics,
        "termination": outcome.termination,
        "disconnected": outcome.disconnected,
        "packets_sent": outcome.packets_sent,
        "packets_received": outcome.packets_received,
        "state_packets": outcome.state_packets,
        "mean_state_latency": outcome.mean_state_latency,
    });
    to_py(py, &summary)
}

#[pyfunction]
#[pyo3(signature = (path, seed = None))]
fn replay<'py>(py: Python<'py>, path: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let r = gateway::replay_file(path, seed).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (dir = None))]
fn golden_verify<'py>(py: Python<'py>, dir: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let report = match dir {
        Some(d) => golden::golden_verify_dir(d),
        None => golden::golden_verify(),
    }
    .map_err(err)?;
    let failures: Vec<_> = report.failures().cloned().collect();
    let v = serde_json::json!({
        "passed": report.passed(),
        "checks": report.checks.len(),
        "summary": report.summary(),
        "failures": failures,
    });
    to_py(py, &v)
}

#[pymodule]
pub fn teleop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TeleopError", m.py().get_type::<TeleopError>())?;
    m.add("PACKET_LEN", protocol::PACKET_LEN)?;
    m.add_class::<Robot>()?;
    m.add_class::<Plant>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(sample_rho_prime, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(curriculum_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(reward_terms, m)?)?;
    m.add_function(wrap_pyfunction!(reward_weights, m)?)?;
    m.add_function(wrap_pyfunction!(encode_command, m)?)?;
    m.add_function(wrap_pyfunction!(encode_heartbeat, m)?)?;
    m.add_function(wrap_pyfunction!(decode_packet, m)?)?;
    m.add_function(wrap_pyfunction!(crc32, m)?)?;
    m.add_function(wrap_pyfunction!(eval_batch, m)?)?;
    m.add_function(wrap_pyfunction!(dist_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(golden_verify, m)?)?;
    Ok(())
}
