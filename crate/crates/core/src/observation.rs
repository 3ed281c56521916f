//! Operator commands, plant state and the policy observation.
//!
//! One observation frame is laid out as
//!
//! ```text
//! [ v_x, ω_yaw, h | ω_x, ω_y, ω_z | g_x, g_y, g_z | q (N_joints) | q̇ (N_joints) | a_prev (N_lower) ]
//! ```
//!
//! and the policy input is the last six frames concatenated oldest first.
//! At episode start the stack holds six copies of the first frame.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::RobotDescription;

/// Number of frames in the policy history.
pub const HISTORY_LEN: usize = 6;
/// `[C_t, ω_t, g_t]` occupy the first nine slots.
pub const FRAME_HEAD: usize = 9;
/// Dimension of the ground-truth pair `[v_x, ω_yaw]`.
pub const GROUND_TRUTH_DIM: usize = 2;
pub const ENCODER_OUT: usize = 35;
pub const TARGET_OUT: usize = 32;
pub const PROTO_SHAPE: (usize, usize) = (64, 32);

/// Locomotion command `[v_x, ω_yaw, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v_x: f64,
    pub omega_yaw: f64,
    pub h: f64,
}

impl Command {
    pub fn new(v_x: f64, omega_yaw: f64, h: f64) -> Self {
        Command { v_x, omega_yaw, h }
    }

    /// Standing still at walking height.
    pub fn idle(desc: &RobotDescription) -> Self {
        Command::new(0.0, 0.0, desc.height_clamp.hi())
    }

    /// Clamps each field into the robot's command ranges. Non-finite fields
    /// fall back to the idle command.
    pub fn clamped(&self, desc: &RobotDescription) -> Self {
        let fallback = Command::idle(desc);
        let pick = |x: f64, d: f64| if x.is_finite() { x } else { d };
        Command {
            v_x: desc.cmd_ranges.v_x.clamp(pick(self.v_x, fallback.v_x)),
            omega_yaw: desc.cmd_ranges.yaw.clamp(pick(self.omega_yaw, fallback.omega_yaw)),
            h: desc.height_clamp.clamp(pick(self.h, fallback.h)),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.v_x, self.omega_yaw, self.h]
    }
}

/// Full plant state at one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Body angular velocity `(ω_x, ω_y, ω_z)`.
    pub omega_body: [f64; 3],
    /// Projection of `[0, 0, -1]` into the torso frame.
    pub gravity_proj: [f64; 3],
    pub base_height: f64,
    /// Base linear velocity in the yaw-aligned base frame.
    pub base_vel: [f64; 3],
    pub base_yaw_rate: f64,
    /// Torso roll and pitch.
    pub tilt: [f64; 2],
    pub tilt_rate: [f64; 2],
    pub base_xy: [f64; 2],
    pub yaw: f64,
    pub foot_contact: Vec<bool>,
    pub foot_force_z: Vec<f64>,
    pub foot_force_xy: Vec<[f64; 2]>,
    pub foot_pos: Vec<[f64; 3]>,
    pub foot_vel: Vec<[f64; 3]>,
    pub knee_pos: Vec<[f64; 3]>,
    /// Last lower-body action, one entry per lower joint.
    pub last_action: Vec<f64>,
    /// Joint torques applied during the last physics substep.
    pub torque: Vec<f64>,
}

impl RobotState {
    /// Checks array lengths against the description and the unit-gravity
    /// invariant.
    pub fn check(&self, desc: &RobotDescription) -> Result<()> {
        let n = desc.n_joints();
        for (what, len) in [("q", self.q.len()), ("qd", self.qd.len()), ("torque", self.torque.len())] {
            if len != n {
                return Err(Error::shape(what, n, len));
            }
        }
        if self.last_action.len() != desc.n_lower() {
            return Err(Error::shape("last_action", desc.n_lower(), self.last_action.len()));
        }
        let g = self.gravity_proj;
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("|gravity_proj| = {norm}")));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let scalars = [self.t, self.base_height, self.base_yaw_rate, self.yaw];
        scalars.iter().all(|x| x.is_finite())
            && self.q.iter().chain(&self.qd).chain(&self.last_action).all(|x| x.is_finite())
            && self.omega_body.iter().chain(&self.gravity_proj).chain(&self.base_vel).all(|x| x.is_finite())
            && self.tilt.iter().chain(&self.tilt_rate).all(|x| x.is_finite())
    }

    /// Ground-truth `[v_x, ω_yaw]` consumed by the estimator and critic.
    pub fn ground_truth(&self) -> [f64; GROUND_TRUTH_DIM] {
        [self.base_vel[0], self.base_yaw_rate]
    }
}

/// Slot ranges of one frame for a given joint count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub n_joints: usize,
    pub n_lower: usize,
}

impl FrameLayout {
    pub fn of(desc: &RobotDescription) -> Self {
        FrameLayout {
            n_joints: desc.n_joints(),
            n_lower: desc.n_lower(),
        }
    }

    pub fn len(&self) -> usize {
        FRAME_HEAD + 2 * self.n_joints + self.n_lower
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn command(&self) -> std::ops::Range<usize> {
        0..3
    }

    pub fn omega(&self) -> std::ops::Range<usize> {
        3..6
    }

    pub fn gravity(&self) -> std::ops::Range<usize> {
        6..9
    }

    pub fn q(&self) -> std::ops::Range<usize> {
        FRAME_HEAD..FRAME_HEAD + self.n_joints
    }

    pub fn qd(&self) -> std::ops::Range<usize> {
        let s = FRAME_HEAD + self.n_joints;
        s..s + self.n_joints
    }

    pub fn last_action(&self) -> std::ops::Range<usize> {
        let s = FRAME_HEAD + 2 * self.n_joints;
        s..s + self.n_lower
    }
}

/// One observation step `O_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame(pub Vec<f64>);

impl ObservationFrame {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Builds `O_t = [C_t, ω_t, g_t, q_t, q̇_t, a_{t-1}]`.
pub fn assemble_frame(desc: &RobotDescription, cmd: &Command, state: &RobotState) -> Result<ObservationFrame> {
    let layout = FrameLayout::of(desc);
    if state.q.len() != layout.n_joints {
        return Err(Error::shape("q", layout.n_joints, state.q.len()));
    }
    if state.qd.len() != layout.n_joints {
        return Err(Error::shape("qd", layout.n_joints, state.qd.len()));
    }
    if state.last_action.len() != layout.n_lower {
        return Err(Error::shape("last_action", layout.n_lower, state.last_action.len()));
    }
    let mut v = Vec::with_capacity(layout.len());
    v.extend_from_slice(&cmd.as_array());
    v.extend_from_slice(&state.omega_body);
    v.extend_from_slice(&state.gravity_proj);
    v.extend_from_slice(&state.q);
    v.extend_from_slice(&state.qd);
    v.extend_from_slice(&state.last_action);
    Ok(ObservationFrame(v))
}

/// Sliding window over the six most recent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    frames: VecDeque<ObservationFrame>,
}

impl ObservationStack {
    /// Fresh stack holding six copies of `first`.
    pub fn new(first: ObservationFrame) -> Self {
        let frames = std::iter::repeat_n(first, HISTORY_LEN).collect();
        ObservationStack { frames }
    }

    pub fn frame_len(&self) -> usize {
        self.frames[0].len()
    }

    pub fn push(&mut self, frame: ObservationFrame) -> Result<()> {
        if frame.len() != self.frame_len() {
            return Err(Error::shape("frame", self.frame_len(), frame.len()));
        }
        self.frames.pop_front();
        self.frames.push_back(frame);
        Ok(())
    }

    pub fn frames(&self) -> impl Iterator<Item = &ObservationFrame> {
        self.frames.iter()
    }

    pub fn latest(&self) -> &ObservationFrame {
        self.frames.back().expect("stack is never empty")
    }

    /// Concatenation of all frames, oldest first.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(HISTORY_LEN * self.frame_len());
        for f in &self.frames {
            out.extend_from_slice(&f.0);
        }
        out
    }

    pub fn map_frames(&self, mut f: impl FnMut(&ObservationFrame) -> ObservationFrame) -> Self {
        ObservationStack {
            frames: self.frames.iter().map(&mut f).collect(),
        }
    }
}

/// Input and output widths of the estimator, actor and critic networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetShape {
    pub encoder_in: usize,
    pub encoder_out: usize,
    pub target_in: usize,
    pub target_out: usize,
    pub actor_in: usize,
    pub actor_out: usize,
    pub critic_in: usize,
    pub critic_out: usize,
    pub proto: (usize, usize),
}

pub fn net_shape(n_joints: usize, n_lower: usize) -> Result<NetShape> {
    if n_lower == 0 {
        return Err(Error::DegenerateRobot("no lower-body joints, empty action space".into()));
    }
    if n_lower > n_joints {
        return Err(Error::DegenerateRobot(format!(
            "{n_lower} lower joints exceed {n_joints} total joints"
        )));
    }
    let frame = FRAME_HEAD + 2 * n_joints + n_lower;
    Ok(NetShape {
        encoder_in: HISTORY_LEN * frame,
        encoder_out: ENCODER_OUT,
        target_in: frame,
        target_out: TARGET_OUT,
        actor_in: ENCODER_OUT + frame,
        actor_out: n_lower,
        critic_in: GROUND_TRUTH_DIM + frame,
        critic_out: 1,
        proto: PROTO_SHAPE,
    })
}

pub fn net_shape_of(desc: &RobotDescription) -> Result<NetShape> {
    net_shape(desc.n_joints(), desc.n_lower())
}
