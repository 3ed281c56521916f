//! Surrogate humanoid plant.
//!
//! Joints are decoupled second-order systems `I q̈ = τ` integrated with
//! semi-implicit Euler. Base height follows the two-link leg kinematics, base
//! velocity relaxes toward the commanded velocity through a first-order lag,
//! and torso tilt is a damped 2-DoF pendulum kicked by pushes. This is enough
//! to drive the reward, curriculum and teleoperation pipeline; it does not
//! model rigid-body contact.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain_rand::{uniform, EpisodeRandomization};
use crate::error::{Error, Result};
use crate::kinematics::{leg_pose, LegPose};
use crate::observation::{Command, RobotState};
use crate::robot::{Interval, JointGroup, JointSpec, RobotDescription};

const GRAVITY: f64 = 9.81;

/// Which position the proportional term of the joint torque law acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TorqueLaw {
    /// `τ = Kp (a - q_0) - Kd q̇`, with `q_0` the default joint position.
    #[default]
    Literal,
    /// `τ = Kp (a - q) - Kd q̇`.
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub dt_physics: f64,
    pub control_hz: f64,
    pub substeps: u32,
    pub lower_inertia: f64,
    pub upper_inertia: f64,
    pub base_vel_tau: f64,
    pub tilt_stiffness: f64,
    pub tilt_damping: f64,
    /// Tilt rate (rad/s) injected per m/s of push, scaled by 1/base height.
    pub push_tilt_gain: f64,
    /// Static tilt per metre of CoM displacement, scaled by 1/base height.
    pub com_tilt_gain: f64,
    pub fall_tilt_rad: f64,
    pub min_base_height: f64,
    pub push_interval: f64,
    pub push_vel_range: Interval,
    pub contact_threshold: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Tangential force per m/s of foot sliding speed while in contact.
    pub tangential_damping: f64,
    pub torque_law: TorqueLaw,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            dt_physics: 0.005,
            control_hz: 50.0,
            substeps: 4,
            lower_inertia: 1.0,
            upper_inertia: 0.2,
            base_vel_tau: 0.3,
            tilt_stiffness: 40.0,
            tilt_damping: 8.0,
            push_tilt_gain: 0.5,
            com_tilt_gain: 0.5,
            fall_tilt_rad: 0.7,
            min_base_height: 0.15,
            push_interval: 4.0,
            push_vel_range: Interval(-0.5, 0.5),
            contact_threshold: 0.001,
            contact_stiffness: 20_000.0,
            contact_damping: 500.0,
            tangential_damping: 200.0,
            torque_law: TorqueLaw::Literal,
        }
    }
}

impl PlantConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    /// Control ticks between pushes; zero disables pushes.
    pub fn push_period_ticks(&self) -> u64 {
        if self.push_interval > 0.0 {
            (self.push_interval * self.control_hz).round() as u64
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_physics", self.dt_physics),
            ("control_hz", self.control_hz),
            ("lower_inertia", self.lower_inertia),
            ("upper_inertia", self.upper_inertia),
            ("base_vel_tau", self.base_vel_tau),
            ("tilt_stiffness", self.tilt_stiffness),
            ("tilt_damping", self.tilt_damping),
            ("fall_tilt_rad", self.fall_tilt_rad),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("plant.{name} must be positive")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("plant.substeps must be positive".into()));
        }
        if (self.dt_physics * f64::from(self.substeps) - self.control_dt()).abs() > 1e-12 {
            return Err(Error::Config(
                "plant.dt_physics * substeps must equal 1 / control_hz".into(),
            ));
        }
        if !(self.push_vel_range.lo() <= self.push_vel_range.hi()) {
            return Err(Error::Config("plant.push_vel_range: lo <= hi".into()));
        }
        Ok(())
    }
}

/// Targets for one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    /// Policy action `a_t`, one per lower joint.
    pub lower_targets: Vec<f64>,
    /// Upper-body joint targets, one per upper joint.
    pub upper_targets: Vec<f64>,
}

impl ActionCommand {
    /// Action that holds the default lower pose and the given upper targets.
    pub fn hold_default(desc: &RobotDescription) -> Self {
        let q0 = desc.default_pose();
        ActionCommand {
            lower_targets: desc.lower_indices().iter().map(|&i| q0[i]).collect(),
            upper_targets: desc.upper_indices().iter().map(|&i| q0[i]).collect(),
        }
    }
}

/// Joint torque from the PD law with saturation at `±torque_max`.
pub fn pd_torque(spec: &JointSpec, a: f64, q: f64, qd: f64) -> f64 {
    pd_torque_with(TorqueLaw::Literal, spec, a, q, qd)
}

pub fn pd_torque_with(law: TorqueLaw, spec: &JointSpec, a: f64, q: f64, qd: f64) -> f64 {
    pd_torque_gains(law, spec.kp, spec.kd, spec.torque_max, spec.default_pos, a, q, qd)
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn pd_torque_gains(law: TorqueLaw, kp: f64, kd: f64, torque_max: f64, q0: f64, a: f64, q: f64, qd: f64) -> f64 {
    let reference = match law {
        TorqueLaw::Literal => q0,
        TorqueLaw::Conventional => q,
    };
    let tau = kp * (a - reference) - kd * qd;
    tau.clamp(-torque_max, torque_max)
}

/// Linear blend between two target vectors: `prev + (k/n)(next - prev)`,
/// exact at both ends.
pub fn interpolate_upper(prev: &[f64], next: &[f64], k: u32, n: u32) -> Vec<f64> {
    assert!(n >= 1 && k <= n, "interpolation step {k} of {n}");
    let s = f64::from(k) / f64::from(n);
    prev.iter()
        .zip(next)
        .map(|(&p, &x)| p * (1.0 - s) + x * s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Fall,
    LowHeight,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub terminated: bool,
    pub reason: Option<TerminationReason>,
}

/// Angle between the torso z axis and the vertical.
pub fn tilt_angle(state: &RobotState) -> f64 {
    (-state.gravity_proj[2]).clamp(-1.0, 1.0).acos()
}

pub fn is_terminated(state: &RobotState, cfg: &PlantConfig) -> Termination {
    let reason = if !state.is_finite() {
        Some(TerminationReason::Numeric)
    } else if tilt_angle(state) > cfg.fall_tilt_rad {
        Some(TerminationReason::Fall)
    } else if state.base_height < cfg.min_base_height {
        Some(TerminationReason::LowHeight)
    } else {
        None
    };
    Termination {
        terminated: reason.is_some(),
        reason,
    }
}

/// Gravity `[0, 0, -1]` expressed in a torso frame with the given roll and pitch.
pub fn gravity_from_tilt(roll: f64, pitch: f64) -> [f64; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    [sp, -sr * cp, -cr * cp]
}

/// A steppable plant. One caller advances an instance; instances are
/// independent and own their randomness.
pub trait Plant: Send {
    fn description(&self) -> &RobotDescription;
    fn config(&self) -> &PlantConfig;
    fn reset(&mut self) -> RobotState;
    fn step(&mut self, state: &RobotState, action: &ActionCommand, cmd: &Command) -> Result<RobotState>;
}

pub struct SurrogatePlant {
    desc: Arc<RobotDescription>,
    cfg: PlantConfig,
    rng: ChaCha8Rng,
    rand: EpisodeRandomization,
    lower: Vec<usize>,
    upper: Vec<usize>,
}

impl SurrogatePlant {
    pub fn new(desc: Arc<RobotDescription>, cfg: PlantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = desc.n_joints();
        let mut rand = EpisodeRandomization::identity(n);
        rand.push_vel = cfg.push_vel_range;
        Ok(SurrogatePlant {
            lower: desc.lower_indices(),
            upper: desc.upper_indices(),
            desc,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rand,
        })
    }

    /// Installs the episode randomization applied from the next reset on.
    pub fn with_randomization(mut self, rand: EpisodeRandomization) -> Result<Self> {
        let n = self.desc.n_joints();
        for (what, len) in [
            ("actuation_offset", rand.actuation_offset.len()),
            ("kp_scale", rand.kp_scale.len()),
            ("kd_scale", rand.kd_scale.len()),
            ("init_pos_scale", rand.init_pos_scale.len()),
            ("init_pos_offset", rand.init_pos_offset.len()),
        ] {
            if len != n {
                return Err(Error::shape(what, n, len));
            }
        }
        self.rand = rand;
        Ok(self)
    }

    pub fn randomization(&self) -> &EpisodeRandomization {
        &self.rand
    }

    fn inertia(&self, i: usize) -> f64 {
        if self.desc.joints[i].group == JointGroup::Lower {
            self.cfg.lower_inertia
        } else {
            self.cfg.upper_inertia
        }
    }

    fn static_tilt(&self, height: f64) -> [f64; 2] {
        let c = self.rand.com_displacement;
        let h = height.max(0.1);
        // x offset pitches the torso, y offset rolls it.
        [-self.cfg.com_tilt_gain * c[1] / h, self.cfg.com_tilt_gain * c[0] / h]
    }

    /// Fills in every quantity that follows from joints, tilt and base motion.
    fn derive(&self, s: &mut RobotState, prev: Option<&RobotState>) {
        let desc = &*self.desc;
        let poses: Vec<LegPose> = desc.legs.iter().map(|leg| leg_pose(desc, &s.q, leg)).collect();
        let mean_vertical = poses.iter().map(|p| p.vertical).sum::<f64>() / poses.len() as f64;
        s.base_height = desc.geometry.pelvis_offset + mean_vertical;
        s.gravity_proj = gravity_from_tilt(s.tilt[0], s.tilt[1]);
        s.omega_body = [s.tilt_rate[0], s.tilt_rate[1], s.base_yaw_rate];

        let dt = self.cfg.control_dt();
        let feet: Vec<[f64; 3]> = poses
            .iter()
            .map(|p| [p.foot_x, p.foot_y, mean_vertical - p.vertical])
            .collect();
        s.knee_pos = poses
            .iter()
            .map(|p| [p.knee_x, p.knee_y, mean_vertical - p.vertical + p.knee_z])
            .collect();
        s.foot_vel = match prev {
            Some(prev) if prev.foot_pos.len() == feet.len() => feet
                .iter()
                .zip(&prev.foot_pos)
                .map(|(f, p)| {
                    [
                        s.base_vel[0] + (f[0] - p[0]) / dt,
                        s.base_vel[1] + (f[1] - p[1]) / dt,
                        (f[2] - p[2]) / dt,
                    ]
                })
                .collect(),
            _ => vec![[s.base_vel[0], s.base_vel[1], 0.0]; feet.len()],
        };
        s.foot_contact = feet.iter().map(|f| f[2] <= self.cfg.contact_threshold).collect();
        let n_contact = s.foot_contact.iter().filter(|&&c| c).count();
        let weight = self.rand.total_mass(desc.body_mass) * GRAVITY;
        s.foot_force_z = feet
            .iter()
            .zip(&s.foot_vel)
            .zip(&s.foot_contact)
            .map(|((f, v), &c)| {
                if c {
                    let share = weight / n_contact as f64;
                    (share - self.cfg.contact_stiffness * f[2] - self.cfg.contact_damping * v[2]).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        s.foot_force_xy = s
            .foot_vel
            .iter()
            .zip(&s.foot_contact)
            .map(|(v, &c)| {
                if c {
                    [-self.cfg.tangential_damping * v[0], -self.cfg.tangential_damping * v[1]]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect();
        s.foot_pos = feet;
    }
}

fn check_finite(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite value in {what}")))
    }
}

impl Plant for SurrogatePlant {
    fn description(&self) -> &RobotDescription {
        &self.desc
    }

    fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    fn reset(&mut self) -> RobotState {
        let desc = &*self.desc;
        let q: Vec<f64> = desc
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| j.limits().clamp(self.rand.initial_position(i, j.default_pos)))
            .collect();
        let last_action = self.lower.iter().map(|&i| q[i]).collect();
        let n = desc.n_joints();
        let mut s = RobotState {
            t: 0.0,
            qd: vec![0.0; n],
            omega_body: [0.0; 3],
            gravity_proj: [0.0, 0.0, -1.0],
            base_height: 0.0,
            base_vel: [0.0; 3],
            base_yaw_rate: 0.0,
            tilt: [0.0; 2],
            tilt_rate: [0.0; 2],
            base_xy: [0.0; 2],
            yaw: 0.0,
            foot_contact: vec![],
            foot_force_z: vec![],
            foot_force_xy: vec![],
            foot_pos: vec![],
            foot_vel: vec![],
            knee_pos: vec![],
            last_action,
            torque: vec![0.0; n],
            q,
        };
        self.derive(&mut s, None);
        s.tilt = self.static_tilt(s.base_height);
        s.gravity_proj = gravity_from_tilt(s.tilt[0], s.tilt[1]);
        s
    }

    fn step(&mut self, state: &RobotState, action: &ActionCommand, cmd: &Command) -> Result<RobotState> {
        let desc = Arc::clone(&self.desc);
        state.check(&desc)?;
        if action.lower_targets.len() != self.lower.len() {
            return Err(Error::shape("lower_targets", self.lower.len(), action.lower_targets.len()));
        }
        if action.upper_targets.len() != self.upper.len() {
            return Err(Error::shape("upper_targets", self.upper.len(), action.upper_targets.len()));
        }
        check_finite("q", &state.q)?;
        check_finite("qd", &state.qd)?;
        check_finite("lower_targets", &action.lower_targets)?;
        check_finite("upper_targets", &action.upper_targets)?;
        check_finite("command", &cmd.as_array())?;

        let n = desc.n_joints();
        let mut target = vec![0.0; n];
        let mut is_lower = vec![false; n];
        for (k, &i) in self.lower.iter().enumerate() {
            target[i] = desc.joints[i].limits().clamp(action.lower_targets[k]);
            is_lower[i] = true;
        }
        for (k, &i) in self.upper.iter().enumerate() {
            target[i] = desc.joints[i].limits().clamp(action.upper_targets[k]);
        }

        let mut next = state.clone();
        let dt = self.cfg.dt_physics;
        let mut torque = vec![0.0; n];
        let (k_tilt, c_tilt) = (self.cfg.tilt_stiffness, self.cfg.tilt_damping);
        let tilt_eq = self.static_tilt(state.base_height);

        for _ in 0..self.cfg.substeps {
            for (i, j) in desc.joints.iter().enumerate() {
                let kp = j.kp * self.rand.kp_scale[i];
                let kd = j.kd * self.rand.kd_scale[i];
                // The policy's lower-body actions go through the configured law;
                // upper-body targets are tracked by a plain position servo.
                let law = if is_lower[i] { self.cfg.torque_law } else { TorqueLaw::Conventional };
                let tau = pd_torque_gains(law, kp, kd, j.torque_max, j.default_pos, target[i], next.q[i], next.qd[i]);
                let tau = (tau + self.rand.actuation_offset[i]).clamp(-j.torque_max, j.torque_max);
                torque[i] = tau;

                let mut qd = next.qd[i] + dt * tau / self.inertia(i);
                qd = qd.clamp(-j.vel_max, j.vel_max);
                let mut q = next.q[i] + dt * qd;
                if q < j.pos_min || q > j.pos_max {
                    q = q.clamp(j.pos_min, j.pos_max);
                    qd = 0.0;
                }
                next.q[i] = q;
                next.qd[i] = qd;
            }
            for a in 0..2 {
                let acc = -k_tilt * (next.tilt[a] - tilt_eq[a]) - c_tilt * next.tilt_rate[a];
                next.tilt_rate[a] += dt * acc;
                next.tilt[a] += dt * next.tilt_rate[a];
            }
        }

        let tick_dt = self.cfg.control_dt();
        let alpha = 1.0 - (-tick_dt / self.cfg.base_vel_tau).exp();
        next.base_vel[0] += (cmd.v_x - next.base_vel[0]) * alpha;
        next.base_vel[1] += (0.0 - next.base_vel[1]) * alpha;
        next.base_yaw_rate += (cmd.omega_yaw - next.base_yaw_rate) * alpha;

        let tick = (state.t * self.cfg.control_hz).round() as u64 + 1;
        next.t = tick as f64 / self.cfg.control_hz;
        let period = self.cfg.push_period_ticks();
        if period > 0 && tick.is_multiple_of(period) {
            let range = self.rand.push_vel;
            let dv = [uniform(&mut self.rng, range), uniform(&mut self.rng, range)];
            next.base_vel[0] += dv[0];
            next.base_vel[1] += dv[1];
            let h = state.base_height.max(0.1);
            // A lateral push rolls the torso, a forward push pitches it.
            next.tilt_rate[0] -= self.cfg.push_tilt_gain * dv[1] / h;
            next.tilt_rate[1] += self.cfg.push_tilt_gain * dv[0] / h;
        }

        let (sy, cy) = next.yaw.sin_cos();
        next.base_xy[0] += tick_dt * (cy * next.base_vel[0] - sy * next.base_vel[1]);
        next.base_xy[1] += tick_dt * (sy * next.base_vel[0] + cy * next.base_vel[1]);
        next.yaw += tick_dt * next.base_yaw_rate;

        next.last_action = self.lower.iter().map(|&i| target[i]).collect();
        next.torque = torque;
        self.derive(&mut next, Some(state));
        next.base_vel[2] = (next.base_height - state.base_height) / tick_dt;

        if !next.is_finite() {
            return Err(Error::Numerical("plant state diverged".into()));
        }
        Ok(next)
    }
}

/// Stand-in plant that follows every command exactly. Useful for checking
/// metric plumbing: tracking errors are zero by construction.
pub struct PerfectTrackingPlant {
    desc: Arc<RobotDescription>,
    cfg: PlantConfig,
    lower: Vec<usize>,
    upper: Vec<usize>,
}

impl PerfectTrackingPlant {
    pub fn new(desc: Arc<RobotDescription>, cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PerfectTrackingPlant {
            lower: desc.lower_indices(),
            upper: desc.upper_indices(),
            desc,
            cfg,
        })
    }
}

impl Plant for PerfectTrackingPlant {
    fn description(&self) -> &RobotDescription {
        &self.desc
    }

    fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    fn reset(&mut self) -> RobotState {
        let mut inner = SurrogatePlant::new(Arc::clone(&self.desc), self.cfg.clone(), 0)
            .expect("config validated at construction");
        inner.reset()
    }

    fn step(&mut self, state: &RobotState, action: &ActionCommand, cmd: &Command) -> Result<RobotState> {
        let mut next = state.clone();
        for (k, &i) in self.lower.iter().enumerate() {
            next.q[i] = self.desc.joints[i].limits().clamp(action.lower_targets[k]);
        }
        for (k, &i) in self.upper.iter().enumerate() {
            next.q[i] = self.desc.joints[i].limits().clamp(action.upper_targets[k]);
        }
        next.qd.iter_mut().for_each(|x| *x = 0.0);
        let tick = (state.t * self.cfg.control_hz).round() as u64 + 1;
        next.t = tick as f64 / self.cfg.control_hz;
        next.base_vel = [cmd.v_x, 0.0, 0.0];
        next.base_yaw_rate = cmd.omega_yaw;
        next.omega_body = [0.0, 0.0, cmd.omega_yaw];
        next.base_height = cmd.h;
        next.last_action = self.lower.iter().map(|&i| next.q[i]).collect();
        Ok(next)
    }
}
