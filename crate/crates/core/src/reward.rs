//! Locomotion reward suite.
//!
//! Every term produces a raw value; the weighted value is `weight · raw` and
//! the total is the sum of weighted values. Raw values never depend on the
//! weight preset.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{foot_corners, leg_pose};
use crate::observation::{Command, RobotState};
use crate::robot::RobotDescription;

pub const REWARD_FORMAT: &str = "reward-config";
pub const REWARD_VERSION: u32 = 1;

macro_rules! reward_terms {
    ($($variant:ident => $id:literal, $label:literal;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum RewardTerm {
            $($variant,)*
        }

        impl RewardTerm {
            pub const ALL: &'static [RewardTerm] = &[$(RewardTerm::$variant,)*];

            /// Identifier used in config files and CSV headers.
            pub fn id(self) -> &'static str {
                match self {
                    $(RewardTerm::$variant => $id,)*
                }
            }

            /// Human-readable row label.
            pub fn label(self) -> &'static str {
                match self {
                    $(RewardTerm::$variant => $label,)*
                }
            }
        }
    };
}

reward_terms! {
    XVelTracking => "x_vel_tracking", "x Vel. tracking";
    YVelTracking => "y_vel_tracking", "y Vel. tracking";
    AngVelTracking => "ang_vel_tracking", "Ang. Vel. tracking";
    BaseHeightTracking => "base_height_tracking", "Base height tracking";
    LinVelZ => "lin_vel_z", "Lin. Vel. z";
    AngVelXy => "ang_vel_xy", "Ang. Vel. xy";
    Orientation => "orientation", "Orientation";
    ActionRate => "action_rate", "Action rate";
    HipDeviation => "hip_deviation", "Hip joint deviation";
    AnkleDeviation => "ankle_deviation", "Ankle joint deviation";
    SquatKnee => "squat_knee", "Squat knee";
    DofAcc => "dof_acc", "Dof Acc.";
    DofPosLimits => "dof_pos_limits", "Dof pos limits";
    FeetAirTime => "feet_air_time", "Feet air time";
    FeetClearance => "feet_clearance", "Feet clearance";
    FeetLateralDistance => "feet_lateral_distance", "Feet lateral distance";
    KneeLateralDistance => "knee_lateral_distance", "Knee lateral distance";
    FeetGroundParallel => "feet_ground_parallel", "Feet ground parallel";
    FeetParallel => "feet_parallel", "Feet parallel";
    Smoothness => "smoothness", "Smoothness";
    JointPower => "joint_power", "Joint power";
    FeetStumble => "feet_stumble", "Feet stumble";
    Torques => "torques", "Torques";
    DofVel => "dof_vel", "Dof Vel.";
    DofVelLimit => "dof_vel_limit", "Dof Vel. limit";
    TorqueLimits => "torque_limits", "Torque limits";
    NoFly => "no_fly", "No fly";
    JointTrackingError => "joint_tracking_error", "Joint tracking error";
    FeetSlip => "feet_slip", "Feet slip";
    FeetContactForce => "feet_contact_force", "Feet contact force";
    ContactMomentum => "contact_momentum", "Contact momentum";
    ActionVanish => "action_vanish", "Action vanish";
    StandStill => "stand_still", "Stand still";
}

impl RewardTerm {
    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.id() == id)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const N_TERMS: usize = RewardTerm::ALL.len();

const G1_WEIGHTS: [f64; N_TERMS] = [
    1.5, 1.0, 2.0, 2.0, -0.5, -0.025, -1.5, -0.01, -0.2, -0.5, -0.75, -2.5e-7, -2.0, 0.05, -0.25, 0.5, 1.0, -2.0,
    -3.0, -0.05, -2.0e-5, -1.5, -2.5e-6, -1e-4, -2e-3, -0.1, 0.75, -0.1, -0.25, -2.5e-4, 2.5e-4, -1.0, -0.15,
];

const GR1_WEIGHTS: [f64; N_TERMS] = [
    1.5, 1.0, 1.0, 2.0, -0.5, -0.025, -1.5, -0.01, -0.5, -0.75, -0.75, -2.5e-7, -2.0, 0.05, -0.25, 0.5, 1.0, -2.0,
    -3.0, -0.05, -2.0e-5, -1.5, -2.5e-6, -1e-4, -2e-3, -0.2, 0.5, -0.25, -0.25, -2.5e-4, 2.5e-4, -1.0, -0.2,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub preset: String,
    /// One weight per term, in [`RewardTerm::ALL`] order.
    pub weights: Vec<f64>,
    /// Coefficient `c` of the `exp(-c‖e‖²)` tracking kernels.
    pub tracking_coef: f64,
    pub soft_pos_scale: f64,
    pub soft_vel_scale: f64,
    pub soft_torque_scale: f64,
    pub max_contact_force: f64,
    pub d_min_feet: f64,
    pub d_max_feet: f64,
    pub d_min_knee: f64,
    pub d_max_knee: f64,
    pub clearance_target: f64,
    pub air_time_offset: f64,
    pub stumble_ratio: f64,
    pub stand_still_eps: f64,
    pub power_floor: f64,
    /// Control period used by the acceleration term and air-time tracker.
    pub dt: f64,
    pub foot_length: f64,
    pub foot_width: f64,
}

impl RewardConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (weights, f_th, d_max, clearance) = match name {
            "g1" => (G1_WEIGHTS, 400.0, 0.35, 0.14),
            "gr1" => (GR1_WEIGHTS, 500.0, 0.40, 0.15),
            _ => return Err(Error::NotFound(format!("reward preset '{name}'"))),
        };
        Ok(RewardConfig {
            preset: name.to_string(),
            weights: weights.to_vec(),
            tracking_coef: 4.0,
            soft_pos_scale: 0.975,
            soft_vel_scale: 0.80,
            soft_torque_scale: 0.95,
            max_contact_force: f_th,
            d_min_feet: 0.20,
            d_max_feet: d_max,
            d_min_knee: 0.20,
            d_max_knee: d_max,
            clearance_target: clearance,
            air_time_offset: 0.5,
            stumble_ratio: 3.0,
            stand_still_eps: 0.05,
            power_floor: 0.01,
            dt: 0.02,
            foot_length: 0.10,
            foot_width: 0.05,
        })
    }

    pub fn weight(&self, term: RewardTerm) -> f64 {
        self.weights[term.index()]
    }

    pub fn set_weight(&mut self, term: RewardTerm, w: f64) {
        self.weights[term.index()] = w;
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != N_TERMS {
            return Err(Error::shape("reward weights", N_TERMS, self.weights.len()));
        }
        let positive = [
            ("tracking_coef", self.tracking_coef),
            ("soft_pos_scale", self.soft_pos_scale),
            ("soft_vel_scale", self.soft_vel_scale),
            ("soft_torque_scale", self.soft_torque_scale),
            ("max_contact_force", self.max_contact_force),
            ("d_min_feet", self.d_min_feet),
            ("d_max_feet", self.d_max_feet),
            ("d_min_knee", self.d_min_knee),
            ("d_max_knee", self.d_max_knee),
            ("clearance_target", self.clearance_target),
            ("stumble_ratio", self.stumble_ratio),
            ("power_floor", self.power_floor),
            ("dt", self.dt),
            ("foot_length", self.foot_length),
            ("foot_width", self.foot_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("reward.{name} must be positive")));
            }
        }
        if self.stand_still_eps < 0.0 {
            return Err(Error::Config("reward.stand_still_eps must be non-negative".into()));
        }
        if self.d_min_feet > self.d_max_feet || self.d_min_knee > self.d_max_knee {
            return Err(Error::Config("reward lateral distance: d_min <= d_max".into()));
        }
        Ok(())
    }

    /// Parses a reward config file: a preset to start from plus optional
    /// overrides.
    ///
    /// ```toml
    /// format = "reward-config"
    /// version = 1
    /// preset = "g1"
    /// max_contact_force = 450.0
    ///
    /// [weights]
    /// stand_still = -0.3
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RewardFile = toml::from_str(text).map_err(|e| Error::Config(format!("reward config: {e}")))?;
        if file.format != REWARD_FORMAT {
            return Err(Error::Config(format!("expected format '{REWARD_FORMAT}', found '{}'", file.format)));
        }
        if file.version != REWARD_VERSION {
            return Err(Error::Config(format!("unsupported reward config version {}", file.version)));
        }
        let mut cfg = RewardConfig::preset(&file.preset)?;
        for (id, w) in &file.weights {
            let term = RewardTerm::from_id(id).ok_or_else(|| Error::Config(format!("unknown reward term '{id}'")))?;
            cfg.set_weight(term, *w);
        }
        let scalars = [
            (&mut cfg.tracking_coef, file.tracking_coef),
            (&mut cfg.soft_pos_scale, file.soft_pos_scale),
            (&mut cfg.soft_vel_scale, file.soft_vel_scale),
            (&mut cfg.soft_torque_scale, file.soft_torque_scale),
            (&mut cfg.max_contact_force, file.max_contact_force),
            (&mut cfg.d_min_feet, file.d_min_feet),
            (&mut cfg.d_max_feet, file.d_max_feet),
            (&mut cfg.d_min_knee, file.d_min_knee),
            (&mut cfg.d_max_knee, file.d_max_knee),
            (&mut cfg.clearance_target, file.clearance_target),
            (&mut cfg.air_time_offset, file.air_time_offset),
            (&mut cfg.stumble_ratio, file.stumble_ratio),
            (&mut cfg.stand_still_eps, file.stand_still_eps),
            (&mut cfg.power_floor, file.power_floor),
            (&mut cfg.dt, file.dt),
            (&mut cfg.foot_length, file.foot_length),
            (&mut cfg.foot_width, file.foot_width),
        ];
        for (slot, v) in scalars {
            if let Some(v) = v {
                *slot = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Preset name or path to a reward config file.
    pub fn load(arg: &str) -> Result<Self> {
        match Self::preset(arg) {
            Ok(cfg) => Ok(cfg),
            Err(_) if Path::new(arg).exists() => Self::from_file(arg),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardFile {
    format: String,
    version: u32,
    preset: String,
    #[serde(default)]
    weights: BTreeMap<String, f64>,
    tracking_coef: Option<f64>,
    soft_pos_scale: Option<f64>,
    soft_vel_scale: Option<f64>,
    soft_torque_scale: Option<f64>,
    max_contact_force: Option<f64>,
    d_min_feet: Option<f64>,
    d_max_feet: Option<f64>,
    d_min_knee: Option<f64>,
    d_max_knee: Option<f64>,
    clearance_target: Option<f64>,
    air_time_offset: Option<f64>,
    stumble_ratio: Option<f64>,
    stand_still_eps: Option<f64>,
    power_floor: Option<f64>,
    dt: Option<f64>,
    foot_length: Option<f64>,
    foot_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub term: RewardTerm,
    pub raw: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// One entry per term, in [`RewardTerm::ALL`] order.
    pub terms: Vec<TermValue>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn get(&self, term: RewardTerm) -> &TermValue {
        &self.terms[term.index()]
    }

    pub fn raw(&self, term: RewardTerm) -> f64 {
        self.get(term).raw
    }

    pub fn weighted(&self, term: RewardTerm) -> f64 {
        self.get(term).weighted
    }
}

/// Height-coupled knee shaping for one knee:
/// `-|(h_r - h_t) · ((q - q_min)/(q_max - q_min) - 1/2)|`.
pub fn r_knee(h_r: f64, h_t: f64, q_knee: f64, q_min: f64, q_max: f64) -> Result<f64> {
    if !(q_max > q_min) {
        return Err(Error::Config(format!("knee range [{q_min}, {q_max}] is empty")));
    }
    let n = (q_knee - q_min) / (q_max - q_min);
    Ok(-((h_r - h_t) * (n - 0.5)).abs())
}

/// Same as [`r_knee`] with the knee position given already normalized.
pub fn r_knee_normalized(dh: f64, n: f64) -> f64 {
    -(dh * (n - 0.5)).abs()
}

/// Mean of [`r_knee`] over the description's knees.
pub fn r_knee_mean(desc: &RobotDescription, h_r: f64, h_t: f64, q: &[f64]) -> Result<f64> {
    if desc.knee_indices.is_empty() {
        return Err(Error::Config("robot has no knees".into()));
    }
    let mut sum = 0.0;
    for &k in &desc.knee_indices {
        let j = &desc.joints[k];
        sum += r_knee(h_r, h_t, q[k], j.pos_min, j.pos_max)?;
    }
    Ok(sum / desc.knee_indices.len() as f64)
}

/// True when the command asks the robot to stand still.
pub fn stand_still_gate(cmd: &Command, eps: f64) -> bool {
    cmd.v_x.abs() <= eps && cmd.omega_yaw.abs() <= eps
}

pub fn tracking_kernel(coef: f64, err_sq: f64) -> f64 {
    (-coef * err_sq).exp()
}

/// Per-foot air time with first-contact detection. A foot counts as in
/// contact if it touched the ground on this tick or the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirTimeTracker {
    pub air_time: Vec<f64>,
    pub last_contact: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirTimeUpdate {
    pub first_contact: Vec<bool>,
    /// Air time at touchdown; zero for feet without a first contact.
    pub air_time_at_contact: Vec<f64>,
}

impl AirTimeTracker {
    pub fn new(n_feet: usize) -> Self {
        AirTimeTracker {
            air_time: vec![0.0; n_feet],
            last_contact: vec![true; n_feet],
        }
    }

    pub fn update(&mut self, contact: &[bool], dt: f64) -> AirTimeUpdate {
        let n = self.air_time.len();
        let mut first_contact = vec![false; n];
        let mut at_contact = vec![0.0; n];
        for i in 0..n {
            let filtered = contact[i] || self.last_contact[i];
            let first = self.air_time[i] > 0.0 && filtered;
            self.air_time[i] += dt;
            if first {
                first_contact[i] = true;
                at_contact[i] = self.air_time[i];
            }
            if filtered {
                self.air_time[i] = 0.0;
            }
            self.last_contact[i] = contact[i];
        }
        AirTimeUpdate {
            first_contact,
            air_time_at_contact: at_contact,
        }
    }
}

/// Everything the reward needs for one tick.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub state: &'a RobotState,
    pub prev: &'a RobotState,
    pub cmd: &'a Command,
    /// `a_t`, `a_{t-1}`, `a_{t-2}`, one entry per lower joint.
    pub actions: [&'a [f64]; 3],
    /// Position targets for every joint, used by the tracking-error term.
    pub joint_targets: &'a [f64],
}

fn sq(x: f64) -> f64 {
    x * x
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| sq(x - mean)).sum::<f64>() / n
}

/// Penalty for a lateral distance outside `[d_min, d_max]`; zero inside.
fn lateral_band(d: f64, d_min: f64, d_max: f64) -> f64 {
    (d - d_min).min(0.0) + (d_max - d).min(0.0)
}

/// Stateful reward evaluator for one environment.
#[derive(Debug, Clone)]
pub struct RewardEngine {
    pub cfg: RewardConfig,
    desc: Arc<RobotDescription>,
    tracker: AirTimeTracker,
    lower: Vec<usize>,
}

impl RewardEngine {
    pub fn new(desc: Arc<RobotDescription>, cfg: RewardConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RewardEngine {
            lower: desc.lower_indices(),
            tracker: AirTimeTracker::new(desc.legs.len()),
            desc,
            cfg,
        })
    }

    pub fn reset(&mut self) {
        self.tracker = AirTimeTracker::new(self.desc.legs.len());
    }

    pub fn tracker(&self) -> &AirTimeTracker {
        &self.tracker
    }

    fn check(&self, inp: &RewardInputs) -> Result<()> {
        let n_feet = self.desc.legs.len();
        let s = inp.state;
        for (what, len) in [
            ("foot_contact", s.foot_contact.len()),
            ("foot_force_z", s.foot_force_z.len()),
            ("foot_force_xy", s.foot_force_xy.len()),
            ("foot_pos", s.foot_pos.len()),
            ("foot_vel", s.foot_vel.len()),
            ("knee_pos", s.knee_pos.len()),
        ] {
            if len != n_feet {
                return Err(Error::Config(format!(
                    "contact data '{what}' has {len} entries, robot has {n_feet} feet"
                )));
            }
        }
        s.check(&self.desc)?;
        if inp.prev.qd.len() != s.qd.len() {
            return Err(Error::shape("prev.qd", s.qd.len(), inp.prev.qd.len()));
        }
        for a in inp.actions {
            if a.len() != self.lower.len() {
                return Err(Error::shape("action", self.lower.len(), a.len()));
            }
        }
        if inp.joint_targets.len() != self.desc.n_joints() {
            return Err(Error::shape("joint_targets", self.desc.n_joints(), inp.joint_targets.len()));
        }
        Ok(())
    }

    /// Evaluates every term and advances the air-time tracker.
    pub fn evaluate(&mut self, inp: &RewardInputs) -> Result<RewardBreakdown> {
        self.check(inp)?;
        let update = self.tracker.update(&inp.state.foot_contact, self.cfg.dt);
        let raw = self.raw_terms(inp, &update)?;
        Ok(self.weigh(&raw))
    }

    /// Applies the weights to raw values.
    pub fn weigh(&self, raw: &[f64; N_TERMS]) -> RewardBreakdown {
        let terms: Vec<TermValue> = RewardTerm::ALL
            .iter()
            .map(|&t| TermValue {
                term: t,
                raw: raw[t.index()],
                weighted: self.cfg.weight(t) * raw[t.index()],
            })
            .collect();
        let total = terms.iter().map(|t| t.weighted).sum();
        RewardBreakdown { terms, total }
    }

    fn raw_terms(&self, inp: &RewardInputs, air: &AirTimeUpdate) -> Result<[f64; N_TERMS]> {
        use RewardTerm as T;
        let cfg = &self.cfg;
        let desc = &*self.desc;
        let s = inp.state;
        let cmd = inp.cmd;
        let [a0, a1, a2] = inp.actions;
        let q0 = desc.default_pose();
        let mut r = [0.0; N_TERMS];

        r[T::XVelTracking.index()] = tracking_kernel(cfg.tracking_coef, sq(cmd.v_x - s.base_vel[0]));
        r[T::YVelTracking.index()] = tracking_kernel(cfg.tracking_coef, sq(0.0 - s.base_vel[1]));
        r[T::AngVelTracking.index()] = tracking_kernel(cfg.tracking_coef, sq(cmd.omega_yaw - s.base_yaw_rate));
        r[T::BaseHeightTracking.index()] = tracking_kernel(cfg.tracking_coef, sq(cmd.h - s.base_height));
        r[T::LinVelZ.index()] = sq(s.base_vel[2]);
        r[T::AngVelXy.index()] = sq(s.omega_body[0]) + sq(s.omega_body[1]);
        r[T::Orientation.index()] = sq(s.gravity_proj[0]) + sq(s.gravity_proj[1]);
        r[T::ActionRate.index()] = a0.iter().zip(a1).map(|(x, y)| sq(x - y)).sum();
        r[T::HipDeviation.index()] = desc.hip_indices().iter().map(|&i| sq(s.q[i] - q0[i])).sum();
        r[T::AnkleDeviation.index()] = desc.ankle_indices().iter().map(|&i| sq(s.q[i] - q0[i])).sum();
        r[T::SquatKnee.index()] = -r_knee_mean(desc, s.base_height, cmd.h, &s.q)?;
        r[T::DofAcc.index()] = s.qd.iter().zip(&inp.prev.qd).map(|(x, y)| sq(x - y) / cfg.dt).sum();

        let mut pos_out = 0.0;
        let mut vel_out = 0.0;
        let mut torque_out = 0.0;
        let mut torques = 0.0;
        let mut tracking = 0.0;
        for (i, j) in desc.joints.iter().enumerate() {
            let mid = 0.5 * (j.pos_min + j.pos_max);
            let half = 0.5 * (j.pos_max - j.pos_min) * cfg.soft_pos_scale;
            pos_out += relu(mid - half - s.q[i]) + relu(s.q[i] - (mid + half));
            vel_out += relu(s.qd[i].abs() - cfg.soft_vel_scale * j.vel_max);
            torque_out += relu(s.torque[i].abs() - cfg.soft_torque_scale * j.torque_max);
            torques += sq(s.torque[i] / j.kp);
            tracking += sq(s.q[i] - inp.joint_targets[i]);
        }
        r[T::DofPosLimits.index()] = pos_out;
        r[T::DofVelLimit.index()] = vel_out;
        r[T::TorqueLimits.index()] = torque_out;
        r[T::Torques.index()] = torques;
        r[T::JointTrackingError.index()] = tracking;
        r[T::DofVel.index()] = s.qd.iter().map(|x| sq(*x)).sum();

        r[T::FeetAirTime.index()] = air
            .first_contact
            .iter()
            .zip(&air.air_time_at_contact)
            .map(|(&first, &t)| if first { t - cfg.air_time_offset } else { 0.0 })
            .sum();

        r[T::FeetClearance.index()] = s
            .foot_pos
            .iter()
            .zip(&s.foot_vel)
            .map(|(p, v)| sq(cfg.clearance_target - p[2]) * v[0].hypot(v[1]))
            .sum();

        let feet_d = (s.foot_pos[0][1] - s.foot_pos[1][1]).abs();
        let knee_d = (s.knee_pos[0][1] - s.knee_pos[1][1]).abs();
        r[T::FeetLateralDistance.index()] = lateral_band(feet_d, cfg.d_min_feet, cfg.d_max_feet);
        r[T::KneeLateralDistance.index()] = lateral_band(knee_d, cfg.d_min_knee, cfg.d_max_knee);

        let corners: Vec<[[f64; 3]; 4]> = desc
            .legs
            .iter()
            .zip(&s.foot_pos)
            .map(|(leg, &center)| foot_corners(cfg.foot_length, cfg.foot_width, center, &leg_pose(desc, &s.q, leg)))
            .collect();
        r[T::FeetGroundParallel.index()] = corners
            .iter()
            .map(|c| population_variance(&c.map(|p| p[2])))
            .sum();
        let pair_d: Vec<f64> = (0..4)
            .map(|k| {
                let (l, rt) = (corners[0][k], corners[1][k]);
                (sq(l[0] - rt[0]) + sq(l[1] - rt[1]) + sq(l[2] - rt[2])).sqrt()
            })
            .collect();
        r[T::FeetParallel.index()] = population_variance(&pair_d);

        r[T::Smoothness.index()] = a0.iter().zip(a1).zip(a2).map(|((x, y), z)| sq(x - 2.0 * y + z)).sum();

        let power: f64 = s.torque.iter().zip(&s.qd).map(|(t, v)| (t * v).abs()).sum();
        let v_sq: f64 = s.base_vel.iter().map(|x| sq(*x)).sum();
        let w_sq: f64 = s.omega_body.iter().map(|x| sq(*x)).sum();
        r[T::JointPower.index()] = power / (v_sq + 0.2 * w_sq).max(cfg.power_floor);

        let stumble = s
            .foot_force_xy
            .iter()
            .zip(&s.foot_force_z)
            .any(|(f, fz)| f[0].hypot(f[1]) > cfg.stumble_ratio * fz.abs());
        r[T::FeetStumble.index()] = f64::from(u8::from(stumble));

        let n_contact = s.foot_contact.iter().filter(|&&c| c).count();
        r[T::NoFly.index()] = f64::from(u8::from(n_contact == 1));

        r[T::FeetSlip.index()] = s
            .foot_vel
            .iter()
            .zip(&s.foot_contact)
            .zip(&air.first_contact)
            .map(|((v, &c), &first)| if c && !first { v[0].hypot(v[1]) } else { 0.0 })
            .sum();
        r[T::FeetContactForce.index()] = s.foot_force_z.iter().map(|f| relu(f - cfg.max_contact_force)).sum();
        r[T::ContactMomentum.index()] = s.foot_vel.iter().zip(&s.foot_force_z).map(|(v, f)| (v[2] * f).abs()).sum();

        r[T::ActionVanish.index()] = a0
            .iter()
            .zip(&self.lower)
            .map(|(&a, &i)| {
                let j = &desc.joints[i];
                relu(a - j.pos_max) + relu(j.pos_min - a)
            })
            .sum();

        let airborne = s.foot_contact.len() - n_contact;
        r[T::StandStill.index()] = if stand_still_gate(cmd, cfg.stand_still_eps) { airborne as f64 } else { 0.0 };

        Ok(r)
    }
}
