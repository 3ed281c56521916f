//! Upper-body pose curriculum and command scheduling.
//!
//! The difficulty `ρ_a` controls a truncated exponential on `[0, 1]`,
//! `p(x | ρ_a) = λ e^{-λx} / (1 - e^{-λ})` with `λ = 20 (1 - ρ_a)`. A draw `ρ'`
//! from it bounds the per-joint ratio `a_i ~ U(0, ρ')`. As `ρ_a → 1` the
//! density tends to `U(0, 1)`, which is used directly at `ρ_a = 1`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain_rand::uniform;
use crate::error::{Error, Result};
use crate::observation::Command;
use crate::plant::interpolate_upper;
use crate::robot::RobotDescription;

pub fn lambda(rho_a: f64) -> f64 {
    20.0 * (1.0 - rho_a)
}

/// Inverse CDF of the truncated exponential evaluated at `u1`.
pub fn sample_rho_prime(rho_a: f64, u1: f64) -> f64 {
    if rho_a >= 1.0 {
        return u1;
    }
    let l = lambda(rho_a);
    -(u1 * (-l).exp_m1()).ln_1p() / l
}

/// Per-joint ratio `a_i = u2 · ρ'`.
pub fn sample_ratio(rho_a: f64, u1: f64, u2: f64) -> f64 {
    u2 * sample_rho_prime(rho_a, u1)
}

pub fn pdf(rho_a: f64, x: f64) -> f64 {
    if rho_a >= 1.0 {
        return if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let l = lambda(rho_a);
    l * (-l * x).exp() / -(-l).exp_m1()
}

pub fn cdf(rho_a: f64, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if rho_a >= 1.0 {
        return x;
    }
    let l = lambda(rho_a);
    (-l * x).exp_m1() / (-l).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub step_increment: f64,
    /// Mean x-velocity tracking reward (raw) needed to promote.
    pub promotion_threshold: f64,
    /// Number of batch means averaged before a promotion decision.
    pub window: usize,
    pub pose_interval: f64,
    pub command_interval: f64,
    pub interp_duration: f64,
    pub squat_prob: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            step_increment: 0.05,
            promotion_threshold: 0.8,
            window: 1,
            pose_interval: 1.0,
            command_interval: 4.0,
            interp_duration: 1.0,
            squat_prob: 1.0 / 3.0,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_increment > 0.0 && self.step_increment <= 1.0) {
            return Err(Error::Config("curriculum.step_increment must lie in (0, 1]".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("curriculum.window must be positive".into()));
        }
        for (name, v) in [
            ("pose_interval", self.pose_interval),
            ("command_interval", self.command_interval),
            ("interp_duration", self.interp_duration),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("curriculum.{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.squat_prob) {
            return Err(Error::Config("curriculum.squat_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Difficulty state. `ρ_a` is stored as an integer number of increments so
/// the cap at 1 is hit exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub level: u32,
    pub step_increment: f64,
    pub promotion_threshold: f64,
    pub window: usize,
    pending: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromotionEvent {
    pub from: f64,
    pub to: f64,
    pub mean_reward: f64,
}

impl CurriculumState {
    pub fn new(cfg: &CurriculumConfig) -> Self {
        CurriculumState {
            level: 0,
            step_increment: cfg.step_increment,
            promotion_threshold: cfg.promotion_threshold,
            window: cfg.window.max(1),
            pending: Vec::new(),
        }
    }

    fn max_level(&self) -> u32 {
        (1.0 / self.step_increment).ceil() as u32
    }

    /// State pinned at the hardest level.
    pub fn saturated(cfg: &CurriculumConfig) -> Self {
        let mut s = Self::new(cfg);
        s.level = s.max_level();
        s
    }

    pub fn rho_a(&self) -> f64 {
        if self.level >= self.max_level() {
            1.0
        } else {
            (f64::from(self.level) * self.step_increment).min(1.0)
        }
    }

    /// Raises `ρ_a` by one increment when the reward reaches the threshold.
    pub fn maybe_promote(&mut self, mean_xvel_reward: f64) -> Option<PromotionEvent> {
        if !(mean_xvel_reward >= self.promotion_threshold) || self.level >= self.max_level() {
            return None;
        }
        let from = self.rho_a();
        self.level += 1;
        let event = PromotionEvent {
            from,
            to: self.rho_a(),
            mean_reward: mean_xvel_reward,
        };
        log::info!(
            target: "curriculum",
            "promotion from={} to={} mean_reward={}",
            event.from,
            event.to,
            event.mean_reward
        );
        Some(event)
    }

    /// Feeds one batch of per-environment rewards; decides once `window`
    /// batch means have accumulated.
    pub fn observe_batch(&mut self, rewards: &[f64]) -> Option<PromotionEvent> {
        if rewards.is_empty() {
            return None;
        }
        self.pending.push(crate::stats::kahan_sum(rewards) / rewards.len() as f64);
        if self.pending.len() < self.window {
            return None;
        }
        let mean = crate::stats::kahan_sum(&self.pending) / self.pending.len() as f64;
        self.pending.clear();
        self.maybe_promote(mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandMode {
    Walk,
    Squat,
}

/// One sampled upper-body pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    /// Ratio per upper joint, in `[0, 1]`.
    pub ratios: Vec<f64>,
    /// Direction per upper joint, ±1.
    pub signs: Vec<f64>,
    pub angles: Vec<f64>,
    pub hold_start: f64,
    pub interp_duration: f64,
}

/// Maps ratios to joint angles: `d + s · a · (bound - d)` measured toward the
/// limit farther from the default `d`, mirrored by the sign and clamped.
pub fn map_pose(desc: &RobotDescription, upper: &[usize], ratios: &[f64], signs: &[f64]) -> Vec<f64> {
    upper
        .iter()
        .zip(ratios.iter().zip(signs))
        .map(|(&i, (&a, &s))| {
            let j = &desc.joints[i];
            let span = (j.pos_max - j.default_pos).max(j.default_pos - j.pos_min);
            j.limits().clamp(j.default_pos + s * a * span)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTick {
    pub tick: u64,
    pub t: f64,
    pub resample_pose: bool,
    pub resample_cmd: bool,
    pub mode: CommandMode,
    pub command: Command,
    pub upper: Vec<f64>,
}

/// Per-environment scheduler for upper poses and commands, driven by the
/// control tick index.
#[derive(Debug, Clone)]
pub struct Scheduler {
    desc: Arc<RobotDescription>,
    cfg: CurriculumConfig,
    control_hz: f64,
    upper: Vec<usize>,
    rng: ChaCha8Rng,
    pose_period: u64,
    cmd_period: u64,
    interp_ticks: u32,
    ramp_from: Vec<f64>,
    pose: PoseTarget,
    ramp_start: u64,
    command: Command,
    mode: CommandMode,
    last_emitted: Vec<f64>,
    next_tick: u64,
}

fn period_ticks(seconds: f64, hz: f64, what: &str) -> Result<u64> {
    let ticks = seconds * hz;
    if (ticks - ticks.round()).abs() > 1e-9 || ticks.round() < 1.0 {
        return Err(Error::Config(format!("{what} of {seconds} s is not a whole number of control ticks")));
    }
    Ok(ticks.round() as u64)
}

impl Scheduler {
    pub fn new(desc: Arc<RobotDescription>, cfg: CurriculumConfig, control_hz: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pose_period = period_ticks(cfg.pose_interval, control_hz, "pose interval")?;
        let cmd_period = period_ticks(cfg.command_interval, control_hz, "command interval")?;
        let interp_ticks = period_ticks(cfg.interp_duration, control_hz, "interpolation duration")? as u32;
        let upper = desc.upper_indices();
        let q0 = desc.default_pose();
        let rest: Vec<f64> = upper.iter().map(|&i| q0[i]).collect();
        Ok(Scheduler {
            pose: PoseTarget {
                ratios: vec![0.0; upper.len()],
                signs: vec![1.0; upper.len()],
                angles: rest.clone(),
                hold_start: 0.0,
                interp_duration: cfg.interp_duration,
            },
            ramp_from: rest.clone(),
            last_emitted: rest,
            ramp_start: 0,
            command: Command::idle(&desc),
            mode: CommandMode::Walk,
            rng: ChaCha8Rng::seed_from_u64(seed),
            desc,
            cfg,
            control_hz,
            upper,
            pose_period,
            cmd_period,
            interp_ticks,
            next_tick: 0,
        })
    }

    pub fn pose(&self) -> &PoseTarget {
        &self.pose
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn mode(&self) -> CommandMode {
        self.mode
    }

    fn draw_pose(&mut self, rho_a: f64, tick: u64) {
        let n = self.upper.len();
        let mut ratios = Vec::with_capacity(n);
        let mut signs = Vec::with_capacity(n);
        for _ in 0..n {
            let u1: f64 = self.rng.random();
            let u2: f64 = self.rng.random();
            ratios.push(sample_ratio(rho_a, u1, u2));
            signs.push(if self.rng.random::<bool>() { 1.0 } else { -1.0 });
        }
        let angles = map_pose(&self.desc, &self.upper, &ratios, &signs);
        self.ramp_from = self.last_emitted.clone();
        self.ramp_start = tick;
        self.pose = PoseTarget {
            ratios,
            signs,
            angles,
            hold_start: tick as f64 / self.control_hz,
            interp_duration: self.cfg.interp_duration,
        };
    }

    fn draw_command(&mut self) {
        let desc = &*self.desc;
        if self.rng.random::<f64>() < self.cfg.squat_prob {
            self.mode = CommandMode::Squat;
            self.command = Command::new(0.0, 0.0, uniform(&mut self.rng, desc.squat_command_range()));
        } else {
            self.mode = CommandMode::Walk;
            let v = uniform(&mut self.rng, desc.cmd_ranges.v_x);
            let w = uniform(&mut self.rng, desc.cmd_ranges.yaw);
            self.command = Command::new(v, w, desc.height_target_walk);
        }
    }

    /// Upper-body angles the current ramp emits at `tick`.
    pub fn ramp_value(&self, tick: u64) -> Vec<f64> {
        let k = tick.saturating_sub(self.ramp_start).min(u64::from(self.interp_ticks)) as u32;
        interpolate_upper(&self.ramp_from, &self.pose.angles, k, self.interp_ticks)
    }

    /// Advances to `tick`, which must follow the previous call's tick by one
    /// (the first call must be tick 0). Tick 0 draws the initial pose and
    /// command; resampling happens at every later multiple of the periods.
    pub fn tick(&mut self, tick: u64, rho_a: f64) -> Result<ScheduleTick> {
        if tick != self.next_tick {
            return Err(Error::Config(format!("scheduler expected tick {}, got {tick}", self.next_tick)));
        }
        self.next_tick += 1;
        let resample_pose = tick > 0 && tick.is_multiple_of(self.pose_period);
        let resample_cmd = tick > 0 && tick.is_multiple_of(self.cmd_period);
        if tick == 0 || resample_cmd {
            self.draw_command();
        }
        if tick == 0 || resample_pose {
            self.draw_pose(rho_a, tick);
        }
        let upper = self.ramp_value(tick);
        self.last_emitted = upper.clone();
        Ok(ScheduleTick {
            tick,
            t: tick as f64 / self.control_hz,
            resample_pose,
            resample_cmd,
            mode: self.mode,
            command: self.command,
            upper,
        })
    }
}
