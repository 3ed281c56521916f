//! Cockpit signal mappings: exoskeleton joint calibration, glove Hall-sensor
//! channels and the foot pedal.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::Command;
use crate::robot::RobotDescription;

/// Maps one exoskeleton servo reading `p` onto a robot joint:
/// `q = sign · k · (p + n π/2) + τ_comp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub sign: i8,
    pub k: f64,
    pub n: i32,
    pub tau_comp: f64,
}

impl Default for CalibrationEntry {
    fn default() -> Self {
        CalibrationEntry {
            sign: 1,
            k: 1.0,
            n: 0,
            tau_comp: 0.0,
        }
    }
}

impl CalibrationEntry {
    pub fn new(sign: i8, k: f64, n: i32, tau_comp: f64) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::Config(format!("calibration sign must be ±1, got {sign}")));
        }
        Ok(CalibrationEntry { sign, k, n, tau_comp })
    }
}

pub fn calibrate(entry: &CalibrationEntry, p: f64) -> f64 {
    f64::from(entry.sign) * entry.k * (p + f64::from(entry.n) * FRAC_PI_2) + entry.tau_comp
}

/// Calibrates a full exoskeleton reading, one entry per channel.
pub fn calibrate_all(entries: &[CalibrationEntry], p: &[f64]) -> Result<Vec<f64>> {
    if entries.len() != p.len() {
        return Err(Error::shape("exoskeleton reading", entries.len(), p.len()));
    }
    Ok(entries.iter().zip(p).map(|(e, &x)| calibrate(e, x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerDof {
    /// Fingertip pitch.
    Alpha,
    /// Finger pad pitch.
    Beta,
    /// Finger pad yaw.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GloveCurve {
    Linear,
    Exponential { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveChannelSpec {
    pub finger: Finger,
    pub dof: FingerDof,
    pub angle_range_deg: f64,
    pub unit_range: u32,
    pub curve: GloveCurve,
}

impl GloveChannelSpec {
    /// Degrees per count of the linear map.
    pub fn resolution(&self) -> f64 {
        self.angle_range_deg / f64::from(self.unit_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveReading {
    pub angle_deg: f64,
    /// Set when the raw count was outside `[0, unit_range]` and got clamped.
    pub clamped: bool,
}

pub fn glove_angle(spec: &GloveChannelSpec, units: i64) -> GloveReading {
    let max = i64::from(spec.unit_range);
    let clamped = !(0..=max).contains(&units);
    let u = units.clamp(0, max) as f64;
    let frac = u / spec.unit_range as f64;
    let angle_deg = match spec.curve {
        GloveCurve::Linear => u * spec.angle_range_deg / f64::from(spec.unit_range),
        GloveCurve::Exponential { kappa } if kappa != 0.0 => {
            spec.angle_range_deg * (kappa * frac).exp_m1() / kappa.exp_m1()
        }
        GloveCurve::Exponential { .. } => frac * spec.angle_range_deg,
    };
    GloveReading { angle_deg, clamped }
}

/// Angle range (degrees) and count range of each of the nine tabulated
/// channel groups. Index, middle and ring fingers share the "other" rows.
pub const GLOVE_TABLE: [(&str, f64, u32); 9] = [
    ("alpha_thumb", 65.0, 528),
    ("beta_thumb", 100.0, 1024),
    ("gamma_thumb", 90.0, 832),
    ("alpha_pinky", 70.0, 880),
    ("beta_pinky", 90.0, 1136),
    ("gamma_pinky", 45.0, 416),
    ("alpha_other", 70.0, 928),
    ("beta_other", 90.0, 1072),
    ("gamma_other", 40.0, 512),
];

fn table_row(finger: Finger, dof: FingerDof) -> (f64, u32) {
    let group = match finger {
        Finger::Thumb => "thumb",
        Finger::Pinky => "pinky",
        _ => "other",
    };
    let d = match dof {
        FingerDof::Alpha => "alpha",
        FingerDof::Beta => "beta",
        FingerDof::Gamma => "gamma",
    };
    let key = format!("{d}_{group}");
    let row = GLOVE_TABLE.iter().find(|r| r.0 == key).expect("every group is tabulated");
    (row.1, row.2)
}

/// The fifteen channels of one glove, thumb to pinky, α β γ per finger.
pub fn glove_preset(curve: GloveCurve) -> Vec<GloveChannelSpec> {
    let fingers = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky];
    let dofs = [FingerDof::Alpha, FingerDof::Beta, FingerDof::Gamma];
    fingers
        .iter()
        .flat_map(|&finger| {
            dofs.iter().map(move |&dof| {
                let (angle_range_deg, unit_range) = table_row(finger, dof);
                GloveChannelSpec {
                    finger,
                    dof,
                    angle_range_deg,
                    unit_range,
                    curve,
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalConfig {
    pub pot_range_deg: f64,
    pub travel_deg: f64,
    /// ADC counts spanning the full potentiometer rotation.
    pub adc_counts: u32,
}

impl Default for PedalConfig {
    fn default() -> Self {
        PedalConfig {
            pot_range_deg: 270.0,
            travel_deg: 40.0,
            adc_counts: 4096,
        }
    }
}

impl PedalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.travel_deg > 0.0 && self.travel_deg <= self.pot_range_deg) {
            return Err(Error::Config("pedal: need 0 < travel_deg <= pot_range_deg".into()));
        }
        if self.adc_counts == 0 {
            return Err(Error::Config("pedal: adc_counts must be positive".into()));
        }
        Ok(())
    }

    /// Travel fraction in `[0, 1]` from a raw potentiometer reading, measured
    /// relative to the reading at rest.
    pub fn travel_fraction(&self, counts: u32, rest_counts: u32) -> f64 {
        let deg_per_count = self.pot_range_deg / f64::from(self.adc_counts);
        let deg = (f64::from(counts) - f64::from(rest_counts)) * deg_per_count;
        (deg / self.travel_deg).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearDir {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnDir {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalInput {
    pub velocity: f64,
    pub turn: f64,
    pub height: f64,
    pub linear_dir: LinearDir,
    pub turn_dir: TurnDir,
}

impl PedalInput {
    pub fn released() -> Self {
        PedalInput {
            velocity: 0.0,
            turn: 0.0,
            height: 0.0,
            linear_dir: LinearDir::Forward,
            turn_dir: TurnDir::Left,
        }
    }
}

/// Pedal travels to a locomotion command. Velocity and turn scale the range
/// limit on the toggled side; pressing the height pedal lowers the robot from
/// the top of the commandable height range toward its bottom.
pub fn pedal_command(input: &PedalInput, desc: &RobotDescription) -> Command {
    let t = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let v_x = match input.linear_dir {
        LinearDir::Forward => t(input.velocity) * desc.cmd_ranges.v_x.hi(),
        LinearDir::Backward => t(input.velocity) * desc.cmd_ranges.v_x.lo(),
    };
    let omega_yaw = match input.turn_dir {
        TurnDir::Left => t(input.turn) * desc.cmd_ranges.yaw.hi(),
        TurnDir::Right => t(input.turn) * desc.cmd_ranges.yaw.lo(),
    };
    let heights = desc.squat_command_range();
    let (h_min, h_max) = (heights.lo(), heights.hi());
    let h = h_max - t(input.height) * (h_max - h_min);
    Command::new(v_x, omega_yaw, h)
}
