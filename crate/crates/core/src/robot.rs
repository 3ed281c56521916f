//! Robot description: joint inventory, limits, gains, default pose, mirror
//! structure and leg geometry.
//!
//! Descriptions are loaded from a versioned TOML file (`format =
//! "robot-description"`, `version = 1`). Two presets ship with the crate,
//! `g1` and `gr1`. All quantities are SI, angles in radians.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DESCRIPTION_FORMAT: &str = "robot-description";
pub const DESCRIPTION_VERSION: u32 = 1;

const G1_PRESET: &str = include_str!("../presets/g1.toml");
const GR1_PRESET: &str = include_str!("../presets/gr1.toml");

/// Names accepted by [`load_preset`].
pub const PRESET_NAMES: [&str; 2] = ["g1", "gr1"];

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn width(&self) -> f64 {
        self.1 - self.0
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.0 + self.1)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.0 && x <= self.1
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.0).min(self.1)
    }

    /// Linear map of `u in [0, 1]` onto the interval.
    pub fn lerp(&self, u: f64) -> f64 {
        self.0 + u * (self.1 - self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointGroup {
    Lower,
    UpperArm,
    Hand,
    Waist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Center,
}

/// How a joint coordinate transforms under reflection through the x-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignRule {
    Flip,
    Keep,
}

impl SignRule {
    pub fn sign(self) -> f64 {
        match self {
            SignRule::Flip => -1.0,
            SignRule::Keep => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointSpec {
    pub name: String,
    pub group: JointGroup,
    pub side: Side,
    pub pos_min: f64,
    pub pos_max: f64,
    pub vel_max: f64,
    pub torque_max: f64,
    pub kp: f64,
    pub kd: f64,
    pub default_pos: f64,
}

impl JointSpec {
    pub fn limits(&self) -> Interval {
        Interval(self.pos_min, self.pos_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MirrorPair {
    pub left: usize,
    pub right: usize,
    pub sign: SignRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MirrorCenter {
    pub index: usize,
    pub sign: SignRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry {
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Height of the base frame above the hip pitch axis plus the ankle-to-sole
    /// distance. Base height = pelvis_offset + vertical leg extension.
    pub pelvis_offset: f64,
    pub hip_half_width: f64,
    pub foot_length: f64,
    pub foot_width: f64,
}

/// Joint indices of one leg, resolved against the joint list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LegChain {
    pub side: Side,
    pub hip_roll: usize,
    pub hip_yaw: usize,
    pub hip_pitch: usize,
    pub knee: usize,
    pub ankle_pitch: usize,
    pub ankle_roll: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub v_x: Interval,
    pub v_y: Interval,
    pub yaw: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotDescription {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub knee_indices: Vec<usize>,
    pub ankle_kp_scale: f64,
    pub mirror_pairs: Vec<MirrorPair>,
    pub mirror_centers: Vec<MirrorCenter>,
    pub geometry: LegGeometry,
    pub legs: [LegChain; 2],
    pub body_mass: f64,
    pub height_target_walk: f64,
    /// Squat height range exactly as tabulated for the robot.
    pub squat_height_range: Interval,
    /// Range commanded heights are clamped into.
    pub height_clamp: Interval,
    pub cmd_ranges: CommandRanges,
}

/// Joint permutation and per-joint sign for the x-z reflection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorPermutation {
    pub perm: Vec<usize>,
    pub signs: Vec<i8>,
}

impl MirrorPermutation {
    /// `out[i] = sign[i] * x[perm[i]]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.perm
            .iter()
            .zip(&self.signs)
            .map(|(&j, &s)| f64::from(s) * x[j])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn compose(&self, other: &MirrorPermutation) -> MirrorPermutation {
        // (self ∘ other)(x)[i] = s_i * other(x)[p_i] = s_i * s'_{p_i} * x[p'_{p_i}]
        let perm = self.perm.iter().map(|&p| other.perm[p]).collect();
        let signs = self
            .perm
            .iter()
            .zip(&self.signs)
            .map(|(&p, &s)| s * other.signs[p])
            .collect();
        MirrorPermutation { perm, signs }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl RobotDescription {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_lower(&self) -> usize {
        self.lower_indices().len()
    }

    pub fn n_upper(&self) -> usize {
        self.n_joints() - self.n_lower()
    }

    /// Indices of lower-body joints in joint order. Policy actions map onto
    /// these one-to-one.
    pub fn lower_indices(&self) -> Vec<usize> {
        self.indices_where(|j| j.group == JointGroup::Lower)
    }

    pub fn upper_indices(&self) -> Vec<usize> {
        self.indices_where(|j| j.group != JointGroup::Lower)
    }

    pub fn indices_of_group(&self, group: JointGroup) -> Vec<usize> {
        self.indices_where(|j| j.group == group)
    }

    fn indices_where(&self, pred: impl Fn(&JointSpec) -> bool) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| pred(j))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn default_pose(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.default_pos).collect()
    }

    pub fn hip_indices(&self) -> Vec<usize> {
        self.legs.iter().flat_map(|l| [l.hip_roll, l.hip_yaw]).collect()
    }

    pub fn ankle_indices(&self) -> Vec<usize> {
        self.legs
            .iter()
            .flat_map(|l| [l.ankle_pitch, l.ankle_roll])
            .collect()
    }

    /// Permutation and signs that reflect a joint vector through the x-z plane.
    pub fn mirror_index_permutation(&self) -> MirrorPermutation {
        let n = self.n_joints();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut signs = vec![1i8; n];
        for p in &self.mirror_pairs {
            let s = p.sign.sign() as i8;
            perm[p.left] = p.right;
            perm[p.right] = p.left;
            signs[p.left] = s;
            signs[p.right] = s;
        }
        for c in &self.mirror_centers {
            signs[c.index] = c.sign.sign() as i8;
        }
        MirrorPermutation { perm, signs }
    }

    /// The mirror map restricted to lower-body joints, indexed in action order.
    pub fn lower_mirror_permutation(&self) -> MirrorPermutation {
        let full = self.mirror_index_permutation();
        let lower = self.lower_indices();
        let mut slot = vec![usize::MAX; self.n_joints()];
        for (k, &i) in lower.iter().enumerate() {
            slot[i] = k;
        }
        MirrorPermutation {
            perm: lower.iter().map(|&i| slot[full.perm[i]]).collect(),
            signs: lower.iter().map(|&i| full.signs[i]).collect(),
        }
    }

    /// Checks every structural invariant. Empty iff the description is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: String, rule: &str| {
            out.push(Violation {
                field,
                rule: rule.to_string(),
            })
        };

        for j in &self.joints {
            let f = |k: &str| format!("joints.{}.{}", j.name, k);
            if !(j.pos_min < j.pos_max) {
                push(f("pos"), "pos_min < pos_max");
            }
            if !(j.kp > 0.0) {
                push(f("kp"), "kp > 0");
            }
            if !(j.kd >= 0.0) {
                push(f("kd"), "kd >= 0");
            }
            if !(j.vel_max > 0.0) {
                push(f("vel_max"), "vel_max > 0");
            }
            if !(j.torque_max > 0.0) {
                push(f("torque_max"), "torque_max > 0");
            }
            if j.pos_min < j.pos_max && !(j.default_pos >= j.pos_min && j.default_pos <= j.pos_max) {
                push(f("default"), "default within [pos_min, pos_max]");
            }
        }

        let n = self.joints.len();
        let mut seen = vec![0usize; n];
        let mut index_ok = true;
        for p in &self.mirror_pairs {
            if p.left >= n || p.right >= n {
                push("mirror".into(), "pair index out of range");
                index_ok = false;
                continue;
            }
            seen[p.left] += 1;
            seen[p.right] += 1;
            let (l, r) = (&self.joints[p.left], &self.joints[p.right]);
            if l.side != Side::Left || r.side != Side::Right {
                push(
                    format!("mirror.{}", l.name),
                    "pair must be (left joint, right joint)",
                );
            }
            if l.group != r.group {
                push(format!("mirror.{}", l.name), "paired joints share a group");
            }
        }
        for c in &self.mirror_centers {
            if c.index >= n {
                push("mirror".into(), "center index out of range");
                index_ok = false;
                continue;
            }
            seen[c.index] += 1;
            if self.joints[c.index].side != Side::Center {
                push(
                    format!("mirror.{}", self.joints[c.index].name),
                    "center entry must be a center joint",
                );
            }
        }
        if index_ok {
            for (i, &count) in seen.iter().enumerate() {
                if count != 1 {
                    let rule = if count == 0 {
                        "joint missing from mirror map"
                    } else {
                        "joint appears more than once in mirror map"
                    };
                    push(format!("mirror.{}", self.joints[i].name), rule);
                }
            }
            let m = self.mirror_index_permutation();
            let twice = m.compose(&m);
            if twice.perm.iter().enumerate().any(|(i, &p)| i != p) || twice.signs.iter().any(|&s| s != 1) {
                push("mirror".into(), "mirror map must be an involution");
            }
        }

        for &k in &self.knee_indices {
            if k >= n || self.joints[k].group != JointGroup::Lower {
                push("knee_indices".into(), "knee joints belong to group lower");
            }
        }
        if self.knee_indices.is_empty() {
            push("knee_indices".into(), "at least one knee");
        }
        if !(self.ankle_kp_scale > 0.0) {
            push("ankle_kp_scale".into(), "ankle_kp_scale > 0");
        }
        let g = &self.geometry;
        if !(g.thigh_len > 0.0 && g.shank_len > 0.0) {
            push("geometry".into(), "link lengths > 0");
        }
        if !(g.foot_length > 0.0 && g.foot_width > 0.0) {
            push("geometry".into(), "footprint dimensions > 0");
        }
        if !(self.body_mass > 0.0) {
            push("body_mass".into(), "body_mass > 0");
        }
        if !(self.height_target_walk > 0.0) {
            push("height_target_walk".into(), "height_target_walk > 0");
        }
        if !(self.height_clamp.lo() < self.height_clamp.hi()) {
            push("height_clamp".into(), "lo < hi");
        }
        for (name, r) in [
            ("cmd_ranges.v_x", self.cmd_ranges.v_x),
            ("cmd_ranges.v_y", self.cmd_ranges.v_y),
            ("cmd_ranges.yaw", self.cmd_ranges.yaw),
            ("squat_height_range", self.squat_height_range),
        ] {
            if !(r.lo() <= r.hi()) {
                push(name.into(), "lo <= hi");
            }
        }
        out
    }

    /// Squat heights that can actually be commanded: the tabulated squat range
    /// intersected with the height clamp.
    pub fn squat_command_range(&self) -> Interval {
        Interval(
            self.squat_height_range.lo().max(self.height_clamp.lo()),
            self.squat_height_range.hi().min(self.height_clamp.hi()),
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: DescriptionFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("robot description: {e}")))?;
        file.into_description()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }
}

/// Loads one of the built-in presets (`"g1"` or `"gr1"`).
pub fn load_preset(name: &str) -> Result<RobotDescription> {
    let text = preset_source(name).ok_or_else(|| Error::NotFound(format!("robot preset '{name}'")))?;
    RobotDescription::from_toml_str(text)
}

/// Raw TOML of a built-in preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "g1" => Some(G1_PRESET),
        "gr1" => Some(GR1_PRESET),
        _ => None,
    }
}

/// Resolves a `--robot` argument: a preset name, or else a path to a file.
pub fn load_robot(arg: &str) -> Result<RobotDescription> {
    if preset_source(arg).is_some() {
        return load_preset(arg);
    }
    let path = Path::new(arg);
    if path.exists() {
        RobotDescription::from_file(path)
    } else {
        Err(Error::NotFound(format!("robot '{arg}' is neither a preset nor a file")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionFile {
    format: String,
    version: u32,
    name: String,
    body_mass: f64,
    #[serde(default = "default_ankle_kp_scale")]
    ankle_kp_scale: f64,
    height_target_walk: f64,
    squat_height_range: Interval,
    height_clamp: Option<Interval>,
    cmd_ranges: CommandRanges,
    geometry: LegGeometry,
    legs: Vec<LegFile>,
    joints: Vec<JointFile>,
    mirror: Vec<MirrorFile>,
}

fn default_ankle_kp_scale() -> f64 {
    0.8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    group: JointGroup,
    side: Side,
    pos: Interval,
    vel_max: f64,
    torque_max: f64,
    kp: f64,
    kd: f64,
    default: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LegFile {
    side: Side,
    hip_roll: String,
    hip_yaw: String,
    hip_pitch: String,
    knee: String,
    ankle_pitch: String,
    ankle_roll: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MirrorFile {
    left: Option<String>,
    right: Option<String>,
    center: Option<String>,
    sign: SignRule,
}

impl DescriptionFile {
    fn into_description(self) -> Result<RobotDescription> {
        if self.format != DESCRIPTION_FORMAT {
            return Err(Error::Config(format!(
                "expected format '{DESCRIPTION_FORMAT}', found '{}'",
                self.format
            )));
        }
        if self.version != DESCRIPTION_VERSION {
            return Err(Error::Config(format!(
                "unsupported robot description version {}",
                self.version
            )));
        }

        let index: HashMap<&str, usize> = self
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.as_str(), i))
            .collect();
        if index.len() != self.joints.len() {
            return Err(Error::Config("duplicate joint names".into()));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown joint '{name}'")))
        };

        let mut legs = Vec::with_capacity(2);
        for leg in &self.legs {
            legs.push(LegChain {
                side: leg.side,
                hip_roll: lookup(&leg.hip_roll)?,
                hip_yaw: lookup(&leg.hip_yaw)?,
                hip_pitch: lookup(&leg.hip_pitch)?,
                knee: lookup(&leg.knee)?,
                ankle_pitch: lookup(&leg.ankle_pitch)?,
                ankle_roll: lookup(&leg.ankle_roll)?,
            });
        }
        let legs: [LegChain; 2] = match legs.as_slice() {
            [l, r] if l.side == Side::Left && r.side == Side::Right => [*l, *r],
            _ => {
                return Err(Error::Config(
                    "exactly two legs required, left then right".into(),
                ))
            }
        };

        let mut mirror_pairs = Vec::new();
        let mut mirror_centers = Vec::new();
        for m in &self.mirror {
            match (&m.left, &m.right, &m.center) {
                (Some(l), Some(r), None) => mirror_pairs.push(MirrorPair {
                    left: lookup(l)?,
                    right: lookup(r)?,
                    sign: m.sign,
                }),
                (None, None, Some(c)) => mirror_centers.push(MirrorCenter {
                    index: lookup(c)?,
                    sign: m.sign,
                }),
                _ => {
                    return Err(Error::Config(
                        "mirror entry needs either left+right or center".into(),
                    ))
                }
            }
        }

        let ankles: Vec<usize> = legs.iter().flat_map(|l| [l.ankle_pitch, l.ankle_roll]).collect();
        let joints = self
            .joints
            .into_iter()
            .enumerate()
            .map(|(i, j)| JointSpec {
                kp: if ankles.contains(&i) {
                    j.kp * self.ankle_kp_scale
                } else {
                    j.kp
                },
                name: j.name,
                group: j.group,
                side: j.side,
                pos_min: j.pos.lo(),
                pos_max: j.pos.hi(),
                vel_max: j.vel_max,
                torque_max: j.torque_max,
                kd: j.kd,
                default_pos: j.default,
            })
            .collect();

        let desc = RobotDescription {
            name: self.name,
            joints,
            knee_indices: legs.iter().map(|l| l.knee).collect(),
            ankle_kp_scale: self.ankle_kp_scale,
            mirror_pairs,
            mirror_centers,
            geometry: self.geometry,
            legs,
            body_mass: self.body_mass,
            height_target_walk: self.height_target_walk,
            squat_height_range: self.squat_height_range,
            height_clamp: self
                .height_clamp
                .unwrap_or(Interval(0.2 * self.height_target_walk, self.height_target_walk)),
            cmd_ranges: self.cmd_ranges,
        };

        let violations = desc.validate();
        if violations.is_empty() {
            Ok(desc)
        } else {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::Config(format!("invalid robot description: {}", list.join("; "))))
        }
    }
}
