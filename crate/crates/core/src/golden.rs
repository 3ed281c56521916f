//! Checks the built-in presets against checked-in tables of reward weights,
//! randomization ranges and key training parameters.
//!
//! Golden files hold every value as the string it is printed as, e.g.
//! `"-2.5e-7"` or `"[-0.80, 1.20]"`. A value matches when the preset's
//! number equals the string's parsed value exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumConfig;
use crate::domain_rand::RandomizationConfig;
use crate::error::{Error, Result};
use crate::plant::PlantConfig;
use crate::reward::{RewardConfig, RewardTerm};
use crate::robot::{load_preset, Interval, RobotDescription};

pub const GOLDEN_TABLES: [&str; 3] = ["reward_weights", "randomization", "key_parameters"];

const EMBEDDED: [(&str, &str); 3] = [
    ("reward_weights", include_str!("../golden/reward_weights.toml")),
    ("randomization", include_str!("../golden/randomization.toml")),
    ("key_parameters", include_str!("../golden/key_parameters.toml")),
];

/// Everything a golden table can be checked against, for one robot.
#[derive(Debug, Clone)]
pub struct PresetBundle {
    pub robot: RobotDescription,
    pub reward: RewardConfig,
    pub randomization: RandomizationConfig,
    pub plant: PlantConfig,
    pub curriculum: CurriculumConfig,
}

impl PresetBundle {
    pub fn builtin(name: &str) -> Result<Self> {
        Ok(PresetBundle {
            robot: load_preset(name)?,
            reward: RewardConfig::preset(name)?,
            randomization: RandomizationConfig::preset(name)?,
            plant: PlantConfig::default(),
            curriculum: CurriculumConfig::default(),
        })
    }

    fn value(&self, table: &str, key: &str) -> Option<Value> {
        match table {
            "reward_weights" => RewardTerm::from_id(key).map(|t| Value::Scalar(self.reward.weight(t))),
            "randomization" => self
                .randomization
                .rows()
                .into_iter()
                .find(|(name, _, _)| *name == key)
                .map(|(_, r, _)| Value::Range(r)),
            "key_parameters" => {
                let d = &self.robot;
                let r = &self.reward;
                Some(match key {
                    "height_target_walk" => Value::Scalar(d.height_target_walk),
                    "x_lin_vel_range" => Value::Range(d.cmd_ranges.v_x),
                    "y_lin_vel_range" => Value::Range(d.cmd_ranges.v_y),
                    "yaw_ang_vel_range" => Value::Range(d.cmd_ranges.yaw),
                    "squat_height_range" => Value::Range(d.squat_height_range),
                    "soft_dof_pos_limit_scale" => Value::Scalar(r.soft_pos_scale),
                    "soft_dof_vel_limit_scale" => Value::Scalar(r.soft_vel_scale),
                    "soft_dof_torque_limit_scale" => Value::Scalar(r.soft_torque_scale),
                    "max_contact_force" => Value::Scalar(r.max_contact_force),
                    "least_feet_distance" => Value::Scalar(r.d_min_feet),
                    "least_knee_distance" => Value::Scalar(r.d_min_knee),
                    "most_feet_distance" => Value::Scalar(r.d_max_feet),
                    "most_knee_distance" => Value::Scalar(r.d_max_knee),
                    "clearance_height_target" => Value::Scalar(r.clearance_target),
                    "push_interval" => Value::Scalar(self.plant.push_interval),
                    "upper_pose_resampling_interval" => Value::Scalar(self.curriculum.pose_interval),
                    "command_resampling_interval" => Value::Scalar(self.curriculum.command_interval),
                    _ => return None,
                })
            }
            _ => None,
        }
    }

    /// Keys the preset defines for `table`, so omissions from a golden file
    /// are reported too.
    fn keys(&self, table: &str) -> Vec<String> {
        match table {
            "reward_weights" => RewardTerm::ALL.iter().map(|t| t.id().to_string()).collect(),
            "randomization" => self.randomization.rows().iter().map(|(n, _, _)| n.to_string()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Scalar(f64),
    Range(Interval),
}

impl Value {
    fn render(self) -> String {
        match self {
            Value::Scalar(x) => format!("{x}"),
            Value::Range(r) => format!("[{}, {}]", r.lo(), r.hi()),
        }
    }
}

fn parse_printed(s: &str) -> Option<Value> {
    let t = s.trim();
    if let Some(inner) = t.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        let (a, b) = inner.split_once(',')?;
        return Some(Value::Range(Interval(a.trim().parse().ok()?, b.trim().parse().ok()?)));
    }
    t.parse().ok().map(Value::Scalar)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenCheck {
    pub table: String,
    pub preset: String,
    pub key: String,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSummary {
    pub table: String,
    pub preset: String,
    pub checked: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenReport {
    pub checks: Vec<GoldenCheck>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GoldenCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }

    pub fn summary(&self) -> Vec<TableSummary> {
        let mut m: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        for c in &self.checks {
            let e = m.entry((c.table.clone(), c.preset.clone())).or_default();
            e.0 += 1;
            e.1 += usize::from(!c.ok);
        }
        m.into_iter()
            .map(|((table, preset), (checked, failed))| TableSummary {
                table,
                preset,
                checked,
                failed,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct GoldenFile {
    table: String,
    #[serde(flatten)]
    presets: BTreeMap<String, BTreeMap<String, String>>,
}

fn check_table(name: &str, text: &str, bundles: &BTreeMap<String, PresetBundle>, out: &mut GoldenReport) -> Result<()> {
    let file: GoldenFile = toml::from_str(text).map_err(|e| Error::Config(format!("golden table {name}: {e}")))?;
    if file.table != name {
        return Err(Error::Config(format!("golden file for {name} declares table '{}'", file.table)));
    }
    for (preset, rows) in &file.presets {
        let bundle = bundles
            .get(preset)
            .ok_or_else(|| Error::Config(format!("golden table {name}: no preset '{preset}' to check")))?;
        for (key, printed) in rows {
            let actual = bundle.value(name, key);
            let expected = parse_printed(printed);
            let (ok, actual) = match (actual, expected) {
                (Some(a), Some(e)) => (a == e, a.render()),
                (None, _) => (false, "<no such parameter>".into()),
                (Some(a), None) => (false, a.render()),
            };
            out.checks.push(GoldenCheck {
                table: name.into(),
                preset: preset.clone(),
                key: key.clone(),
                expected: printed.clone(),
                actual,
                ok,
            });
        }
        for key in bundle.keys(name) {
            if !rows.contains_key(&key) {
                out.checks.push(GoldenCheck {
                    table: name.into(),
                    preset: preset.clone(),
                    actual: bundle.value(name, &key).map(Value::render).unwrap_or_default(),
                    expected: "<missing from golden table>".into(),
                    key,
                    ok: false,
                });
            }
        }
    }
    Ok(())
}

fn builtin_bundles() -> Result<BTreeMap<String, PresetBundle>> {
    ["g1", "gr1"]
        .iter()
        .map(|n| Ok((n.to_string(), PresetBundle::builtin(n)?)))
        .collect()
}

/// Checks `bundles` against the golden tables compiled into the crate.
pub fn golden_verify_with(bundles: &BTreeMap<String, PresetBundle>) -> Result<GoldenReport> {
    let mut report = GoldenReport::default();
    for (name, text) in EMBEDDED {
        check_table(name, text, bundles, &mut report)?;
    }
    Ok(report)
}

/// Built-in presets against the embedded golden tables.
pub fn golden_verify() -> Result<GoldenReport> {
    golden_verify_with(&builtin_bundles()?)
}

/// Built-in presets against the golden tables in `dir`. Every table must be
/// present.
pub fn golden_verify_dir(dir: impl AsRef<Path>) -> Result<GoldenReport> {
    let bundles = builtin_bundles()?;
    let mut report = GoldenReport::default();
    for name in GOLDEN_TABLES {
        let path = dir.as_ref().join(format!("{name}.toml"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("golden table {}: {e}", path.display())))?;
        check_table(name, &text, &bundles, &mut report)?;
    }
    Ok(report)
}
