//! Batch drivers: scripted evaluation over many environments, sampler
//! distribution checks and per-tick reward dumps.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::HeightServo;
use crate::curriculum::{cdf, sample_rho_prime, CurriculumConfig, Scheduler};
use crate::domain_rand::{sample_episode, RandomizationConfig};
use crate::error::{Error, Result};
use crate::gateway::{run_session, EpisodeMetrics, MetricAccumulator, Script, SessionConfig};
use crate::observation::{assemble_frame, FrameLayout, ObservationStack};
use crate::plant::{is_terminated, ActionCommand, PerfectTrackingPlant, Plant, PlantConfig, SurrogatePlant};
use crate::reward::RewardTerm;
use crate::robot::{load_robot, RobotDescription};
use crate::stats::{ks_statistic, mean_sd, MeanSd};
use crate::symmetry::{symmetry_losses, MirrorSpec};

/// Metric rows of the evaluation table, in order.
pub const METRIC_COLUMNS: [&str; 5] = ["Lin. Vel Error", "Ang. Vel Error", "Height Error", "symmetry loss", "Living Time"];
const METRIC_UNITS: [&str; 5] = ["m/s", "rad/s", "m", "-", "s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    #[default]
    Surrogate,
    /// Follows every command exactly.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub robot: String,
    pub n_envs: usize,
    pub seconds: f64,
    pub rho_a: f64,
    pub seed: u64,
    pub plant_kind: PlantKind,
    pub plant: PlantConfig,
    pub randomization: RandomizationConfig,
    pub curriculum: CurriculumConfig,
    /// Seconds between observation samples for the symmetry loss.
    pub symmetry_every: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            robot: "g1".into(),
            n_envs: 1000,
            seconds: 20.0,
            rho_a: 1.0,
            seed: 0,
            plant_kind: PlantKind::Surrogate,
            plant: PlantConfig::default(),
            randomization: RandomizationConfig::default(),
            curriculum: CurriculumConfig::default(),
            symmetry_every: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 {
            return Err(Error::Config("n_envs must be at least 1".into()));
        }
        if !(self.seconds > 0.0) || !(self.symmetry_every > 0.0) {
            return Err(Error::Config("seconds and symmetry_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_a) {
            return Err(Error::Config("rho_a must lie in [0, 1]".into()));
        }
        self.plant.validate()?;
        self.randomization.validate()?;
        self.curriculum.validate()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for environment `env` of a batch.
pub fn env_seed(seed: u64, env: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ env as u64)
}

/// One scripted episode. Each tick's command is scored against the state it
/// produces.
pub fn eval_episode(desc: &Arc<RobotDescription>, cfg: &EvalConfig, env: usize) -> Result<EpisodeMetrics> {
    let seed = env_seed(cfg.seed, env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plant: Box<dyn Plant> = match cfg.plant_kind {
        PlantKind::Surrogate => {
            let rand = sample_episode(&cfg.randomization, desc.n_joints(), &mut rng);
            Box::new(
                SurrogatePlant::new(Arc::clone(desc), cfg.plant.clone(), splitmix64(seed ^ 1))?
                    .with_randomization(rand)?,
            )
        }
        PlantKind::Perfect => Box::new(PerfectTrackingPlant::new(Arc::clone(desc), cfg.plant.clone())?),
    };
    let hz = cfg.plant.control_hz;
    let mut sched = Scheduler::new(Arc::clone(desc), cfg.curriculum.clone(), hz, splitmix64(seed ^ 2))?;
    let servo = HeightServo::new(Arc::clone(desc), cfg.plant.torque_law);
    let layout = FrameLayout::of(desc);
    let spec = MirrorSpec::new(desc);
    let sym_period = (cfg.symmetry_every * hz).round().max(1.0) as u64;

    let mut state = plant.reset();
    let mut acc = MetricAccumulator::default();
    let mut stack: Option<ObservationStack> = None;
    let mut samples = Vec::new();
    let ticks = (cfg.seconds * hz).round() as u64;
    for k in 0..ticks {
        let st = sched.tick(k, cfg.rho_a)?;
        let frame = assemble_frame(desc, &st.command, &state)?;
        match stack.as_mut() {
            Some(s) => s.push(frame)?,
            None => stack = Some(ObservationStack::new(frame)),
        }
        if k % sym_period == sym_period - 1 {
            samples.extend(stack.clone());
        }
        let action = ActionCommand {
            lower_targets: servo.act(&st.command, &state),
            upper_targets: st.upper,
        };
        state = plant.step(&state, &action, &st.command)?;
        let term = is_terminated(&state, plant.config());
        acc.push(&st.command, state.base_vel, state.base_yaw_rate, state.base_height, state.t, term.terminated);
        if term.terminated {
            break;
        }
    }
    let mut m = acc.finish(cfg.seconds)?;
    let policy = |x: &[f64]| servo.act_on_frame(&x[x.len() - layout.len()..], layout);
    let value = |_: &[f64]| 0.0;
    m.symmetry_loss = Some(symmetry_losses(&policy, &value, &samples, &spec, false)?.actor);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub unit: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub robot: String,
    pub n_envs: usize,
    pub seconds: f64,
    pub rho_a: f64,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

impl EvalTable {
    pub fn row(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn columns(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "robot {}  envs {}  horizon {} s  rho_a {}  seed {}\n",
            self.robot, self.n_envs, self.seconds, self.rho_a, self.seed
        );
        let _ = writeln!(s, "{:<24} {:>22}", "Metrics", self.robot);
        for r in &self.rows {
            let label = format!("{} ({})", r.name, r.unit);
            let _ = writeln!(s, "{label:<24} {:>12.3} ± {:<7.3}", r.mean, r.sd);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,unit,mean,sd\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.unit, r.mean, r.sd);
        }
        s
    }
}

/// Runs `n_envs` independent episodes in parallel and tabulates mean ± sd of
/// every metric. Results depend only on the config, not on thread count.
pub fn eval_batch(cfg: &EvalConfig) -> Result<(EvalTable, Vec<EpisodeMetrics>)> {
    cfg.validate()?;
    let desc = Arc::new(load_robot(&cfg.robot)?);
    let per_env: Vec<EpisodeMetrics> = (0..cfg.n_envs)
        .into_par_iter()
        .map(|env| eval_episode(&desc, cfg, env))
        .collect::<Result<_>>()?;
    let col = |f: fn(&EpisodeMetrics) -> f64| -> MeanSd { mean_sd(&per_env.iter().map(f).collect::<Vec<_>>()) };
    let stats = [
        col(|m| m.lin_vel_err),
        col(|m| m.ang_vel_err),
        col(|m| m.height_err),
        col(|m| m.symmetry_loss.unwrap_or(f64::NAN)),
        col(|m| m.living_time),
    ];
    let rows = METRIC_COLUMNS
        .iter()
        .zip(METRIC_UNITS)
        .zip(stats)
        .map(|((name, unit), s)| MetricRow {
            name: name.to_string(),
            unit: unit.to_string(),
            mean: s.mean,
            sd: s.sd,
        })
        .collect();
    let table = EvalTable {
        robot: desc.name.clone(),
        n_envs: cfg.n_envs,
        seconds: cfg.seconds,
        rho_a: cfg.rho_a,
        seed: cfg.seed,
        rows,
    };
    Ok((table, per_env))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistRow {
    pub rho_a: f64,
    /// KS distance of the draws from the sampler's own CDF.
    pub ks: f64,
    /// KS distance of the draws from the uniform CDF.
    pub ks_uniform: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistReport {
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<DistRow>,
}

pub const MIN_DIST_SAMPLES: usize = 10_000;

/// Draws `samples` values of `ρ'` per level and measures them against the
/// analytic CDF and against the uniform distribution.
pub fn dist_check(rhos: &[f64], samples: usize, seed: u64) -> Result<DistReport> {
    if samples < MIN_DIST_SAMPLES {
        return Err(Error::Config(format!("dist-check needs at least {MIN_DIST_SAMPLES} samples")));
    }
    if let Some(r) = rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("rho_a {r} outside [0, 1]")));
    }
    let rows = rhos
        .par_iter()
        .enumerate()
        .map(|(i, &rho)| {
            let mut rng = ChaCha8Rng::seed_from_u64(env_seed(seed, i));
            let mut xs: Vec<f64> = (0..samples)
                .map(|_| sample_rho_prime(rho, rand::Rng::random(&mut rng)))
                .collect();
            let mean = crate::stats::kahan_sum(&xs) / samples as f64;
            let ks = ks_statistic(&mut xs, |x| cdf(rho, x));
            let ks_uniform = ks_statistic(&mut xs, |x| x.clamp(0.0, 1.0));
            DistRow {
                rho_a: rho,
                ks,
                ks_uniform,
                mean,
            }
        })
        .collect();
    Ok(DistReport { samples, seed, rows })
}

/// Runs a scripted session and writes one CSV row per tick with the total
/// and every raw reward term.
pub fn reward_dump(cfg: &SessionConfig, script: &Script, out: &mut dyn Write) -> Result<usize> {
    let cfg = SessionConfig {
        record_terms: true,
        ..cfg.clone()
    };
    let session = run_session(&cfg, script, None)?;
    let mut header = String::from("tick,t,total");
    for t in RewardTerm::ALL {
        header.push(',');
        header.push_str(t.id());
    }
    writeln!(out, "{header}")?;
    for r in &session.records {
        let mut line = format!("{},{},{}", r.tick, r.t, r.reward);
        for v in r.terms.as_deref().unwrap_or_default() {
            let _ = write!(line, ",{v}");
        }
        writeln!(out, "{line}")?;
    }
    Ok(session.records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_plant_has_zero_tracking_error() {
        let cfg = EvalConfig {
            n_envs: 8,
            seconds: 10.0,
            plant_kind: PlantKind::Perfect,
            ..EvalConfig::default()
        };
        let (table, _) = eval_batch(&cfg).unwrap();
        for name in ["Lin. Vel Error", "Ang. Vel Error", "Height Error"] {
            let r = table.row(name).unwrap();
            assert_eq!((r.mean, r.sd), (0.0, 0.0), "{name}");
        }
        assert_eq!(table.row("Living Time").unwrap().mean, 10.0);
    }

    #[test]
    fn env_seeds_differ() {
        assert_ne!(env_seed(0, 0), env_seed(0, 1));
        assert_ne!(env_seed(0, 1), env_seed(1, 0));
    }

    #[test]
    fn dist_check_rejects_small_samples() {
        assert!(dist_check(&[0.5], 100, 0).is_err());
        assert!(dist_check(&[1.5], 20_000, 0).is_err());
    }
}
