//! Per-episode physical randomization and per-step observation noise.
//!
//! Every draw is uniform over its configured range. Rows described as scaling
//! factors multiply the nominal quantity; all other rows add an offset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{FrameLayout, ObservationFrame};
use crate::robot::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Offset,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Fresh noise on every observation.
    #[default]
    PerStep,
    /// One bias vector drawn at episode start and held.
    PerEpisodeBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationConfig {
    /// N·m added to every computed joint torque.
    pub actuation_offset: Interval,
    /// kg added to the torso.
    pub torso_payload: Interval,
    /// kg added to each hand.
    pub hand_payload: Interval,
    /// m offset of the torso centre of mass, per axis.
    pub com_displacement: Interval,
    pub link_mass_scale: Interval,
    pub friction: Interval,
    pub restitution: Interval,
    pub kp_scale: Interval,
    pub kd_scale: Interval,
    pub init_pos_scale: Interval,
    /// rad added to the initial joint positions.
    pub init_pos_offset: Interval,
    /// m/s push velocity, consumed by the plant's push schedule.
    pub push_vel: Interval,
    pub obs_dof_pos: Interval,
    pub obs_dof_vel: Interval,
    pub obs_ang_vel: Interval,
    pub obs_gravity: Interval,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            actuation_offset: Interval(-0.05, 0.05),
            torso_payload: Interval(-5.00, 10.00),
            hand_payload: Interval(-0.10, 0.30),
            com_displacement: Interval(-0.1, 0.1),
            link_mass_scale: Interval(0.80, 1.20),
            friction: Interval(0.10, 2.00),
            restitution: Interval(0.00, 1.00),
            kp_scale: Interval(0.90, 1.10),
            kd_scale: Interval(0.90, 1.10),
            init_pos_scale: Interval(0.80, 1.20),
            init_pos_offset: Interval(-0.10, 0.10),
            push_vel: Interval(-0.50, 0.50),
            obs_dof_pos: Interval(-0.02, 0.02),
            obs_dof_vel: Interval(-2.00, 2.00),
            obs_ang_vel: Interval(-0.50, 0.50),
            obs_gravity: Interval(-0.05, 0.05),
            noise_mode: NoiseMode::PerStep,
        }
    }
}

impl RandomizationConfig {
    /// The shipped ranges; identical for both robot presets.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "g1" | "gr1" => Ok(Self::default()),
            _ => Err(Error::NotFound(format!("randomization preset '{name}'"))),
        }
    }

    /// Every range collapsed to the neutral value of its row.
    pub fn identity() -> Self {
        let zero = Interval(0.0, 0.0);
        let one = Interval(1.0, 1.0);
        RandomizationConfig {
            actuation_offset: zero,
            torso_payload: zero,
            hand_payload: zero,
            com_displacement: zero,
            link_mass_scale: one,
            friction: one,
            restitution: zero,
            kp_scale: one,
            kd_scale: one,
            init_pos_scale: one,
            init_pos_offset: zero,
            push_vel: zero,
            obs_dof_pos: zero,
            obs_dof_vel: zero,
            obs_ang_vel: zero,
            obs_gravity: zero,
            noise_mode: NoiseMode::PerStep,
        }
    }

    /// `(name, range, kind)` for every row, in table order.
    pub fn rows(&self) -> Vec<(&'static str, Interval, RowKind)> {
        use RowKind::*;
        vec![
            ("actuation_offset", self.actuation_offset, Offset),
            ("torso_payload", self.torso_payload, Offset),
            ("hand_payload", self.hand_payload, Offset),
            ("com_displacement", self.com_displacement, Offset),
            ("link_mass_scale", self.link_mass_scale, Scale),
            ("friction", self.friction, Offset),
            ("restitution", self.restitution, Offset),
            ("kp_scale", self.kp_scale, Scale),
            ("kd_scale", self.kd_scale, Scale),
            ("init_pos_scale", self.init_pos_scale, Scale),
            ("init_pos_offset", self.init_pos_offset, Offset),
            ("push_vel", self.push_vel, Offset),
            ("obs_dof_pos", self.obs_dof_pos, Offset),
            ("obs_dof_vel", self.obs_dof_vel, Offset),
            ("obs_ang_vel", self.obs_ang_vel, Offset),
            ("obs_gravity", self.obs_gravity, Offset),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r, _) in self.rows() {
            if !(r.lo() <= r.hi()) {
                return Err(Error::Config(format!("randomization.{name}: lo <= hi")));
            }
        }
        Ok(())
    }
}

/// Everything drawn once at episode reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRandomization {
    pub actuation_offset: Vec<f64>,
    pub kp_scale: Vec<f64>,
    pub kd_scale: Vec<f64>,
    pub init_pos_scale: Vec<f64>,
    pub init_pos_offset: Vec<f64>,
    pub torso_payload: f64,
    pub hand_payload: f64,
    pub com_displacement: [f64; 3],
    pub link_mass_scale: f64,
    pub friction: f64,
    pub restitution: f64,
    pub push_vel: Interval,
}

impl EpisodeRandomization {
    pub fn identity(n_joints: usize) -> Self {
        EpisodeRandomization {
            actuation_offset: vec![0.0; n_joints],
            kp_scale: vec![1.0; n_joints],
            kd_scale: vec![1.0; n_joints],
            init_pos_scale: vec![1.0; n_joints],
            init_pos_offset: vec![0.0; n_joints],
            torso_payload: 0.0,
            hand_payload: 0.0,
            com_displacement: [0.0; 3],
            link_mass_scale: 1.0,
            friction: 1.0,
            restitution: 0.0,
            push_vel: Interval(0.0, 0.0),
        }
    }

    /// Total body mass after payloads and link scaling.
    pub fn total_mass(&self, body_mass: f64) -> f64 {
        body_mass * self.link_mass_scale + self.torso_payload + 2.0 * self.hand_payload
    }

    /// Initial joint position after scale and offset.
    pub fn initial_position(&self, joint: usize, nominal: f64) -> f64 {
        nominal * self.init_pos_scale[joint] + self.init_pos_offset[joint]
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, r: Interval) -> f64 {
    if r.lo() == r.hi() {
        r.lo()
    } else {
        r.lo() + (r.hi() - r.lo()) * rng.random::<f64>()
    }
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, r: Interval, n: usize) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, r)).collect()
}

pub fn sample_episode<R: Rng + ?Sized>(cfg: &RandomizationConfig, n_joints: usize, rng: &mut R) -> EpisodeRandomization {
    EpisodeRandomization {
        actuation_offset: uniform_vec(rng, cfg.actuation_offset, n_joints),
        kp_scale: uniform_vec(rng, cfg.kp_scale, n_joints),
        kd_scale: uniform_vec(rng, cfg.kd_scale, n_joints),
        init_pos_scale: uniform_vec(rng, cfg.init_pos_scale, n_joints),
        init_pos_offset: uniform_vec(rng, cfg.init_pos_offset, n_joints),
        torso_payload: uniform(rng, cfg.torso_payload),
        hand_payload: uniform(rng, cfg.hand_payload),
        com_displacement: [
            uniform(rng, cfg.com_displacement),
            uniform(rng, cfg.com_displacement),
            uniform(rng, cfg.com_displacement),
        ],
        link_mass_scale: uniform(rng, cfg.link_mass_scale),
        friction: uniform(rng, cfg.friction),
        restitution: uniform(rng, cfg.restitution),
        push_vel: cfg.push_vel,
    }
}

/// Additive observation noise on the `q`, `q̇`, `ω` and `g` slots. Command and
/// last-action slots pass through untouched.
#[derive(Debug, Clone)]
pub struct ObservationNoise {
    cfg: RandomizationConfig,
    layout: FrameLayout,
    bias: Option<Vec<f64>>,
}

impl ObservationNoise {
    pub fn new<R: Rng + ?Sized>(cfg: &RandomizationConfig, layout: FrameLayout, rng: &mut R) -> Self {
        let mut noise = ObservationNoise {
            cfg: cfg.clone(),
            layout,
            bias: None,
        };
        if cfg.noise_mode == NoiseMode::PerEpisodeBias {
            noise.bias = Some(noise.draw(rng));
        }
        noise
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = self.layout;
        let mut v = vec![0.0; l.len()];
        for (range, slots) in [
            (self.cfg.obs_ang_vel, l.omega()),
            (self.cfg.obs_gravity, l.gravity()),
            (self.cfg.obs_dof_pos, l.q()),
            (self.cfg.obs_dof_vel, l.qd()),
        ] {
            for x in &mut v[slots] {
                *x = uniform(rng, range);
            }
        }
        v
    }

    pub fn apply<R: Rng + ?Sized>(&self, frame: &ObservationFrame, rng: &mut R) -> Result<ObservationFrame> {
        if frame.len() != self.layout.len() {
            return Err(Error::shape("frame", self.layout.len(), frame.len()));
        }
        let fresh;
        let noise = match &self.bias {
            Some(b) => b,
            None => {
                fresh = self.draw(rng);
                &fresh
            }
        };
        Ok(ObservationFrame(
            frame.0.iter().zip(noise).map(|(x, n)| x + n).collect(),
        ))
    }
}

/// One-shot per-step noise.
pub fn noisy_observation<R: Rng + ?Sized>(
    frame: &ObservationFrame,
    layout: FrameLayout,
    cfg: &RandomizationConfig,
    rng: &mut R,
) -> Result<ObservationFrame> {
    let per_step = RandomizationConfig {
        noise_mode: NoiseMode::PerStep,
        ..cfg.clone()
    };
    ObservationNoise::new(&per_step, layout, rng).apply(frame, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> FrameLayout {
        FrameLayout { n_joints: 4, n_lower: 2 }
    }

    fn frame() -> ObservationFrame {
        ObservationFrame((0..layout().len()).map(|i| i as f64 * 0.1).collect())
    }

    #[test]
    fn identity_config_is_identity_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_episode(&RandomizationConfig::identity(), 5, &mut rng);
        assert_eq!(r, EpisodeRandomization::identity(5));
    }

    #[test]
    fn seeded_draws_repeat() {
        let cfg = RandomizationConfig::default();
        let a = sample_episode(&cfg, 41, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_episode(&cfg, 41, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let c = sample_episode(&cfg, 41, &mut ChaCha8Rng::seed_from_u64(10));
        assert_ne!(a, c);
    }

    #[test]
    fn draws_stay_in_range() {
        let cfg = RandomizationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = sample_episode(&cfg, 12, &mut rng);
            assert!(r.kp_scale.iter().all(|&x| cfg.kp_scale.contains(x)));
            assert!(r.actuation_offset.iter().all(|&x| cfg.actuation_offset.contains(x)));
            assert!(cfg.torso_payload.contains(r.torso_payload));
            assert!(cfg.friction.contains(r.friction));
        }
    }

    #[test]
    fn zero_width_noise_leaves_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = frame();
        let out = noisy_observation(&f, layout(), &RandomizationConfig::identity(), &mut rng).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn noise_skips_command_and_action_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = layout();
        let f = frame();
        let out = noisy_observation(&f, l, &RandomizationConfig::default(), &mut rng).unwrap();
        assert_eq!(out.0[l.command()], f.0[l.command()]);
        assert_eq!(out.0[l.last_action()], f.0[l.last_action()]);
        assert_ne!(out.0[l.q()], f.0[l.q()]);
    }

    #[test]
    fn noise_bounds_over_many_draws() {
        let cfg = RandomizationConfig::default();
        let l = layout();
        let f = ObservationFrame(vec![0.0; l.len()]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = ObservationNoise::new(&cfg, l, &mut rng);
        let mut max_q: f64 = 0.0;
        let mut max_qd: f64 = 0.0;
        for _ in 0..100_000 {
            let out = noise.apply(&f, &mut rng).unwrap();
            for &x in &out.0[l.q()] {
                assert!(cfg.obs_dof_pos.contains(x));
                max_q = max_q.max(x.abs());
            }
            for &x in &out.0[l.qd()] {
                assert!(cfg.obs_dof_vel.contains(x));
                max_qd = max_qd.max(x.abs());
            }
            for &x in &out.0[l.omega()] {
                assert!(cfg.obs_ang_vel.contains(x));
            }
            for &x in &out.0[l.gravity()] {
                assert!(cfg.obs_gravity.contains(x));
            }
        }
        // The range is actually used, not just respected.
        assert!(max_q > 0.0199 && max_qd > 1.99);
    }

    #[test]
    fn episode_bias_mode_repeats() {
        let cfg = RandomizationConfig {
            noise_mode: NoiseMode::PerEpisodeBias,
            ..RandomizationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = ObservationNoise::new(&cfg, layout(), &mut rng);
        let f = frame();
        assert_eq!(noise.apply(&f, &mut rng).unwrap(), noise.apply(&f, &mut rng).unwrap());
    }

    #[test]
    fn offset_and_scale_rows_are_classified() {
        let rows = RandomizationConfig::default().rows();
        let kinds: Vec<_> = rows.iter().filter(|r| r.2 == RowKind::Scale).map(|r| r.0).collect();
        assert_eq!(kinds, ["link_mass_scale", "kp_scale", "kd_scale", "init_pos_scale"]);
        let r = EpisodeRandomization {
            init_pos_scale: vec![1.1],
            init_pos_offset: vec![0.05],
            ..EpisodeRandomization::identity(1)
        };
        assert!((r.initial_position(0, 0.3) - (0.33 + 0.05)).abs() < 1e-15);
    }
}
