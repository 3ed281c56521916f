//! Reflection through the robot's x-z plane and the symmetry losses built on
//! it.
//!
//! Joint vectors are permuted left/right with per-joint signs. Body rates map
//! `(ω_x, ω_y, ω_z) → (-ω_x, ω_y, -ω_z)`, projected gravity `(g_x, -g_y, g_z)`,
//! commands `(v_x, -ω_yaw, h)` and base velocity `(v_x, -v_y, v_z)`.
//!
//! The actor loss compares `mirror(π(o))` with `π(mirror(o))`, so a policy that
//! respects the reflection scores exactly zero. Setting `unmirrored_reference`
//! compares `π(o)` with `π(mirror(o))` directly instead.

use crate::error::{Error, Result};
use crate::observation::{Command, FrameLayout, ObservationFrame, ObservationStack, RobotState};
use crate::robot::{MirrorPermutation, RobotDescription};

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorSpec {
    pub joints: MirrorPermutation,
    pub lower: MirrorPermutation,
    pub omega_signs: [f64; 3],
    pub gravity_signs: [f64; 3],
    pub command_signs: [f64; 3],
    pub base_vel_signs: [f64; 3],
    pub layout: FrameLayout,
}

fn signed<const N: usize>(x: [f64; N], s: [f64; N]) -> [f64; N] {
    std::array::from_fn(|i| s[i] * x[i])
}

impl MirrorSpec {
    pub fn new(desc: &RobotDescription) -> Self {
        MirrorSpec {
            joints: desc.mirror_index_permutation(),
            lower: desc.lower_mirror_permutation(),
            omega_signs: [-1.0, 1.0, -1.0],
            gravity_signs: [1.0, -1.0, 1.0],
            command_signs: [1.0, -1.0, 1.0],
            base_vel_signs: [1.0, -1.0, 1.0],
            layout: FrameLayout::of(desc),
        }
    }

    pub fn mirror_frame(&self, frame: &ObservationFrame) -> Result<ObservationFrame> {
        let l = self.layout;
        if frame.len() != l.len() {
            return Err(Error::shape("frame", l.len(), frame.len()));
        }
        let x = frame.as_slice();
        let mut out = Vec::with_capacity(l.len());
        for (range, signs) in [
            (l.command(), self.command_signs),
            (l.omega(), self.omega_signs),
            (l.gravity(), self.gravity_signs),
        ] {
            out.extend(x[range].iter().zip(signs).map(|(v, s)| s * v));
        }
        out.extend(self.joints.apply(&x[l.q()]));
        out.extend(self.joints.apply(&x[l.qd()]));
        out.extend(self.lower.apply(&x[l.last_action()]));
        Ok(ObservationFrame(out))
    }

    pub fn mirror_stack(&self, stack: &ObservationStack) -> Result<ObservationStack> {
        if stack.frame_len() != self.layout.len() {
            return Err(Error::shape("frame", self.layout.len(), stack.frame_len()));
        }
        Ok(stack.map_frames(|f| self.mirror_frame(f).expect("length checked")))
    }

    pub fn mirror_command(&self, cmd: &Command) -> Command {
        let [v, w, h] = signed(cmd.as_array(), self.command_signs);
        Command::new(v, w, h)
    }

    /// Mirrors a lower-body action vector.
    pub fn mirror_action(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.lower.len() {
            return Err(Error::shape("action", self.lower.len(), a.len()));
        }
        Ok(self.lower.apply(a))
    }

    /// Mirrors a full plant state: joints, base motion, and per-foot data with
    /// the two feet exchanged.
    pub fn mirror_state(&self, s: &RobotState) -> Result<RobotState> {
        let n = self.joints.len();
        for (what, len) in [("q", s.q.len()), ("qd", s.qd.len()), ("torque", s.torque.len())] {
            if len != n {
                return Err(Error::shape(what, n, len));
            }
        }
        let swap = |v: &Vec<[f64; 3]>| -> Vec<[f64; 3]> { v.iter().rev().map(|p| [p[0], -p[1], p[2]]).collect() };
        Ok(RobotState {
            t: s.t,
            q: self.joints.apply(&s.q),
            qd: self.joints.apply(&s.qd),
            omega_body: signed(s.omega_body, self.omega_signs),
            gravity_proj: signed(s.gravity_proj, self.gravity_signs),
            base_height: s.base_height,
            base_vel: signed(s.base_vel, self.base_vel_signs),
            base_yaw_rate: -s.base_yaw_rate,
            tilt: [-s.tilt[0], s.tilt[1]],
            tilt_rate: [-s.tilt_rate[0], s.tilt_rate[1]],
            base_xy: [s.base_xy[0], -s.base_xy[1]],
            yaw: -s.yaw,
            foot_contact: s.foot_contact.iter().rev().copied().collect(),
            foot_force_z: s.foot_force_z.iter().rev().copied().collect(),
            foot_force_xy: s.foot_force_xy.iter().rev().map(|f| [f[0], -f[1]]).collect(),
            foot_pos: swap(&s.foot_pos),
            foot_vel: swap(&s.foot_vel),
            knee_pos: swap(&s.knee_pos),
            last_action: self.mirror_action(&s.last_action)?,
            torque: self.joints.apply(&s.torque),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: ObservationStack,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: ObservationStack,
}

/// Returns the transition and its reflection. The reward is copied unchanged.
pub fn augment_transition(t: &Transition, spec: &MirrorSpec) -> Result<(Transition, Transition)> {
    let mirrored = Transition {
        obs: spec.mirror_stack(&t.obs)?,
        action: spec.mirror_action(&t.action)?,
        reward: t.reward,
        next_obs: spec.mirror_stack(&t.next_obs)?,
    };
    Ok((t.clone(), mirrored))
}

/// Rollout buffer that stores every transition together with its reflection.
#[derive(Debug, Clone, Default)]
pub struct RolloutStorage {
    pub transitions: Vec<Transition>,
}

impl RolloutStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn add_augmented(&mut self, batch: &[Transition], spec: &MirrorSpec) -> Result<()> {
        self.transitions.reserve(2 * batch.len());
        for t in batch {
            let (a, b) = augment_transition(t, spec)?;
            self.transitions.push(a);
            self.transitions.push(b);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryLosses {
    pub actor: f64,
    pub critic: f64,
}

/// Actor and critic symmetry losses over a batch of observation stacks. The
/// callables receive flattened stacks.
pub fn symmetry_losses(
    policy: &dyn Fn(&[f64]) -> Vec<f64>,
    value: &dyn Fn(&[f64]) -> f64,
    batch: &[ObservationStack],
    spec: &MirrorSpec,
    unmirrored_reference: bool,
) -> Result<SymmetryLosses> {
    if batch.is_empty() {
        return Ok(SymmetryLosses { actor: 0.0, critic: 0.0 });
    }
    let n_out = spec.lower.len();
    let mut actor = 0.0;
    let mut critic = 0.0;
    for stack in batch {
        let x = stack.flatten();
        let xm = spec.mirror_stack(stack)?.flatten();
        let a = policy(&x);
        let am = policy(&xm);
        if a.len() != n_out {
            return Err(Error::shape("policy output", n_out, a.len()));
        }
        if am.len() != n_out {
            return Err(Error::shape("policy output", n_out, am.len()));
        }
        let reference = if unmirrored_reference { a } else { spec.lower.apply(&a) };
        actor += reference.iter().zip(&am).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n_out as f64;
        let d = value(&x) - value(&xm);
        critic += d * d;
    }
    let n = batch.len() as f64;
    Ok(SymmetryLosses {
        actor: actor / n,
        critic: critic / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::assemble_frame;
    use crate::robot::load_preset;

    #[test]
    fn command_mirror_example() {
        let desc = load_preset("g1").unwrap();
        let spec = MirrorSpec::new(&desc);
        assert_eq!(spec.mirror_command(&Command::new(0.5, 0.3, 0.74)), Command::new(0.5, -0.3, 0.74));
    }

    #[test]
    fn default_stance_is_fixed_point() {
        let desc = load_preset("g1").unwrap();
        let spec = MirrorSpec::new(&desc);
        let n = desc.n_joints();
        let state = RobotState {
            t: 0.0,
            q: desc.default_pose(),
            qd: vec![0.0; n],
            omega_body: [0.0, 0.3, 0.0],
            gravity_proj: [0.0, 0.0, -1.0],
            base_height: 0.74,
            base_vel: [0.2, 0.0, 0.0],
            base_yaw_rate: 0.0,
            tilt: [0.0; 2],
            tilt_rate: [0.0; 2],
            base_xy: [0.0; 2],
            yaw: 0.0,
            foot_contact: vec![true; 2],
            foot_force_z: vec![0.0; 2],
            foot_force_xy: vec![[0.0; 2]; 2],
            foot_pos: vec![[0.0; 3]; 2],
            foot_vel: vec![[0.0; 3]; 2],
            knee_pos: vec![[0.0; 3]; 2],
            last_action: desc.lower_indices().iter().map(|&i| desc.joints[i].default_pos).collect(),
            torque: vec![0.0; n],
        };
        let f = assemble_frame(&desc, &Command::new(0.4, 0.0, 0.7), &state).unwrap();
        assert_eq!(spec.mirror_frame(&f).unwrap(), f);
    }

    #[test]
    fn wrong_output_shape_is_rejected() {
        let desc = load_preset("g1").unwrap();
        let spec = MirrorSpec::new(&desc);
        let stack = ObservationStack::new(ObservationFrame(vec![0.0; spec.layout.len()]));
        let policy = |_: &[f64]| vec![0.0; 3];
        let value = |_: &[f64]| 0.0;
        assert!(matches!(
            symmetry_losses(&policy, &value, &[stack], &spec, false),
            Err(Error::Shape { .. })
        ));
    }
}
