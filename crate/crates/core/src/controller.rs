//! Scripted lower-body controller that stands in for a trained locomotion
//! policy. It servoes both legs to the joint angles that put the base at the
//! commanded height and leaves velocity tracking to the plant's base model.

use std::sync::Arc;

use crate::kinematics::solve_leg_height;
use crate::observation::{Command, FrameLayout, RobotState};
use crate::plant::TorqueLaw;
use crate::robot::{Interval, RobotDescription};

/// Resolution of the reachable-height scan, metres.
const REACH_STEP: f64 = 5e-4;

#[derive(Debug, Clone)]
pub struct HeightServo {
    desc: Arc<RobotDescription>,
    law: TorqueLaw,
    lower: Vec<usize>,
    reach: Interval,
    /// Velocity feedback folded into the action, seconds.
    pub damping: f64,
}

impl HeightServo {
    pub fn new(desc: Arc<RobotDescription>, law: TorqueLaw) -> Self {
        let reach = reachable_heights(&desc);
        HeightServo {
            lower: desc.lower_indices(),
            desc,
            law,
            reach,
            damping: 0.1,
        }
    }

    /// Base heights the servo can hold with both soles flat.
    pub fn reachable(&self) -> Interval {
        self.reach
    }

    /// Full joint vector with the legs posed for base height `h` (clamped to
    /// the reachable range) and every other joint at its default.
    pub fn desired_pose(&self, h: f64) -> Vec<f64> {
        let desc = &*self.desc;
        let mut q = desc.default_pose();
        let vertical = self.reach.clamp(h) - desc.geometry.pelvis_offset;
        for leg in &desc.legs {
            if let Some((hip, knee, ankle)) = solve_leg_height(desc, leg, vertical) {
                q[leg.hip_pitch] = hip;
                q[leg.knee] = knee;
                q[leg.ankle_pitch] = ankle;
            }
            q[leg.hip_roll] = 0.0;
            q[leg.hip_yaw] = 0.0;
            q[leg.ankle_roll] = 0.0;
        }
        q
    }

    /// Lower-body action for the current tick, in action order.
    pub fn act(&self, cmd: &Command, state: &RobotState) -> Vec<f64> {
        self.act_raw(cmd.h, &state.q, &state.qd)
    }

    /// Same controller read off the newest frame of an observation, so it
    /// can be evaluated as a policy.
    pub fn act_on_frame(&self, frame: &[f64], layout: FrameLayout) -> Vec<f64> {
        self.act_raw(frame[layout.command()][2], &frame[layout.q()], &frame[layout.qd()])
    }

    fn act_raw(&self, h: f64, q: &[f64], qd: &[f64]) -> Vec<f64> {
        let target = self.desired_pose(h);
        self.lower
            .iter()
            .map(|&i| match self.law {
                // The literal law never sees the current position, so the
                // feedback has to live in the action itself.
                TorqueLaw::Literal => self.desc.joints[i].default_pos + (target[i] - q[i]) - self.damping * qd[i],
                TorqueLaw::Conventional => target[i],
            })
            .collect()
    }
}

/// Scans the leg solver for the interval of base heights it can reach.
pub fn reachable_heights(desc: &RobotDescription) -> Interval {
    let g = &desc.geometry;
    let total = g.thigh_len + g.shank_len;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let steps = (total / REACH_STEP).floor() as usize;
    for k in 1..=steps {
        let v = k as f64 * REACH_STEP;
        if desc.legs.iter().all(|leg| solve_leg_height(desc, leg, v).is_some()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Interval(g.pelvis_offset, g.pelvis_offset);
    }
    Interval(lo + g.pelvis_offset, hi + g.pelvis_offset)
}
