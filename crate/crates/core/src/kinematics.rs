//! Planar two-link leg kinematics shared by the plant, the reward terms and
//! the scripted controller.
//!
//! Conventions: the thigh angle from vertical is the hip pitch, the shank angle
//! is hip pitch + knee. Positive knee is flexion; negative hip pitch swings the
//! thigh forward. Hip roll tilts the whole leg plane sideways. Positions are in
//! the yaw-aligned base frame (x forward, y left); heights are measured from the
//! sole upward.

use crate::robot::{LegChain, RobotDescription, Side};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPose {
    /// Hip-to-sole distance measured along the leg plane.
    pub extension: f64,
    /// Vertical hip-to-sole distance.
    pub vertical: f64,
    pub foot_x: f64,
    pub foot_y: f64,
    pub knee_x: f64,
    pub knee_y: f64,
    /// Height of the knee above the sole.
    pub knee_z: f64,
    /// Sole attitude: pitch, roll and yaw relative to the ground.
    pub foot_pitch: f64,
    pub foot_roll: f64,
    pub foot_yaw: f64,
}

pub fn side_sign(side: Side) -> f64 {
    match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
        Side::Center => 0.0,
    }
}

pub fn leg_pose(desc: &RobotDescription, q: &[f64], leg: &LegChain) -> LegPose {
    let g = &desc.geometry;
    let thigh = q[leg.hip_pitch];
    let shank = thigh + q[leg.knee];
    let roll = q[leg.hip_roll];
    let extension = g.thigh_len * thigh.cos() + g.shank_len * shank.cos();
    let hip_y = side_sign(leg.side) * g.hip_half_width;
    let thigh_vertical = g.thigh_len * thigh.cos();
    LegPose {
        extension,
        vertical: extension * roll.cos(),
        foot_x: -(g.thigh_len * thigh.sin() + g.shank_len * shank.sin()),
        foot_y: hip_y + extension * roll.sin(),
        knee_x: -g.thigh_len * thigh.sin(),
        knee_y: hip_y + thigh_vertical * roll.sin(),
        knee_z: (extension - thigh_vertical) * roll.cos(),
        foot_pitch: shank + q[leg.ankle_pitch],
        foot_roll: roll + q[leg.ankle_roll],
        foot_yaw: q[leg.hip_yaw],
    }
}

/// Base height implied by a joint configuration: mean vertical leg extension
/// plus the pelvis offset.
pub fn base_height(desc: &RobotDescription, q: &[f64]) -> f64 {
    let [l, r] = desc.legs.map(|leg| leg_pose(desc, q, &leg).vertical);
    desc.geometry.pelvis_offset + 0.5 * (l + r)
}

/// Corner points `(x, y, z)` of a `length × width` sole in the base frame,
/// given the sole centre and attitude. Order: front-left, front-right,
/// rear-left, rear-right.
pub fn foot_corners(length: f64, width: f64, center: [f64; 3], pose: &LegPose) -> [[f64; 3]; 4] {
    let hl = 0.5 * length;
    let hw = 0.5 * width;
    let (sy, cy) = pose.foot_yaw.sin_cos();
    let local = [(hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)];
    local.map(|(lx, ly)| {
        [
            center[0] + cy * lx - sy * ly,
            center[1] + sy * lx + cy * ly,
            center[2] - lx * pose.foot_pitch.sin() + ly * pose.foot_roll.sin(),
        ]
    })
}

/// Joint angles `(hip_pitch, knee, ankle_pitch)` that place the hip `vertical`
/// metres above a flat sole, keeping the foot under the hip where joint limits
/// allow. Returns `None` when the height is out of reach.
pub fn solve_leg_height(desc: &RobotDescription, leg: &LegChain, vertical: f64) -> Option<(f64, f64, f64)> {
    let g = &desc.geometry;
    let total = g.thigh_len + g.shank_len;
    if !(vertical > 0.0) || vertical > total {
        return None;
    }
    let j = &desc.joints;
    let knee_max = j[leg.knee].pos_max;
    let hip_min = j[leg.hip_pitch].pos_min;
    // The sole stays flat, so the ankle cancels the shank angle.
    let shank_max = -j[leg.ankle_pitch].pos_min;

    let beta = (vertical / total).acos();
    let (thigh_beta, shank_beta) = if beta <= shank_max {
        (beta, beta)
    } else {
        let shank_beta = shank_max;
        let c = (vertical - g.shank_len * shank_beta.cos()) / g.thigh_len;
        if !(-1.0..=1.0).contains(&c) {
            return None;
        }
        (c.acos(), shank_beta)
    };
    let knee = thigh_beta + shank_beta;
    let hip = -thigh_beta;
    if knee > knee_max || hip < hip_min {
        return None;
    }
    Some((hip, knee, -shank_beta))
}
