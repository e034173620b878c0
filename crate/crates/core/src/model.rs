//! Robot description shared by the reference simulation, the differentiable
//! surrogate, and the controller. All quantities SI: kg, m, s, rad, N.

use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
/// Leg order everywhere: front-left, front-right, rear-left, rear-right.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "RL", "RR"];

/// +1 for left legs, -1 for right; scales lateral offsets.
pub fn side_sign(leg: usize) -> f64 {
    if leg % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    /// Base mass, kg.
    pub mass: f64,
    /// Body-frame inertia diagonal (roll, pitch, yaw), kg m^2.
    pub inertia: [f64; 3],
    /// World gravity, m/s^2.
    pub gravity: [f64; 3],
    /// Hip x offset from the base origin (front positive), m.
    pub half_length: f64,
    /// Hip y offset (left positive), m.
    pub half_width: f64,
    /// Abduction link lateral length, m.
    pub link_hip: f64,
    /// Thigh length, m.
    pub link_thigh: f64,
    /// Calf length, m.
    pub link_calf: f64,
    /// Joint PD gains, N m / rad and N m s / rad.
    pub kp: f64,
    pub kd: f64,
    /// Per-leg default joint angles (abduction, hip pitch, knee), rad.
    pub q_default_leg: [f64; 3],
    /// Reflected rotor+link inertia per joint, kg m^2.
    pub reflected_inertia: f64,
    /// Per-leg joint limits, rad.
    pub joint_lower: [f64; 3],
    pub joint_upper: [f64; 3],
}

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel {
            mass: 9.0,
            inertia: [0.07, 0.26, 0.24],
            gravity: [0.0, 0.0, -9.81],
            half_length: 0.19,
            half_width: 0.11,
            link_hip: 0.08,
            link_thigh: 0.21,
            link_calf: 0.21,
            kp: 40.0,
            kd: 1.0,
            q_default_leg: [0.0, 0.8, -1.6],
            reflected_inertia: 0.06,
            joint_lower: [-1.0, -1.0, -2.7],
            joint_upper: [1.0, 2.6, -0.45],
        }
    }
}

impl RobotModel {
    pub fn inertia_mat(&self) -> Mat3 {
        Mat3::diag(self.inertia[0], self.inertia[1], self.inertia[2])
    }

    pub fn inertia_inv(&self) -> Mat3 {
        Mat3::diag(
            1.0 / self.inertia[0],
            1.0 / self.inertia[1],
            1.0 / self.inertia[2],
        )
    }

    pub fn gravity_vec(&self) -> Vec3<f64> {
        Vec3::new(self.gravity[0], self.gravity[1], self.gravity[2])
    }

    /// Hip (abduction axis) origin in the body frame.
    pub fn hip_offset(&self, leg: usize) -> Vec3<f64> {
        let sx = if leg < 2 { 1.0 } else { -1.0 };
        Vec3::new(
            sx * self.half_length,
            side_sign(leg) * self.half_width,
            0.0,
        )
    }

    pub fn q_default(&self) -> [f64; NUM_JOINTS] {
        let mut q = [0.0; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            q[leg * 3..leg * 3 + 3].copy_from_slice(&self.q_default_leg);
        }
        q
    }

    /// Standing base height when every leg holds its default angles on flat
    /// ground (foot at the ground plane).
    pub fn default_stand_height(&self) -> f64 {
        let foot = crate::kinematics::leg_fk(self, 0, self.q_default_leg);
        -foot.z
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err(format!("robot.mass must be positive, got {}", self.mass));
        }
        for (i, &v) in self.inertia.iter().enumerate() {
            if !(v > 0.0) {
                return Err(format!("robot.inertia[{i}] must be positive, got {v}"));
            }
        }
        for v in [self.link_thigh, self.link_calf] {
            if !(v > 0.0) {
                return Err("robot link lengths must be positive".into());
            }
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0) {
            return Err("robot.kp and robot.kd must be non-negative".into());
        }
        if !(self.reflected_inertia > 0.0) {
            return Err("robot.reflected_inertia must be positive".into());
        }
        for j in 0..3 {
            if !(self.joint_lower[j] < self.joint_upper[j]) {
                return Err(format!(
                    "robot joint limit {j}: lower {} not below upper {}",
                    self.joint_lower[j], self.joint_upper[j]
                ));
            }
            if self.q_default_leg[j] < self.joint_lower[j]
                || self.q_default_leg[j] > self.joint_upper[j]
            {
                return Err(format!(
                    "robot.q_default_leg[{j}] = {} outside joint limits",
                    self.q_default_leg[j]
                ));
            }
        }
        Ok(())
    }
}
