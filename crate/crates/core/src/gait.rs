//! Phase-driven gait scheduling: a single global phase advances at the gait
//! frequency, per-leg offsets stagger the legs, and the duty factor splits
//! each cycle into stance then swing. Landing targets use the classic
//! velocity-proportional heuristic; swing feet follow a per-axis quadratic
//! through lift-off, mid-air, and landing points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::model::NUM_LEGS;
use crate::refsim::Terrain;

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitPattern {
    Trot,
    Pace,
    Bound,
    Gallop,
}

impl GaitPattern {
    /// Phase offsets in leg order FL, FR, RL, RR.
    pub fn offsets(self) -> [f64; NUM_LEGS] {
        match self {
            GaitPattern::Trot => [0.0, PI, PI, 0.0],
            GaitPattern::Pace => [0.0, PI, 0.0, PI],
            GaitPattern::Bound => [0.0, 0.0, PI, PI],
            GaitPattern::Gallop => [0.0, PI / 2.0, PI, 3.0 * PI / 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitConfig {
    pub pattern: GaitPattern,
    /// Strides per second, Hz.
    pub frequency: f64,
    /// Fraction of the cycle each leg spends in stance, (0, 1].
    pub duty_factor: f64,
    /// Swing apex height above the lift-off point, m.
    pub swing_apex: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            pattern: GaitPattern::Trot,
            frequency: 2.0,
            duty_factor: 0.5,
            swing_apex: 0.08,
        }
    }
}

impl GaitConfig {
    pub fn stance_duration(&self) -> f64 {
        self.duty_factor / self.frequency
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.frequency > 0.0) {
            return Err(format!("gait.frequency must be positive, got {}", self.frequency));
        }
        if !(self.duty_factor > 0.0 && self.duty_factor <= 1.0) {
            return Err(format!(
                "gait.duty_factor must be in (0, 1], got {}",
                self.duty_factor
            ));
        }
        Ok(())
    }
}

/// Advances the global phase by one step of `dt`, wrapped to [0, 2 pi).
pub fn phase_step(phase: f64, frequency: f64, dt: f64) -> f64 {
    (phase + TAU * frequency * dt).rem_euclid(TAU)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPhase {
    pub stance: bool,
    /// Position within the current window, [0, 1): stance progress while in
    /// stance, swing progress while in swing.
    pub progress: f64,
}

/// Stance/swing split for one leg: stance iff the offset cycle fraction is
/// below the duty factor.
pub fn leg_phase(phase: f64, offset: f64, duty_factor: f64) -> LegPhase {
    let frac = (phase + offset).rem_euclid(TAU) / TAU;
    if frac < duty_factor {
        LegPhase {
            stance: true,
            progress: frac / duty_factor,
        }
    } else if duty_factor >= 1.0 {
        LegPhase {
            stance: true,
            progress: frac,
        }
    } else {
        LegPhase {
            stance: false,
            progress: (frac - duty_factor) / (1.0 - duty_factor),
        }
    }
}

pub fn contact_schedule(cfg: &GaitConfig, phase: f64) -> [LegPhase; NUM_LEGS] {
    let offsets = cfg.pattern.offsets();
    std::array::from_fn(|leg| leg_phase(phase, offsets[leg], cfg.duty_factor))
}

/// Landing target: half a stance period of travel ahead of the hip's ground
/// projection, height from the terrain under that point.
pub fn raibert_landing(
    hip_world: Vec3<f64>,
    v_com: Vec3<f64>,
    t_stance: f64,
    terrain: &Terrain,
) -> Vec3<f64> {
    let x = hip_world.x + v_com.x * t_stance / 2.0;
    let y = hip_world.y + v_com.y * t_stance / 2.0;
    Vec3::new(x, y, terrain.height(x, y))
}

/// Swing reference at progress `s` in [0, 1]: per-axis quadratic through the
/// lift-off point, a mid-air point (horizontal midpoint, apex above the
/// lift-off height), and the landing target.
pub fn swing_trajectory(p_lift: Vec3<f64>, p_land: Vec3<f64>, apex: f64, s: f64) -> Vec3<f64> {
    let mid = Vec3::new(
        0.5 * (p_lift.x + p_land.x),
        0.5 * (p_lift.y + p_land.y),
        p_lift.z + apex,
    );
    // Lagrange basis on knots s = 0, 1/2, 1.
    let b0 = 2.0 * (s - 0.5) * (s - 1.0);
    let b1 = -4.0 * s * (s - 1.0);
    let b2 = 2.0 * s * (s - 0.5);
    p_lift.scalec(b0) + mid.scalec(b1) + p_land.scalec(b2)
}
