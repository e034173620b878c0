//! Training quadruped locomotion policies through a differentiable
//! single-rigid-body surrogate that is re-anchored to a non-differentiable
//! whole-body reference simulation at every control step.
//!
//! Layering, bottom up:
//! - [`ad`]: reverse-mode tape, scalar variables, finite-difference checking
//! - [`math`]: small fixed-size vector/quaternion algebra, generic over [`ad::Real`]
//! - [`kinematics`] / [`gait`]: leg FK, foot Jacobians, phase-based schedules
//! - [`surrogate`]: differentiable base dynamics driven by ground reaction forces
//! - [`refsim`]: plain-`f64` whole-body reference simulation (never on a tape)
//! - [`policy`] / [`obs`] / [`loss`]: MLP controller, observation packing, tracking loss
//! - [`envs`] / [`trainers`]: double-integrator and quadruped tasks; analytic
//!   first-order training, PPO, and finite-horizon LQR
//! - [`config`] / [`runner`] / [`metrics`] / [`gradcheck`]: experiment plumbing

/// Tape scalar storage type. `f64` by default; `f32` with the
/// `single-precision` feature. Reference-simulation and optimizer state stay
/// `f64` regardless.
#[cfg(not(feature = "single-precision"))]
pub type Fp = f64;
#[cfg(feature = "single-precision")]
pub type Fp = f32;

pub mod ad;
pub mod align;
pub mod config;
pub mod envs;
pub mod gait;
pub mod gradcheck;
pub mod kinematics;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod obs;
pub mod policy;
pub mod refsim;
pub mod runner;
pub mod surrogate;
pub mod trainers;
