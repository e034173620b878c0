//! Benchmark environments: the linear double integrator and quadruped
//! velocity tracking. Environments own episode bookkeeping (reset, step
//! counting, termination) and expose both a plain stepping path for
//! policy-gradient training and evaluation, and the snapshots the
//! differentiable trainer needs to rebuild each control step on a tape.

pub mod double_integrator;
pub mod quadruped;

pub use double_integrator::{DiDynamics, DiEnv};
pub use quadruped::{QuadEnv, TickInputs, TickOutcome};
