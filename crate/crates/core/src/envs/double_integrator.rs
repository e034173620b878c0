//! Double integrator: position/velocity state driven by a scalar
//! acceleration, quadratic stage and terminal costs. Exactly linear, so the
//! optimal controller is available in closed form for comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::Real;
use crate::config::DiConfig;

/// Dynamics and cost coefficients, shared by every trainer.
#[derive(Debug, Clone, Copy)]
pub struct DiDynamics {
    pub dt: f64,
    pub horizon: usize,
    pub q_diag: [f64; 2],
    pub qf_diag: [f64; 2],
    pub r: f64,
}

impl DiDynamics {
    pub fn from_config(cfg: &DiConfig) -> DiDynamics {
        DiDynamics {
            dt: cfg.dt,
            horizon: cfg.horizon,
            q_diag: cfg.q_diag,
            qf_diag: cfg.qf_diag,
            r: cfg.r,
        }
    }

    /// x' = A x + B u with A = [[1, dt], [0, 1]], B = [dt^2/2, dt].
    pub fn step<R: Real>(&self, x: [R; 2], u: R) -> [R; 2] {
        [
            x[0] + x[1].mulc(self.dt) + u.mulc(0.5 * self.dt * self.dt),
            x[1] + u.mulc(self.dt),
        ]
    }

    pub fn stage_cost<R: Real>(&self, x: [R; 2], u: R) -> R {
        x[0].square().mulc(self.q_diag[0])
            + x[1].square().mulc(self.q_diag[1])
            + u.square().mulc(self.r)
    }

    pub fn terminal_cost<R: Real>(&self, x: [R; 2]) -> R {
        x[0].square().mulc(self.qf_diag[0]) + x[1].square().mulc(self.qf_diag[1])
    }

    /// Initial states are drawn uniformly from [-2, 2] x [-1, 1].
    pub fn sample_x0(rng: &mut ChaCha8Rng) -> [f64; 2] {
        [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)]
    }

    /// Total cost of rolling a feedback policy out over the full horizon.
    pub fn rollout_cost(&self, mut policy: impl FnMut(&[f64; 2]) -> f64, x0: [f64; 2]) -> f64 {
        let mut x = x0;
        let mut cost = 0.0;
        for _ in 0..self.horizon {
            let u = policy(&x);
            cost += self.stage_cost(x, u);
            x = self.step(x, u);
        }
        cost + self.terminal_cost(x)
    }
}

/// Episodic wrapper with reset/step bookkeeping for the sampled trainers.
#[derive(Debug, Clone)]
pub struct DiEnv {
    pub dynamics: DiDynamics,
    pub x: [f64; 2],
    pub k: usize,
    rng: ChaCha8Rng,
}

impl DiEnv {
    pub fn new(dynamics: DiDynamics, seed: u64) -> DiEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DiDynamics::sample_x0(&mut rng);
        DiEnv {
            dynamics,
            x,
            k: 0,
            rng,
        }
    }

    pub fn reset(&mut self) {
        self.x = DiDynamics::sample_x0(&mut self.rng);
        self.k = 0;
    }

    /// Applies one control. Returns (cost, done); the final step folds the
    /// terminal cost into its stage cost.
    pub fn step(&mut self, u: f64) -> (f64, bool) {
        assert!(self.k < self.dynamics.horizon, "stepping a finished episode");
        let mut cost = self.dynamics.stage_cost(self.x, u);
        self.x = self.dynamics.step(self.x, u);
        self.k += 1;
        let done = self.k == self.dynamics.horizon;
        if done {
            cost += self.dynamics.terminal_cost(self.x);
        }
        (cost, done)
    }
}
