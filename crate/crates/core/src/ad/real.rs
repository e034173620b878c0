//! Scalar abstraction so dynamics, kinematics, and the controller are written
//! once and instantiated both with plain `f64` (reference paths, evaluation,
//! finite differencing) and with tape variables (training).

use super::tape::Var;

/// Scalar that supports the arithmetic the simulation needs. The `*c` methods
/// take plain `f64` coefficients; the tape implementation folds them into
/// local partials instead of materialising constant leaves.
pub trait Real:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    /// Forward value. For diagnostics and hand-offs to non-differentiable
    /// code only; branching on it inside differentiated code introduces
    /// kinks the tape cannot see.
    fn value(self) -> f64;

    fn addc(self, c: f64) -> Self;
    fn subc(self, c: f64) -> Self;
    fn mulc(self, c: f64) -> Self;
    fn divc(self, c: f64) -> Self;

    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    fn elu(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn clamp(self, lo: f64, hi: f64) -> Self;

    /// `max(self, 0)`: clamp with an open top.
    fn max0(self) -> Self {
        self.clamp(0.0, f64::INFINITY)
    }

    fn square(self) -> Self {
        self * self
    }

    /// Inner product; the tape records it as one node.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// Inner product against constant coefficients.
    fn dotc(a: &[Self], w: &[f64]) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn addc(self, c: f64) -> Self {
        self + c
    }
    fn subc(self, c: f64) -> Self {
        self - c
    }
    fn mulc(self, c: f64) -> Self {
        self * c
    }
    fn divc(self, c: f64) -> Self {
        self / c
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn elu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            self.exp() - 1.0
        }
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn dotc(a: &[Self], w: &[f64]) -> Self {
        a.iter().zip(w).map(|(x, c)| x * c).sum()
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn addc(self, c: f64) -> Self {
        self + c
    }
    fn subc(self, c: f64) -> Self {
        self - c
    }
    fn mulc(self, c: f64) -> Self {
        self * c
    }
    fn divc(self, c: f64) -> Self {
        self / c
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn elu(self) -> Self {
        Var::elu(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        Var::clamp(self, lo, hi)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        Var::dot(a, b)
    }
    fn dotc(a: &[Self], w: &[f64]) -> Self {
        Var::dotc(a, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Tape;

    fn poly<R: Real>(x: R) -> R {
        // x^2 * tanh(x) + |x| / 3
        x.square() * x.tanh() + x.abs().divc(3.0)
    }

    #[test]
    fn generic_code_agrees_between_f64_and_tape() {
        let tape = Tape::new();
        for &x in &[0.3, -1.2, 2.0, 0.9] {
            let plain = poly(x);
            let v = tape.var(x);
            let taped = poly(v);
            assert!((plain - taped.value()).abs() < 1e-14);
        }
    }

    #[test]
    fn max0_matches_relu() {
        let tape = Tape::new();
        for &x in &[-2.0, -0.1, 0.0, 0.4, 3.0] {
            assert_eq!(x.max0(), x.max(0.0));
            let v = tape.var(x).max0();
            assert_eq!(v.value(), x.max(0.0));
        }
    }
}
