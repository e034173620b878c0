//! Fixed-size vector, quaternion, and small-matrix algebra, generic over
//! [`Real`] so the same expressions run on plain floats and on the tape.
//! Quaternions are Hamilton convention, scalar first; `Quat<R>` as a body
//! orientation means "rotates body-frame vectors into the world frame".

use crate::ad::Real;

#[derive(Clone, Copy, Debug)]
pub struct Vec3<R> {
    pub x: R,
    pub y: R,
    pub z: R,
}

impl<R: Real> Vec3<R> {
    pub fn new(x: R, y: R, z: R) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_squared(self) -> R {
        self.dot(self)
    }

    pub fn norm(self) -> R {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: R) -> Self {
        Vec3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn scalec(self, c: f64) -> Self {
        Vec3 {
            x: self.x.mulc(c),
            y: self.y.mulc(c),
            z: self.z.mulc(c),
        }
    }

    /// Adds a plain-float offset without putting the offset on any tape.
    pub fn addc(self, c: Vec3<f64>) -> Self {
        Vec3 {
            x: self.x.addc(c.x),
            y: self.y.addc(c.y),
            z: self.z.addc(c.z),
        }
    }

    pub fn values(self) -> Vec3<f64> {
        Vec3 {
            x: self.x.value(),
            y: self.y.value(),
            z: self.z.value(),
        }
    }

    pub fn to_array(self) -> [R; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [R; 3]) -> Self {
        Vec3 {
            x: a[0],
            y: a[1],
            z: a[2],
        }
    }
}

impl Vec3<f64> {
    pub const ZERO: Vec3<f64> = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
}

impl<R: Real> std::ops::Add for Vec3<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3 {
            x: self.x + o.x,
            y: self.y + o.y,
            z: self.z + o.z,
        }
    }
}

impl<R: Real> std::ops::Sub for Vec3<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3 {
            x: self.x - o.x,
            y: self.y - o.y,
            z: self.z - o.z,
        }
    }
}

impl<R: Real> std::ops::Neg for Vec3<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Quat<R> {
    pub w: R,
    pub x: R,
    pub y: R,
    pub z: R,
}

impl<R: Real> Quat<R> {
    pub fn new(w: R, x: R, y: R, z: R) -> Self {
        Quat { w, x, y, z }
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(self, o: Self) -> Self {
        let (w1, x1, y1, z1) = (self.w, self.x, self.y, self.z);
        let (w2, x2, y2, z2) = (o.w, o.x, o.y, o.z);
        Quat {
            w: w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            x: w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            y: w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            z: w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        }
    }

    pub fn conjugate(self) -> Self {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn norm(self) -> R {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Rotates `v` by this quaternion: `q ⊗ (0, v) ⊗ q*`. Assumes unit norm.
    pub fn rotate(self, v: Vec3<R>) -> Vec3<R> {
        let zero = self.w - self.w;
        let p = Quat {
            w: zero,
            x: v.x,
            y: v.y,
            z: v.z,
        };
        let r = self.mul(p).mul(self.conjugate());
        Vec3 {
            x: r.x,
            y: r.y,
            z: r.z,
        }
    }

    /// Rotates `v` by the inverse: body-frame coordinates of a world vector
    /// when `self` is a body-to-world orientation.
    pub fn rotate_inverse(self, v: Vec3<R>) -> Vec3<R> {
        self.conjugate().rotate(v)
    }

    /// `self ⊗ (0, v)`: product with a pure quaternion, written out so no
    /// zero scalar part needs materialising.
    pub fn mul_pure(self, v: Vec3<R>) -> Quat<R> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Quat {
            w: -(x * v.x) - y * v.y - z * v.z,
            x: w * v.x + y * v.z - z * v.y,
            y: w * v.y - x * v.z + z * v.x,
            z: w * v.z + x * v.y - y * v.x,
        }
    }

    pub fn add(self, o: Self) -> Self {
        Quat {
            w: self.w + o.w,
            x: self.x + o.x,
            y: self.y + o.y,
            z: self.z + o.z,
        }
    }

    pub fn scalec(self, c: f64) -> Self {
        Quat {
            w: self.w.mulc(c),
            x: self.x.mulc(c),
            y: self.y.mulc(c),
            z: self.z.mulc(c),
        }
    }

    pub fn values(self) -> Quat<f64> {
        Quat {
            w: self.w.value(),
            x: self.x.value(),
            y: self.y.value(),
            z: self.z.value(),
        }
    }

    pub fn to_array(self) -> [R; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

impl Quat<f64> {
    pub const IDENTITY: Quat<f64> = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_axis_angle(axis: Vec3<f64>, angle: f64) -> Quat<f64> {
        let n = axis.norm();
        let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
        Quat {
            w: c,
            x: axis.x / n * s,
            y: axis.y / n * s,
            z: axis.z / n * s,
        }
    }
}

/// Plain 3x3 matrix, row major. Used for inertia tensors and Jacobians; when
/// applied to tape vectors its entries enter as constant coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(x: f64, y: f64, z: f64) -> Mat3 {
        Mat3([[x, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, z]])
    }

    pub fn transpose(self) -> Mat3 {
        let m = self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(self) -> f64 {
        let m = self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Adjugate-based inverse; callers gate on `det` themselves when they
    /// need a threshold with context (e.g. naming the singular leg).
    pub fn inverse(self) -> Option<Mat3> {
        let d = self.det();
        if d == 0.0 {
            return None;
        }
        let m = self.0;
        let inv = |r1: usize, c1: usize, r2: usize, c2: usize| {
            m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
        };
        let adj = Mat3([
            [inv(1, 1, 2, 2), inv(0, 2, 2, 1), inv(0, 1, 1, 2)],
            [inv(1, 2, 2, 0), inv(0, 0, 2, 2), inv(0, 2, 1, 0)],
            [inv(1, 0, 2, 1), inv(0, 1, 2, 0), inv(0, 0, 1, 1)],
        ]);
        let mut out = adj.0;
        for row in &mut out {
            for v in row {
                *v /= d;
            }
        }
        Some(Mat3(out))
    }

    pub fn apply<R: Real>(self, v: Vec3<R>) -> Vec3<R> {
        let m = self.0;
        Vec3 {
            x: v.x.mulc(m[0][0]) + v.y.mulc(m[0][1]) + v.z.mulc(m[0][2]),
            y: v.x.mulc(m[1][0]) + v.y.mulc(m[1][1]) + v.z.mulc(m[1][2]),
            z: v.x.mulc(m[2][0]) + v.y.mulc(m[2][1]) + v.z.mulc(m[2][2]),
        }
    }

    pub fn mul(self, o: Mat3) -> Mat3 {
        let (a, b) = (self.0, o.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(out)
    }
}

/// 2-vector and 2x2 matrix for the double-integrator LQR path.
pub type Vec2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn transpose(self) -> Mat2 {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// Symmetrises against the round-off skew that accumulates in recursions
    /// on quadratic forms.
    pub fn symmetrized(self) -> Mat2 {
        let m = self.0;
        let off = 0.5 * (m[0][1] + m[1][0]);
        Mat2([[m[0][0], off], [off, m[1][1]]])
    }
}

pub fn quadratic_form(p: Mat2, x: Vec2) -> f64 {
    let px = p.apply(x);
    x[0] * px[0] + x[1] * px[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::finite_difference_check;

    #[test]
    fn cross_is_anticommutative_and_orthogonal() {
        let a = Vec3::new(1.0, 2.0, -0.5);
        let b = Vec3::new(-0.3, 0.7, 2.2);
        let c = a.cross(b);
        let d = b.cross(a);
        assert!((c.x + d.x).abs() < 1e-15);
        assert!((c.y + d.y).abs() < 1e-15);
        assert!((c.z + d.z).abs() < 1e-15);
        assert!(c.dot(a).abs() < 1e-15);
        assert!(c.dot(b).abs() < 1e-15);
    }

    #[test]
    fn quaternion_rotation_matches_axis_angle() {
        // 90 degrees about z maps x to y.
        let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let v = q.rotate(Vec3::new(1.0, 0.0, 0.0));
        assert!((v.x).abs() < 1e-15);
        assert!((v.y - 1.0).abs() < 1e-15);
        assert!((v.z).abs() < 1e-15);
        // Inverse rotation brings it back.
        let back = q.rotate_inverse(v);
        assert!((back.x - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quaternion_product_composes_rotations() {
        let qa = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.7);
        let qb = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), -0.4);
        let v = Vec3::new(0.2, -1.0, 0.5);
        let seq = qa.rotate(qb.rotate(v));
        let combined = qa.mul(qb).rotate(v);
        assert!((seq.x - combined.x).abs() < 1e-14);
        assert!((seq.y - combined.y).abs() < 1e-14);
        assert!((seq.z - combined.z).abs() < 1e-14);
    }

    #[test]
    fn mat3_inverse_roundtrip() {
        let m = Mat3([[2.0, 0.3, -0.1], [0.0, 1.5, 0.4], [0.2, -0.2, 0.9]]);
        let inv = m.inverse().unwrap();
        let id = m.mul(inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.0[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_gradient_through_quaternion_matches_differences() {
        // d/d(q, v) of a rotated component, at a non-trivial unit quaternion.
        let q0 = Quat::from_axis_angle(Vec3::new(0.3, -0.8, 0.52), 1.1);
        let x = [q0.w, q0.x, q0.y, q0.z, 0.4, -0.2, 0.9];
        let report = finite_difference_check(
            |_t, xs| {
                let q = Quat::new(xs[0], xs[1], xs[2], xs[3]).normalize();
                let v = Vec3::new(xs[4], xs[5], xs[6]);
                let r = q.rotate(v);
                r.x + r.y.mulc(2.0) - r.z
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(report.within(1e-7), "rel err {}", report.max_rel_err);
    }
}
