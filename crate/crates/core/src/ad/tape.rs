//! Wengert-list tape: nodes are appended in evaluation order, each carrying
//! the ids of its parents and the local partial derivative with respect to
//! each. The backward sweep walks nodes in exact reverse insertion order, so
//! insertion order is the topological order and no explicit sort exists.

use std::cell::RefCell;
use std::fmt;

use crate::Fp;

/// Flat node storage. Node `i` owns `values[i]` and the arena slice
/// `first[i]..first[i + 1]` of `(parent_ids, partials)`.
#[derive(Default)]
struct Nodes {
    values: Vec<Fp>,
    first: Vec<u32>,
    parent_ids: Vec<u32>,
    partials: Vec<Fp>,
    adjoints: Vec<Fp>,
}

/// Recording tape for one training segment. Single-writer: recording happens
/// on one thread; build one tape per worker for batched work. `clear` resets
/// the node list but keeps allocated capacity, so a tape reused across
/// iterations stops allocating once it has seen its largest segment.
pub struct Tape {
    nodes: RefCell<Nodes>,
    /// Bumped by `clear`; detects use of variables recorded before a clear.
    epoch: std::cell::Cell<u32>,
}

/// Handle to one tape node: an index plus a cached forward value. Copyable;
/// all arithmetic with other handles or `f64` constants records new nodes.
/// Invalidated by `Tape::clear` (enforced, not just documented).
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    epoch: u32,
    value: Fp,
}

impl Tape {
    pub fn new() -> Self {
        let mut nodes = Nodes::default();
        nodes.first.push(0);
        Tape {
            nodes: RefCell::new(nodes),
            epoch: std::cell::Cell::new(0),
        }
    }

    /// Drops all nodes but keeps capacity. Outstanding `Var`s become stale;
    /// using one afterwards panics instead of silently mixing segments.
    pub fn clear(&self) {
        let mut n = self.nodes.borrow_mut();
        n.values.clear();
        n.first.clear();
        n.first.push(0);
        n.parent_ids.clear();
        n.partials.clear();
        n.adjoints.clear();
        self.epoch.set(self.epoch.get().wrapping_add(1));
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().values.len()
    }

    /// New leaf (no parents). Gradient may flow into it.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.record_raw(value as Fp, &[])
    }

    /// Leaf holding data that is not differentiated through. Identical to
    /// `var` on the tape; the distinct name marks intent at call sites.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.record_raw(value as Fp, &[])
    }

    /// Records one node: forward `value` plus `(parent, d value / d parent)`
    /// pairs. The same parent may appear more than once; its contributions
    /// sum in the backward sweep, which is exactly the product rule.
    pub fn record<'t>(&'t self, value: f64, parents: &[(Var<'t>, f64)]) -> Var<'t> {
        let mut n = self.nodes.borrow_mut();
        for &(p, _) in parents {
            self.check(p);
        }
        let id = Self::push(&mut n, value as Fp);
        for &(p, d) in parents {
            n.parent_ids.push(p.id);
            n.partials.push(d as Fp);
        }
        let end = n.parent_ids.len() as u32;
        n.first.push(end);
        drop(n);
        self.handle(id, value as Fp)
    }

    fn record_raw(&self, value: Fp, parents: &[(u32, Fp)]) -> Var<'_> {
        let mut n = self.nodes.borrow_mut();
        let id = Self::push(&mut n, value);
        for &(p, d) in parents {
            n.parent_ids.push(p);
            n.partials.push(d);
        }
        let end = n.parent_ids.len() as u32;
        n.first.push(end);
        drop(n);
        self.handle(id, value)
    }

    fn push(n: &mut Nodes, value: Fp) -> u32 {
        let id = n.values.len();
        assert!(id < u32::MAX as usize, "tape node limit exceeded");
        n.values.push(value);
        id as u32
    }

    fn handle(&self, id: u32, value: Fp) -> Var<'_> {
        Var {
            tape: self,
            id,
            epoch: self.epoch.get(),
            value,
        }
    }

    fn check(&self, v: Var<'_>) {
        assert!(
            std::ptr::eq(v.tape, self),
            "variable belongs to a different tape"
        );
        assert!(
            v.epoch == self.epoch.get(),
            "stale variable: tape was cleared after it was recorded"
        );
    }

    /// Reverse sweep from `loss` (seeded with adjoint 1). Visits nodes in
    /// reverse insertion order and accumulates `adjoint * partial` into each
    /// parent. Appends no nodes; allocation happens only the first time the
    /// adjoint buffer grows to the current node count.
    pub fn backward<'t>(&'t self, loss: Var<'t>) -> Gradients<'t> {
        self.check(loss);
        let mut n = self.nodes.borrow_mut();
        let count = n.values.len();
        n.adjoints.clear();
        n.adjoints.resize(count, 0.0);
        n.adjoints[loss.id as usize] = 1.0;
        for i in (0..count).rev() {
            let a = n.adjoints[i];
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = (n.first[i] as usize, n.first[i + 1] as usize);
            for k in lo..hi {
                let pid = n.parent_ids[k] as usize;
                n.adjoints[pid] += a * n.partials[k];
            }
        }
        Gradients { tape: self }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// View of the adjoints written by the most recent `backward`. Valid until
/// the tape is cleared or another backward sweep runs.
pub struct Gradients<'t> {
    tape: &'t Tape,
}

impl<'t> Gradients<'t> {
    /// Adjoint of `v`: d(loss)/d(v).
    pub fn get(&self, v: Var<'t>) -> f64 {
        self.tape.check(v);
        self.tape.nodes.borrow().adjoints[v.id as usize] as f64
    }

    pub fn get_all(&self, vs: &[Var<'t>]) -> Vec<f64> {
        vs.iter().map(|&v| self.get(v)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value as f64
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// Same forward value, no parents: gradient flowing through this handle
    /// stops here. The original node keeps whatever other paths it has.
    pub fn detach(self) -> Var<'t> {
        self.tape.check(self);
        self.tape.record_raw(self.value, &[])
    }

    fn unary(self, value: Fp, d: Fp) -> Var<'t> {
        self.tape.check(self);
        self.tape.record_raw(value, &[(self.id, d)])
    }

    fn binary(self, rhs: Var<'t>, value: Fp, dl: Fp, dr: Fp) -> Var<'t> {
        self.tape.check(self);
        self.tape.check(rhs);
        self.tape.record_raw(value, &[(self.id, dl), (rhs.id, dr)])
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        // Subgradient 0 at the origin; callers keep norms away from 0.
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(s, d)
    }

    pub fn abs(self) -> Var<'t> {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), d)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(self.value.cos(), -self.value.sin())
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise (unit scale). The derivative
    /// is continuous at 0.
    pub fn elu(self) -> Var<'t> {
        if self.value > 0.0 {
            self.unary(self.value, 1.0)
        } else {
            let e = self.value.exp();
            self.unary(e - 1.0, e)
        }
    }

    /// Clamps the value to `[lo, hi]`; the gradient is exactly zero outside
    /// the bounds and unity inside (boundary counts as inside).
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let (lo, hi) = (lo as Fp, hi as Fp);
        if self.value < lo {
            self.unary(lo, 0.0)
        } else if self.value > hi {
            self.unary(hi, 0.0)
        } else {
            self.unary(self.value, 1.0)
        }
    }

    /// Inner product recorded as a single fat node. Both slices contribute
    /// partials, so `dot(x, x)` differentiates correctly.
    pub fn dot(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        assert!(!a.is_empty(), "dot of empty slices");
        let tape = a[0].tape;
        let mut n = tape.nodes.borrow_mut();
        let mut acc: Fp = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            tape.check(x);
            tape.check(y);
            acc += x.value * y.value;
        }
        let id = Tape::push(&mut n, acc);
        for (&x, &y) in a.iter().zip(b) {
            n.parent_ids.push(x.id);
            n.partials.push(y.value);
        }
        for (&x, &y) in a.iter().zip(b) {
            n.parent_ids.push(y.id);
            n.partials.push(x.value);
        }
        let end = n.parent_ids.len() as u32;
        n.first.push(end);
        drop(n);
        tape.handle(id, acc)
    }

    /// Inner product against plain coefficients, one node.
    pub fn dotc(a: &[Var<'t>], w: &[f64]) -> Var<'t> {
        assert_eq!(a.len(), w.len(), "dotc length mismatch");
        assert!(!a.is_empty(), "dotc of empty slices");
        let tape = a[0].tape;
        let mut n = tape.nodes.borrow_mut();
        let mut acc: Fp = 0.0;
        for (&x, &c) in a.iter().zip(w) {
            tape.check(x);
            acc += x.value * c as Fp;
        }
        let id = Tape::push(&mut n, acc);
        for (&x, &c) in a.iter().zip(w) {
            n.parent_ids.push(x.id);
            n.partials.push(c as Fp);
        }
        let end = n.parent_ids.len() as u32;
        n.first.push(end);
        drop(n);
        tape.handle(id, acc)
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.id, self.value)
    }
}

macro_rules! var_binop {
    ($trait:ident, $fn:ident, $val:expr, $dl:expr, $dr:expr) => {
        impl<'t> std::ops::$trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $fn(self, rhs: Var<'t>) -> Var<'t> {
                let (a, b) = (self.value, rhs.value);
                self.binary(rhs, $val(a, b), $dl(a, b), $dr(a, b))
            }
        }
    };
}

var_binop!(Add, add, |a, b| a + b, |_, _| 1.0, |_, _| 1.0);
var_binop!(Sub, sub, |a, b| a - b, |_, _| 1.0, |_, _| -1.0);
var_binop!(Mul, mul, |a: Fp, b: Fp| a * b, |_, b| b, |a, _| a);
var_binop!(
    Div,
    div,
    |a: Fp, b: Fp| a / b,
    |_, b: Fp| 1.0 / b,
    |a: Fp, b: Fp| -a / (b * b)
);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

// Mixed ops with f64 fold the constant into the value and partial instead of
// recording a leaf for it.
impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.value + c as Fp, 1.0)
    }
}

impl<'t> std::ops::Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> std::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(self.value - c as Fp, 1.0)
    }
}

impl<'t> std::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(self as Fp - v.value, -1.0)
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.value * c as Fp, c as Fp)
    }
}

impl<'t> std::ops::Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> std::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(self.value / c as Fp, 1.0 / c as Fp)
    }
}
