//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Local partial derivatives are computed during the forward pass and stored per
//! node, so the reverse sweep is two fused multiply-adds per node with no op
//! dispatch. Each gradient evaluation records a fresh tape; buffers are reused
//! across evaluations via [`Tape::clear`].

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric scalar usable in both plain-f64 and taped evaluations of the same code.
///
/// Constant-valued operands go through the `*_f` methods, which never allocate
/// tape nodes for the constant side.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// ln(1 + e^x), with the numerically stable large-|x| branches.
    fn softplus(self) -> Self;
    fn recip(self) -> Self;
    fn square(self) -> Self;
    fn add_f(self, c: f64) -> Self;
    /// self - c
    fn sub_f(self, c: f64) -> Self;
    /// c - self
    fn rsub_f(self, c: f64) -> Self;
    fn mul_f(self, c: f64) -> Self;
    fn div_f(self, c: f64) -> Self;
}

pub fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn square(self) -> Self {
        self * self
    }
    fn add_f(self, c: f64) -> Self {
        self + c
    }
    fn sub_f(self, c: f64) -> Self {
        self - c
    }
    fn rsub_f(self, c: f64) -> Self {
        c - self
    }
    fn mul_f(self, c: f64) -> Self {
        self * c
    }
    fn div_f(self, c: f64) -> Self {
        self / c
    }
}

/// One recorded operation: indices of the (up to two) parents and the local
/// partial derivative of this node's value with respect to each.
#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    adjoints: RefCell<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            adjoints: RefCell::new(Vec::new()),
        }
    }

    /// Forget all recorded nodes but keep the allocations.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Register an independent variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            a: 0,
            b: 0,
            da: 0.0,
            db: 0.0,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    pub fn vars(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.var(v)).collect()
    }

    /// Reverse sweep from `out`; writes d out / d inputs[i] into `dst`.
    pub fn gradient_into(&self, out: Var<'_>, inputs: &[Var<'_>], dst: &mut [f64]) {
        debug_assert!(std::ptr::eq(out.tape, self));
        let nodes = self.nodes.borrow();
        let mut adj = self.adjoints.borrow_mut();
        adj.clear();
        adj.resize(nodes.len(), 0.0);
        adj[out.idx as usize] = 1.0;
        for i in (0..=out.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let n = nodes[i];
            if n.da != 0.0 {
                adj[n.a as usize] += n.da * g;
            }
            if n.db != 0.0 {
                adj[n.b as usize] += n.db * g;
            }
        }
        for (d, v) in dst.iter_mut().zip(inputs) {
            *d = adj[v.idx as usize];
        }
    }
}

/// A value on a [`Tape`]. Carries its numeric value so forward arithmetic never
/// re-reads tape storage.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    fn unary(self, val: f64, da: f64) -> Var<'t> {
        let idx = self.tape.push(Node {
            a: self.idx,
            b: 0,
            da,
            db: 0.0,
        });
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }

    fn binary(self, rhs: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let idx = self.tape.push(Node {
            a: self.idx,
            b: rhs.idx,
            da,
            db,
        });
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let inv = 1.0 / rhs.val;
        self.binary(rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.val), logistic(self.val))
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.val;
        self.unary(inv, -inv * inv)
    }
    fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }
    fn add_f(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }
    fn sub_f(self, c: f64) -> Self {
        self.unary(self.val - c, 1.0)
    }
    fn rsub_f(self, c: f64) -> Self {
        self.unary(c - self.val, -1.0)
    }
    fn mul_f(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
    fn div_f(self, c: f64) -> Self {
        let inv = 1.0 / c;
        self.unary(self.val * inv, inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        lo[i] -= h;
        hi[i] += h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    }

    #[test]
    fn product_rule_exact() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(5.0);
        let z = x * y;
        let mut g = [0.0; 2];
        tape.gradient_into(z, &[x, y], &mut g);
        assert_eq!(g, [5.0, 3.0]);
    }

    #[test]
    fn chain_through_exp_ln_sqrt() {
        let f = |v: &[f64]| (v[0].exp() + v[1].sqrt()).ln() * v[1];
        let x = [0.3, 2.7];
        let tape = Tape::new();
        let v = tape.vars(&x);
        let out = (Scalar::exp(v[0]) + Scalar::sqrt(v[1])).ln() * v[1];
        assert_relative_eq!(out.value(), f(&x), max_relative = 1e-14);
        let mut g = [0.0; 2];
        tape.gradient_into(out, &v, &mut g);
        for i in 0..2 {
            assert_relative_eq!(g[i], fd(&f, &x, i), max_relative = 1e-7);
        }
    }

    #[test]
    fn gaussian_logpdf_gradient_closed_form() {
        // d/dmu of -0.5 (x-mu)^2 / s^2 is (x-mu)/s^2
        let (x, mu, s) = (1.7f64, 0.4f64, 0.8f64);
        let tape = Tape::new();
        let m = tape.var(mu);
        let z = m.rsub_f(x).div_f(s);
        let lp = z.square().mul_f(-0.5).sub_f(s.ln());
        let mut g = [0.0];
        tape.gradient_into(lp, &[m], &mut g);
        assert_relative_eq!(g[0], (x - mu) / (s * s), max_relative = 1e-14);
    }

    #[test]
    fn softplus_matches_fd_and_is_stable() {
        for &x in &[-40.0, -3.0, 0.0, 2.5, 40.0] {
            let tape = Tape::new();
            let v = tape.var(x);
            let out = Scalar::softplus(v);
            assert!(out.value().is_finite());
            let mut g = [0.0];
            tape.gradient_into(out, &[v], &mut g);
            assert_relative_eq!(g[0], logistic(x), max_relative = 1e-12);
            if x.abs() < 20.0 {
                let f = |v: &[f64]| softplus_f64(v[0]);
                assert_relative_eq!(g[0], fd(&f, &[x], 0), max_relative = 1e-6);
            }
        }
        assert_relative_eq!(softplus_f64(40.0), 40.0, max_relative = 1e-15);
        assert!(softplus_f64(-40.0) > 0.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*x + x => f' = 2x + 1
        let tape = Tape::new();
        let x = tape.var(4.0);
        let out = x * x + x;
        let mut g = [0.0];
        tape.gradient_into(out, &[x], &mut g);
        assert_eq!(g[0], 9.0);
    }

    #[test]
    fn clear_reuses_buffers() {
        let tape = Tape::new();
        for _ in 0..3 {
            tape.clear();
            let x = tape.var(2.0);
            let out = Scalar::exp(x * x);
            let mut g = [0.0];
            tape.gradient_into(out, &[x], &mut g);
            assert_relative_eq!(g[0], 4.0 * (4.0f64).exp(), max_relative = 1e-13);
            assert_eq!(tape.len(), 3);
        }
    }

    #[test]
    fn random_composites_match_fd() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = |v: &[f64]| {
            let a = softplus_f64(v[0] * v[1] - v[2]);
            let b = (v[2].square() + 1.2 * v[1]).exp() / (1.0 + v[0].square());
            (a + b).sqrt().ln_1p() + a * v[3] - (0.5f64) * v[3] / v[1]
        };
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.8)).collect();
            let tape = Tape::new();
            let v = tape.vars(&x);
            let a = Scalar::softplus(v[0] * v[1] - v[2]);
            let b = Scalar::exp(Scalar::square(v[2]) + v[1].mul_f(1.2))
                / Scalar::square(v[0]).add_f(1.0);
            // ln_1p(y) written as ln(1+y); fine away from y = -1
            let out = Scalar::ln(Scalar::sqrt(a + b).add_f(1.0)) + a * v[3]
                - v[3].mul_f(0.5) / v[1];
            assert_relative_eq!(out.value(), f(&x), max_relative = 1e-12);
            let mut g = vec![0.0; 4];
            tape.gradient_into(out, &v, &mut g);
            for i in 0..4 {
                let d = fd(&f, &x, i);
                assert_relative_eq!(g[i], d, max_relative = 2e-5, epsilon = 1e-9);
            }
        }
    }
}
