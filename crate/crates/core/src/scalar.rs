//! Scalar abstraction used by every state-dependent computation.
//!
//! The guided simulation map, the drift and diffusion coefficients and the
//! guiding term are written once, generically over [`Scalar`]. Instantiated
//! with `f64` they are plain numerics; with [`Dual`] they carry forward-mode
//! tangents; with [`Var`] they record onto a thread-local tape that is swept
//! backwards for reverse-mode gradients.
//!
//! Reverse mode is the engine used by the samplers: the objective is a scalar
//! and the parameter dimension is `n * d`, so one backward sweep yields the
//! full gradient at a small constant multiple of the forward cost. Forward
//! mode is kept for cross-checking.
//!
//! All three implementations compute values with the same floating point
//! operations in the same order, so a value obtained through a taped
//! evaluation is bitwise identical to the plain `f64` one.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::Result;

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    /// `sum_i coefs[i] * xs[i]`, accumulated left to right.
    fn dot_f64(coefs: &[f64], xs: &[Self]) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn dot_f64(coefs: &[f64], xs: &[Self]) -> Self {
        debug_assert_eq!(coefs.len(), xs.len());
        let mut s = 0.0;
        for (c, x) in coefs.iter().zip(xs) {
            s += c * x;
        }
        s
    }
}

/// Dot product of two generic vectors.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// Strip derivative information.
pub fn values<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.value()).collect()
}

pub fn lift<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::cst(x)).collect()
}

// ---------------------------------------------------------------------------
// Forward mode

/// Dual number with `N` tangent directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn seeded(v: f64, direction: usize) -> Self {
        let mut d = [0.0; N];
        d[direction] = 1.0;
        Dual { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let v = self.v / o.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) / o.v;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual { v: -self.v, d: self.d.map(|x| -x) }
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual { v: self.v + c, d: self.d }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual { v: self.v - c, d: self.d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Dual { v: self.v * c, d: self.d.map(|x| x * c) }
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Dual { v: self.v / c, d: self.d.map(|x| x / c) }
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, d: self.d.map(|x| x * e) }
    }
    fn dot_f64(coefs: &[f64], xs: &[Self]) -> Self {
        let mut v = 0.0;
        let mut d = [0.0; N];
        for (c, x) in coefs.iter().zip(xs) {
            v += c * x.v;
            for i in 0..N {
                d[i] += c * x.d[i];
            }
        }
        Dual { v, d }
    }
}

// ---------------------------------------------------------------------------
// Reverse mode

const CONST_IDX: u32 = u32::MAX;

/// A value recorded on the thread-local tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

#[derive(Default)]
struct Tape {
    active: bool,
    // node i owns edges[node_start[i]..node_start[i + 1]]
    node_start: Vec<u32>,
    edge_parent: Vec<u32>,
    edge_weight: Vec<f64>,
}

impl Tape {
    fn clear(&mut self) {
        self.node_start.clear();
        self.edge_parent.clear();
        self.edge_weight.clear();
    }

    fn new_input(&mut self) -> u32 {
        let idx = self.node_start.len() as u32;
        self.node_start.push(self.edge_parent.len() as u32);
        idx
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

impl Var {
    #[inline]
    fn is_const(self) -> bool {
        self.idx == CONST_IDX
    }

    #[inline]
    fn unary(val: f64, a: Var, wa: f64) -> Var {
        if a.is_const() {
            return Var { val, idx: CONST_IDX };
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.node_start.len() as u32;
            let start = t.edge_parent.len() as u32;
            t.node_start.push(start);
            t.edge_parent.push(a.idx);
            t.edge_weight.push(wa);
            Var { val, idx }
        })
    }

    #[inline]
    fn binary(val: f64, a: Var, wa: f64, b: Var, wb: f64) -> Var {
        match (a.is_const(), b.is_const()) {
            (true, true) => Var { val, idx: CONST_IDX },
            (false, true) => Var::unary(val, a, wa),
            (true, false) => Var::unary(val, b, wb),
            (false, false) => TAPE.with(|t| {
                let mut t = t.borrow_mut();
                let idx = t.node_start.len() as u32;
                let start = t.edge_parent.len() as u32;
                t.node_start.push(start);
                t.edge_parent.push(a.idx);
                t.edge_weight.push(wa);
                t.edge_parent.push(b.idx);
                t.edge_weight.push(wb);
                Var { val, idx }
            }),
        }
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::binary(self.val + o.val, self, 1.0, o, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::binary(self.val - o.val, self, 1.0, o, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::binary(self.val * o.val, self, o.val, o, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let v = self.val / o.val;
        Var::binary(v, self, 1.0 / o.val, o, -v / o.val)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::unary(-self.val, self, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, c: f64) -> Var {
        Var::unary(self.val + c, self, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, c: f64) -> Var {
        Var::unary(self.val - c, self, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, c: f64) -> Var {
        Var::unary(self.val * c, self, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, c: f64) -> Var {
        Var::unary(self.val / c, self, 1.0 / c)
    }
}

impl AddAssign for Var {
    #[inline]
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl SubAssign for Var {
    #[inline]
    fn sub_assign(&mut self, o: Var) {
        *self = *self - o;
    }
}

impl Scalar for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var { val: v, idx: CONST_IDX }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        Var::unary(e, self, e)
    }
    fn dot_f64(coefs: &[f64], xs: &[Self]) -> Self {
        let mut val = 0.0;
        for (c, x) in coefs.iter().zip(xs) {
            val += c * x.val;
        }
        let live = coefs
            .iter()
            .zip(xs)
            .any(|(c, x)| *c != 0.0 && !x.is_const());
        if !live {
            return Var { val, idx: CONST_IDX };
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.node_start.len() as u32;
            let start = t.edge_parent.len() as u32;
            t.node_start.push(start);
            for (c, x) in coefs.iter().zip(xs) {
                if *c != 0.0 && !x.is_const() {
                    t.edge_parent.push(x.idx);
                    t.edge_weight.push(*c);
                }
            }
            Var { val, idx }
        })
    }
}

// ---------------------------------------------------------------------------
// Gradient drivers

/// A scalar function written generically over [`Scalar`].
///
/// `Extra` carries by-products of the evaluation (for example the simulated
/// path) so callers can reuse them instead of re-running the forward pass.
pub trait Objective {
    type Extra;
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<(T, Self::Extra)>;
}

struct TapeGuard;

impl Drop for TapeGuard {
    fn drop(&mut self) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.active = false;
            t.clear();
        });
    }
}

/// Value and gradient by a single taped evaluation and one backward sweep.
///
/// Panics if called re-entrantly on the same thread.
pub fn reverse_gradient<F: Objective>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>, F::Extra)> {
    let inputs: Vec<Var> = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        assert!(!t.active, "reverse_gradient is not re-entrant");
        t.active = true;
        t.clear();
        x.iter()
            .map(|&v| Var { val: v, idx: t.new_input() })
            .collect()
    });
    let _guard = TapeGuard;
    let (out, extra) = f.eval(&inputs)?;
    let mut grad = vec![0.0; x.len()];
    if out.is_const() {
        return Ok((out.val, grad, extra));
    }
    TAPE.with(|t| {
        let t = t.borrow();
        let nodes = t.node_start.len();
        let mut adj = vec![0.0; nodes];
        adj[out.idx as usize] = 1.0;
        for i in (0..=out.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let s = t.node_start[i] as usize;
            let e = if i + 1 < nodes { t.node_start[i + 1] as usize } else { t.edge_parent.len() };
            for k in s..e {
                adj[t.edge_parent[k] as usize] += a * t.edge_weight[k];
            }
        }
        grad.copy_from_slice(&adj[..x.len()]);
    });
    Ok((out.val, grad, extra))
}

/// Value and gradient by chunked forward-mode propagation (`N` directions per pass).
pub fn forward_gradient<const N: usize, F: Objective>(
    f: &F,
    x: &[f64],
) -> Result<(f64, Vec<f64>, F::Extra)> {
    let m = x.len();
    let mut grad = vec![0.0; m];
    let mut start = 0;
    let (v, extra) = loop {
        let seeded: Vec<Dual<N>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i >= start && i < start + N {
                    Dual::seeded(v, i - start)
                } else {
                    Dual::cst(v)
                }
            })
            .collect();
        let (out, extra) = f.eval(&seeded)?;
        for j in 0..N.min(m.saturating_sub(start)) {
            grad[start + j] = out.d[j];
        }
        start += N;
        if start >= m {
            break (out.v, extra);
        }
    };
    Ok((v, grad, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosen;
    impl Objective for Rosen {
        type Extra = ();
        fn eval<T: Scalar>(&self, x: &[T]) -> Result<(T, ())> {
            let mut s = T::zero();
            for i in 0..x.len() - 1 {
                let a = x[i + 1] - x[i] * x[i];
                let b = -x[i] + 1.0;
                s += a * a * 100.0 + b * b;
            }
            // exercise exp, division and dot_f64
            let c = T::dot_f64(&[0.5, -0.25, 0.0], &x[..3]);
            s += (c / (x[0] * x[0] + 2.0)).exp();
            Ok((s, ()))
        }
    }

    fn fd(x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (Rosen.eval(&a).unwrap().0 - Rosen.eval(&b).unwrap().0) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn both_modes_match_finite_differences() {
        let x = [0.3, -0.7, 1.2, 0.4, 0.9];
        let g_fd = fd(&x);
        let (v_r, g_r, _) = reverse_gradient(&Rosen, &x).unwrap();
        let (v_f, g_f, _) = forward_gradient::<2, _>(&Rosen, &x).unwrap();
        let v = Rosen.eval(&x).unwrap().0;
        assert_eq!(v.to_bits(), v_r.to_bits());
        assert_eq!(v.to_bits(), v_f.to_bits());
        for i in 0..x.len() {
            assert!((g_r[i] - g_fd[i]).abs() < 1e-5 * (1.0 + g_fd[i].abs()));
            assert!((g_f[i] - g_r[i]).abs() < 1e-10 * (1.0 + g_r[i].abs()));
        }
    }

    #[test]
    fn tape_is_reusable_after_error() {
        struct Fails;
        impl Objective for Fails {
            type Extra = ();
            fn eval<T: Scalar>(&self, _x: &[T]) -> Result<(T, ())> {
                Err(crate::Error::NonFinite { step: 0 })
            }
        }
        assert!(reverse_gradient(&Fails, &[1.0]).is_err());
        assert!(reverse_gradient(&Rosen, &[1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        struct Flat;
        impl Objective for Flat {
            type Extra = ();
            fn eval<T: Scalar>(&self, _x: &[T]) -> Result<(T, ())> {
                Ok((T::cst(3.0), ()))
            }
        }
        let (v, g, _) = reverse_gradient(&Flat, &[1.0, 2.0]).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }
}
