//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles as a node
//! with its parent handles and local partial derivatives. [`Tape::gradient`]
//! runs a single reverse sweep from an output handle.
//!
//! Numerical code in this crate is written against the [`Scalar`] trait so
//! that the same function runs on plain `f64` (values only) and on `Var`
//! (values plus a recorded graph).
//!
//! ```
//! use rstl::autodiff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(0.0);
//! let y = x.exp() * 3.0 + 2.0;
//! let grad = tape.gradient(y, &[x]).unwrap();
//! assert_eq!(grad, vec![3.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("domain violation in `{op}` (argument {arg})")]
    Domain { op: &'static str, arg: f64 },
    #[error("handle does not belong to this tape")]
    ForeignHandle,
}

/// Numeric operations shared by `f64` and tape-recorded [`Var`]s.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn pow2(self) -> Self;
    /// `log(1 + e^x)`.
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
    /// `log(p / (1 - p))` for `p` in `(0, 1)`.
    fn logit(self) -> Self;
    /// `log(e^x - 1)` for `x > 0`.
    fn ln_expm1(self) -> Self;
    /// Clamp into `[lo, hi]`; the derivative is zero where the bound is active.
    fn clamp_to(self, lo: f64, hi: f64) -> Self;
    /// Max-shifted `log(sum(exp(xs)))`. `xs` must be non-empty.
    fn lse(xs: &[Self]) -> Self;
    fn sum(xs: &[Self]) -> Self;
    fn product(xs: &[Self]) -> Self;
}

fn lse_f64(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // all -inf, or some +inf / NaN
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_expm1_f64(x: f64) -> f64 {
    if x < 1.0 {
        x.exp_m1().ln()
    } else {
        x + (-(-x).exp()).ln_1p()
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(c: f64) -> Self {
        c
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
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn pow2(self) -> Self {
        self * self
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn logit(self) -> Self {
        self.ln() - (-self).ln_1p()
    }
    #[inline]
    fn ln_expm1(self) -> Self {
        ln_expm1_f64(self)
    }
    #[inline]
    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        self.max(lo).min(hi)
    }
    fn lse(xs: &[Self]) -> Self {
        lse_f64(xs)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn product(xs: &[Self]) -> Self {
        xs.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Exp,
    Ln,
    Ln1p,
    Sqrt,
    Sin,
    Cos,
    Pow2,
    Softplus,
    Sigmoid,
    Logit,
    LnExpm1,
    Clamp,
    Lse,
    Sum,
    Product,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    edge_start: u32,
    n_edges: u32,
}

#[derive(Default)]
struct Graph {
    nodes: Vec<Node>,
    // (parent index, local partial)
    edges: Vec<(u32, f64)>,
}

/// Append-only record of a computation. Single-threaded; build one per
/// evaluation and drop it after the gradient pass.
#[derive(Default)]
pub struct Tape {
    graph: RefCell<Graph>,
    fault: Cell<Option<(&'static str, f64)>>,
}

const NO_NODE: u32 = u32::MAX;

/// A value on a [`Tape`], or a tape-less constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == NO_NODE {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            graph: RefCell::new(Graph {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(nodes * 2),
            }),
            fault: Cell::new(None),
        }
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Op::Input, &[]);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.graph.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op kind of the node behind `v`, if it is recorded on this tape.
    pub fn op_of(&self, v: Var<'_>) -> Option<Op> {
        if !self.owns(v) {
            return None;
        }
        self.graph.borrow().nodes.get(v.idx as usize).map(|n| n.op)
    }

    /// First domain violation recorded since construction.
    pub fn fault(&self) -> Option<AutodiffError> {
        self.fault
            .get()
            .map(|(op, arg)| AutodiffError::Domain { op, arg })
    }

    fn owns(&self, v: Var<'_>) -> bool {
        v.tape.is_some_and(|t| std::ptr::eq(t, self))
    }

    fn push(&self, op: Op, edges: &[(u32, f64)]) -> u32 {
        let mut g = self.graph.borrow_mut();
        let edge_start = g.edges.len() as u32;
        let mut n_edges = 0;
        for &(p, d) in edges {
            if p != NO_NODE {
                g.edges.push((p, d));
                n_edges += 1;
            }
        }
        let idx = g.nodes.len() as u32;
        g.nodes.push(Node {
            op,
            edge_start,
            n_edges,
        });
        idx
    }

    fn flag(&self, op: &'static str, arg: f64) {
        if self.fault.get().is_none() {
            self.fault.set(Some((op, arg)));
        }
    }

    /// Reverse accumulation of `d output / d input_i`.
    ///
    /// Fails if any handle was recorded on a different tape or if a domain
    /// violation was recorded while building the graph.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>, AutodiffError> {
        if let Some(e) = self.fault() {
            return Err(e);
        }
        if inputs.iter().any(|v| v.tape.is_some() && !self.owns(*v)) {
            return Err(AutodiffError::ForeignHandle);
        }
        if output.idx == NO_NODE {
            return Ok(vec![0.0; inputs.len()]);
        }
        if !self.owns(output) {
            return Err(AutodiffError::ForeignHandle);
        }
        let g = self.graph.borrow();
        let out = output.idx as usize;
        let mut adj = vec![0.0; out + 1];
        adj[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = g.nodes[i];
            let s = n.edge_start as usize;
            for &(p, d) in &g.edges[s..s + n.n_edges as usize] {
                adj[p as usize] += a * d;
            }
        }
        Ok(inputs
            .iter()
            .map(|v| {
                if v.idx == NO_NODE || v.idx as usize > out {
                    0.0
                } else {
                    adj[v.idx as usize]
                }
            })
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn constant(c: f64) -> Self {
        Var {
            tape: None,
            idx: NO_NODE,
            val: c,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == NO_NODE
    }

    #[inline]
    fn unary(self, op: Op, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(op, &[(self.idx, d)]),
                val,
            },
        }
    }

    #[inline]
    fn binary(self, rhs: Self, op: Op, val: f64, da: f64, db: f64) -> Self {
        match self.tape.or(rhs.tape) {
            None => Var::constant(val),
            Some(t) => {
                debug_assert!(
                    self.tape.is_none_or(|s| std::ptr::eq(s, t))
                        && rhs.tape.is_none_or(|s| std::ptr::eq(s, t)),
                    "operands recorded on different tapes"
                );
                Var {
                    tape: Some(t),
                    idx: t.push(op, &[(self.idx, da), (rhs.idx, db)]),
                    val,
                }
            }
        }
    }

    fn nary(xs: &[Self], op: Op, val: f64, partial: impl Fn(usize) -> f64) -> Self {
        match xs.iter().find_map(|x| x.tape) {
            None => Var::constant(val),
            Some(t) => {
                let edges: Vec<(u32, f64)> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x.idx, partial(i)))
                    .collect();
                Var {
                    tape: Some(t),
                    idx: t.push(op, &edges),
                    val,
                }
            }
        }
    }

    fn check(self, ok: bool, op: &'static str) {
        if !ok {
            if let Some(t) = self.tape {
                t.flag(op, self.val);
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        rhs.check(rhs.val != 0.0, "div");
        let q = self.val / rhs.val;
        self.binary(rhs, Op::Div, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        self.unary(Op::Add, self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        self.unary(Op::Sub, self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.unary(Op::Scale, self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.check(rhs != 0.0, "div");
        self.unary(Op::Scale, self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    fn from_f64(c: f64) -> Self {
        Var::constant(c)
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        self.check(self.val > 0.0, "ln");
        self.unary(Op::Ln, self.val.ln(), 1.0 / self.val)
    }

    fn ln_1p(self) -> Self {
        self.check(self.val > -1.0, "ln_1p");
        self.unary(Op::Ln1p, self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }

    fn sqrt(self) -> Self {
        self.check(self.val >= 0.0, "sqrt");
        let s = self.val.sqrt();
        self.unary(Op::Sqrt, s, 0.5 / s)
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, self.val.cos(), -self.val.sin())
    }

    fn pow2(self) -> Self {
        self.unary(Op::Pow2, self.val * self.val, 2.0 * self.val)
    }

    fn softplus(self) -> Self {
        self.unary(Op::Softplus, softplus_f64(self.val), sigmoid_f64(self.val))
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    fn logit(self) -> Self {
        let p = self.val;
        self.check(p > 0.0 && p < 1.0, "logit");
        self.unary(Op::Logit, p.logit(), 1.0 / (p * (1.0 - p)))
    }

    fn ln_expm1(self) -> Self {
        let x = self.val;
        self.check(x > 0.0, "ln_expm1");
        // d/dx log(e^x - 1) = 1 / (1 - e^-x)
        self.unary(Op::LnExpm1, ln_expm1_f64(x), -1.0 / (-x).exp_m1())
    }

    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        let c = self.val.clamp(lo, hi);
        let d = if self.val > lo && self.val < hi { 1.0 } else { 0.0 };
        self.unary(Op::Clamp, c, d)
    }

    fn lse(xs: &[Self]) -> Self {
        debug_assert!(!xs.is_empty());
        if xs.len() == 1 {
            return xs[0];
        }
        let m = xs.iter().map(|x| x.val).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = xs.iter().map(|x| (x.val - m).exp()).collect();
        let s: f64 = w.iter().sum();
        Var::nary(xs, Op::Lse, m + s.ln(), |i| w[i] / s)
    }

    fn sum(xs: &[Self]) -> Self {
        let v = xs.iter().map(|x| x.val).sum();
        Var::nary(xs, Op::Sum, v, |_| 1.0)
    }

    fn product(xs: &[Self]) -> Self {
        let v: f64 = xs.iter().map(|x| x.val).product();
        Var::nary(xs, Op::Product, v, |i| {
            xs.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, x)| x.val)
                .product()
        })
    }
}
