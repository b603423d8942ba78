//! Reverse-mode scalar tape in the network parameters, with forward-mode
//! second-order jets in the network input layered on top.
//!
//! A [`Var`] is a scalar recorded on a [`Tape`]. A [`Jet`] carries a value,
//! its input gradient and the upper triangle of its input Hessian; when the
//! jet components are `Var`s, every input derivative stays differentiable
//! with respect to the parameter leaves. This is what lets a loss built from
//! `det(D²u)` be differentiated with respect to the weights.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

const CONSTANT: u32 = u32::MAX;

/// Largest input dimension carried by a [`Jet`].
pub const MAX_DIM: usize = 3;
const MAX_HESS: usize = MAX_DIM * (MAX_DIM + 1) / 2;

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

#[derive(Debug, Default)]
struct Graph {
    // edge range of node i is ends[i-1]..ends[i]
    ends: Vec<u32>,
    edges: Vec<Edge>,
}

/// Recording structure for one reverse sweep.
///
/// A tape is confined to one thread. Build a fresh one (or [`Tape::clear`]
/// it) per optimizer iteration.
#[derive(Debug, Default)]
pub struct Tape {
    graph: RefCell<Graph>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut g = self.graph.borrow_mut();
        let idx = g.ends.len() as u32;
        let end = g.edges.len() as u32;
        g.ends.push(end);
        Var { tape: Some(self), idx, value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.graph.borrow().ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        let g = self.graph.get_mut();
        g.ends.clear();
        g.edges.clear();
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        match v.tape {
            None => true,
            Some(t) => std::ptr::eq(t, self),
        }
    }

    fn push(&self, value: f64, parents: impl Iterator<Item = (u32, f64)>) -> Var<'_> {
        let mut g = self.graph.borrow_mut();
        g.edges.extend(parents.map(|(parent, partial)| Edge { parent, partial }));
        let idx = g.ends.len() as u32;
        let end = g.edges.len() as u32;
        g.ends.push(end);
        Var { tape: Some(self), idx, value }
    }

    /// Partial derivatives of `output` with respect to each of `wrt`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<f64>> {
        if !self.owns(&output) {
            return Err(Error::ForeignVar);
        }
        if let Some(bad) = wrt.iter().position(|v| !self.owns(v)) {
            return Err(Error::ForeignLeaf(bad));
        }
        if output.idx == CONSTANT {
            return Ok(vec![0.0; wrt.len()]);
        }
        let g = self.graph.borrow();
        let top = output.idx as usize;
        let mut adj = vec![0.0; top + 1];
        adj[top] = 1.0;
        for node in (0..=top).rev() {
            let a = adj[node];
            if a == 0.0 {
                continue;
            }
            let start = if node == 0 { 0 } else { g.ends[node - 1] as usize };
            for e in &g.edges[start..g.ends[node] as usize] {
                adj[e.parent as usize] += e.partial * a;
            }
        }
        Ok(wrt
            .iter()
            .map(|v| {
                if v.idx == CONSTANT || v.idx as usize > top {
                    0.0
                } else {
                    adj[v.idx as usize]
                }
            })
            .collect())
    }
}

/// A differentiable scalar: either a node on a tape or a constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONSTANT {
            write!(f, "Var(const {})", self.value)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.value)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var { tape: None, idx: CONSTANT, value }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONSTANT
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        match self.tape {
            None => Var::constant(value),
            Some(t) => t.push(value, std::iter::once((self.idx, partial))),
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        let tape = match (self.tape, other.tape) {
            (None, None) => return Var::constant(value),
            (Some(a), Some(b)) => {
                assert!(std::ptr::eq(a, b), "operands were recorded on different tapes");
                a
            }
            (Some(a), None) | (None, Some(a)) => a,
        };
        let parents = [(self, da), (other, db)];
        tape.push(
            value,
            parents
                .into_iter()
                .filter(|(v, _)| v.idx != CONSTANT)
                .map(|(v, p)| (v.idx, p)),
        )
    }

    fn nary(value: f64, terms: &[(Var<'t>, f64)]) -> Self {
        let mut tape: Option<&'t Tape> = None;
        for (v, _) in terms {
            if let Some(t) = v.tape {
                match tape {
                    None => tape = Some(t),
                    Some(prev) => {
                        assert!(std::ptr::eq(prev, t), "operands were recorded on different tapes")
                    }
                }
            }
        }
        match tape {
            None => Var::constant(value),
            Some(t) => t.push(
                value,
                terms
                    .iter()
                    .filter(|(v, _)| v.idx != CONSTANT)
                    .map(|(v, p)| (v.idx, *p)),
            ),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

/// Overflow-safe `log(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scalar operations shared by `f64` and [`Var`], so the same network and
/// loss code runs on plain numbers and on the tape.
pub trait Real:
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
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn softplus(self) -> Self;
    /// σ(z) = softplus'(z).
    fn sigmoid(self) -> Self;
    /// σ'(z) = softplus''(z).
    fn sigmoid_prime(self) -> Self;
    /// Σ aᵢ·bᵢ recorded as a single node.
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// Σ cᵢ·vᵢ with constant weights, recorded as a single node.
    fn weighted_sum(weights: &[f64], values: &[Self]) -> Self;
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn softplus(self) -> Self {
        softplus(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn sigmoid_prime(self) -> Self {
        let s = sigmoid(self);
        s * (1.0 - s)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn weighted_sum(weights: &[f64], values: &[Self]) -> Self {
        Self::dot(weights, values)
    }
}

impl<'t> Real for Var<'t> {
    fn constant(c: f64) -> Self {
        Var::constant(c)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn softplus(self) -> Self {
        self.unary(softplus(self.value), sigmoid(self.value))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }
    fn sigmoid_prime(self) -> Self {
        let s = sigmoid(self.value);
        let d1 = s * (1.0 - s);
        self.unary(d1, d1 * (1.0 - 2.0 * s))
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut terms = Vec::with_capacity(2 * a.len());
        let mut value = 0.0;
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
            if y.value != 0.0 {
                terms.push((*x, y.value));
            }
            if x.value != 0.0 {
                terms.push((*y, x.value));
            }
        }
        Var::nary(value, &terms)
    }
    fn weighted_sum(weights: &[f64], values: &[Self]) -> Self {
        debug_assert_eq!(weights.len(), values.len());
        let value = weights.iter().zip(values).map(|(w, v)| w * v.value).sum();
        let terms: Vec<_> = values.iter().copied().zip(weights.iter().copied()).collect();
        Var::nary(value, &terms)
    }
}

/// How many input-derivative orders a [`Jet`] propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Index of Hessian entry (i, j) in the packed upper triangle.
pub fn hess_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

pub fn hess_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Second-order forward-mode number in the input coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub value: T,
    grad: [T; MAX_DIM],
    hess: [T; MAX_HESS],
    dim: u8,
    order: Order,
}

impl<T: Real> Jet<T> {
    pub fn constant(value: T, dim: usize, order: Order) -> Self {
        assert!(dim <= MAX_DIM, "jets support at most {MAX_DIM} input dimensions");
        let zero = T::constant(0.0);
        Jet { value, grad: [zero; MAX_DIM], hess: [zero; MAX_HESS], dim: dim as u8, order }
    }

    /// The `i`-th input coordinate, seeded with tangent eᵢ.
    pub fn coordinate(value: T, i: usize, dim: usize, order: Order) -> Self {
        let mut j = Self::constant(value, dim, order);
        if order >= Order::Gradient {
            j.grad[i] = T::constant(1.0);
        }
        j
    }

    /// Seeds one jet per coordinate of `x`.
    pub fn seed(x: &[T], order: Order) -> Vec<Self> {
        x.iter().enumerate().map(|(i, &v)| Self::coordinate(v, i, x.len(), order)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn grad(&self) -> &[T] {
        let n = if self.order >= Order::Gradient { self.dim() } else { 0 };
        &self.grad[..n]
    }

    /// Packed upper triangle of the input Hessian.
    pub fn hess_packed(&self) -> &[T] {
        let n = if self.order >= Order::Hessian { hess_len(self.dim()) } else { 0 };
        &self.hess[..n]
    }

    pub fn hess(&self, i: usize, j: usize) -> T {
        self.hess[hess_index(self.dim(), i, j)]
    }

    fn n_grad(&self) -> usize {
        self.grad().len()
    }

    fn n_hess(&self) -> usize {
        self.hess_packed().len()
    }

    fn check(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        assert_eq!(self.order, other.order, "jet order mismatch");
    }

    /// Chain rule for a scalar function with derivatives (f, f', f'') at the value.
    pub fn compose(&self, f0: T, f1: T, f2: T) -> Self {
        let mut out = Self::constant(f0, self.dim(), self.order);
        for c in 0..self.n_grad() {
            out.grad[c] = f1 * self.grad[c];
        }
        let d = self.dim();
        for c in 0..if self.n_hess() > 0 { d } else { 0 } {
            for e in c..d {
                let k = hess_index(d, c, e);
                out.hess[k] = f2 * self.grad[c] * self.grad[e] + f1 * self.hess[k];
            }
        }
        out
    }

    pub fn softplus(&self) -> Self {
        let z = self.value;
        match self.order {
            Order::Value => Self::constant(z.softplus(), self.dim(), self.order),
            Order::Gradient => self.compose(z.softplus(), z.sigmoid(), T::constant(0.0)),
            Order::Hessian => self.compose(z.softplus(), z.sigmoid(), z.sigmoid_prime()),
        }
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.compose(e, e, e)
    }

    pub fn scale(&self, c: T) -> Self {
        let mut out = *self;
        out.value = c * self.value;
        for g in out.grad.iter_mut().take(self.n_grad()) {
            *g = c * *g;
        }
        for h in out.hess.iter_mut().take(self.n_hess()) {
            *h = c * *h;
        }
        out
    }

    /// Σ wᵢ·jetᵢ with weights constant in the input, one node per component.
    pub fn linear_combination(weights: &[T], jets: &[Self]) -> Self {
        assert_eq!(weights.len(), jets.len());
        assert!(!jets.is_empty());
        let first = &jets[0];
        let mut out = Self::constant(T::constant(0.0), first.dim(), first.order);
        let mut buf: Vec<T> = Vec::with_capacity(jets.len());
        buf.extend(jets.iter().map(|j| j.value));
        out.value = T::dot(weights, &buf);
        for c in 0..first.n_grad() {
            buf.clear();
            buf.extend(jets.iter().map(|j| j.grad[c]));
            out.grad[c] = T::dot(weights, &buf);
        }
        for k in 0..first.n_hess() {
            buf.clear();
            buf.extend(jets.iter().map(|j| j.hess[k]));
            out.hess[k] = T::dot(weights, &buf);
        }
        out
    }

    /// Adds `Σ aᵢ xᵢ + b` where `x` are the input coordinates, so the gradient
    /// picks up `a` and the Hessian is unchanged.
    pub fn add_affine_input(&self, a: &[T], x: &[T], b: T) -> Self {
        let mut out = *self;
        out.value = self.value + T::dot(a, x) + b;
        for c in 0..self.n_grad() {
            out.grad[c] = self.grad[c] + a[c];
        }
        out
    }

    /// The affine function `Σ aᵢ xᵢ + b` of the input as a jet.
    pub fn affine_input(a: &[T], x: &[T], b: T, order: Order) -> Self {
        let mut out = Self::constant(T::dot(a, x) + b, x.len(), order);
        if order >= Order::Gradient {
            out.grad[..x.len()].copy_from_slice(a);
        }
        out
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.check(&rhs);
        let mut out = self;
        out.value = self.value + rhs.value;
        for c in 0..self.n_grad() {
            out.grad[c] = self.grad[c] + rhs.grad[c];
        }
        for k in 0..self.n_hess() {
            out.hess[k] = self.hess[k] + rhs.hess[k];
        }
        out
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + rhs.scale(T::constant(-1.0))
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.check(&rhs);
        let d = self.dim();
        let mut out = Self::constant(self.value * rhs.value, d, self.order);
        for c in 0..self.n_grad() {
            out.grad[c] = self.grad[c] * rhs.value + self.value * rhs.grad[c];
        }
        if self.n_hess() > 0 {
            for c in 0..d {
                for e in c..d {
                    let k = hess_index(d, c, e);
                    out.hess[k] = self.hess[k] * rhs.value
                        + self.value * rhs.hess[k]
                        + self.grad[c] * rhs.grad[e]
                        + self.grad[e] * rhs.grad[c];
                }
            }
        }
        out
    }
}

/// Value, input gradient and (full, symmetric) input Hessian of a potential.
#[derive(Debug, Clone)]
pub struct InputDerivatives<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub hess: Vec<Vec<T>>,
}

/// Evaluates `f` on jets seeded at `x` and unpacks value, gradient and Hessian.
///
/// Only the upper triangle is computed; the lower one is a copy, so the
/// returned matrix is exactly symmetric.
pub fn eval_with_input_derivatives<T: Real, F>(
    f: F,
    x: &[T],
    input_dim: usize,
) -> Result<InputDerivatives<T>>
where
    F: FnOnce(&[Jet<T>]) -> Result<Jet<T>>,
{
    if x.len() != input_dim {
        return Err(Error::DimensionMismatch { expected: input_dim, got: x.len() });
    }
    if input_dim > MAX_DIM || input_dim == 0 {
        return Err(Error::UnsupportedDimension(input_dim));
    }
    let out = f(&Jet::seed(x, Order::Hessian))?;
    let d = input_dim;
    let mut hess = vec![vec![T::constant(0.0); d]; d];
    for i in 0..d {
        for j in i..d {
            let h = out.hess(i, j);
            hess[i][j] = h;
            hess[j][i] = h;
        }
    }
    Ok(InputDerivatives { value: out.value, grad: out.grad().to_vec(), hess })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(3.0);
        let f = a * b;
        assert_eq!(f.value(), 6.0);
        assert_eq!(tape.gradient(f, &[a, b]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn identity_gradient() {
        let tape = Tape::new();
        let a = tape.var(5.0);
        assert_eq!(tape.gradient(a, &[a]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let tape = Tape::new();
        let a = tape.var(0.0);
        let f = a.softplus();
        assert!((f.value() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(tape.gradient(f, &[a]).unwrap(), vec![0.5]);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(31.0) - 31.0).abs() < 1e-12);
        assert!((softplus(-31.0) - (-31f64).exp()).abs() < 1e-25);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let p = tape.var(3.0);
        let loss = p * p;
        assert_eq!(tape.gradient(loss, &[p]).unwrap(), vec![6.0]);
    }

    #[test]
    fn foreign_output_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.var(1.0);
        let b = t2.var(1.0);
        assert!(matches!(t2.gradient(a * a, &[b]), Err(Error::ForeignVar)));
        assert!(matches!(t2.gradient(b, &[a]), Err(Error::ForeignLeaf(0))));
    }

    #[test]
    #[should_panic(expected = "different tapes")]
    fn mixing_tapes_panics() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let _ = t1.var(1.0) + t2.var(1.0);
    }

    #[test]
    fn constants_do_not_grow_the_tape() {
        let tape = Tape::new();
        let c = Var::constant(2.0) * Var::constant(3.0) + 1.0;
        assert_eq!(c.value(), 7.0);
        assert!(tape.is_empty());
        assert_eq!(tape.gradient(c, &[]).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn half_squared_norm_has_identity_hessian() {
        let d = eval_with_input_derivatives(
            |x: &[Jet<f64>]| Ok((x[0] * x[0] + x[1] * x[1]).scale(0.5)),
            &[1.0, 2.0],
            2,
        )
        .unwrap();
        assert_eq!(d.grad, vec![1.0, 2.0]);
        assert_eq!(d.hess, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn bilinear_hessian() {
        let d = eval_with_input_derivatives(|x: &[Jet<f64>]| Ok(x[0] * x[1]), &[3.0, 4.0], 2)
            .unwrap();
        assert_eq!(d.value, 12.0);
        assert_eq!(d.grad, vec![4.0, 3.0]);
        assert_eq!(d.hess, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let r = eval_with_input_derivatives(|x: &[Jet<f64>]| Ok(x[0]), &[1.0, 2.0, 3.0], 2);
        assert!(matches!(r, Err(Error::DimensionMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn gradient_through_hessian_determinant() {
        // u = p/2 |x|² ⇒ D²u = p·I ⇒ det = p² in 2D
        let tape = Tape::new();
        let p = tape.var(2.0);
        let x = [Var::constant(0.3), Var::constant(-0.7)];
        let d = eval_with_input_derivatives(
            |x: &[Jet<Var>]| {
                let sq = x[0] * x[0] + x[1] * x[1];
                Ok(sq.scale(p * 0.5))
            },
            &x,
            2,
        )
        .unwrap();
        let det = d.hess[0][0] * d.hess[1][1] - d.hess[0][1] * d.hess[1][0];
        assert_eq!(det.value(), 4.0);
        assert_eq!(tape.gradient(det, &[p]).unwrap(), vec![4.0]);
    }

    #[test]
    fn hessian_index_packing() {
        assert_eq!(hess_index(2, 0, 0), 0);
        assert_eq!(hess_index(2, 0, 1), 1);
        assert_eq!(hess_index(2, 1, 1), 2);
        let idx: Vec<_> = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
            .iter()
            .map(|&(i, j)| hess_index(3, i, j))
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(hess_index(3, 2, 1), 4);
    }
}
