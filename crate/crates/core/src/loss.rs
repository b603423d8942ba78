//! Training objective: the Monge–Ampère residual on collocation points plus a
//! weighted boundary term, either Dirichlet data or the two-sided
//! nearest-neighbour transport loss.
//!
//! Two routes compute the same numbers. The generic functions (`e_pde`,
//! `e_transport`, ...) take any [`Potential`] over any [`Real`] scalar; with
//! `T = Var` they record a parameter-differentiable expression on a tape. The
//! [`Problem::evaluate_with_grad`] route runs the batched network evaluator
//! and its hand-written adjoint, and is what the optimizers call.

use serde::{Deserialize, Serialize};

use crate::autodiff::{hess_len, Jet, Order, Real, Tape};
use crate::batch::{components, BatchEval};
use crate::densities::Density;
use crate::domains::PointBatch;
use crate::error::{Error, Result};
use crate::icnn::{effective_weights, forward, IcnnParams, Layout};

/// Something that yields input jets of a scalar potential.
pub trait Potential<T: Real> {
    fn dim(&self) -> usize;
    fn jet(&self, x: &[f64], order: Order) -> Result<Jet<T>>;
}

/// The ICNN with a given vector of effective weights.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a, T> {
    pub layout: &'a Layout,
    pub eff: &'a [T],
}

impl<T: Real> Potential<T> for Network<'_, T> {
    fn dim(&self) -> usize {
        self.layout.input_dim()
    }

    fn jet(&self, x: &[f64], order: Order) -> Result<Jet<T>> {
        let xs: Vec<T> = x.iter().map(|&v| T::constant(v)).collect();
        forward(self.layout, self.eff, &Jet::seed(&xs, order))
    }
}

/// `q(x) = ½ xᵀ A x + bᵀ x + c` with symmetric `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quadratic {
    pub matrix: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

impl Quadratic {
    pub fn new(matrix: Vec<Vec<f64>>, linear: Vec<f64>, constant: f64) -> Result<Self> {
        let d = linear.len();
        if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: matrix.len() });
        }
        for i in 0..d {
            for j in 0..i {
                if (matrix[i][j] - matrix[j][i]).abs() > 1e-12 {
                    return Err(Error::Config {
                        field: "matrix".into(),
                        reason: "quadratic form must be symmetric".into(),
                    });
                }
            }
        }
        Ok(Quadratic { matrix, linear, constant })
    }

    /// `½ s|x|²`.
    pub fn isotropic(dim: usize, s: f64) -> Self {
        let matrix = (0..dim).map(|i| (0..dim).map(|j| if i == j { s } else { 0.0 }).collect()).collect();
        Quadratic { matrix, linear: vec![0.0; dim], constant: 0.0 }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.linear.len();
        let mut v = self.constant;
        for i in 0..d {
            v += self.linear[i] * x[i];
            for j in 0..d {
                v += 0.5 * self.matrix[i][j] * x[i] * x[j];
            }
        }
        v
    }
}

impl<T: Real> Potential<T> for Quadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn jet(&self, x: &[f64], order: Order) -> Result<Jet<T>> {
        let d = self.linear.len();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let xs: Vec<T> = x.iter().map(|&v| T::constant(v)).collect();
        let seeds = Jet::seed(&xs, order);
        let mut acc = Jet::constant(T::constant(self.constant), d, order);
        for i in 0..d {
            acc = acc + seeds[i].scale(T::constant(self.linear[i]));
            for j in 0..d {
                acc = acc + (seeds[i] * seeds[j]).scale(T::constant(0.5 * self.matrix[i][j]));
            }
        }
        Ok(acc)
    }
}

/// Determinant of a packed symmetric 1×1, 2×2 or 3×3 matrix.
pub fn det_packed<T: Real>(h: &[T], dim: usize) -> T {
    match dim {
        1 => h[0],
        2 => h[0] * h[2] - h[1] * h[1],
        3 => {
            let (a, b, c, d, e, f) = (h[0], h[1], h[2], h[3], h[4], h[5]);
            a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
        }
        _ => panic!("determinant of a {dim}×{dim} matrix is not supported"),
    }
}

/// Derivative of [`det_packed`] with respect to each packed entry.
fn det_packed_adjoint(h: &[f64], dim: usize, out: &mut [f64]) {
    match dim {
        1 => out[0] = 1.0,
        2 => {
            out[0] = h[2];
            out[1] = -2.0 * h[1];
            out[2] = h[0];
        }
        3 => {
            let (a, b, c, d, e, f) = (h[0], h[1], h[2], h[3], h[4], h[5]);
            out[0] = d * f - e * e;
            out[1] = 2.0 * (c * e - b * f);
            out[2] = 2.0 * (b * e - c * d);
            out[3] = a * f - c * c;
            out[4] = 2.0 * (b * c - a * e);
            out[5] = a * d - b * b;
        }
        _ => panic!("determinant of a {dim}×{dim} matrix is not supported"),
    }
}

fn check_dim(expected: usize, batch: &PointBatch) -> Result<()> {
    if batch.dim() != expected {
        return Err(Error::DimensionMismatch { expected, got: batch.dim() });
    }
    Ok(())
}

fn mean<T: Real>(sum: T, n: usize) -> T {
    if n == 0 {
        T::constant(0.0)
    } else {
        sum * (1.0 / n as f64)
    }
}

/// `(1/N) Σ |det D²u(p) − f(p)/g(∇u(p))|²`, with `g` extended outside its
/// support so the quotient is always defined.
pub fn e_pde<T: Real>(u: &dyn Potential<T>, f: &Density, g: &Density, collocation: &PointBatch) -> Result<T> {
    let d = u.dim();
    check_dim(d, collocation)?;
    let mut acc = T::constant(0.0);
    for p in collocation.iter() {
        let jet = u.jet(p, Order::Hessian)?;
        let r = det_packed(jet.hess_packed(), d) - T::constant(f.eval(p)) / g.eval_generic(jet.grad());
        acc = acc + r * r;
    }
    Ok(mean(acc, collocation.len()))
}

/// `(1/N) Σ |u(q) − h(q)|²` over boundary samples.
pub fn e_dirichlet<T: Real>(u: &dyn Potential<T>, h: &dyn Fn(&[f64]) -> f64, boundary: &PointBatch) -> Result<T> {
    let values: Vec<f64> = boundary.iter().map(h).collect();
    dirichlet_from_values(u, &values, boundary)
}

fn dirichlet_from_values<T: Real>(u: &dyn Potential<T>, h: &[f64], boundary: &PointBatch) -> Result<T> {
    check_dim(u.dim(), boundary)?;
    let mut acc = T::constant(0.0);
    for (q, &hq) in boundary.iter().zip(h) {
        let r = u.jet(q, Order::Value)?.value - hq;
        acc = acc + r * r;
    }
    Ok(mean(acc, boundary.len()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `set` (flat, rows of `d`) to `x`; ties go to
/// the lowest index.
pub fn nearest(x: &[f64], set: &[f64], d: usize) -> usize {
    match d {
        1 => nearest_fixed::<1>(x, set),
        2 => nearest_fixed::<2>(x, set),
        3 => nearest_fixed::<3>(x, set),
        _ => {
            let mut best = (0, f64::INFINITY);
            for (j, y) in set.chunks_exact(d).enumerate() {
                let dist = sq_dist(x, y);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            best.0
        }
    }
}

fn nearest_fixed<const D: usize>(x: &[f64], set: &[f64]) -> usize {
    let x: [f64; D] = x.try_into().expect("point dimension");
    let mut best = (0, f64::INFINITY);
    for (j, y) in set.chunks_exact(D).enumerate() {
        let mut dist = 0.0;
        for a in 0..D {
            let t = x[a] - y[a];
            dist += t * t;
        }
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best.0
}

/// Nearest-neighbour assignments of the transport loss: for every image the
/// closest target, and for every target the closest image.
fn assignments(images: &[f64], targets: &[f64], d: usize) -> (Vec<usize>, Vec<usize>) {
    let fwd = images.chunks_exact(d).map(|x| nearest(x, targets, d)).collect();
    let bwd = targets.chunks_exact(d).map(|y| nearest(y, images, d)).collect();
    (fwd, bwd)
}

/// Two-sided nearest-neighbour loss between `∇u(source)` and `target`.
///
/// The first mean penalizes images far from every target sample, the second
/// targets far from every image. The argmin is taken on plain values and the
/// derivative flows through the selected pair only.
pub fn e_transport<T: Real>(u: &dyn Potential<T>, source: &PointBatch, target: &PointBatch) -> Result<T> {
    let d = u.dim();
    check_dim(d, source)?;
    check_dim(d, target)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config {
            field: "boundary".into(),
            reason: "transport loss needs nonempty source and target boundary samples".into(),
        });
    }
    let images: Vec<Vec<T>> = source
        .iter()
        .map(|x| Ok(u.jet(x, Order::Gradient)?.grad().to_vec()))
        .collect::<Result<_>>()?;
    let plain: Vec<f64> = images.iter().flat_map(|g| g.iter().map(Real::value)).collect();
    let (fwd, bwd) = assignments(&plain, target.as_flat(), d);
    let dist = |img: &[T], y: &[f64]| {
        let mut s = T::constant(0.0);
        for a in 0..d {
            let t = img[a] - y[a];
            s = s + t * t;
        }
        s
    };
    let mut first = T::constant(0.0);
    for (i, &j) in fwd.iter().enumerate() {
        first = first + dist(&images[i], target.point(j));
    }
    let mut second = T::constant(0.0);
    for (i, &j) in bwd.iter().enumerate() {
        second = second + dist(&images[j], target.point(i));
    }
    Ok(mean(first, source.len()) + mean(second, target.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Dirichlet,
    Transport,
}

/// Boundary samples and, for Dirichlet problems, the prescribed values.
#[derive(Debug, Clone)]
pub enum BoundaryData {
    Dirichlet { points: PointBatch, values: Vec<f64> },
    Transport { source: PointBatch, target: PointBatch },
}

impl BoundaryData {
    pub fn mode(&self) -> BoundaryMode {
        match self {
            BoundaryData::Dirichlet { .. } => BoundaryMode::Dirichlet,
            BoundaryData::Transport { .. } => BoundaryMode::Transport,
        }
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub e_pde: f64,
    pub e_boundary: f64,
    pub total: f64,
    /// Boundary weight `C`.
    pub weight: f64,
    pub n_collocation: usize,
    pub n_boundary_source: usize,
    /// Zero for Dirichlet problems.
    pub n_boundary_target: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.e_pde.is_finite() && self.e_boundary.is_finite() && self.total.is_finite()
    }
}

/// Everything the loss needs besides the network: densities, fixed sample
/// batches and the boundary weight.
#[derive(Debug, Clone)]
pub struct Problem {
    source: Density,
    target: Density,
    collocation: PointBatch,
    f_values: Vec<f64>,
    boundary: BoundaryData,
    weight: f64,
}

impl Problem {
    pub fn new(
        source: Density,
        target: Density,
        collocation: PointBatch,
        boundary: BoundaryData,
        weight: f64,
    ) -> Result<Self> {
        let d = source.dim();
        if target.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: target.dim() });
        }
        check_dim(d, &collocation)?;
        match &boundary {
            BoundaryData::Dirichlet { points, values } => {
                check_dim(d, points)?;
                if values.len() != points.len() {
                    return Err(Error::config("boundary", "one prescribed value per boundary point"));
                }
            }
            BoundaryData::Transport { source: s, target: t } => {
                check_dim(d, s)?;
                check_dim(d, t)?;
                if s.is_empty() || t.is_empty() {
                    return Err(Error::config("boundary", "transport mode needs source and target boundary samples"));
                }
            }
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::config("boundary_weight", "must be finite and nonnegative"));
        }
        let f_values = collocation.iter().map(|p| source.eval(p)).collect();
        Ok(Problem { source, target, collocation, f_values, boundary, weight })
    }

    /// Builds the boundary data for `mode` from whatever was supplied,
    /// rejecting combinations that do not fit the mode.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mode: BoundaryMode,
        source: Density,
        target: Density,
        collocation: PointBatch,
        source_boundary: Option<PointBatch>,
        target_boundary: Option<PointBatch>,
        h: Option<&dyn Fn(&[f64]) -> f64>,
        weight: f64,
    ) -> Result<Self> {
        let boundary = match (mode, source_boundary, target_boundary, h) {
            (BoundaryMode::Transport, Some(s), Some(t), None) => BoundaryData::Transport { source: s, target: t },
            (BoundaryMode::Transport, _, None, _) => {
                return Err(Error::config("boundary", "transport mode requires target boundary samples"))
            }
            (BoundaryMode::Transport, None, _, _) => {
                return Err(Error::config("boundary", "transport mode requires source boundary samples"))
            }
            (BoundaryMode::Transport, _, _, Some(_)) => {
                return Err(Error::config("boundary", "transport mode takes no boundary values"))
            }
            (BoundaryMode::Dirichlet, Some(points), None, Some(h)) => {
                let values = points.iter().map(h).collect();
                BoundaryData::Dirichlet { points, values }
            }
            (BoundaryMode::Dirichlet, _, _, None) => {
                return Err(Error::config("boundary", "dirichlet mode requires boundary values"))
            }
            (BoundaryMode::Dirichlet, None, _, _) => {
                return Err(Error::config("boundary", "dirichlet mode requires boundary samples"))
            }
            (BoundaryMode::Dirichlet, _, Some(_), _) => {
                return Err(Error::config("boundary", "dirichlet mode takes no target boundary samples"))
            }
        };
        Self::new(source, target, collocation, boundary, weight)
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn source(&self) -> &Density {
        &self.source
    }

    pub fn target(&self) -> &Density {
        &self.target
    }

    pub fn collocation(&self) -> &PointBatch {
        &self.collocation
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mode(&self) -> BoundaryMode {
        self.boundary.mode()
    }

    fn counts(&self) -> (usize, usize) {
        match &self.boundary {
            BoundaryData::Dirichlet { points, .. } => (points.len(), 0),
            BoundaryData::Transport { source, target } => (source.len(), target.len()),
        }
    }

    fn breakdown(&self, e_pde: f64, e_boundary: f64) -> LossBreakdown {
        let (nb, nt) = self.counts();
        LossBreakdown {
            e_pde,
            e_boundary,
            total: e_pde + self.weight * e_boundary,
            weight: self.weight,
            n_collocation: self.collocation.len(),
            n_boundary_source: nb,
            n_boundary_target: nt,
        }
    }

    /// Batched value and raw-parameter gradient of the total loss.
    pub fn evaluate_with_grad(&self, params: &IcnnParams) -> Result<(LossBreakdown, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let b = self.evaluate_inner(params, Some(&mut grad))?;
        Ok((b, grad))
    }

    /// Batched value of the total loss.
    pub fn evaluate(&self, params: &IcnnParams) -> Result<LossBreakdown> {
        self.evaluate_inner(params, None)
    }

    fn evaluate_inner(&self, params: &IcnnParams, mut grad: Option<&mut Vec<f64>>) -> Result<LossBreakdown> {
        let d = self.dim();
        if params.input_dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: params.input_dim() });
        }
        let be = BatchEval::new(params);

        // interior residual
        let n_c = self.collocation.len();
        let trace = be.forward(self.collocation.as_flat(), Order::Hessian)?;
        let jets = trace.output();
        let k = components(Order::Hessian, d);
        let nh = hess_len(d);
        let mut adj = if grad.is_some() { vec![0.0; n_c * k] } else { Vec::new() };
        let mut e_pde = 0.0;
        let mut gg = [0.0; 3];
        let mut ddet = [0.0; 6];
        for p in 0..n_c {
            let h = jets.hess(p);
            let y = jets.grad(p);
            let g = self.target.eval_with_grad(y, &mut gg[..d]);
            let q = self.f_values[p] / g;
            let r = det_packed(h, d) - q;
            e_pde += r * r;
            if grad.is_some() {
                let s = 2.0 * r / n_c as f64;
                let row = &mut adj[p * k..(p + 1) * k];
                // ∂(−f/g(y))/∂y = f g'(y) / g²
                for a in 0..d {
                    row[1 + a] = s * q / g * gg[a];
                }
                det_packed_adjoint(h, d, &mut ddet[..nh]);
                for c in 0..nh {
                    row[1 + d + c] = s * ddet[c];
                }
            }
        }
        let e_pde = if n_c == 0 { 0.0 } else { e_pde / n_c as f64 };
        if let Some(g) = grad.as_deref_mut() {
            be.backward(&trace, &adj, g);
        }

        let e_boundary = match &self.boundary {
            BoundaryData::Dirichlet { points, values } => {
                let n = points.len();
                let trace = be.forward(points.as_flat(), Order::Value)?;
                let out = trace.output();
                let mut acc = 0.0;
                let mut adj = vec![0.0; n];
                for i in 0..n {
                    let r = out.value(i) - values[i];
                    acc += r * r;
                    adj[i] = self.weight * 2.0 * r / n as f64;
                }
                if let Some(g) = grad.as_deref_mut() {
                    be.backward(&trace, &adj, g);
                }
                if n == 0 {
                    0.0
                } else {
                    acc / n as f64
                }
            }
            BoundaryData::Transport { source, target } => {
                let (nx, ny) = (source.len(), target.len());
                let trace = be.forward(source.as_flat(), Order::Gradient)?;
                let images = trace.output().grads_flat();
                let ys = target.as_flat();
                let (fwd, bwd) = assignments(&images, ys, d);
                let k = components(Order::Gradient, d);
                let mut adj = vec![0.0; nx * k];
                let (mut first, mut second) = (0.0, 0.0);
                let mut pair = |i: usize, j: usize, scale: f64, acc: &mut f64| {
                    let img = &images[i * d..(i + 1) * d];
                    let y = &ys[j * d..(j + 1) * d];
                    *acc += sq_dist(img, y);
                    for a in 0..d {
                        adj[i * k + 1 + a] += scale * 2.0 * (img[a] - y[a]);
                    }
                };
                for (i, &j) in fwd.iter().enumerate() {
                    pair(i, j, self.weight / nx as f64, &mut first);
                }
                for (j, &i) in bwd.iter().enumerate() {
                    pair(i, j, self.weight / ny as f64, &mut second);
                }
                if let Some(g) = grad.as_deref_mut() {
                    be.backward(&trace, &adj, g);
                }
                first / nx as f64 + second / ny as f64
            }
        };
        Ok(self.breakdown(e_pde, e_boundary))
    }
}

/// Total loss of any potential over any scalar type.
pub fn total_loss<T: Real>(u: &dyn Potential<T>, problem: &Problem) -> Result<(T, LossBreakdown)> {
    let pde = e_pde(u, &problem.source, &problem.target, &problem.collocation)?;
    let boundary = match &problem.boundary {
        BoundaryData::Dirichlet { points, values } => dirichlet_from_values(u, values, points)?,
        BoundaryData::Transport { source, target } => e_transport(u, source, target)?,
    };
    let total = pde + boundary * problem.weight;
    Ok((total, problem.breakdown(pde.value(), boundary.value())))
}

/// Value and gradient of the total loss through the scalar tape. Slow; the
/// reference for [`Problem::evaluate_with_grad`].
pub fn tape_loss(params: &IcnnParams, problem: &Problem) -> Result<(LossBreakdown, Vec<f64>)> {
    let tape = Tape::new();
    let theta = tape.vars(params.as_slice());
    let eff = effective_weights(params.layout(), &theta);
    let net = Network { layout: params.layout(), eff: &eff };
    let (total, breakdown) = total_loss(&net, problem)?;
    let grad = tape.gradient(total, &theta)?;
    Ok((breakdown, grad))
}

/// `(1/N) Σ |∇u(p) − p|²` and its raw-parameter gradient; used to start
/// training from (approximately) the identity map.
pub fn identity_fit(params: &IcnnParams, points: &PointBatch) -> Result<(f64, Vec<f64>)> {
    let d = params.input_dim();
    check_dim(d, points)?;
    let n = points.len();
    let be = BatchEval::new(params);
    let trace = be.forward(points.as_flat(), Order::Gradient)?;
    let out = trace.output();
    let k = components(Order::Gradient, d);
    let mut adj = vec![0.0; n * k];
    let mut acc = 0.0;
    for p in 0..n {
        let x = points.point(p);
        for a in 0..d {
            let r = out.grad(p)[a] - x[a];
            acc += r * r;
            adj[p * k + 1 + a] = 2.0 * r / n as f64;
        }
    }
    let mut grad = vec![0.0; params.len()];
    be.backward(&trace, &adj, &mut grad);
    Ok((if n == 0 { 0.0 } else { acc / n as f64 }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{DensitySpec, GaussianComponent};
    use crate::domains::{Domain, DomainSpec};
    use crate::icnn::effective_weights;
    use std::f64::consts::PI;

    fn unit_square() -> Density {
        Density::uniform(DomainSpec::unit_box(2)).unwrap()
    }

    fn disk_to_ellipse() -> (Density, Density, Quadratic) {
        let x = Density::uniform(DomainSpec::unit_disk()).unwrap();
        let y = Density::uniform(DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0])).unwrap();
        let u = Quadratic::new(vec![vec![2.0, 0.0], vec![0.0, 0.5]], vec![3.5, 0.0], 0.0).unwrap();
        (x, y, u)
    }

    fn circle(n: usize, r: f64, phase: f64) -> PointBatch {
        let pts = (0..n)
            .flat_map(|i| {
                let t = phase + 2.0 * PI * i as f64 / n as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        PointBatch::from_points(2, pts)
    }

    #[test]
    fn identity_potential_on_equal_densities_has_zero_residual() {
        let f = unit_square();
        let pts = f.sample(50, 1).unwrap();
        let u = Quadratic::isotropic(2, 1.0);
        let e: f64 = e_pde(&u, &f, &f, &pts).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn exact_disk_to_ellipse_potential_solves_the_equation() {
        let (x, y, u) = disk_to_ellipse();
        assert!((x.eval(&[0.0, 0.0]) - 1.0 / PI).abs() < 1e-15);
        assert!((y.eval(&[3.5, 0.0]) - 1.0 / PI).abs() < 1e-15);
        let pts = x.sample(300, 4).unwrap();
        let e: f64 = e_pde(&u, &x, &y, &pts).unwrap();
        assert!(e <= 1e-12, "{e}");
    }

    #[test]
    fn density_ratio_mismatch_gives_unit_residual() {
        let f = unit_square();
        let g = Density::uniform(DomainSpec::Box { lower: vec![0.0, 0.0], upper: vec![2.0, 1.0] }).unwrap();
        let pts = f.sample(20, 2).unwrap();
        let e: f64 = e_pde(&Quadratic::isotropic(2, 1.0), &f, &g, &pts).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_residuals() {
        let u = Quadratic::isotropic(2, 1.0);
        let b = circle(10, 1.0, 0.1);
        let exact: f64 = e_dirichlet(&u, &|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]), &b).unwrap();
        assert!(exact.abs() < 1e-28);
        let shifted: f64 = e_dirichlet(&u, &|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]) - 1.0, &b).unwrap();
        assert!((shifted - 1.0).abs() < 1e-14);
        // offsets 2 on the upper half, 0 on the lower half
        let b = PointBatch::from_points(2, vec![0.0, 1.0, 0.0, -1.0, 0.6, 0.8, 0.6, -0.8]);
        let half: f64 = e_dirichlet(
            &u,
            &|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]) - if x[1] > 0.0 { 2.0 } else { 0.0 },
            &b,
        )
        .unwrap();
        assert!((half - 2.0).abs() < 1e-14);
    }

    #[test]
    fn transport_loss_small_cases() {
        // ∇u ≡ (1, 0): u = x₁
        let shift = Quadratic::new(vec![vec![0.0; 2]; 2], vec![1.0, 0.0], 0.0).unwrap();
        let x = PointBatch::from_points(2, vec![0.3, -0.2]);
        let y = PointBatch::from_points(2, vec![0.0, 0.0]);
        let e: f64 = e_transport(&shift, &x, &y).unwrap();
        assert!((e - 2.0).abs() < 1e-15);

        let collapsed = Quadratic::isotropic(2, 0.0);
        let e: f64 = e_transport(&collapsed, &circle(7, 1.0, 0.0), &circle(500, 1.0, 0.3)).unwrap();
        assert!((e - 2.0).abs() < 1e-13);

        let identity = Quadratic::isotropic(2, 1.0);
        let pts = circle(40, 1.0, 0.0);
        let e: f64 = e_transport(&identity, &pts, &pts).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn transport_loss_is_invariant_under_reordering() {
        let u = Quadratic::new(vec![vec![1.3, 0.2], vec![0.2, 0.7]], vec![0.1, -0.4], 0.0).unwrap();
        let x = circle(31, 1.0, 0.2);
        let y = circle(45, 1.2, 0.0);
        let rev = |b: &PointBatch| {
            PointBatch::from_points(2, b.iter().rev().flat_map(|p| p.iter().copied()).collect())
        };
        let e: f64 = e_transport(&u, &x, &y).unwrap();
        let e2: f64 = e_transport(&u, &rev(&x), &rev(&y)).unwrap();
        assert!((e - e2).abs() <= 1e-13 * e);
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let set = [1.0, 0.0, -1.0, 0.0, 0.0, 1.0];
        assert_eq!(nearest(&[0.0, 0.0], &set, 2), 0);
        assert_eq!(nearest(&[0.0, 0.9], &set, 2), 2);
    }

    #[test]
    fn transport_loss_decreases_along_radial_family() {
        let x = circle(64, 1.0, 0.0);
        let y = circle(200, 1.0, 0.05);
        let mut last = f64::INFINITY;
        for s in (0..=20).map(|i| i as f64 / 20.0) {
            let e: f64 = e_transport(&Quadratic::isotropic(2, s), &x, &y).unwrap();
            assert!(e < last, "s={s}: {e} !< {last}");
            assert!(e >= 0.0);
            last = e;
        }
    }

    #[test]
    fn mismatched_boundary_data_is_a_config_error() {
        let f = unit_square();
        let pts = f.sample(5, 1).unwrap();
        let b = Domain::new(DomainSpec::unit_box(2)).unwrap().sample_boundary(8, 2).unwrap();
        let err = Problem::from_parts(
            BoundaryMode::Transport,
            f.clone(),
            f.clone(),
            pts.clone(),
            Some(b.clone()),
            None,
            None,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let err =
            Problem::from_parts(BoundaryMode::Dirichlet, f.clone(), f, pts, Some(b), None, None, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    fn gaussian_problem(n: usize, weight: f64, seed: u64) -> Problem {
        let f = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![GaussianComponent::isotropic(&[0.25, 0.75], 0.25)],
        })
        .unwrap();
        let g = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![GaussianComponent::isotropic(&[0.75, 0.25], 0.25)],
        })
        .unwrap();
        let dom = f.support().clone();
        let colloc = dom.sample_interior(n, seed).unwrap();
        let sb = dom.sample_boundary(n, seed + 1).unwrap();
        let tb = dom.sample_boundary(n, seed + 2).unwrap();
        Problem::new(f, g, colloc, BoundaryData::Transport { source: sb, target: tb }, weight).unwrap()
    }

    #[test]
    fn breakdown_totals() {
        let p = gaussian_problem(6, 0.0, 3);
        let params = IcnnParams::init(&[2, 4, 4, 1], 1).unwrap();
        let b = p.evaluate(&params).unwrap();
        assert_eq!(b.total, b.e_pde);
        assert_eq!(b.weight, 0.0);
        let p = gaussian_problem(6, 1.0, 3);
        let b = p.evaluate(&params).unwrap();
        assert!((b.total - (b.e_pde + b.e_boundary)).abs() <= 1e-15 * b.total);
        assert_eq!((b.n_collocation, b.n_boundary_source, b.n_boundary_target), (6, 6, 6));
    }

    #[test]
    fn batched_route_matches_tape_route() {
        for (widths, weight) in [(vec![2, 5, 5, 1], 1.0), (vec![2, 6, 1], 0.7)] {
            let p = gaussian_problem(12, weight, 7);
            let params = IcnnParams::init(&widths, 11).unwrap();
            let (b1, g1) = p.evaluate_with_grad(&params).unwrap();
            let (b2, g2) = tape_loss(&params, &p).unwrap();
            assert!((b1.total - b2.total).abs() <= 1e-12 * b2.total.abs());
            assert!((b1.e_pde - b2.e_pde).abs() <= 1e-12 * b2.e_pde.abs());
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dirichlet_batched_route_matches_tape_route() {
        let f = Density::uniform(DomainSpec::unit_disk()).unwrap();
        let colloc = f.sample(10, 1).unwrap();
        let b = f.support().sample_boundary(10, 2).unwrap();
        let h = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]);
        let p = Problem::from_parts(BoundaryMode::Dirichlet, f.clone(), f, colloc, Some(b), None, Some(&h), 1.0)
            .unwrap();
        let params = IcnnParams::init(&[2, 5, 5, 1], 2).unwrap();
        let (b1, g1) = p.evaluate_with_grad(&params).unwrap();
        let (b2, g2) = tape_loss(&params, &p).unwrap();
        assert!((b1.total - b2.total).abs() <= 1e-12 * b2.total);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn three_dimensional_batched_route_matches_tape_route() {
        let f = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(3),
            components: vec![GaussianComponent::isotropic(&[0.75, 0.75, 0.75], 0.125)],
        })
        .unwrap();
        let g = Density::uniform(DomainSpec::unit_box(3)).unwrap();
        let dom = g.support().clone();
        let p = Problem::new(
            f,
            g,
            dom.sample_interior(8, 1).unwrap(),
            BoundaryData::Transport {
                source: dom.sample_boundary(8, 2).unwrap(),
                target: dom.sample_boundary(9, 3).unwrap(),
            },
            1.0,
        )
        .unwrap();
        let params = IcnnParams::init(&[3, 5, 5, 1], 4).unwrap();
        let (b1, g1) = p.evaluate_with_grad(&params).unwrap();
        let (b2, g2) = tape_loss(&params, &p).unwrap();
        assert!((b1.total - b2.total).abs() <= 1e-12 * b2.total);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = gaussian_problem(6, 1.0, 21);
        let params = IcnnParams::init(&[2, 5, 5, 1], 3).unwrap();
        let (_, grad) = p.evaluate_with_grad(&params).unwrap();
        let loss = |v: &[f64]| -> f64 {
            let q = params.with_values(v.to_vec());
            let eff = effective_weights(q.layout(), q.as_slice());
            let net = Network { layout: q.layout(), eff: &eff };
            total_loss::<f64>(&net, &p).unwrap().0
        };
        let base = params.as_slice().to_vec();
        let mut checked = 0;
        for i in 0..base.len() {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let (lp, lm) = (loss(&plus), loss(&minus));
            let fd = (lp - lm) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale <= 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
            checked += 1;
        }
        assert_eq!(checked, base.len());
    }

    #[test]
    fn identity_fit_matches_direct_evaluation() {
        let params = IcnnParams::init(&[2, 5, 1], 1).unwrap();
        let pts = PointBatch::from_points(2, vec![0.1, 0.2, -0.3, 0.5]);
        let (v, g) = identity_fit(&params, &pts).unwrap();
        // compare with a direct evaluation
        let mut want = 0.0;
        for x in pts.iter() {
            let gr = params.grad(x).unwrap();
            want += (gr[0] - x[0]).powi(2) + (gr[1] - x[1]).powi(2);
        }
        assert!((v - want / 2.0).abs() < 1e-14);
        assert_eq!(g.len(), params.len());
    }
}
