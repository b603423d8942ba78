//! Batched forward-over-reverse evaluation of the ICNN.
//!
//! This is the same differentiation scheme as the scalar tape (second-order
//! jets in the input, reverse sweep in the parameters), but carried out one
//! layer at a time over a whole point batch: every jet component of every
//! point is a column, so each layer is a small dense matrix product and its
//! adjoint. Training uses this path; the scalar tape is the reference it is
//! tested against.

use crate::autodiff::{hess_index, hess_len, sigmoid, softplus, Order};
use crate::error::{Error, Result};
use crate::icnn::{IcnnParams, Layout};

/// Number of jet components for `order` in `dim` dimensions.
pub fn components(order: Order, dim: usize) -> usize {
    match order {
        Order::Value => 1,
        Order::Gradient => 1 + dim,
        Order::Hessian => 1 + dim + hess_len(dim),
    }
}

/// Per-point value, gradient and packed Hessian, stored row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchJets {
    dim: usize,
    order: Order,
    k: usize,
    data: Vec<f64>,
}

impl BatchJets {
    pub fn len(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn value(&self, p: usize) -> f64 {
        self.data[p * self.k]
    }

    pub fn grad(&self, p: usize) -> &[f64] {
        assert!(self.order >= Order::Gradient);
        &self.data[p * self.k + 1..p * self.k + 1 + self.dim]
    }

    pub fn hess(&self, p: usize) -> &[f64] {
        assert!(self.order >= Order::Hessian);
        let s = p * self.k + 1 + self.dim;
        &self.data[s..s + hess_len(self.dim)]
    }

    /// All gradients, flattened `P × d`.
    pub fn grads_flat(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|p| self.grad(p).iter().copied()).collect()
    }
}

/// Intermediate state of one batched forward pass, kept for the reverse sweep.
#[derive(Debug)]
pub struct Trace {
    order: Order,
    k: usize,
    n_points: usize,
    points: Vec<f64>,
    // pre-activations and activations of hidden layers 1..=L, each N × (P·K)
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    out: BatchJets,
}

impl Trace {
    pub fn output(&self) -> &BatchJets {
        &self.out
    }
}

/// Evaluator bound to one parameter snapshot.
#[derive(Debug)]
pub struct BatchEval<'a> {
    layout: &'a Layout,
    raw: &'a [f64],
    eff: Vec<f64>,
}

impl<'a> BatchEval<'a> {
    pub fn new(params: &'a IcnnParams) -> Self {
        BatchEval { layout: params.layout(), raw: params.as_slice(), eff: params.effective() }
    }

    pub fn eval(&self, points: &[f64], order: Order) -> Result<BatchJets> {
        Ok(self.forward(points, order)?.out)
    }

    pub fn forward(&self, points: &[f64], order: Order) -> Result<Trace> {
        let d = self.layout.input_dim();
        if points.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: points.len() % d });
        }
        let n = points.len() / d;
        let k = components(order, d);
        let pk = n * k;
        let last = self.layout.n_layers() - 1;
        let widths = self.layout.widths();
        let mut pre = Vec::with_capacity(last);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut out = Vec::new();
        for l in 0..=last {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let pass = &self.eff[self.layout.passthrough(l)];
            let bias = &self.eff[self.layout.bias(l)];
            let mut z = vec![0.0; n_out * pk];
            for j in 0..n_out {
                let row = &mut z[j * pk..(j + 1) * pk];
                let lj = &pass[j * d..(j + 1) * d];
                for p in 0..n {
                    let x = &points[p * d..(p + 1) * d];
                    let col = &mut row[p * k..(p + 1) * k];
                    col[0] = bias[j] + lj.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if order >= Order::Gradient {
                        col[1..1 + d].copy_from_slice(lj);
                    }
                }
                if let Some(r) = self.layout.hidden(l) {
                    let w = &self.eff[r][j * n_in..(j + 1) * n_in];
                    let prev = act.last().expect("hidden block implies a previous layer");
                    for (i, &wji) in w.iter().enumerate() {
                        if wji != 0.0 {
                            axpy(wji, &prev[i * pk..(i + 1) * pk], row);
                        }
                    }
                }
            }
            if l == last {
                out = z;
            } else {
                let mut a = vec![0.0; n_out * pk];
                for (zc, ac) in z.chunks_exact(k).zip(a.chunks_exact_mut(k)) {
                    softplus_jet(zc, ac, d, order);
                }
                pre.push(z);
                act.push(a);
            }
        }
        Ok(Trace {
            order,
            k,
            n_points: n,
            points: points.to_vec(),
            pre,
            act,
            out: BatchJets { dim: d, order, k, data: out },
        })
    }

    /// Accumulates into `grad` (raw-parameter layout) the gradient of
    /// `Σ_{p,k} adj[p·K + k] · out[p·K + k]`.
    pub fn backward(&self, trace: &Trace, adj: &[f64], grad: &mut [f64]) {
        let d = self.layout.input_dim();
        let (k, n, order) = (trace.k, trace.n_points, trace.order);
        let pk = n * k;
        assert_eq!(adj.len(), pk);
        assert_eq!(grad.len(), self.layout.len());
        let widths = self.layout.widths();
        let last = self.layout.n_layers() - 1;
        let mut dz = adj.to_vec();
        for l in (0..=last).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let pass_r = self.layout.passthrough(l);
            let bias_r = self.layout.bias(l);
            for j in 0..n_out {
                let row = &dz[j * pk..(j + 1) * pk];
                let mut db = 0.0;
                let mut dl = [0.0; 3];
                for p in 0..n {
                    let col = &row[p * k..(p + 1) * k];
                    let x = &trace.points[p * d..(p + 1) * d];
                    db += col[0];
                    for c in 0..d {
                        dl[c] += col[0] * x[c];
                        if order >= Order::Gradient {
                            dl[c] += col[1 + c];
                        }
                    }
                }
                grad[bias_r.start + j] += db;
                for c in 0..d {
                    grad[pass_r.start + j * d + c] += dl[c];
                }
            }
            let Some(hid) = self.layout.hidden(l) else { break };
            let prev_act = &trace.act[l - 1];
            let w = &self.eff[hid.clone()];
            let mut da = vec![0.0; n_in * pk];
            for j in 0..n_out {
                let row = &dz[j * pk..(j + 1) * pk];
                for i in 0..n_in {
                    let a = &prev_act[i * pk..(i + 1) * pk];
                    let dw: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
                    let idx = hid.start + j * n_in + i;
                    grad[idx] += 2.0 * self.raw[idx] * dw;
                    let wji = w[j * n_in + i];
                    if wji != 0.0 {
                        axpy(wji, row, &mut da[i * pk..(i + 1) * pk]);
                    }
                }
            }
            let z_prev = &trace.pre[l - 1];
            let mut dz_prev = vec![0.0; n_in * pk];
            for ((zc, dac), dzc) in
                z_prev.chunks_exact(k).zip(da.chunks_exact(k)).zip(dz_prev.chunks_exact_mut(k))
            {
                softplus_jet_adjoint(zc, dac, dzc, d, order);
            }
            dz = dz_prev;
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn softplus_jet(z: &[f64], a: &mut [f64], d: usize, order: Order) {
    let z0 = z[0];
    a[0] = softplus(z0);
    if order == Order::Value {
        return;
    }
    let s1 = sigmoid(z0);
    for c in 0..d {
        a[1 + c] = s1 * z[1 + c];
    }
    if order == Order::Hessian {
        let s2 = s1 * (1.0 - s1);
        let h = 1 + d;
        for c in 0..d {
            for e in c..d {
                let q = h + hess_index(d, c, e);
                a[q] = s2 * z[1 + c] * z[1 + e] + s1 * z[q];
            }
        }
    }
}

fn softplus_jet_adjoint(z: &[f64], da: &[f64], dz: &mut [f64], d: usize, order: Order) {
    let z0 = z[0];
    let s1 = sigmoid(z0);
    let mut dz0 = da[0] * s1;
    if order >= Order::Gradient {
        let s2 = s1 * (1.0 - s1);
        for c in 0..d {
            dz0 += da[1 + c] * s2 * z[1 + c];
            dz[1 + c] = da[1 + c] * s1;
        }
        if order == Order::Hessian {
            let s3 = s2 * (1.0 - 2.0 * s1);
            let h = 1 + d;
            for c in 0..d {
                for e in c..d {
                    let q = h + hess_index(d, c, e);
                    let dh = da[q];
                    dz0 += dh * (s3 * z[1 + c] * z[1 + e] + s2 * z[q]);
                    dz[1 + c] += dh * s2 * z[1 + e];
                    dz[1 + e] += dh * s2 * z[1 + c];
                    dz[q] = dh * s1;
                }
            }
        }
    }
    dz[0] = dz0;
}
