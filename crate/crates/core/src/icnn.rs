//! Input convex neural network (and a plain MLP baseline).
//!
//! Layer recursion, with `x⁰ = x` and softplus activation σ:
//!
//! ```text
//! x¹   = σ(L⁽⁰⁾x⁰ + b⁽⁰⁾)
//! xˡ   = σ(W⁽ˡ⁻¹⁾xˡ⁻¹ + L⁽ˡ⁻¹⁾x⁰ + b⁽ˡ⁻¹⁾)     2 ≤ l ≤ L
//! u(x) = W⁽ᴸ⁾xᴸ + L⁽ᴸ⁾x⁰ + b⁽ᴸ⁾
//! ```
//!
//! The hidden-to-hidden weights are stored raw (`V`) and squared on every
//! forward pass (`W = V ⊙ V`), so `u` is convex in `x` for every parameter
//! vector any optimizer can produce.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hess_index, Jet, Order, Real, MAX_DIM};
use crate::error::{Error, Result};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Blocks {
    hidden: Option<Range<usize>>,
    passthrough: Range<usize>,
    bias: Range<usize>,
}

/// Offsets of every weight block inside the flat parameter vector.
///
/// Per layer `l = 0..=L` the order is `V⁽ˡ⁾` (absent for `l = 0`), `L⁽ˡ⁾`, `b⁽ˡ⁾`,
/// each row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    widths: Vec<usize>,
    blocks: Vec<Blocks>,
    len: usize,
}

impl Layout {
    /// `widths = [N₀ (input), N₁, …, N_L (hidden), 1 (output)]`.
    pub fn new(widths: &[usize]) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Architecture("need input, at least one hidden layer and output".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Architecture("layer widths must be positive".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::Architecture("output width must be 1".into()));
        }
        let d = widths[0];
        if d > MAX_DIM {
            return Err(Error::UnsupportedDimension(d));
        }
        let mut blocks = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let hidden = if l == 0 {
                None
            } else {
                off += n_out * n_in;
                Some(off - n_out * n_in..off)
            };
            let passthrough = off..off + n_out * d;
            off += n_out * d;
            let bias = off..off + n_out;
            off += n_out;
            blocks.push(Blocks { hidden, passthrough, bias });
        }
        Ok(Layout { widths: widths.to_vec(), blocks, len: off })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Number of affine layers `L + 1`.
    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hidden(&self, l: usize) -> Option<Range<usize>> {
        self.blocks[l].hidden.clone()
    }

    pub fn passthrough(&self, l: usize) -> Range<usize> {
        self.blocks[l].passthrough.clone()
    }

    pub fn bias(&self, l: usize) -> Range<usize> {
        self.blocks[l].bias.clone()
    }

    /// Every hidden-weight index, i.e. the entries that get squared.
    pub fn hidden_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().filter_map(|b| b.hidden.clone()).flatten()
    }
}

/// Raw ICNN parameters: a flat vector plus its [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    layout: Layout,
    values: Vec<f64>,
}

impl IcnnParams {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let layout = Layout::new(widths)?;
        let values = vec![0.0; layout.len()];
        Ok(IcnnParams { layout, values })
    }

    pub fn from_flat(widths: &[usize], values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(widths)?;
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: values.len() });
        }
        Ok(IcnnParams { layout, values })
    }

    /// Glorot-uniform raw weights (hidden and passthrough) and
    /// `U(-1/√fan_in, 1/√fan_in)` biases, deterministic per seed.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = p.layout.input_dim();
        for l in 0..p.layout.n_layers() {
            let (n_in, n_out) = (p.layout.widths[l], p.layout.widths[l + 1]);
            if let Some(r) = p.layout.hidden(l) {
                let a = (6.0 / (n_in + n_out) as f64).sqrt();
                for v in &mut p.values[r] {
                    *v = rng.random_range(-a..a);
                }
            }
            let a = (6.0 / (d + n_out) as f64).sqrt();
            for v in &mut p.values[p.layout.passthrough(l)] {
                *v = rng.random_range(-a..a);
            }
            let a = 1.0 / (n_in as f64).sqrt();
            for v in &mut p.values[p.layout.bias(l)] {
                *v = rng.random_range(-a..a);
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn widths(&self) -> &[usize] {
        self.layout.widths()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        IcnnParams { layout: self.layout.clone(), values }
    }

    /// Effective weights: hidden blocks squared, everything else copied.
    pub fn effective(&self) -> Vec<f64> {
        effective_weights(&self.layout, &self.values)
    }

    /// `u(x)` for a plain point.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let eff = self.effective();
        let jets = Jet::seed(x, Order::Value);
        Ok(forward(&self.layout, &eff, &jets)?.value)
    }

    /// `∇u(x)` for a plain point.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let eff = self.effective();
        let jets = Jet::seed(x, Order::Gradient);
        Ok(forward(&self.layout, &eff, &jets)?.grad().to_vec())
    }

    /// Value, gradient and packed Hessian at `x`.
    pub fn jet(&self, x: &[f64]) -> Result<Jet<f64>> {
        let eff = self.effective();
        forward(&self.layout, &eff, &Jet::seed(x, Order::Hessian))
    }

    pub fn to_file(&self) -> ParamsFile {
        let mut layers = Vec::new();
        let w = self.widths();
        let d = self.input_dim();
        for l in 0..self.layout.n_layers() {
            if let Some(r) = self.layout.hidden(l) {
                layers.push(LayerRecord {
                    tag: format!("V{l}"),
                    shape: vec![w[l + 1], w[l]],
                    values: self.values[r].to_vec(),
                });
            }
            layers.push(LayerRecord {
                tag: format!("L{l}"),
                shape: vec![w[l + 1], d],
                values: self.values[self.layout.passthrough(l)].to_vec(),
            });
            layers.push(LayerRecord {
                tag: format!("b{l}"),
                shape: vec![w[l + 1]],
                values: self.values[self.layout.bias(l)].to_vec(),
            });
        }
        ParamsFile {
            schema_version: PARAMS_SCHEMA_VERSION,
            kind: "icnn".into(),
            widths: w.to_vec(),
            layers,
        }
    }

    pub fn from_file(file: &ParamsFile) -> Result<Self> {
        if file.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(Error::Params(format!("unsupported schema_version {}", file.schema_version)));
        }
        if file.kind != "icnn" {
            return Err(Error::Params(format!("unsupported kind `{}`", file.kind)));
        }
        let mut p = Self::zeros(&file.widths)?;
        let expected = p.to_file().layers;
        if expected.len() != file.layers.len() {
            return Err(Error::Params(format!(
                "expected {} layer records, found {}",
                expected.len(),
                file.layers.len()
            )));
        }
        let mut off = 0;
        for (want, got) in expected.iter().zip(&file.layers) {
            if want.tag != got.tag || want.shape != got.shape || got.values.len() != want.values.len() {
                return Err(Error::Params(format!(
                    "record `{}` {:?} does not match expected `{}` {:?}",
                    got.tag, got.shape, want.tag, want.shape
                )));
            }
            p.values[off..off + got.values.len()].copy_from_slice(&got.values);
            off += got.values.len();
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}

/// On-disk parameter format: one record per weight block, row-major values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub kind: String,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub tag: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Squares the hidden blocks of a raw parameter vector.
pub fn effective_weights<T: Real>(layout: &Layout, raw: &[T]) -> Vec<T> {
    let mut eff = raw.to_vec();
    for i in layout.hidden_indices() {
        eff[i] = raw[i] * raw[i];
    }
    eff
}

/// Network forward pass on input jets, given effective weights.
///
/// Works for any scalar type, so it serves plain evaluation (`f64`), input
/// derivatives (`Jet<f64>`) and parameter-differentiable input derivatives
/// (`Jet<Var>`).
pub fn forward<T: Real>(layout: &Layout, eff: &[T], x: &[Jet<T>]) -> Result<Jet<T>> {
    let d = layout.input_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if eff.len() != layout.len() {
        return Err(Error::DimensionMismatch { expected: layout.len(), got: eff.len() });
    }
    let last = layout.n_layers() - 1;
    let mut act: Vec<Jet<T>> = Vec::new();
    for l in 0..=last {
        let n_out = layout.widths[l + 1];
        let n_in = layout.widths[l];
        let pass = &eff[layout.passthrough(l)];
        let bias = &eff[layout.bias(l)];
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let mut z = Jet::linear_combination(&pass[j * d..(j + 1) * d], x);
            z.value = z.value + bias[j];
            if let Some(r) = layout.hidden(l) {
                let w = &eff[r];
                z = z + Jet::linear_combination(&w[j * n_in..(j + 1) * n_in], &act);
            }
            next.push(if l == last { z } else { z.softplus() });
        }
        act = next;
    }
    Ok(act[0])
}

/// PSD check of a packed symmetric 1×1, 2×2 or 3×3 matrix: every principal
/// minor must be ≥ `-tol`.
pub fn is_psd(packed: &[f64], dim: usize, tol: f64) -> bool {
    let h = |i: usize, j: usize| packed[hess_index(dim, i, j)];
    match dim {
        1 => h(0, 0) >= -tol,
        2 => {
            let det = h(0, 0) * h(1, 1) - h(0, 1) * h(0, 1);
            h(0, 0) >= -tol && h(1, 1) >= -tol && h(0, 0) + h(1, 1) >= -tol && det >= -tol
        }
        3 => {
            let diag_ok = (0..3).all(|i| h(i, i) >= -tol);
            let minors2 = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .all(|&(i, j)| h(i, i) * h(j, j) - h(i, j) * h(i, j) >= -tol);
            diag_ok && minors2 && det3(packed) >= -tol
        }
        _ => false,
    }
}

/// Determinant of a packed symmetric 3×3 matrix.
pub fn det3(p: &[f64]) -> f64 {
    let (a, b, c, d, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    // [[a b c] [b d e] [c e f]]
    a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
}

/// Result of checking input-Hessian positive semidefiniteness on a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityAudit {
    pub points: usize,
    pub violations: usize,
    pub min_eigen_proxy: f64,
}

impl ConvexityAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Audits `D²u ⪰ 0` (principal minors ≥ −tol) at each point.
pub fn audit_convexity(params: &IcnnParams, points: &[f64], tol: f64) -> Result<ConvexityAudit> {
    let d = params.input_dim();
    let jets = crate::batch::BatchEval::new(params).eval(points, Order::Hessian)?;
    let mut violations = 0;
    let mut min_proxy = f64::INFINITY;
    for p in 0..jets.len() {
        let h = jets.hess(p);
        if !is_psd(h, d, tol) {
            violations += 1;
        }
        let proxy = match d {
            1 => h[0],
            2 => {
                let (a, b, c) = (h[0], h[1], h[2]);
                0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
            }
            _ => (0..d).map(|i| h[hess_index(d, i, i)]).fold(f64::INFINITY, f64::min).min(det3(h)),
        };
        min_proxy = min_proxy.min(proxy);
    }
    Ok(ConvexityAudit { points: jets.len(), violations, min_eigen_proxy: min_proxy })
}

/// Plain feedforward network with no sign constraints, kept as a non-convex
/// baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    /// `weights[l]` is `N_{l+1} × N_l`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Architecture("MLP output width must be 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let a = (6.0 / (widths[l] + widths[l + 1]) as f64).sqrt();
            weights.push((0..widths[l] * widths[l + 1]).map(|_| rng.random_range(-a..a)).collect());
            biases.push(vec![0.0; widths[l + 1]]);
        }
        Ok(MlpParams { widths: widths.to_vec(), weights, biases })
    }

    pub fn forward<T: Real>(&self, x: &[Jet<T>]) -> Result<Jet<T>> {
        if x.len() != self.widths[0] {
            return Err(Error::DimensionMismatch { expected: self.widths[0], got: x.len() });
        }
        let last = self.weights.len() - 1;
        let mut act = x.to_vec();
        for l in 0..=last {
            let n_in = self.widths[l];
            let w: Vec<T> = self.weights[l].iter().map(|&v| T::constant(v)).collect();
            act = (0..self.widths[l + 1])
                .map(|j| {
                    let mut z = Jet::linear_combination(&w[j * n_in..(j + 1) * n_in], &act);
                    z.value = z.value + self.biases[l][j];
                    if l == last {
                        z
                    } else {
                        z.softplus()
                    }
                })
                .collect();
        }
        Ok(act[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::eval_with_input_derivatives;

    #[test]
    fn parameter_count_matches_shapes() {
        let w = [2, 10, 10, 10, 10, 1];
        let layout = Layout::new(&w).unwrap();
        let mut expected = 0;
        for l in 0..w.len() - 1 {
            if l >= 1 {
                expected += w[l + 1] * w[l];
            }
            expected += w[l + 1] * 2 + w[l + 1];
        }
        assert_eq!(layout.len(), expected);
        assert_eq!(expected, 433);
    }

    #[test]
    fn invalid_architectures() {
        assert!(Layout::new(&[2, 1]).is_err());
        assert!(Layout::new(&[2, 4, 2]).is_err());
        assert!(Layout::new(&[2, 0, 1]).is_err());
        assert!(matches!(Layout::new(&[4, 4, 1]), Err(Error::UnsupportedDimension(4))));
    }

    #[test]
    fn init_is_deterministic_and_effective_weights_nonnegative() {
        let w = [2, 10, 10, 10, 10, 1];
        let a = IcnnParams::init(&w, 7).unwrap();
        let b = IcnnParams::init(&w, 7).unwrap();
        let c = IcnnParams::init(&w, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let eff = a.effective();
        assert!(a.layout().hidden_indices().all(|i| eff[i] >= 0.0));
    }

    #[test]
    fn zero_network_is_zero() {
        let p = IcnnParams::zeros(&[2, 5, 1]).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [10.0, 4.0]] {
            assert_eq!(p.value(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn passthrough_only_network_is_linear() {
        let mut p = IcnnParams::zeros(&[2, 1, 1]).unwrap();
        let r = p.layout().passthrough(1);
        p.as_mut_slice()[r].copy_from_slice(&[1.0, 0.0]);
        let j = p.jet(&[0.4, -2.0]).unwrap();
        assert_eq!(j.value, 0.4);
        assert_eq!(j.grad(), &[1.0, 0.0]);
        assert!(j.hess_packed().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = IcnnParams::init(&[2, 3, 1], 1).unwrap();
        assert!(matches!(
            p.value(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn jet_primal_matches_plain_forward_bit_exactly() {
        let p = IcnnParams::init(&[2, 6, 6, 1], 3).unwrap();
        for x in [[0.1, 0.2], [-0.7, 0.9], [2.0, -1.5]] {
            assert_eq!(p.jet(&x).unwrap().value.to_bits(), p.value(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = IcnnParams::init(&[3, 4, 4, 1], 11).unwrap();
        let q = IcnnParams::from_json(&p.to_json().unwrap()).unwrap();
        assert!(p.as_slice().iter().zip(q.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let p = IcnnParams::init(&[2, 3, 1], 1).unwrap();
        let mut f = p.to_file();
        f.layers[0].shape = vec![3, 3];
        assert!(matches!(IcnnParams::from_file(&f), Err(Error::Params(_))));
        let mut f = p.to_file();
        f.schema_version = 99;
        assert!(IcnnParams::from_file(&f).is_err());
        assert!(IcnnParams::from_json(r#"{"schema_version":1}"#).is_err());
    }

    #[test]
    fn mlp_can_be_concave() {
        // u = -σ(x₁) - σ(x₂): Hessian diag(-σ'', -σ'') is negative definite.
        let m = MlpParams {
            widths: vec![2, 2, 1],
            weights: vec![vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, -1.0]],
            biases: vec![vec![0.0, 0.0], vec![0.0]],
        };
        let d = eval_with_input_derivatives(|x: &[Jet<f64>]| m.forward(x), &[0.2, -0.4], 2).unwrap();
        let packed = [d.hess[0][0], d.hess[0][1], d.hess[1][1]];
        assert!(d.hess[0][0] < 0.0 && d.hess[1][1] < 0.0);
        assert!(packed[0] * packed[2] - packed[1] * packed[1] > 0.0);
        assert!(!is_psd(&packed, 2, 1e-10));
    }

    #[test]
    fn det3_matches_cofactor_expansion() {
        // [[2 1 0] [1 3 1] [0 1 4]] → det = 2(12-1) - 1(4-0) + 0 = 18
        assert_eq!(det3(&[2.0, 1.0, 0.0, 3.0, 1.0, 4.0]), 18.0);
    }
}
