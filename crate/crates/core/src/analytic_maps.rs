//! Reference transport maps: closed-form affine maps between ellipses, and
//! per-axis monotone rearrangements for separable densities on boxes.

use nalgebra::{Matrix2, SymmetricEigen};

use crate::densities::{Density, Marginal};
use crate::error::{Error, Result};

/// Nodes of each per-axis rearrangement table.
pub const TABLE_NODES: usize = 4097;

/// Monotone piecewise-cubic Hermite table of a 1D map on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneTable {
    /// Tabulates `G⁻¹ ∘ F` with node slopes `f(t) / g(m(t))`, limited so the
    /// interpolant stays monotone.
    pub fn rearrangement(f: &Marginal, g: &Marginal, nodes: usize) -> Self {
        assert!(nodes >= 2);
        let (lo, hi) = f.bounds();
        let h = (hi - lo) / (nodes - 1) as f64;
        let (glo, ghi) = g.bounds();
        let mut values = Vec::with_capacity(nodes);
        let mut slopes = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let t = if i + 1 == nodes { hi } else { lo + i as f64 * h };
            let m = match i {
                0 => glo,
                _ if i + 1 == nodes => ghi,
                _ => g.quantile(f.cdf(t)),
            };
            values.push(m);
            slopes.push(f.pdf(t) / g.pdf(m));
        }
        // Fritsch–Carlson limiter
        for i in 0..nodes - 1 {
            let delta = (values[i + 1] - values[i]) / h;
            if delta <= 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let (a, b) = (slopes[i] / delta, slopes[i + 1] / delta);
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * a * delta;
                slopes[i + 1] = tau * b * delta;
            }
        }
        MonotoneTable { lo, hi, values, slopes }
    }

    pub fn nodes(&self) -> usize {
        self.values.len()
    }

    /// Map value and derivative at `t` (clamped to the table range).
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.values.len();
        let h = (self.hi - self.lo) / (n - 1) as f64;
        let t = t.clamp(self.lo, self.hi);
        let i = (((t - self.lo) / h) as usize).min(n - 2);
        let s = (t - (self.lo + i as f64 * h)) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (v, dv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapKind {
    /// `x ↦ A x + t` with `A` symmetric positive definite.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// `x ↦ (m₁(x₁), …, m_d(x_d))`.
    Separable { axes: Vec<MonotoneTable> },
}

/// A known transport map between two domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMap {
    pub kind: MapKind,
    pub source: String,
    pub target: String,
}

impl ReferenceMap {
    pub fn affine(matrix: Vec<Vec<f64>>, offset: Vec<f64>, source: &str, target: &str) -> Self {
        ReferenceMap { kind: MapKind::Affine { matrix, offset }, source: source.into(), target: target.into() }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            MapKind::Affine { offset, .. } => offset.len(),
            MapKind::Separable { axes } => axes.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MapKind::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, t)| t + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
            MapKind::Separable { axes } => axes.iter().zip(x).map(|(m, &t)| m.eval(t).0).collect(),
        }
    }

    /// Row-major Jacobian at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        match &self.kind {
            MapKind::Affine { matrix, .. } => matrix.iter().flatten().copied().collect(),
            MapKind::Separable { axes } => {
                let mut j = vec![0.0; d * d];
                for (a, m) in axes.iter().enumerate() {
                    j[a * d + a] = m.eval(x[a]).1;
                }
                j
            }
        }
    }

    pub fn jacobian_det(&self, x: &[f64]) -> f64 {
        let j = self.jacobian(x);
        match self.dim() {
            1 => j[0],
            2 => j[0] * j[3] - j[1] * j[2],
            3 => {
                j[0] * (j[4] * j[8] - j[5] * j[7]) - j[1] * (j[3] * j[8] - j[5] * j[6])
                    + j[2] * (j[3] * j[7] - j[4] * j[6])
            }
            d => panic!("jacobian determinant in {d} dimensions is not supported"),
        }
    }
}

/// `∇u(x) = (2x₁ + 7/2, x₂/2)`, the optimal map from the unit disk onto the
/// ellipse `((y₁ − 7/2)/2)² + (2y₂)² < 1` with uniform densities.
pub fn disk_to_ellipse_exact() -> ReferenceMap {
    ReferenceMap::affine(vec![vec![2.0, 0.0], vec![0.0, 0.5]], vec![3.5, 0.0], "disk", "ellipse")
}

fn spd2(m: &Matrix2<f64>, what: &str) -> Result<()> {
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * m.abs().max() {
        return Err(Error::NotSpd(format!("{what} is not symmetric")));
    }
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::NotSpd(format!("{what} has eigenvalue {}", eig.eigenvalues.min())));
    }
    Ok(())
}

/// Optimal map `M_Y R_θ M_X⁻¹` between the uniform measures on `M_X B₁` and
/// `M_Y B₁`, where `tan θ = tr(M_X⁻¹ M_Y⁻¹ J) / tr(M_X⁻¹ M_Y⁻¹)`.
///
/// Of the two angles with that tangent, the one making the map symmetric
/// positive definite (a gradient of a convex quadratic) is taken.
pub fn ellipse_to_ellipse_exact(mx: [[f64; 2]; 2], my: [[f64; 2]; 2]) -> Result<ReferenceMap> {
    let mx = Matrix2::new(mx[0][0], mx[0][1], mx[1][0], mx[1][1]);
    let my = Matrix2::new(my[0][0], my[0][1], my[1][0], my[1][1]);
    spd2(&mx, "M_X")?;
    spd2(&my, "M_Y")?;
    let mx_inv = mx.try_inverse().ok_or_else(|| Error::NotSpd("M_X is singular".into()))?;
    let my_inv = my.try_inverse().ok_or_else(|| Error::NotSpd("M_Y is singular".into()))?;
    let j = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let p = mx_inv * my_inv;
    let theta = (p * j).trace().atan2(p.trace());
    for th in [theta, theta + std::f64::consts::PI] {
        let r = Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        let mut t = my * r * mx_inv;
        if (t[(0, 1)] - t[(1, 0)]).abs() <= 1e-10 * t.abs().max() && spd2(&symmetrized(&t), "T").is_ok() {
            t = symmetrized(&t);
            let matrix = vec![vec![t[(0, 0)], t[(0, 1)]], vec![t[(1, 0)], t[(1, 1)]]];
            return Ok(ReferenceMap::affine(matrix, vec![0.0, 0.0], "ellipse", "ellipse"));
        }
    }
    Err(Error::NotSpd("no rotation angle gives a symmetric positive definite map".into()))
}

fn symmetrized(t: &Matrix2<f64>) -> Matrix2<f64> {
    (t + t.transpose()) * 0.5
}

/// Product of per-axis monotone rearrangements `Gₐ⁻¹ ∘ Fₐ` of the marginals.
/// For separable densities on boxes this is the gradient of a separable
/// convex potential, hence the optimal map.
pub fn separable_rearrangement(f: &Density, g: &Density) -> Result<ReferenceMap> {
    if !f.is_separable() || !g.is_separable() {
        return Err(Error::Unsupported("monotone rearrangement needs separable densities on boxes".into()));
    }
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: g.dim() });
    }
    let axes = (0..f.dim())
        .map(|a| MonotoneTable::rearrangement(&f.marginal(a), &g.marginal(a), TABLE_NODES))
        .collect();
    Ok(ReferenceMap { kind: MapKind::Separable { axes }, source: f.support().id(), target: g.support().id() })
}

/// `max |f(x) − g(T(x)) det ∇T(x)|` over `n` uniform samples of the support of `f`.
pub fn push_forward_check(map: &ReferenceMap, f: &Density, g: &Density, n: usize, seed: u64) -> Result<f64> {
    let pts = f.support().sample_interior(n, seed)?;
    let mut worst: f64 = 0.0;
    for x in pts.iter() {
        let y = map.apply(x);
        let r = (f.eval(x) - g.eval(&y) * map.jacobian_det(x)).abs();
        worst = worst.max(r);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{simpson, DensitySpec, GaussianComponent};
    use crate::domains::DomainSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const MX: [[f64; 2]; 2] = [[0.8, 0.0], [0.0, 0.4]];
    const MY: [[f64; 2]; 2] = [[0.8, 0.2], [0.2, 0.6]];

    fn gaussian1() -> Density {
        Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![GaussianComponent::isotropic(&[0.25, 0.75], 0.25)],
        })
        .unwrap()
    }

    fn uniform_square() -> Density {
        Density::uniform(DomainSpec::unit_box(2)).unwrap()
    }

    fn assert_cyclically_monotone(map: &ReferenceMap, lo: f64, hi: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = map.dim();
        for _ in 0..2000 {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            let (ta, tb) = (map.apply(&a), map.apply(&b));
            let s: f64 = (0..d).map(|i| (ta[i] - tb[i]) * (a[i] - b[i])).sum();
            assert!(s >= -1e-14, "{s}");
        }
    }

    #[test]
    fn disk_to_ellipse_values() {
        let m = disk_to_ellipse_exact();
        assert_eq!(m.apply(&[0.0, 0.0]), vec![3.5, 0.0]);
        assert_eq!(m.apply(&[1.0, 0.0]), vec![5.5, 0.0]);
        assert_eq!(m.apply(&[0.0, 1.0]), vec![3.5, 0.5]);
        assert_cyclically_monotone(&m, -1.0, 1.0);
    }

    #[test]
    fn disk_to_ellipse_pushes_forward() {
        let f = Density::uniform(DomainSpec::unit_disk()).unwrap();
        let g = Density::uniform(DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0])).unwrap();
        assert!((f.eval(&[0.1, 0.1]) - 1.0 / PI).abs() < 1e-15);
        let r = push_forward_check(&disk_to_ellipse_exact(), &f, &g, 10_000, 1).unwrap();
        assert!(r <= 1e-12, "{r}");
    }

    #[test]
    fn equal_ellipses_give_the_identity() {
        let m = ellipse_to_ellipse_exact([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(m.apply(&[0.3, -0.7]), vec![0.3, -0.7]);
        let s = [[1.3, 0.4], [0.4, 0.7]];
        let m = ellipse_to_ellipse_exact(s, s).unwrap();
        let y = m.apply(&[0.3, -0.7]);
        assert!((y[0] - 0.3).abs() < 1e-14 && (y[1] + 0.7).abs() < 1e-14);
    }

    #[test]
    fn disk_to_axis_aligned_ellipse_has_zero_angle() {
        let m = ellipse_to_ellipse_exact([[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.0], [0.0, 0.5]]).unwrap();
        let MapKind::Affine { matrix, .. } = &m.kind else { panic!() };
        assert_eq!(matrix, &vec![vec![2.0, 0.0], vec![0.0, 0.5]]);
    }

    #[test]
    fn rotated_ellipse_map() {
        let m = ellipse_to_ellipse_exact(MX, MY).unwrap();
        let MapKind::Affine { matrix: t, .. } = &m.kind else { panic!() };
        // independent oracle: the optimal map between ellipses is the unique
        // SPD T with T M_X B₁ = M_Y B₁, i.e. T M_X M_Xᵀ T = M_Y M_Yᵀ, which
        // for SPD T is T = Σx^{-1/2} (Σx^{1/2} Σy Σx^{1/2})^{1/2} Σx^{-1/2}
        let sx = Matrix2::new(0.64, 0.0, 0.0, 0.16);
        let my = Matrix2::new(0.8, 0.2, 0.2, 0.6);
        let sy = my * my;
        let sqrt = |m: Matrix2<f64>| {
            let e = SymmetricEigen::new(m);
            e.eigenvectors * Matrix2::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
        };
        let sx_half = sqrt(sx);
        let sx_mhalf = sx_half.try_inverse().unwrap();
        let want = sx_mhalf * sqrt(sx_half * sy * sx_half) * sx_mhalf;
        for i in 0..2 {
            for j in 0..2 {
                assert!((t[i][j] - want[(i, j)]).abs() < 1e-12, "{t:?} vs {want}");
            }
        }
        let f = Density::uniform(DomainSpec::ellipse(MX, [0.0, 0.0])).unwrap();
        let g = Density::uniform(DomainSpec::ellipse(MY, [0.0, 0.0])).unwrap();
        let r = push_forward_check(&m, &f, &g, 10_000, 2).unwrap();
        assert!(r <= 1e-10, "{r}");
        // boundary goes to boundary
        let y = g.support();
        for k in 0..64 {
            let a = 2.0 * PI * k as f64 / 64.0;
            let x = [0.8 * a.cos(), 0.4 * a.sin()];
            assert!(y.implicit(&m.apply(&x)).abs() < 1e-12);
        }
        assert_cyclically_monotone(&m, -1.0, 1.0);
    }

    #[test]
    fn non_spd_input_is_rejected() {
        assert!(matches!(
            ellipse_to_ellipse_exact([[1.0, 0.0], [0.0, -1.0]], MY),
            Err(Error::NotSpd(_))
        ));
        assert!(matches!(ellipse_to_ellipse_exact(MX, [[1.0, 0.5], [0.0, 1.0]]), Err(Error::NotSpd(_))));
    }

    #[test]
    fn rearrangement_of_equal_densities_is_the_identity() {
        for f in [gaussian1(), uniform_square()] {
            let m = separable_rearrangement(&f, &f).unwrap();
            for t in [0.0, 0.013, 0.25, 0.5, 0.77, 1.0] {
                let y = m.apply(&[t, 1.0 - t]);
                assert!((y[0] - t).abs() < 1e-10 && (y[1] - (1.0 - t)).abs() < 1e-10, "{y:?}");
            }
        }
    }

    #[test]
    fn gaussian_to_uniform_rearrangement() {
        let f = gaussian1();
        let g = uniform_square();
        let m = separable_rearrangement(&f, &g).unwrap();
        // F₁(0.25) by Simpson quadrature of the unnormalized marginal
        let k = |t: f64| (-(t - 0.25f64).powi(2) / 0.5).exp();
        let want = simpson(k, 0.0, 0.25, 8192) / simpson(k, 0.0, 1.0, 8192);
        let y = m.apply(&[0.25, 0.5]);
        assert!((y[0] - want).abs() < 1e-9, "{} vs {want}", y[0]);
        let r = push_forward_check(&m, &f, &g, 10_000, 3).unwrap();
        assert!(r <= 1e-4, "{r}");
        assert_cyclically_monotone(&m, 0.0, 1.0);
    }

    #[test]
    fn bimodal_and_three_dimensional_rearrangements_push_forward() {
        let bimodal = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![
                GaussianComponent { center: vec![0.5, 0.2], variances: vec![0.25, 0.015625], weight: 1.0 },
                GaussianComponent { center: vec![0.5, 0.8], variances: vec![0.25, 0.015625], weight: 1.0 },
            ],
        })
        .unwrap();
        let m = separable_rearrangement(&bimodal, &uniform_square()).unwrap();
        assert!(push_forward_check(&m, &bimodal, &uniform_square(), 10_000, 4).unwrap() <= 1e-4);

        let cube = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(3),
            components: vec![GaussianComponent::isotropic(&[0.75, 0.75, 0.75], 0.125)],
        })
        .unwrap();
        let u3 = Density::uniform(DomainSpec::unit_box(3)).unwrap();
        let m = separable_rearrangement(&cube, &u3).unwrap();
        assert!(push_forward_check(&m, &cube, &u3, 10_000, 5).unwrap() <= 1e-4);
        assert_cyclically_monotone(&m, 0.0, 1.0);
    }

    #[test]
    fn non_separable_input_is_unsupported() {
        let disk = Density::uniform(DomainSpec::unit_disk()).unwrap();
        assert!(matches!(separable_rearrangement(&disk, &uniform_square()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn table_is_monotone() {
        let f = gaussian1();
        let m = MonotoneTable::rearrangement(&f.marginal(0), &uniform_square().marginal(0), 64);
        let mut last = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let (v, dv) = m.eval(i as f64 / 10_000.0);
            assert!(v >= last && dv >= 0.0);
            last = v;
        }
    }
}
