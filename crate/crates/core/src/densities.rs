//! Probability densities on domains: uniform, and truncated axis-aligned
//! Gaussian mixtures on boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::domains::{Domain, DomainSpec, PointBatch, Provenance, MAX_REJECTIONS};
use crate::error::{Error, Result};

/// One mixture term `w · exp(-Σₐ (xₐ - μₐ)² / (2σₐ²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub center: Vec<f64>,
    /// Per-axis variances σₐ².
    pub variances: Vec<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl GaussianComponent {
    pub fn isotropic(center: &[f64], variance: f64) -> Self {
        GaussianComponent { center: center.to_vec(), variances: vec![variance; center.len()], weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform { support: DomainSpec },
    GaussianMixture { support: DomainSpec, components: Vec<GaussianComponent> },
}

impl DensitySpec {
    pub fn support(&self) -> &DomainSpec {
        match self {
            DensitySpec::Uniform { support } | DensitySpec::GaussianMixture { support, .. } => support,
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Uniform { value: f64 },
    Mixture { c0: f64, components: Vec<GaussianComponent> },
}

/// A normalized density with its support.
#[derive(Debug, Clone)]
pub struct Density {
    spec: DensitySpec,
    support: Domain,
    kind: Kind,
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `∫_lo^hi exp(-(t-μ)²/(2σ²)) dt`.
pub fn gaussian_mass_1d(mu: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let s = var.sqrt();
    (2.0 * std::f64::consts::PI * var).sqrt() * (normal_cdf((hi - mu) / s) - normal_cdf((lo - mu) / s))
}

/// Composite Simpson rule with `panels` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

impl Density {
    pub fn new(spec: DensitySpec) -> Result<Self> {
        let support = Domain::new(spec.support().clone())?;
        let kind = match &spec {
            DensitySpec::Uniform { .. } => Kind::Uniform { value: 1.0 / support.volume() },
            DensitySpec::GaussianMixture { components, .. } => {
                let c0 = Self::normalize(&support, components)?;
                Kind::Mixture { c0, components: components.clone() }
            }
        };
        let d = Density { spec, support, kind };
        d.verify_mass()?;
        Ok(d)
    }

    pub fn uniform(support: DomainSpec) -> Result<Self> {
        Self::new(DensitySpec::Uniform { support })
    }

    /// Normalization constant of a truncated mixture on a box, from per-axis
    /// Gaussian CDF differences.
    fn normalize(support: &Domain, components: &[GaussianComponent]) -> Result<f64> {
        if !support.is_box() {
            return Err(Error::Unsupported("gaussian densities require a box support".into()));
        }
        if components.is_empty() {
            return Err(Error::Unsupported("gaussian mixture needs at least one component".into()));
        }
        let d = support.dim();
        let (lo, hi) = support.bounding_box();
        let mut mass = 0.0;
        for c in components {
            if c.center.len() != d || c.variances.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.center.len() });
            }
            if c.variances.iter().any(|&v| !(v > 0.0)) || !(c.weight > 0.0) {
                return Err(Error::Unsupported("variances and weights must be positive".into()));
            }
            mass += c.weight
                * (0..d).map(|a| gaussian_mass_1d(c.center[a], c.variances[a], lo[a], hi[a])).product::<f64>();
        }
        Ok(1.0 / mass)
    }

    /// Independent check of the total mass: per-axis Simpson quadrature of
    /// every mixture term.
    fn verify_mass(&self) -> Result<()> {
        let Kind::Mixture { c0, components } = &self.kind else { return Ok(()) };
        let (lo, hi) = self.support.bounding_box();
        let total: f64 = components
            .iter()
            .map(|c| {
                c.weight
                    * (0..lo.len())
                        .map(|a| {
                            let (mu, v) = (c.center[a], c.variances[a]);
                            simpson(|t| (-(t - mu) * (t - mu) / (2.0 * v)).exp(), lo[a], hi[a], 4096)
                        })
                        .product::<f64>()
            })
            .sum();
        if (c0 * total - 1.0).abs() > 1e-6 {
            return Err(Error::NonFinite(format!("density normalization (mass {})", c0 * total)));
        }
        Ok(())
    }

    pub fn spec(&self) -> &DensitySpec {
        &self.spec
    }

    pub fn support(&self) -> &Domain {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// `c₀` for mixtures, the constant value for uniform densities.
    pub fn normalization(&self) -> f64 {
        match &self.kind {
            Kind::Uniform { value } => *value,
            Kind::Mixture { c0, .. } => *c0,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, Kind::Uniform { .. })
    }

    /// Density with the support indicator: zero outside.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.support.contains(x) {
            self.eval_extended(x)
        } else {
            0.0
        }
    }

    /// Density formula evaluated everywhere, ignoring the support: uniform
    /// densities keep their interior constant, mixtures use the globally
    /// defined exponential. Strictly positive.
    pub fn eval_extended(&self, y: &[f64]) -> f64 {
        self.eval_generic(y)
    }

    /// [`Self::eval_extended`] over any scalar type.
    pub fn eval_generic<T: Real>(&self, y: &[T]) -> T {
        match &self.kind {
            Kind::Uniform { value } => T::constant(*value),
            Kind::Mixture { c0, components } => {
                let mut acc = T::constant(0.0);
                for c in components {
                    let mut e = T::constant(0.0);
                    for a in 0..y.len() {
                        let t = y[a] - c.center[a];
                        e = e + t * t * (-0.5 / c.variances[a]);
                    }
                    acc = acc + e.exp() * c.weight;
                }
                acc * *c0
            }
        }
    }

    /// Extended density and its gradient in `y`.
    pub fn eval_with_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        match &self.kind {
            Kind::Uniform { value } => *value,
            Kind::Mixture { c0, components } => {
                let mut acc = 0.0;
                for c in components {
                    let mut e = 0.0;
                    for a in 0..y.len() {
                        let t = y[a] - c.center[a];
                        e -= 0.5 * t * t / c.variances[a];
                    }
                    let term = c0 * c.weight * e.exp();
                    acc += term;
                    for a in 0..y.len() {
                        grad[a] -= term * (y[a] - c.center[a]) / c.variances[a];
                    }
                }
                acc
            }
        }
    }

    /// Upper bound of the density on its support.
    fn envelope(&self) -> f64 {
        match &self.kind {
            Kind::Uniform { value } => *value,
            Kind::Mixture { c0, components } => {
                let (lo, hi) = self.support.bounding_box();
                c0 * components
                    .iter()
                    .map(|c| {
                        let e: f64 = (0..lo.len())
                            .map(|a| {
                                let t = c.center[a].clamp(lo[a], hi[a]) - c.center[a];
                                -0.5 * t * t / c.variances[a]
                            })
                            .sum();
                        c.weight * e.exp()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// `n` i.i.d. draws: uniform densities delegate to the support sampler,
    /// mixtures use rejection from uniform proposals on the box.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PointBatch> {
        let env = self.envelope();
        match &self.kind {
            Kind::Uniform { .. } => self.support.sample_interior(n, seed),
            Kind::Mixture { .. } => {
                let rate = 1.0 / (env * self.support.volume());
                if rate < 1e-4 {
                    return Err(Error::Envelope { rate });
                }
                let d = self.dim();
                let (lo, hi) = self.support.bounding_box();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut pts = Vec::with_capacity(n * d);
                let mut x = vec![0.0; d];
                for _ in 0..n {
                    let mut rejected = 0u64;
                    loop {
                        for a in 0..d {
                            x[a] = lo[a] + (hi[a] - lo[a]) * rng.random::<f64>();
                        }
                        let u: f64 = rng.random();
                        if self.support.contains(&x) && u * env < self.eval_extended(&x) {
                            break;
                        }
                        rejected += 1;
                        if rejected >= MAX_REJECTIONS {
                            return Err(Error::SamplingFailure { attempts: rejected });
                        }
                    }
                    pts.extend_from_slice(&x);
                }
                Ok(PointBatch::new(d, pts, Provenance::new("density_rejection", seed, self.support.id())))
            }
        }
    }

    /// Whether the density factors into a product of per-axis densities:
    /// uniform on a box, or a mixture whose terms differ along at most one axis.
    pub fn is_separable(&self) -> bool {
        if !self.support.is_box() {
            return false;
        }
        match &self.kind {
            Kind::Uniform { .. } => true,
            Kind::Mixture { components, .. } => {
                let first = &components[0];
                let varying: Vec<usize> = (0..self.dim())
                    .filter(|&a| {
                        components.iter().any(|c| {
                            c.center[a] != first.center[a] || c.variances[a] != first.variances[a]
                        })
                    })
                    .collect();
                varying.len() <= 1
            }
        }
    }

    /// Marginal density along `axis` on `[lo, hi]` of the box support.
    pub fn marginal(&self, axis: usize) -> Marginal {
        let (lo, hi) = self.support.bounding_box();
        match &self.kind {
            Kind::Uniform { .. } => Marginal::Uniform { lo: lo[axis], hi: hi[axis] },
            Kind::Mixture { components, .. } => {
                let mut terms: Vec<(f64, f64, f64)> = components
                    .iter()
                    .map(|c| {
                        let other: f64 = (0..lo.len())
                            .filter(|&b| b != axis)
                            .map(|b| gaussian_mass_1d(c.center[b], c.variances[b], lo[b], hi[b]))
                            .product();
                        (c.weight * other, c.center[axis], c.variances[axis])
                    })
                    .collect();
                let total: f64 = terms
                    .iter()
                    .map(|(w, mu, v)| w * gaussian_mass_1d(*mu, *v, lo[axis], hi[axis]))
                    .sum();
                for t in &mut terms {
                    t.0 /= total;
                }
                Marginal::Mixture { lo: lo[axis], hi: hi[axis], terms }
            }
        }
    }
}

/// One-dimensional marginal of a box-supported density.
#[derive(Debug, Clone)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    /// Normalized terms `(weight, μ, σ²)` truncated to `[lo, hi]`.
    Mixture { lo: f64, hi: f64, terms: Vec<(f64, f64, f64)> },
}

impl Marginal {
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Marginal::Uniform { lo, hi } | Marginal::Mixture { lo, hi, .. } => (*lo, *hi),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self {
            Marginal::Uniform { lo, hi } => 1.0 / (hi - lo),
            Marginal::Mixture { terms, .. } => terms
                .iter()
                .map(|(w, mu, v)| w * (-(t - mu) * (t - mu) / (2.0 * v)).exp())
                .sum(),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let t = t.clamp(lo, hi);
        match self {
            Marginal::Uniform { .. } => (t - lo) / (hi - lo),
            Marginal::Mixture { terms, .. } => {
                terms.iter().map(|(w, mu, v)| w * gaussian_mass_1d(*mu, *v, lo, t)).sum()
            }
        }
    }

    /// Inverse CDF by bisection to `1e-12` in `t`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut a, mut b) = self.bounds();
        if let Marginal::Uniform { lo, hi } = self {
            return lo + u.clamp(0.0, 1.0) * (hi - lo);
        }
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if self.cdf(m) < u {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian1() -> Density {
        Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![GaussianComponent::isotropic(&[0.25, 0.75], 0.25)],
        })
        .unwrap()
    }

    fn bimodal() -> Density {
        Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![
                GaussianComponent { center: vec![0.5, 0.2], variances: vec![0.25, 0.015625], weight: 1.0 },
                GaussianComponent { center: vec![0.5, 0.8], variances: vec![0.25, 0.015625], weight: 1.0 },
            ],
        })
        .unwrap()
    }

    /// 2D Gauss-Legendre-free oracle: adaptive Simpson on nested integrals.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn uniform_values() {
        let disk = Density::uniform(DomainSpec::unit_disk()).unwrap();
        assert!((disk.eval(&[0.1, 0.2]) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        let sq = Density::uniform(DomainSpec::unit_box(2)).unwrap();
        assert_eq!(sq.eval(&[0.5, 0.5]), 1.0);
        assert_eq!(sq.eval(&[1.5, 0.5]), 0.0);
    }

    #[test]
    fn uniform_extension_is_constant() {
        let e = Density::uniform(DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0])).unwrap();
        assert!((e.eval_extended(&[10.0, 10.0]) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn gaussian_normalization_matches_2d_quadrature() {
        let g = gaussian1();
        let inner = |x: f64| {
            adaptive_simpson(
                &|y: f64| (-((x - 0.25).powi(2) + (y - 0.75).powi(2)) / 0.5).exp(),
                0.0,
                1.0,
                1e-13,
            )
        };
        let mass = adaptive_simpson(&inner, 0.0, 1.0, 1e-12);
        let c0 = 1.0 / mass;
        assert!((g.normalization() - c0).abs() <= 1e-8 * c0);
    }

    #[test]
    fn gaussian_center_and_symmetry() {
        let g = gaussian1();
        assert_eq!(g.eval_extended(&[0.25, 0.75]), g.normalization());
        let d = 0.13;
        assert_eq!(g.eval_extended(&[0.25, 0.75 + d]), g.eval_extended(&[0.25, 0.75 - d]));
        assert!(g.eval_extended(&[40.0, -40.0]) >= 0.0);
    }

    #[test]
    fn gaussian_matches_textbook_formula() {
        let g = gaussian1();
        let c0 = g.normalization();
        for x in [[0.1, 0.2], [0.9, 0.6], [0.5, 0.5]] {
            let want = c0 * (-((x[0] - 0.25f64).powi(2) + (x[1] - 0.75f64).powi(2)) / 0.5).exp();
            assert!((g.eval(&x) - want).abs() <= 1e-14);
        }
    }

    #[test]
    fn gaussian_requires_box() {
        let r = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_disk(),
            components: vec![GaussianComponent::isotropic(&[0.0, 0.0], 1.0)],
        });
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let b = bimodal();
        let y = [0.3, 0.45];
        let mut g = [0.0; 2];
        b.eval_with_grad(&y, &mut g);
        let h = 1e-6;
        for a in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[a] += h;
            ym[a] -= h;
            let fd = (b.eval_extended(&yp) - b.eval_extended(&ym)) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn uniform_sampling_matches_domain_sampler() {
        let u = Density::uniform(DomainSpec::unit_disk()).unwrap();
        let d = Domain::new(DomainSpec::unit_disk()).unwrap();
        assert_eq!(u.sample(64, 4).unwrap(), d.sample_interior(64, 4).unwrap());
    }

    #[test]
    fn gaussian_sample_mean_matches_quadrature() {
        let g = gaussian1();
        let n = 100_000;
        let s = g.sample(n, 17).unwrap();
        for a in 0..2 {
            let m = g.marginal(a);
            let mean = simpson(|t| t * m.pdf(t), 0.0, 1.0, 4096);
            let var = simpson(|t| (t - mean).powi(2) * m.pdf(t), 0.0, 1.0, 4096);
            let emp = s.iter().map(|p| p[a]).sum::<f64>() / n as f64;
            assert!((emp - mean).abs() <= 3.0 * (var / n as f64).sqrt(), "axis {a}: {emp} vs {mean}");
        }
    }

    #[test]
    fn bimodal_halves_match_quadrature_mass() {
        let b = bimodal();
        let n = 100_000;
        let s = b.sample(n, 23).unwrap();
        let lower = s.iter().filter(|p| p[1] < 0.5).count() as f64 / n as f64;
        let m = b.marginal(1);
        let mass = simpson(|t| m.pdf(t), 0.0, 0.5, 4096);
        assert!((lower - mass).abs() <= 0.01 * mass);
        assert!(((1.0 - lower) - (1.0 - mass)).abs() <= 0.01 * (1.0 - mass));
    }

    #[test]
    fn histogram_matches_cell_quadrature() {
        // 10⁷ rather than 10⁶ draws: at 10⁶ the lightest cell's relative
        // standard error alone is 4.5%, which a 5% band cannot absorb.
        let g = gaussian1();
        let n = 10_000_000;
        let s = g.sample(n, 31).unwrap();
        let r = 20;
        let mut counts = vec![0.0; r * r];
        for p in s.iter() {
            let i = ((p[0] * r as f64) as usize).min(r - 1);
            let j = ((p[1] * r as f64) as usize).min(r - 1);
            counts[i * r + j] += 1.0;
        }
        // separable density: cell mass = product of 1D marginal masses
        let (mx, my) = (g.marginal(0), g.marginal(1));
        let h = 1.0 / r as f64;
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let mass = (mx.cdf((i + 1) as f64 * h) - mx.cdf(i as f64 * h))
                    * (my.cdf((j + 1) as f64 * h) - my.cdf(j as f64 * h));
                worst = worst.max((counts[i * r + j] / n as f64 - mass).abs() / mass);
            }
        }
        assert!(worst <= 0.05, "max relative deviation {worst}");
    }

    #[test]
    fn marginal_cdf_and_quantile_are_inverse() {
        let m = gaussian1().marginal(0);
        assert!((m.cdf(1.0) - 1.0).abs() < 1e-14);
        for u in [0.1, 0.5, 0.93] {
            assert!((m.cdf(m.quantile(u)) - u).abs() < 1e-11);
        }
    }

    #[test]
    fn separability() {
        assert!(gaussian1().is_separable());
        assert!(bimodal().is_separable());
        let two_axes = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![
                GaussianComponent::isotropic(&[0.2, 0.2], 0.1),
                GaussianComponent::isotropic(&[0.8, 0.8], 0.1),
            ],
        })
        .unwrap();
        assert!(!two_axes.is_separable());
        assert!(!Density::uniform(DomainSpec::unit_disk()).unwrap().is_separable());
    }

    #[test]
    fn positivity() {
        let g = gaussian1();
        assert!(g.eval_extended(&[3.0, -3.0]) > 0.0);
        let u = Density::uniform(DomainSpec::unit_box(3)).unwrap();
        assert!(u.eval_extended(&[9.0, 9.0, 9.0]) > 0.0);
    }
}
