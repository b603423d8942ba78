//! Source and target supports: affine images of the unit ball and
//! axis-aligned boxes, with interior and boundary samplers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::MAX_DIM;
use crate::error::{Error, Result};

/// Consecutive rejections tolerated before an interior sampler gives up.
pub const MAX_REJECTIONS: u64 = 1_000_000;

/// Declarative domain description, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `{ M z + c : |z| < 1 }` with `M` symmetric positive definite.
    BallImage { matrix: Vec<Vec<f64>>, center: Vec<f64> },
    /// `Π [lower_i, upper_i]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl DomainSpec {
    pub fn unit_disk() -> Self {
        DomainSpec::BallImage { matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]], center: vec![0.0, 0.0] }
    }

    pub fn ellipse(matrix: [[f64; 2]; 2], center: [f64; 2]) -> Self {
        DomainSpec::BallImage {
            matrix: matrix.iter().map(|r| r.to_vec()).collect(),
            center: center.to_vec(),
        }
    }

    pub fn unit_box(dim: usize) -> Self {
        DomainSpec::Box { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::BallImage { center, .. } => center.len(),
            DomainSpec::Box { lower, .. } => lower.len(),
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Ball { m: DMatrix<f64>, m_inv: DMatrix<f64>, c: DVector<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// A validated domain.
#[derive(Debug, Clone)]
pub struct Domain {
    spec: DomainSpec,
    shape: Shape,
    dim: usize,
    bbox: (Vec<f64>, Vec<f64>),
}

/// Checks symmetry and positive definiteness (all eigenvalues > 0).
pub fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSpd("matrix is not square".into()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSpd("matrix is not symmetric".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotSpd(format!("smallest eigenvalue {min}")));
    }
    Ok(())
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Domain("matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Domain {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        let dim = spec.dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        let (shape, bbox) = match &spec {
            DomainSpec::BallImage { matrix, center } => {
                let m = to_matrix(matrix)?;
                if m.nrows() != dim {
                    return Err(Error::Domain("matrix and center dimensions differ".into()));
                }
                check_spd(&m)?;
                let m_inv = m.clone().try_inverse().ok_or_else(|| Error::NotSpd("singular".into()))?;
                let c = DVector::from_column_slice(center);
                // extent along axis a is the norm of row a of M
                let half: Vec<f64> = (0..dim).map(|a| m.row(a).norm()).collect();
                let lo = (0..dim).map(|a| center[a] - half[a]).collect();
                let hi = (0..dim).map(|a| center[a] + half[a]).collect();
                (Shape::Ball { m, m_inv, c }, (lo, hi))
            }
            DomainSpec::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Domain("lower and upper bounds differ in length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::Domain("box needs lower < upper on every axis".into()));
                }
                (Shape::Box { lo: lower.clone(), hi: upper.clone() }, (lower.clone(), upper.clone()))
            }
        };
        Ok(Domain { spec, shape, dim, bbox })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bbox.0, &self.bbox.1)
    }

    pub fn is_box(&self) -> bool {
        matches!(self.shape, Shape::Box { .. })
    }

    /// Short identifier used in batch provenance.
    pub fn id(&self) -> String {
        match &self.shape {
            Shape::Ball { m, c, .. } => format!("ball_image(M={:?}, c={:?})", m.as_slice(), c.as_slice()),
            Shape::Box { lo, hi } => format!("box({lo:?}, {hi:?})"),
        }
    }

    /// Lebesgue measure: `|B₁|·det M` for ball images, product of sides for boxes.
    pub fn volume(&self) -> f64 {
        match &self.shape {
            Shape::Ball { m, .. } => {
                let unit = match self.dim {
                    1 => 2.0,
                    2 => std::f64::consts::PI,
                    _ => 4.0 / 3.0 * std::f64::consts::PI,
                };
                unit * m.determinant()
            }
            Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
        }
    }

    /// Implicit function: negative inside, zero on the boundary, positive outside.
    pub fn implicit(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { m_inv, c, .. } => {
                let z = m_inv * (DVector::from_column_slice(x) - c);
                z.norm_squared() - 1.0
            }
            Shape::Box { lo, hi } => (0..self.dim)
                .map(|a| (lo[a] - x[a]).max(x[a] - hi[a]))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Strict interior membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && self.implicit(x) < 0.0
    }

    /// `n` i.i.d. uniform interior points by rejection from the bounding box.
    ///
    /// The points come from one sequential stream, so a larger `n` with the
    /// same seed extends a smaller sample.
    pub fn sample_interior(&self, n: usize, seed: u64) -> Result<PointBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.bounding_box();
        let mut points = Vec::with_capacity(n * self.dim);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            let mut rejected = 0u64;
            loop {
                for a in 0..self.dim {
                    x[a] = lo[a] + (hi[a] - lo[a]) * rng.random::<f64>();
                }
                if self.contains(&x) {
                    break;
                }
                rejected += 1;
                if rejected >= MAX_REJECTIONS {
                    return Err(Error::SamplingFailure { attempts: rejected });
                }
            }
            points.extend_from_slice(&x);
        }
        Ok(PointBatch::new(self.dim, points, Provenance::new("uniform_interior", seed, self.id())))
    }

    /// `n` points on the boundary. Ball images push angle-uniform (2D) or
    /// sphere-uniform (3D) unit vectors through `z ↦ Mz + c`; boxes pick a
    /// face with probability proportional to its area.
    pub fn sample_boundary(&self, n: usize, seed: u64) -> Result<PointBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut points = Vec::with_capacity(n * d);
        match &self.shape {
            Shape::Ball { m, c, .. } => {
                for _ in 0..n {
                    let z = match d {
                        1 => DVector::from_element(1, if rng.random::<bool>() { 1.0 } else { -1.0 }),
                        2 => {
                            let t = std::f64::consts::TAU * rng.random::<f64>();
                            DVector::from_column_slice(&[t.cos(), t.sin()])
                        }
                        _ => loop {
                            let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                            let r = v.norm();
                            if r > 1e-12 {
                                break v / r;
                            }
                        },
                    };
                    points.extend((m * z + c).iter());
                }
            }
            Shape::Box { lo, hi } => {
                let side: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
                let face_area: Vec<f64> = (0..d)
                    .map(|a| (0..d).filter(|&b| b != a).map(|b| side[b]).product())
                    .collect();
                let total: f64 = 2.0 * face_area.iter().sum::<f64>();
                for _ in 0..n {
                    let mut u = rng.random::<f64>() * total;
                    let mut face = 2 * d - 1;
                    for f in 0..2 * d {
                        let area = face_area[f / 2];
                        if u < area {
                            face = f;
                            break;
                        }
                        u -= area;
                    }
                    let axis = face / 2;
                    for a in 0..d {
                        let v = if a == axis {
                            if face % 2 == 0 {
                                lo[a]
                            } else {
                                hi[a]
                            }
                        } else {
                            lo[a] + side[a] * rng.random::<f64>()
                        };
                        points.push(v);
                    }
                }
            }
        }
        Ok(PointBatch::new(d, points, Provenance::new("boundary", seed, self.id())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sampler: String,
    pub seed: u64,
    pub domain: String,
}

impl Provenance {
    pub fn new(sampler: &str, seed: u64, domain: String) -> Self {
        Provenance { sampler: sampler.into(), seed, domain }
    }
}

/// `N × d` points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    dim: usize,
    points: Vec<f64>,
    pub provenance: Provenance,
}

impl PointBatch {
    pub fn new(dim: usize, points: Vec<f64>, provenance: Provenance) -> Self {
        assert_eq!(points.len() % dim, 0);
        PointBatch { dim, points, provenance }
    }

    /// A batch built by hand (tests, fixed point sets).
    pub fn from_points(dim: usize, points: Vec<f64>) -> Self {
        Self::new(dim, points, Provenance::new("explicit", 0, String::new()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.points.chunks_exact(self.dim)
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> PointBatch {
        PointBatch {
            dim: self.dim,
            points: self.points[..n * self.dim].to_vec(),
            provenance: self.provenance.clone(),
        }
    }
}
