//! Accuracy measurements of trained maps: L² errors against reference maps,
//! gridded error fields, transported-sample histograms, boundary-image
//! Hausdorff estimates and sensitivity sweeps.

use serde::{Deserialize, Serialize};

use crate::analytic_maps::ReferenceMap;
use crate::autodiff::Order;
use crate::batch::BatchEval;
use crate::densities::Density;
use crate::domains::{Domain, PointBatch};
use crate::error::{Error, Result};
use crate::icnn::{audit_convexity, ConvexityAudit, IcnnParams};
use crate::loss::nearest;
use crate::seed::{derive, Stream};
use crate::training::{run_ensemble, Band, RunConfig};

/// Anything that maps a batch of points (flat, rows of `dim`).
pub trait TransportMap: Sync {
    fn dim(&self) -> usize;
    fn map_batch(&self, points: &[f64]) -> Result<Vec<f64>>;
}

impl TransportMap for IcnnParams {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn map_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(BatchEval::new(self).eval(points, Order::Gradient)?.grads_flat())
    }
}

impl TransportMap for ReferenceMap {
    fn dim(&self) -> usize {
        ReferenceMap::dim(self)
    }

    fn map_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(points.chunks_exact(self.dim()).flat_map(|x| self.apply(x)).collect())
    }
}

/// `√(|𝒳|/n · Σ |T(xᵢ) − T_ref(xᵢ)|²)` over the given points of `domain`.
pub fn l2_error_on(map: &dyn TransportMap, reference: &ReferenceMap, domain: &Domain, points: &PointBatch) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::config("test", "need at least one point"));
    }
    let images = map.map_batch(points.as_flat())?;
    let d = points.dim();
    let mut acc = 0.0;
    for (x, y) in points.iter().zip(images.chunks_exact(d)) {
        let r = reference.apply(x);
        acc += r.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((domain.volume() * acc / points.len() as f64).sqrt())
}

/// Monte Carlo L² error on `n` fresh uniform samples of `domain`.
pub fn l2_map_error(
    map: &dyn TransportMap,
    reference: &ReferenceMap,
    domain: &Domain,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let pts = domain.sample_interior(n, seed)?;
    l2_error_on(map, reference, domain, &pts)
}

/// Test points of a run: seeded from a stream no training sampler uses.
pub fn test_points(domain: &Domain, n: usize, run_seed: u64) -> Result<PointBatch> {
    domain.sample_interior(n, derive(run_seed, Stream::TestSet))
}

/// Pointwise component errors on the cell centres of a 2D grid over the
/// bounding box; cells whose centre lies outside the domain are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    pub resolution: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Row-major `(x, y, |Δx|, |Δy|)`; `None` where masked.
    pub cells: Vec<Option<[f64; 4]>>,
}

impl ErrorField {
    pub fn max(&self) -> [f64; 2] {
        self.cells.iter().flatten().fold([0.0f64; 2], |m, c| [m[0].max(c[2]), m[1].max(c[3])])
    }

    /// Mean Euclidean error over unmasked cells whose centre satisfies `keep`.
    pub fn region_mean(&self, keep: impl Fn(f64, f64) -> bool) -> Option<f64> {
        let v: Vec<f64> =
            self.cells.iter().flatten().filter(|c| keep(c[0], c[1])).map(|c| c[2].hypot(c[3])).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn error_field(
    map: &dyn TransportMap,
    reference: &ReferenceMap,
    domain: &Domain,
    resolution: usize,
) -> Result<ErrorField> {
    if domain.dim() != 2 {
        return Err(Error::UnsupportedDimension(domain.dim()));
    }
    if resolution == 0 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    let (lo, hi) = domain.bounding_box();
    let (lower, upper) = ([lo[0], lo[1]], [hi[0], hi[1]]);
    let h = [(upper[0] - lower[0]) / resolution as f64, (upper[1] - lower[1]) / resolution as f64];
    let mut centres = Vec::new();
    let mut inside = Vec::new();
    for j in 0..resolution {
        for i in 0..resolution {
            let c = [lower[0] + (i as f64 + 0.5) * h[0], lower[1] + (j as f64 + 0.5) * h[1]];
            let keep = domain.contains(&c);
            inside.push(keep);
            if keep {
                centres.extend_from_slice(&c);
            }
        }
    }
    let images = if centres.is_empty() { Vec::new() } else { map.map_batch(&centres)? };
    let mut k = 0;
    let cells = inside
        .iter()
        .map(|&keep| {
            keep.then(|| {
                let x = &centres[2 * k..2 * k + 2];
                let y = &images[2 * k..2 * k + 2];
                let r = reference.apply(x);
                k += 1;
                [x[0], x[1], (y[0] - r[0]).abs(), (y[1] - r[1]).abs()]
            })
        })
        .collect();
    Ok(ErrorField { resolution, lower, upper, cells })
}

/// Counts of source samples and their images on a regular `r^d` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub dim: usize,
    pub resolution: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Flattened with the first axis fastest.
    pub source: Vec<u64>,
    pub image: Vec<u64>,
    pub source_overflow: u64,
    pub image_overflow: u64,
}

impl Histogram {
    fn new(lower: &[f64], upper: &[f64], resolution: usize) -> Self {
        let cells = resolution.pow(lower.len() as u32);
        Histogram {
            dim: lower.len(),
            resolution,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            source: vec![0; cells],
            image: vec![0; cells],
            source_overflow: 0,
            image_overflow: 0,
        }
    }

    /// Flat cell index of `x`, or `None` outside the closed grid box.
    pub fn cell(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            let (lo, hi) = (self.lower[a], self.upper[a]);
            if !(x[a] >= lo && x[a] <= hi) {
                return None;
            }
            let i = (((x[a] - lo) / (hi - lo)) * self.resolution as f64) as usize;
            idx += i.min(self.resolution - 1) * stride;
            stride *= self.resolution;
        }
        Some(idx)
    }

    /// Multi-index of flat cell `c`.
    pub fn coords(&self, mut c: usize) -> Vec<usize> {
        (0..self.dim)
            .map(|_| {
                let i = c % self.resolution;
                c /= self.resolution;
                i
            })
            .collect()
    }

    pub fn bin(&mut self, points: &[f64], image: bool) {
        for x in points.chunks_exact(self.dim) {
            match (self.cell(x), image) {
                (Some(c), false) => self.source[c] += 1,
                (Some(c), true) => self.image[c] += 1,
                (None, false) => self.source_overflow += 1,
                (None, true) => self.image_overflow += 1,
            }
        }
    }

    /// Largest image count over the mean count of in-grid images.
    pub fn image_max_over_mean(&self) -> f64 {
        let total: u64 = self.image.iter().sum();
        let mean = total as f64 / self.image.len() as f64;
        *self.image.iter().max().unwrap_or(&0) as f64 / mean
    }

    pub fn image_overflow_fraction(&self) -> f64 {
        let n = self.image.iter().sum::<u64>() + self.image_overflow;
        self.image_overflow as f64 / n as f64
    }

    /// Mean absolute deviation of image cell fractions from the cell masses
    /// of `target`, relative to the mean cell mass.
    pub fn mass_deviation(&self, target: &Density) -> f64 {
        let n = (self.image.iter().sum::<u64>() + self.image_overflow) as f64;
        let masses = cell_masses(target, &self.lower, &self.upper, self.resolution);
        let mean_mass = masses.iter().sum::<f64>() / masses.len() as f64;
        let mad = self.image.iter().zip(&masses).map(|(&c, m)| (c as f64 / n - m).abs()).sum::<f64>()
            / masses.len() as f64;
        mad / mean_mass
    }
}

/// Probability mass of each grid cell under `density`, by a tensor 4-point
/// Gauss–Legendre rule per cell.
pub fn cell_masses(density: &Density, lower: &[f64], upper: &[f64], resolution: usize) -> Vec<f64> {
    const NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
    const WEIGHTS: [f64; 4] = [0.347_854_845_137_453_85, 0.652_145_154_862_546_2, 0.652_145_154_862_546_2, 0.347_854_845_137_453_85];
    let d = lower.len();
    let h: Vec<f64> = (0..d).map(|a| (upper[a] - lower[a]) / resolution as f64).collect();
    let cells = resolution.pow(d as u32);
    let n_q = 4usize.pow(d as u32);
    let mut out = Vec::with_capacity(cells);
    let mut x = vec![0.0; d];
    for c in 0..cells {
        let mut rest = c;
        let idx: Vec<usize> = (0..d)
            .map(|_| {
                let i = rest % resolution;
                rest /= resolution;
                i
            })
            .collect();
        let mut acc = 0.0;
        for q in 0..n_q {
            let mut r = q;
            let mut w = 1.0;
            for a in 0..d {
                let k = r % 4;
                r /= 4;
                let mid = lower[a] + (idx[a] as f64 + 0.5) * h[a];
                x[a] = mid + 0.5 * h[a] * NODES[k];
                w *= 0.5 * h[a] * WEIGHTS[k];
            }
            acc += w * density.eval(&x);
        }
        out.push(acc);
    }
    out
}

/// Draws `n` samples of `source`, maps them, and bins both clouds on the
/// `resolution^d` grid over `[lower, upper]`.
pub fn transport_histogram(
    map: &dyn TransportMap,
    source: &Density,
    n: usize,
    seed: u64,
    lower: &[f64],
    upper: &[f64],
    resolution: usize,
) -> Result<Histogram> {
    if n == 0 || resolution == 0 {
        return Err(Error::config("histogram", "sample count and resolution must be positive"));
    }
    let pts = source.sample(n, seed)?;
    let images = map.map_batch(pts.as_flat())?;
    let mut h = Histogram::new(lower, upper, resolution);
    h.bin(pts.as_flat(), false);
    h.bin(&images, true);
    Ok(h)
}

/// The two one-sided terms of the discrete Hausdorff distance:
/// `max_a min_b |a − b|` and `max_b min_a |a − b|`.
pub fn discrete_hausdorff(a: &[f64], b: &[f64], d: usize) -> (f64, f64) {
    let one_sided = |p: &[f64], q: &[f64]| {
        p.chunks_exact(d)
            .map(|x| {
                let j = nearest(x, q, d);
                let y = &q[j * d..(j + 1) * d];
                x.iter().zip(y).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    };
    (one_sided(a, b), one_sided(b, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffEstimate {
    /// Farthest image from the sampled target boundary.
    pub image_to_target: f64,
    /// Farthest target sample from the image set.
    pub target_to_image: f64,
    pub value: f64,
}

/// Discrete Hausdorff distance between `T(∂𝒳)` and `∂𝒴`, each sampled with
/// `n` fresh points.
pub fn boundary_image_check(
    map: &dyn TransportMap,
    source: &Domain,
    target: &Domain,
    n: usize,
    seed: u64,
) -> Result<HausdorffEstimate> {
    if n < 2 {
        return Err(Error::config("n", "boundary check needs at least two points"));
    }
    let xb = source.sample_boundary(n, derive(seed, Stream::SourceBoundary))?;
    let yb = target.sample_boundary(n, derive(seed, Stream::TargetBoundary))?;
    let images = map.map_batch(xb.as_flat())?;
    let (fwd, bwd) = discrete_hausdorff(&images, yb.as_flat(), source.dim());
    Ok(HausdorffEstimate { image_to_target: fwd, target_to_image: bwd, value: fwd.max(bwd) })
}

/// Summary of a trained run against a reference map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub l2_train: Option<f64>,
    pub l2_test: Option<f64>,
    /// Largest per-component error over the test points.
    pub max_component_error: Option<Vec<f64>>,
    pub convexity: ConvexityAudit,
}

/// L² errors on the training collocation points and on `n_test` fresh test
/// points, plus a convexity audit on the test points.
pub fn evaluate_run(
    params: &IcnnParams,
    reference: Option<&ReferenceMap>,
    domain: &Domain,
    collocation: &PointBatch,
    n_test: usize,
    run_seed: u64,
) -> Result<EvalReport> {
    let test = test_points(domain, n_test, run_seed)?;
    let convexity = audit_convexity(params, test.as_flat(), 1e-10)?;
    let Some(reference) = reference else {
        return Ok(EvalReport { l2_train: None, l2_test: None, max_component_error: None, convexity });
    };
    let d = domain.dim();
    let images = params.map_batch(test.as_flat())?;
    let mut max = vec![0.0f64; d];
    for (x, y) in test.iter().zip(images.chunks_exact(d)) {
        let r = reference.apply(x);
        for a in 0..d {
            max[a] = max[a].max((y[a] - r[a]).abs());
        }
    }
    Ok(EvalReport {
        l2_train: Some(l2_error_on(params, reference, domain, collocation)?),
        l2_test: Some(l2_error_on(params, reference, domain, &test)?),
        max_component_error: Some(max),
        convexity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of L-BFGS epochs.
    Epochs,
    /// Number of collocation points; boundary counts unchanged.
    Collocation,
    /// `N_b / N_c` with `N_c + N_b` held at its base value.
    Ratio,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epochs" => Ok(SweepAxis::Epochs),
            "collocation" => Ok(SweepAxis::Collocation),
            "ratio" => Ok(SweepAxis::Ratio),
            other => Err(Error::config("axis", format!("unknown sweep axis `{other}` (epochs, collocation, ratio)"))),
        }
    }
}

impl SweepAxis {
    /// The base configuration moved to `value` along this axis.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        let positive_int = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::config("values", format!("{v} is not a positive integer")))
            }
        };
        match self {
            SweepAxis::Epochs => c.schedule.lbfgs_epochs = positive_int(value)?,
            SweepAxis::Collocation => c.counts.collocation = positive_int(value)?,
            SweepAxis::Ratio => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::config("values", format!("ratio {value} must be positive")));
                }
                let total = (base.counts.collocation + base.counts.boundary_source) as f64;
                let n_c = (total / (1.0 + value)).round().max(1.0) as usize;
                let n_b = (total as usize).saturating_sub(n_c).max(1);
                c.counts.collocation = n_c;
                c.counts.boundary_source = n_b;
                c.counts.boundary_target = n_b;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub run_id: usize,
    pub l2_test: Option<f64>,
    pub l2_train: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub runs: Vec<SweepRun>,
    pub l2_test: Option<Band>,
    /// Set when the ensemble of this cell could not complete.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

/// Runs an ensemble at every value of `axis`. Run `i` of every cell uses the
/// same seed, so collocation sweeps see nested point sets.
pub fn sensitivity_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    runs: usize,
    seed_base: u64,
    reference: &ReferenceMap,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one sweep value is required"));
    }
    let domain = Domain::new(base.problem.source.support().clone())?;
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let config = axis.apply(base, value)?;
        let ensemble = match run_ensemble(&config, runs, seed_base, None) {
            Ok(e) => e,
            Err(e) => {
                cells.push(SweepCell { value, runs: Vec::new(), l2_test: None, error: Some(e.to_string()) });
                continue;
            }
        };
        let mut rows = Vec::with_capacity(runs);
        for (i, outcome) in ensemble.outcomes.iter().enumerate() {
            let seed = ensemble.report.runs[i].seed;
            let row = match outcome {
                Ok(out) => {
                    let colloc = config.with_seed(seed).build_problem()?.collocation().clone();
                    let eval = evaluate_run(&out.params, Some(reference), &domain, &colloc, config.counts.test, seed)?;
                    SweepRun {
                        run_id: i,
                        l2_test: eval.l2_test,
                        l2_train: eval.l2_train,
                        final_loss: out.report.final_loss.map(|b| b.total),
                        error: None,
                    }
                }
                Err(f) => SweepRun { run_id: i, l2_test: None, l2_train: None, final_loss: None, error: Some(f.to_string()) },
            };
            rows.push(row);
        }
        let errs: Vec<f64> = rows.iter().filter_map(|r| r.l2_test).collect();
        cells.push(SweepCell { value, runs: rows, l2_test: (!errs.is_empty()).then(|| Band::of(&errs)), error: None });
    }
    Ok(SweepReport { axis, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_maps::disk_to_ellipse_exact;
    use crate::densities::{DensitySpec, GaussianComponent};
    use crate::domains::DomainSpec;
    use crate::loss::BoundaryMode;
    use crate::training::{Counts, ProblemConfig, Schedule};

    struct Shifted(ReferenceMap, Vec<f64>);

    impl TransportMap for Shifted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn map_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
            let d = self.dim();
            Ok(points
                .chunks_exact(d)
                .flat_map(|x| self.0.apply(x).into_iter().zip(&self.1).map(|(a, b)| a + b).collect::<Vec<_>>())
                .collect())
        }
    }

    fn disk() -> Domain {
        Domain::new(DomainSpec::unit_disk()).unwrap()
    }

    fn ellipse() -> Domain {
        Domain::new(DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0])).unwrap()
    }

    #[test]
    fn exact_map_has_zero_error() {
        let m = disk_to_ellipse_exact();
        assert_eq!(l2_map_error(&m, &m, &disk(), 1000, 1).unwrap(), 0.0);
        let f = error_field(&m, &m, &disk(), 20).unwrap();
        assert_eq!(f.max(), [0.0, 0.0]);
        assert!(f.cells.iter().any(|c| c.is_none()));
    }

    #[test]
    fn constant_offset_error_scales_with_volume() {
        let m = disk_to_ellipse_exact();
        let shifted = Shifted(m.clone(), vec![0.03, -0.04]);
        let e = l2_map_error(&shifted, &m, &disk(), 100_000, 2).unwrap();
        let want = 0.05 * std::f64::consts::PI.sqrt();
        assert!((e - want).abs() <= 0.02 * want, "{e} vs {want}");
    }

    #[test]
    fn l2_estimates_are_consistent_in_n() {
        let params = IcnnParams::init(&[2, 6, 6, 1], 4).unwrap();
        let m = disk_to_ellipse_exact();
        let n = 2000;
        let a = l2_map_error(&params, &m, &disk(), n, 5).unwrap();
        let b = l2_map_error(&params, &m, &disk(), 4 * n, 6).unwrap();
        assert!((a - b).abs() <= 2.0 / (n as f64).sqrt() * a, "{a} vs {b}");
    }

    #[test]
    fn identity_histogram_matches_source_and_conserves_counts() {
        let id = ReferenceMap::affine(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], "box", "box");
        let f = Density::uniform(DomainSpec::unit_box(2)).unwrap();
        let h = transport_histogram(&id, &f, 5000, 1, &[0.0, 0.0], &[1.0, 1.0], 10).unwrap();
        assert_eq!(h.source, h.image);
        assert_eq!(h.image_overflow, 0);
        let shifted = Shifted(id, vec![0.5, 0.0]);
        let h = transport_histogram(&shifted, &f, 5000, 1, &[0.0, 0.0], &[1.0, 1.0], 10).unwrap();
        assert_eq!(h.source.iter().sum::<u64>(), 5000);
        assert_eq!(h.image.iter().sum::<u64>() + h.image_overflow, 5000);
        assert!(h.image_overflow > 2000);
    }

    #[test]
    fn histogram_cells_and_coordinates_round_trip() {
        let h = Histogram::new(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 4);
        let c = h.cell(&[0.3, 0.9, 1.0]).unwrap();
        assert_eq!(h.coords(c), vec![1, 3, 3]);
        assert_eq!(h.cell(&[1.01, 0.5, 0.5]), None);
    }

    #[test]
    fn cell_masses_sum_to_one() {
        let g = Density::new(DensitySpec::GaussianMixture {
            support: DomainSpec::unit_box(2),
            components: vec![GaussianComponent::isotropic(&[0.75, 0.25], 0.25)],
        })
        .unwrap();
        let m = cell_masses(&g, &[0.0, 0.0], &[1.0, 1.0], 16);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_boundary_image_is_close_to_the_target_boundary() {
        let est = boundary_image_check(&disk_to_ellipse_exact(), &disk(), &ellipse(), 2000, 1).unwrap();
        assert!(est.value <= 0.05, "{est:?}");
    }

    #[test]
    fn collapsed_map_distance_is_the_farthest_boundary_point() {
        let c = ReferenceMap::affine(vec![vec![0.0; 2]; 2], vec![3.5, 0.0], "disk", "ellipse");
        let est = boundary_image_check(&c, &disk(), &ellipse(), 4000, 2).unwrap();
        // from the centre the farthest points of the ellipse are the vertices (±2, 0)
        assert!((est.target_to_image - 2.0).abs() < 1e-3, "{est:?}");
        assert!((est.image_to_target - 0.5).abs() < 1e-3, "{est:?}");
    }

    #[test]
    fn hausdorff_terms_swap_with_the_sets() {
        let a = [0.0, 0.0, 1.0, 0.0, 5.0, 0.0];
        let b = [0.0, 0.1, 2.0, 0.0];
        let (ab, ba) = discrete_hausdorff(&a, &b, 2);
        let (ba2, ab2) = discrete_hausdorff(&b, &a, 2);
        assert_eq!((ab, ba), (ab2, ba2));
        assert_eq!(ab, 3.0);
    }

    fn tiny_config() -> RunConfig {
        RunConfig {
            problem: ProblemConfig {
                source: DensitySpec::Uniform { support: DomainSpec::unit_disk() },
                target: DensitySpec::Uniform { support: DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0]) },
                boundary: BoundaryMode::Transport,
                boundary_weight: 1.0,
                dirichlet: None,
            },
            widths: vec![2, 5, 5, 1],
            seed: 0,
            counts: Counts { collocation: 40, boundary_source: 40, boundary_target: 40, test: 200 },
            schedule: Schedule { pretrain_steps: 5, adam_epochs: 5, lbfgs_epochs: 2, monitor_every_adam: 5 },
            pretrain: Default::default(),
            adam: Default::default(),
            lbfgs: Default::default(),
            record_wall_time: false,
        }
    }

    #[test]
    fn ratio_axis_keeps_the_total() {
        let c = SweepAxis::Ratio.apply(&tiny_config(), 0.25).unwrap();
        assert_eq!((c.counts.collocation, c.counts.boundary_source), (64, 16));
        let c = SweepAxis::Ratio.apply(&tiny_config(), 1.0).unwrap();
        assert_eq!((c.counts.collocation, c.counts.boundary_source), (40, 40));
        assert!(SweepAxis::Collocation.apply(&tiny_config(), 2.5).is_err());
    }

    #[test]
    fn single_cell_sweep_matches_a_single_run() {
        let base = tiny_config();
        let reference = disk_to_ellipse_exact();
        let s = sensitivity_sweep(&base, SweepAxis::Epochs, &[2.0], 1, 7, &reference).unwrap();
        let seed = crate::training::run_seed(7, 0);
        let out = crate::training::run(&base.with_seed(seed), None).unwrap();
        let colloc = base.with_seed(seed).build_problem().unwrap().collocation().clone();
        let e = evaluate_run(&out.params, Some(&reference), &disk(), &colloc, 200, seed).unwrap();
        assert_eq!(s.cells.len(), 1);
        assert_eq!(s.cells[0].runs[0].l2_test, e.l2_test);
        assert_eq!(s.cells[0].runs[0].final_loss, out.report.final_loss.map(|b| b.total));
    }

    #[test]
    fn collocation_sweep_cells_share_point_prefixes() {
        let base = tiny_config();
        let small = SweepAxis::Collocation.apply(&base, 10.0).unwrap().build_problem().unwrap();
        let large = SweepAxis::Collocation.apply(&base, 20.0).unwrap().build_problem().unwrap();
        assert_eq!(small.collocation().as_flat(), &large.collocation().as_flat()[..20]);
    }
}
