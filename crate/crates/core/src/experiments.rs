//! Experiment files: a run configuration plus the evaluations to perform,
//! and the built-in presets for the six reference experiments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytic_maps::{disk_to_ellipse_exact, ellipse_to_ellipse_exact, separable_rearrangement, ReferenceMap};
use crate::densities::{Density, DensitySpec, GaussianComponent};
use crate::domains::DomainSpec;
use crate::error::{Error, Result};
use crate::loss::BoundaryMode;
use crate::training::{Counts, ProblemConfig, RunConfig, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    DiskEllipse,
    EllipseEllipse,
    GaussUniform,
    GaussGauss,
    BimodalUniform,
    Cube3d,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::DiskEllipse,
        ExperimentId::EllipseEllipse,
        ExperimentId::GaussUniform,
        ExperimentId::GaussGauss,
        ExperimentId::BimodalUniform,
        ExperimentId::Cube3d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::DiskEllipse => "disk-ellipse",
            ExperimentId::EllipseEllipse => "ellipse-ellipse",
            ExperimentId::GaussUniform => "gauss-uniform",
            ExperimentId::GaussGauss => "gauss-gauss",
            ExperimentId::BimodalUniform => "bimodal-uniform",
            ExperimentId::Cube3d => "cube-3d",
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown experiment `{0}`")]
pub struct UnknownExperiment(pub String);

impl FromStr for ExperimentId {
    type Err = UnknownExperiment;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| UnknownExperiment(s.to_string()))
    }
}

/// Which reference map errors are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// `∇u = (2x₁ + 7/2, x₂/2)`; requires the matching disk and ellipse.
    DiskToEllipse,
    /// Rotation map between two centred ellipses `M_X B₁`, `M_Y B₁`.
    EllipseToEllipse,
    /// Per-axis monotone rearrangement of separable box densities.
    SeparableRearrangement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramRequest {
    pub samples: usize,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    /// Grid resolution of the pointwise error field (2D only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_field: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramRequest>,
    /// Boundary samples per side for the boundary-image Hausdorff check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_check: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Ensemble size; run `i` draws its seed from `run.seed` and `i`.
    #[serde(default = "one")]
    pub runs: usize,
    pub run: RunConfig,
    #[serde(default)]
    pub evaluation: EvaluationRequest,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("experiment", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        self.run.validate()?;
        let ev = &self.evaluation;
        if ev.error_field == Some(0) {
            return Err(Error::config("evaluation.error_field", "resolution must be at least 1"));
        }
        if ev.error_field.is_some() && self.run.widths[0] != 2 {
            return Err(Error::config("evaluation.error_field", "only available in two dimensions"));
        }
        if ev.error_field.is_some() && ev.reference.is_none() {
            return Err(Error::config("evaluation.error_field", "needs a reference map"));
        }
        if let Some(h) = ev.histogram {
            if h.samples == 0 || h.resolution == 0 {
                return Err(Error::config("evaluation.histogram", "samples and resolution must be positive"));
            }
        }
        if matches!(ev.boundary_check, Some(n) if n < 2) {
            return Err(Error::config("evaluation.boundary_check", "must be at least 2"));
        }
        if let Some(r) = ev.reference {
            reference_map(r, &self.run.problem)?;
        }
        Ok(())
    }

    pub fn reference(&self) -> Result<Option<ReferenceMap>> {
        self.evaluation.reference.map(|r| reference_map(r, &self.run.problem)).transpose()
    }
}

fn matrix2(m: &[Vec<f64>]) -> Option<[[f64; 2]; 2]> {
    match m {
        [a, b] if a.len() == 2 && b.len() == 2 => Some([[a[0], a[1]], [b[0], b[1]]]),
        _ => None,
    }
}

/// Builds the reference map named by `spec` for `problem`, checking that the
/// problem is one the map applies to.
pub fn reference_map(spec: ReferenceSpec, problem: &ProblemConfig) -> Result<ReferenceMap> {
    let bad = |why: &str| Error::config("evaluation.reference", why.to_string());
    let uniform_ball = |d: &DensitySpec| match d {
        DensitySpec::Uniform { support: DomainSpec::BallImage { matrix, center } } => Some((matrix.clone(), center.clone())),
        _ => None,
    };
    match spec {
        ReferenceSpec::DiskToEllipse => {
            let exact = disk_to_ellipse_exact();
            let want_src = DomainSpec::unit_disk();
            let want_tgt = DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0]);
            match (&problem.source, &problem.target) {
                (DensitySpec::Uniform { support: s }, DensitySpec::Uniform { support: t })
                    if *s == want_src && *t == want_tgt =>
                {
                    Ok(exact)
                }
                _ => Err(bad("disk_to_ellipse needs the uniform unit disk and the matching ellipse")),
            }
        }
        ReferenceSpec::EllipseToEllipse => {
            let (Some((mx, cx)), Some((my, cy))) = (uniform_ball(&problem.source), uniform_ball(&problem.target))
            else {
                return Err(bad("ellipse_to_ellipse needs uniform densities on ellipses"));
            };
            if cx.iter().chain(&cy).any(|&c| c != 0.0) {
                return Err(bad("ellipse_to_ellipse needs centred ellipses"));
            }
            let (Some(mx), Some(my)) = (matrix2(&mx), matrix2(&my)) else {
                return Err(bad("ellipse_to_ellipse is two-dimensional"));
            };
            ellipse_to_ellipse_exact(mx, my)
        }
        ReferenceSpec::SeparableRearrangement => {
            let f = Density::new(problem.source.clone())?;
            let g = Density::new(problem.target.clone())?;
            separable_rearrangement(&f, &g).map_err(|e| bad(&e.to_string()))
        }
    }
}

fn uniform_square(dim: usize) -> DensitySpec {
    DensitySpec::Uniform { support: DomainSpec::unit_box(dim) }
}

fn gaussian(dim: usize, center: &[f64], variance: f64) -> DensitySpec {
    DensitySpec::GaussianMixture {
        support: DomainSpec::unit_box(dim),
        components: vec![GaussianComponent::isotropic(center, variance)],
    }
}

fn base_run(source: DensitySpec, target: DensitySpec) -> RunConfig {
    let dim = source.support().dim();
    RunConfig {
        problem: ProblemConfig { source, target, boundary: BoundaryMode::Transport, boundary_weight: 1.0, dirichlet: None },
        widths: vec![dim, 10, 10, 10, 10, 1],
        seed: 1,
        counts: Counts::default(),
        schedule: Schedule::default(),
        pretrain: Default::default(),
        adam: Default::default(),
        lbfgs: Default::default(),
        record_wall_time: false,
    }
}

/// Built-in configuration of each reference experiment.
pub fn preset(id: ExperimentId) -> ExperimentConfig {
    let histogram = Some(HistogramRequest { samples: 100_000, resolution: 80 });
    let (runs, run, evaluation) = match id {
        ExperimentId::DiskEllipse => (
            10,
            base_run(
                DensitySpec::Uniform { support: DomainSpec::unit_disk() },
                DensitySpec::Uniform { support: DomainSpec::ellipse([[2.0, 0.0], [0.0, 0.5]], [3.5, 0.0]) },
            ),
            EvaluationRequest {
                reference: Some(ReferenceSpec::DiskToEllipse),
                error_field: Some(100),
                boundary_check: Some(2000),
                ..Default::default()
            },
        ),
        ExperimentId::EllipseEllipse => {
            let mut run = base_run(
                DensitySpec::Uniform { support: DomainSpec::ellipse([[0.8, 0.0], [0.0, 0.4]], [0.0, 0.0]) },
                DensitySpec::Uniform { support: DomainSpec::ellipse([[0.8, 0.2], [0.2, 0.6]], [0.0, 0.0]) },
            );
            run.schedule.adam_epochs = 400;
            run.schedule.lbfgs_epochs = 1000;
            (
                1,
                run,
                EvaluationRequest {
                    reference: Some(ReferenceSpec::EllipseToEllipse),
                    error_field: Some(100),
                    boundary_check: Some(2000),
                    ..Default::default()
                },
            )
        }
        ExperimentId::GaussUniform => (
            1,
            base_run(gaussian(2, &[0.25, 0.75], 0.25), uniform_square(2)),
            EvaluationRequest {
                reference: Some(ReferenceSpec::SeparableRearrangement),
                error_field: Some(80),
                histogram,
                ..Default::default()
            },
        ),
        ExperimentId::GaussGauss => (
            1,
            base_run(gaussian(2, &[0.25, 0.75], 0.25), gaussian(2, &[0.75, 0.25], 0.25)),
            EvaluationRequest { histogram, ..Default::default() },
        ),
        ExperimentId::BimodalUniform => (
            1,
            base_run(
                DensitySpec::GaussianMixture {
                    support: DomainSpec::unit_box(2),
                    components: vec![
                        GaussianComponent { center: vec![0.5, 0.2], variances: vec![0.25, 0.015625], weight: 1.0 },
                        GaussianComponent { center: vec![0.5, 0.8], variances: vec![0.25, 0.015625], weight: 1.0 },
                    ],
                },
                uniform_square(2),
            ),
            EvaluationRequest { histogram, ..Default::default() },
        ),
        ExperimentId::Cube3d => (
            1,
            base_run(gaussian(3, &[0.75, 0.75, 0.75], 0.125), uniform_square(3)),
            EvaluationRequest {
                histogram: Some(HistogramRequest { samples: 1_000_000, resolution: 20 }),
                boundary_check: Some(2000),
                ..Default::default()
            },
        ),
    };
    ExperimentConfig { name: id.as_str().to_string(), runs, run, evaluation, output: None }
}
