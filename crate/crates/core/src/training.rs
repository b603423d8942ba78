//! Training runs and ensembles.
//!
//! A run samples its point batches once, initializes the network, fits
//! `∇u ≈ id` with Adam, then minimizes the transport loss with Adam followed
//! by epochs of L-BFGS. Everything random is keyed off the run seed.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{Density, DensitySpec};
use crate::domains::Domain;
use crate::error::{Error, Result};
use crate::icnn::{audit_convexity, ConvexityAudit, IcnnParams};
use crate::loss::{identity_fit, BoundaryMode, LossBreakdown, Problem, Quadratic};
use crate::optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig};
use crate::seed::{derive, ensemble_member, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub source: DensitySpec,
    pub target: DensitySpec,
    pub boundary: BoundaryMode,
    /// Weight `C` of the boundary term.
    #[serde(default = "one")]
    pub boundary_weight: f64,
    /// Boundary values `u = h` for Dirichlet problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirichlet: Option<Quadratic>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub collocation: usize,
    /// Boundary samples of the source domain (the Dirichlet points in that mode).
    pub boundary_source: usize,
    /// Boundary samples of the target domain; unused for Dirichlet problems.
    pub boundary_target: usize,
    /// Monte Carlo points for test-error monitoring.
    pub test: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Counts { collocation: 800, boundary_source: 800, boundary_target: 800, test: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub pretrain_steps: usize,
    pub adam_epochs: usize,
    pub lbfgs_epochs: usize,
    /// Test-error monitoring interval during the Adam phase; L-BFGS epochs
    /// are always monitored.
    pub monitor_every_adam: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { pretrain_steps: 500, adam_epochs: 400, lbfgs_epochs: 100, monitor_every_adam: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub widths: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub counts: Counts,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub pretrain: AdamConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    /// Record per-epoch wall time. Off by default so that reports are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.counts;
        if c.collocation == 0 {
            return Err(Error::config("counts.collocation", "must be at least 1"));
        }
        if c.boundary_source == 0 {
            return Err(Error::config("counts.boundary_source", "must be at least 1"));
        }
        if self.problem.boundary == BoundaryMode::Transport && c.boundary_target == 0 {
            return Err(Error::config("counts.boundary_target", "must be at least 1"));
        }
        if c.test == 0 {
            return Err(Error::config("counts.test", "must be at least 1"));
        }
        if !(self.problem.boundary_weight >= 0.0 && self.problem.boundary_weight.is_finite()) {
            return Err(Error::config("problem.boundary_weight", "must be finite and nonnegative"));
        }
        match (self.problem.boundary, &self.problem.dirichlet) {
            (BoundaryMode::Dirichlet, None) => {
                return Err(Error::config("problem.dirichlet", "dirichlet mode needs boundary values"))
            }
            (BoundaryMode::Transport, Some(_)) => {
                return Err(Error::config("problem.dirichlet", "only allowed in dirichlet mode"))
            }
            _ => {}
        }
        if self.problem.source.support().dim() != self.problem.target.support().dim() {
            return Err(Error::config("problem.target", "source and target dimensions differ"));
        }
        if self.widths.first() != Some(&self.problem.source.support().dim()) {
            return Err(Error::config("widths", "first width must equal the problem dimension"));
        }
        if self.schedule.monitor_every_adam == 0 {
            return Err(Error::config("schedule.monitor_every_adam", "must be at least 1"));
        }
        crate::icnn::Layout::new(&self.widths).map_err(|e| Error::config("widths", e.to_string()))?;
        Ok(())
    }

    /// Densities, frozen point batches and boundary data of this run.
    pub fn build_problem(&self) -> Result<Problem> {
        let source = Density::new(self.problem.source.clone())?;
        let target = Density::new(self.problem.target.clone())?;
        let x: &Domain = source.support();
        let c = &self.counts;
        let colloc = x.sample_interior(c.collocation, derive(self.seed, Stream::Collocation))?;
        let sb = x.sample_boundary(c.boundary_source, derive(self.seed, Stream::SourceBoundary))?;
        match self.problem.boundary {
            BoundaryMode::Transport => {
                let tb =
                    target.support().sample_boundary(c.boundary_target, derive(self.seed, Stream::TargetBoundary))?;
                Problem::from_parts(
                    BoundaryMode::Transport,
                    source,
                    target,
                    colloc,
                    Some(sb),
                    Some(tb),
                    None,
                    self.problem.boundary_weight,
                )
            }
            BoundaryMode::Dirichlet => {
                let q = self.problem.dirichlet.clone();
                let h = q.as_ref().map(|q| move |x: &[f64]| q.value(x));
                let h_ref = h.as_ref().map(|f| f as &dyn Fn(&[f64]) -> f64);
                Problem::from_parts(
                    BoundaryMode::Dirichlet,
                    source,
                    target,
                    colloc,
                    Some(sb),
                    None,
                    h_ref,
                    self.problem.boundary_weight,
                )
            }
        }
    }

    pub fn initial_params(&self) -> Result<IcnnParams> {
        IcnnParams::init(&self.widths, derive(self.seed, Stream::Init))
    }

    /// The same configuration with another run seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adam,
    Lbfgs,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        })
    }
}

/// One logged epoch. Pretraining rows carry the identity-fit objective in
/// `total` and no loss components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub phase: Phase,
    pub epoch: usize,
    /// Adam epochs count one each, L-BFGS epochs count once per inner
    /// iteration slot, after the Adam phase. `None` during pretraining.
    pub effective_epoch: Option<usize>,
    pub total: f64,
    pub e_pde: Option<f64>,
    pub e_boundary: Option<f64>,
    pub grad_norm: f64,
    pub wall_ms: Option<f64>,
    /// Monitored test error, when a monitor was supplied and this epoch was sampled.
    pub monitor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    /// Convexity audits at phase ends, in order.
    pub audits: Vec<(Phase, ConvexityAudit)>,
    /// L-BFGS epochs whose line searches could not make progress.
    pub stalled_epochs: Vec<usize>,
    pub final_loss: Option<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub params: IcnnParams,
    pub report: TrainReport,
}

/// A run that stopped on an error. `last_good` is the most recent parameter
/// vector with a finite loss, when there was one.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub last_good: Option<IcnnParams>,
    pub report: TrainReport,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} logged epochs: {}", self.report.rows.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, last_good: None, report: TrainReport::default() }
    }
}

/// Callback evaluating a test error of a parameter snapshot.
pub type Monitor<'a> = &'a (dyn Fn(&IcnnParams) -> Result<f64> + Sync);

const AUDIT_POINTS: usize = 1000;
const AUDIT_TOL: f64 = 1e-10;

struct Runner<'a> {
    config: &'a RunConfig,
    monitor: Option<Monitor<'a>>,
    audit_points: Vec<f64>,
    start: Instant,
    report: TrainReport,
    last_good: IcnnParams,
}

impl Runner<'_> {
    fn wall(&self) -> Option<f64> {
        self.config.record_wall_time.then(|| self.start.elapsed().as_secs_f64() * 1e3)
    }

    fn fail(self, error: Error) -> RunFailure {
        RunFailure { error, last_good: Some(self.last_good), report: self.report }
    }

    fn audit(&mut self, phase: Phase, params: &IcnnParams) -> Result<()> {
        let a = audit_convexity(params, &self.audit_points, AUDIT_TOL)?;
        self.report.audits.push((phase, a));
        Ok(())
    }

    fn monitor(&self, params: &IcnnParams) -> Result<Option<f64>> {
        self.monitor.map(|m| m(params)).transpose()
    }
}

fn non_finite(what: &str, phase: Phase, epoch: usize) -> Error {
    Error::NonFinite(format!("{what} became non-finite in {phase} epoch {epoch}"))
}

/// Runs pretraining, Adam and L-BFGS as configured.
///
/// `monitor`, if given, is evaluated every `monitor_every_adam` Adam epochs
/// and after every L-BFGS epoch.
pub fn run(config: &RunConfig, monitor: Option<Monitor<'_>>) -> std::result::Result<RunOutput, RunFailure> {
    config.validate()?;
    let problem = config.build_problem()?;
    let mut params = config.initial_params()?;
    let (lo, hi) = problem.source().support().bounding_box();
    let audit_points = problem
        .source()
        .support()
        .sample_interior(AUDIT_POINTS, derive(config.seed, Stream::Evaluation))
        .map(|b| b.as_flat().to_vec())
        .unwrap_or_else(|_| lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect());
    let mut r = Runner {
        config,
        monitor,
        audit_points,
        start: Instant::now(),
        report: TrainReport::default(),
        last_good: params.clone(),
    };
    let sched = &config.schedule;

    if sched.pretrain_steps > 0 {
        let mut adam = Adam::new(params.len(), config.pretrain);
        for epoch in 1..=sched.pretrain_steps {
            let (value, grad) = match identity_fit(&params, problem.collocation()) {
                Ok(v) => v,
                Err(e) => return Err(r.fail(e)),
            };
            if !value.is_finite() {
                return Err(r.fail(non_finite("identity fit", Phase::Pretrain, epoch)));
            }
            r.last_good = params.clone();
            r.report.rows.push(TrainRow {
                phase: Phase::Pretrain,
                epoch,
                effective_epoch: None,
                total: value,
                e_pde: None,
                e_boundary: None,
                grad_norm: norm(&grad),
                wall_ms: r.wall(),
                monitor: None,
            });
            if let Err(e) = adam.step(params.as_mut_slice(), &grad) {
                return Err(r.fail(e));
            }
        }
        if let Err(e) = r.audit(Phase::Pretrain, &params) {
            return Err(r.fail(e));
        }
    }

    if sched.adam_epochs > 0 {
        let mut adam = Adam::new(params.len(), config.adam);
        for epoch in 1..=sched.adam_epochs {
            let (b, grad) = match problem.evaluate_with_grad(&params) {
                Ok(v) => v,
                Err(e) => return Err(r.fail(e)),
            };
            if !b.is_finite() {
                return Err(r.fail(non_finite("loss", Phase::Adam, epoch)));
            }
            r.last_good = params.clone();
            let monitor = if epoch % sched.monitor_every_adam == 0 || epoch == 1 {
                match r.monitor(&params) {
                    Ok(m) => m,
                    Err(e) => return Err(r.fail(e)),
                }
            } else {
                None
            };
            r.report.rows.push(TrainRow {
                phase: Phase::Adam,
                epoch,
                effective_epoch: Some(epoch),
                total: b.total,
                e_pde: Some(b.e_pde),
                e_boundary: Some(b.e_boundary),
                grad_norm: norm(&grad),
                wall_ms: r.wall(),
                monitor,
            });
            if let Err(e) = adam.step(params.as_mut_slice(), &grad) {
                return Err(r.fail(e));
            }
        }
        if let Err(e) = r.audit(Phase::Adam, &params) {
            return Err(r.fail(e));
        }
    }

    if sched.lbfgs_epochs > 0 {
        let mut lbfgs = Lbfgs::new(config.lbfgs);
        let per_epoch = config.lbfgs.iterations_per_epoch;
        let mut x = params.as_slice().to_vec();
        for epoch in 1..=sched.lbfgs_epochs {
            let summary = lbfgs.epoch(&mut x, |v| {
                let p = params.with_values(v.to_vec());
                let (b, g) = problem.evaluate_with_grad(&p)?;
                Ok((b.total, g))
            });
            let summary = match summary {
                Ok(s) => s,
                Err(e) => return Err(r.fail(e)),
            };
            params = params.with_values(x.clone());
            // the epoch summary holds the total only; recompute the parts
            let b = match problem.evaluate(&params) {
                Ok(b) => b,
                Err(e) => return Err(r.fail(e)),
            };
            if !b.is_finite() {
                return Err(r.fail(non_finite("loss", Phase::Lbfgs, epoch)));
            }
            r.last_good = params.clone();
            if summary.stalled {
                r.report.stalled_epochs.push(epoch);
            }
            let monitor = match r.monitor(&params) {
                Ok(m) => m,
                Err(e) => return Err(r.fail(e)),
            };
            r.report.rows.push(TrainRow {
                phase: Phase::Lbfgs,
                epoch,
                effective_epoch: Some(sched.adam_epochs + per_epoch * epoch),
                total: b.total,
                e_pde: Some(b.e_pde),
                e_boundary: Some(b.e_boundary),
                grad_norm: summary.grad_norm,
                wall_ms: r.wall(),
                monitor,
            });
        }
        if let Err(e) = r.audit(Phase::Lbfgs, &params) {
            return Err(r.fail(e));
        }
    }

    if sched.adam_epochs + sched.lbfgs_epochs > 0 {
        match problem.evaluate(&params) {
            Ok(b) => r.report.final_loss = Some(b),
            Err(e) => return Err(r.fail(e)),
        }
    }
    Ok(RunOutput { params, report: r.report })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean, spread and 5th–95th percentiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
    pub n: usize,
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl Band {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Band {
            mean,
            std: var.sqrt(),
            median: percentile(&sorted, 0.5),
            p05: percentile(&sorted, 0.05),
            p95: percentile(&sorted, 0.95),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBand {
    pub phase: Phase,
    pub epoch: usize,
    pub effective_epoch: Option<usize>,
    pub loss: Band,
    pub monitor: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub final_loss: Option<LossBreakdown>,
    pub stalled_epochs: usize,
    pub convex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub seed_base: u64,
    pub runs: Vec<RunRecord>,
    pub epochs: Vec<EpochBand>,
    pub final_loss: Option<Band>,
}

pub struct Ensemble {
    pub report: EnsembleReport,
    /// Per-run outcomes in run order.
    pub outcomes: Vec<std::result::Result<RunOutput, RunFailure>>,
}

impl Ensemble {
    pub fn successes(&self) -> impl Iterator<Item = (usize, &RunOutput)> {
        self.outcomes.iter().enumerate().filter_map(|(i, o)| o.as_ref().ok().map(|o| (i, o)))
    }
}

/// Seed of run `i` of an ensemble: [`ensemble_member`] of the base.
pub fn run_seed(seed_base: u64, i: usize) -> u64 {
    ensemble_member(seed_base, i as u64)
}

/// `n_runs` independent runs of `config` (points, initialization and all
/// other streams re-drawn from [`run_seed`]), executed in parallel.
///
/// Fails unless at least half of the runs succeed.
pub fn run_ensemble(
    config: &RunConfig,
    n_runs: usize,
    seed_base: u64,
    monitor: Option<Monitor<'_>>,
) -> Result<Ensemble> {
    if n_runs == 0 {
        return Err(Error::config("runs", "must be at least 1"));
    }
    config.validate()?;
    let outcomes: Vec<_> =
        (0..n_runs).into_par_iter().map(|i| run(&config.with_seed(run_seed(seed_base, i)), monitor)).collect();
    let ok = outcomes.iter().filter(|o| o.is_ok()).count();
    if 2 * ok < n_runs {
        let first = outcomes.iter().find_map(|o| o.as_ref().err()).map(|f| f.to_string()).unwrap_or_default();
        return Err(Error::NonFinite(format!("only {ok} of {n_runs} runs succeeded; first failure: {first}")));
    }
    let runs = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| match o {
            Ok(out) => RunRecord {
                run_id: i,
                seed: run_seed(seed_base, i),
                error: None,
                final_loss: out.report.final_loss,
                stalled_epochs: out.report.stalled_epochs.len(),
                convex: out.report.audits.iter().all(|(_, a)| a.passed()),
            },
            Err(f) => RunRecord {
                run_id: i,
                seed: run_seed(seed_base, i),
                error: Some(f.to_string()),
                final_loss: None,
                stalled_epochs: f.report.stalled_epochs.len(),
                convex: false,
            },
        })
        .collect();
    let good: Vec<&TrainReport> = outcomes.iter().filter_map(|o| o.as_ref().ok()).map(|o| &o.report).collect();
    let n_rows = good.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let epochs = (0..n_rows)
        .map(|k| {
            let row = &good[0].rows[k];
            let losses: Vec<f64> = good.iter().map(|r| r.rows[k].total).collect();
            let mons: Vec<f64> = good.iter().filter_map(|r| r.rows[k].monitor).collect();
            EpochBand {
                phase: row.phase,
                epoch: row.epoch,
                effective_epoch: row.effective_epoch,
                loss: Band::of(&losses),
                monitor: (!mons.is_empty()).then(|| Band::of(&mons)),
            }
        })
        .collect();
    let finals: Vec<f64> = good.iter().filter_map(|r| r.final_loss.map(|b| b.total)).collect();
    let report = EnsembleReport {
        seed_base,
        runs,
        epochs,
        final_loss: (!finals.is_empty()).then(|| Band::of(&finals)),
    };
    Ok(Ensemble { report, outcomes })
}
