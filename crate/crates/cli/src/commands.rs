use std::path::{Path, PathBuf};

use icnn_ot::analytic_maps::ReferenceMap;
use icnn_ot::domains::{Domain, DomainSpec};
use icnn_ot::evaluation::{
    boundary_image_check, error_field, evaluate_run, l2_error_on, sensitivity_sweep, test_points, transport_histogram,
    EvalReport, HausdorffEstimate, SweepAxis,
};
use icnn_ot::experiments::{preset, ExperimentConfig, ExperimentId, UnknownExperiment};
use icnn_ot::icnn::{audit_convexity, ConvexityAudit, IcnnParams};
use icnn_ot::io::{write_error_field_csv, Versioned, write_histogram_csv, write_json, write_sweep_csv, write_train_csv};
use icnn_ot::loss::LossBreakdown;
use icnn_ot::seed::{derive, Stream};
use icnn_ot::training::{run, run_ensemble, Band, EnsembleReport, Monitor, Phase, RunConfig};
use icnn_ot::Error;
use log::{info, warn};
use serde::Serialize;

use crate::OUT_ENV;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}; valid experiments: {ids}", ids = ExperimentId::valid_ids())]
    UnknownExperiment(#[from] UnknownExperiment),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::UnknownExperiment(_) => 4,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) => match e {
                Error::NonFinite(_) | Error::SamplingFailure { .. } | Error::Envelope { .. } => 3,
                Error::Io(_) | Error::Csv(_) => 1,
                _ => 2,
            },
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&config.name)
    })
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.run.seed = s;
    }
    Ok(config)
}

fn save_params(path: &Path, params: &IcnnParams) -> Result<()> {
    let mut text = params.to_json()?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct HistogramSummary {
    samples: usize,
    resolution: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    source_overflow: u64,
    image_overflow: u64,
    image_max_over_mean: f64,
    /// Mean absolute deviation of image cell fractions from target cell masses, over the mean cell mass.
    mass_deviation: f64,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    #[serde(flatten)]
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_field_max: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    histogram: Option<HistogramSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary_check: Option<HausdorffEstimate>,
}

/// Runs every evaluation the config asks for on `params`, writing the grid
/// CSVs into `dir`.
fn evaluate(
    config: &ExperimentConfig,
    run_config: &RunConfig,
    params: &IcnnParams,
    reference: Option<&ReferenceMap>,
    dir: &Path,
) -> Result<EvalSummary> {
    let problem = run_config.build_problem()?;
    let source = problem.source().support();
    let target = problem.target().support();
    let seed = derive(run_config.seed, Stream::Evaluation);
    let report =
        evaluate_run(params, reference, source, problem.collocation(), run_config.counts.test, run_config.seed)?;
    let request = &config.evaluation;

    let mut error_field_max = None;
    if let (Some(res), Some(r)) = (request.error_field, reference) {
        let field = error_field(params, r, source, res)?;
        write_error_field_csv(&dir.join("error_field.csv"), &field)?;
        error_field_max = Some(field.max());
    }

    let mut histogram = None;
    if let Some(h) = request.histogram {
        let (slo, shi) = source.bounding_box();
        let (tlo, thi) = target.bounding_box();
        let lower: Vec<f64> = slo.iter().zip(tlo).map(|(a, b)| a.min(*b)).collect();
        let upper: Vec<f64> = shi.iter().zip(thi).map(|(a, b)| a.max(*b)).collect();
        let hist = transport_histogram(params, problem.source(), h.samples, seed, &lower, &upper, h.resolution)?;
        write_histogram_csv(&dir.join("histogram.csv"), &hist)?;
        histogram = Some(HistogramSummary {
            samples: h.samples,
            resolution: h.resolution,
            source_overflow: hist.source_overflow,
            image_overflow: hist.image_overflow,
            image_max_over_mean: hist.image_max_over_mean(),
            mass_deviation: hist.mass_deviation(problem.target()),
            lower,
            upper,
        });
    }

    let boundary_check =
        request.boundary_check.map(|n| boundary_image_check(params, source, target, n, seed)).transpose()?;
    Ok(EvalSummary { report, error_field_max, histogram, boundary_check })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    name: String,
    seed: u64,
    final_loss: Option<LossBreakdown>,
    audits: Vec<(Phase, ConvexityAudit)>,
    stalled_epochs: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<EvalSummary>,
}

pub fn train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let config = load(config_path, seed)?;
    let reference = config.reference()?;
    let dir = out_dir(out, &config);
    create(&dir)?;
    info!("training `{}` with seed {} into {}", config.name, config.run.seed, dir.display());
    match run(&config.run, None) {
        Ok(output) => {
            save_params(&dir.join("params.json"), &output.params)?;
            write_train_csv(&dir.join("train.csv"), &output.report.rows)?;
            let evaluation = evaluate(&config, &config.run, &output.params, reference.as_ref(), &dir)?;
            if let Some(l2) = evaluation.report.l2_test {
                info!("L2 test error {l2:.4e}");
            }
            let r = output.report;
            write_json(
                &dir.join("summary.json"),
                &TrainSummary {
                    name: config.name.clone(),
                    seed: config.run.seed,
                    final_loss: r.final_loss,
                    audits: r.audits,
                    stalled_epochs: r.stalled_epochs,
                    error: None,
                    evaluation: Some(evaluation),
                },
            )?;
            Ok(())
        }
        Err(failure) => {
            write_train_csv(&dir.join("train.csv"), &failure.report.rows)?;
            if let Some(p) = &failure.last_good {
                save_params(&dir.join("params.last_good.json"), p)?;
            }
            let message = failure.to_string();
            let r = failure.report;
            write_json(
                &dir.join("summary.json"),
                &TrainSummary {
                    name: config.name.clone(),
                    seed: config.run.seed,
                    final_loss: r.final_loss,
                    audits: r.audits,
                    stalled_epochs: r.stalled_epochs,
                    error: Some(message.clone()),
                    evaluation: None,
                },
            )?;
            match failure.error {
                Error::NonFinite(_) => Err(CliError::Numerical(message)),
                e => Err(e.into()),
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct RunEval {
    run_id: usize,
    l2_train: Option<f64>,
    l2_test: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PaperSummary {
    name: String,
    runs: usize,
    l2_test: Option<Band>,
    l2_train: Option<Band>,
    per_run: Vec<RunEval>,
    /// Evaluations of the first successful run.
    evaluation: EvalSummary,
    ensemble: EnsembleReport,
}

pub fn paper(id: &str, runs: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let id: ExperimentId = id.parse()?;
    let mut config = preset(id);
    if let Some(n) = runs {
        config.runs = n;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    config.validate()?;
    let dir = out_dir(out, &config);
    run_experiment(&config, &dir)
}

fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let reference = config.reference()?;
    let base = &config.run;
    // Monitor L² test error on one fixed test set shared by the ensemble.
    let source = Domain::new(base.problem.source.support().clone())?;
    let test = test_points(&source, base.counts.test, base.seed)?;
    let monitor_fn = |p: &IcnnParams| l2_error_on(p, reference.as_ref().expect("monitor needs a reference"), &source, &test);
    let monitor: Option<Monitor<'_>> = reference.as_ref().map(|_| &monitor_fn as _);

    create(dir)?;
    info!("running `{}`: {} run(s) from seed {} into {}", config.name, config.runs, base.seed, dir.display());
    let ensemble = run_ensemble(base, config.runs, base.seed, monitor).map_err(|e| match e {
        Error::NonFinite(m) => CliError::Numerical(m),
        e => e.into(),
    })?;

    let mut per_run = Vec::new();
    let mut first_eval = None;
    for (i, outcome) in ensemble.outcomes.iter().enumerate() {
        let run_dir = dir.join(format!("run-{i:02}"));
        create(&run_dir)?;
        match outcome {
            Ok(out) => {
                save_params(&run_dir.join("params.json"), &out.params)?;
                write_train_csv(&run_dir.join("train.csv"), &out.report.rows)?;
                let run_config = base.with_seed(ensemble.report.runs[i].seed);
                let eval_dir = if first_eval.is_none() { dir } else { run_dir.as_path() };
                let summary = if first_eval.is_none() {
                    evaluate(config, &run_config, &out.params, reference.as_ref(), eval_dir)?
                } else {
                    let problem = run_config.build_problem()?;
                    let report = evaluate_run(
                        &out.params,
                        reference.as_ref(),
                        problem.source().support(),
                        problem.collocation(),
                        base.counts.test,
                        run_config.seed,
                    )?;
                    EvalSummary { report, error_field_max: None, histogram: None, boundary_check: None }
                };
                per_run.push(RunEval { run_id: i, l2_train: summary.report.l2_train, l2_test: summary.report.l2_test });
                if first_eval.is_none() {
                    first_eval = Some(summary);
                }
            }
            Err(failure) => {
                warn!("run {i} failed: {failure}");
                write_train_csv(&run_dir.join("train.csv"), &failure.report.rows)?;
            }
        }
    }
    let band = |f: fn(&RunEval) -> Option<f64>| {
        let v: Vec<f64> = per_run.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| Band::of(&v))
    };
    let l2_test = band(|r| r.l2_test);
    let l2_train = band(|r| r.l2_train);
    if let Some(b) = &l2_test {
        info!("L2 test error over {} runs: mean {:.4e}, std {:.4e}", b.n, b.mean, b.std);
    }
    write_json(
        &dir.join("summary.json"),
        &PaperSummary {
            name: config.name.clone(),
            runs: config.runs,
            l2_test,
            l2_train,
            per_run,
            evaluation: first_eval.expect("run_ensemble guarantees a successful run"),
            ensemble: ensemble.report,
        },
    )?;
    Ok(())
}

pub fn sweep(
    config_path: &Path,
    axis: &str,
    values: &[f64],
    runs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load(config_path, seed)?;
    let axis: SweepAxis = axis.parse()?;
    for &v in values {
        axis.apply(&config.run, v)?;
    }
    let reference = config
        .reference()?
        .ok_or_else(|| CliError::Core(Error::config("evaluation.reference", "a sweep needs a reference map")))?;
    let runs = runs.unwrap_or(config.runs);
    if runs == 0 {
        return Err(Error::config("runs", "must be at least 1").into());
    }
    let dir = out_dir(out, &config);
    create(&dir)?;
    info!("sweeping `{}` along {axis:?} over {values:?}, {runs} run(s) each", config.name);
    let report = sensitivity_sweep(&config.run, axis, values, runs, config.run.seed, &reference)?;
    for cell in &report.cells {
        match (&cell.l2_test, &cell.error) {
            (Some(b), _) => info!("{} = {}: L2 test mean {:.4e}, std {:.4e}", axis_name(axis), cell.value, b.mean, b.std),
            (None, Some(e)) => warn!("{} = {}: {e}", axis_name(axis), cell.value),
            _ => {}
        }
    }
    write_sweep_csv(&dir.join("sweep.csv"), &report)?;
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(())
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Epochs => "epochs",
        SweepAxis::Collocation => "collocation",
        SweepAxis::Ratio => "ratio",
    }
}

fn load_params(path: &Path) -> Result<IcnnParams> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    Ok(IcnnParams::from_json(&text)?)
}

pub fn eval(config_path: &Path, params_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let config = load(config_path, seed)?;
    let params = load_params(params_path)?;
    if params.widths() != config.run.widths.as_slice() {
        return Err(Error::config("widths", format!("parameters have widths {:?}", params.widths())).into());
    }
    let reference = config.reference()?;
    let dir = out_dir(out, &config);
    create(&dir)?;
    let summary = evaluate(&config, &config.run, &params, reference.as_ref(), &dir)?;
    if let Some(l2) = summary.report.l2_test {
        info!("L2 test error {l2:.4e}");
    }
    write_json(&dir.join("eval.json"), &summary)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AuditReport {
    convexity: ConvexityAudit,
    /// Max |∇u − central difference of u| over the audit points.
    gradient_fd_error: f64,
    /// Max asymmetry of the finite-difference Hessian of u.
    hessian_asymmetry: f64,
}

pub fn audit(params_path: &Path, config_path: Option<&Path>, n: usize, seed: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::config("points", "must be at least 1").into());
    }
    let params = load_params(params_path)?;
    let d = params.input_dim();
    let spec = match config_path {
        Some(p) => ExperimentConfig::load(p)?.run.problem.source.support().clone(),
        None => DomainSpec::unit_box(d),
    };
    let domain = Domain::new(spec)?;
    if domain.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: domain.dim() }.into());
    }
    let points = domain.sample_interior(n, seed)?;
    let convexity = audit_convexity(&params, points.as_flat(), 1e-10)?;

    let h = 1e-5;
    let mut gradient_fd_error = 0.0f64;
    let mut hessian_asymmetry = 0.0f64;
    for x in points.iter() {
        let g = params.grad(x)?;
        let mut fd_hess = vec![vec![0.0; d]; d];
        for a in 0..d {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[a] += h;
            xm[a] -= h;
            let fd = (params.value(&xp)? - params.value(&xm)?) / (2.0 * h);
            gradient_fd_error = gradient_fd_error.max((fd - g[a]).abs());
            let (gp, gm) = (params.grad(&xp)?, params.grad(&xm)?);
            for b in 0..d {
                fd_hess[a][b] = (gp[b] - gm[b]) / (2.0 * h);
            }
        }
        for a in 0..d {
            for b in 0..a {
                hessian_asymmetry = hessian_asymmetry.max((fd_hess[a][b] - fd_hess[b][a]).abs());
            }
        }
    }
    let report = AuditReport { convexity, gradient_fd_error, hessian_asymmetry };
    let mut text = serde_json::to_string_pretty(&Versioned::new(&report)).map_err(Error::from)?;
    text.push('\n');
    print!("{text}");
    if !report.convexity.passed() {
        return Err(CliError::Numerical(format!(
            "{} of {} points have an indefinite Hessian",
            report.convexity.violations, report.convexity.points
        )));
    }
    Ok(())
}
