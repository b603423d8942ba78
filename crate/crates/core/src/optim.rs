//! Full-batch optimizers over a flat parameter vector: Adam, and L-BFGS with
//! a strong Wolfe line search run in epochs of a fixed number of iterations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Adam { config, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {} at Adam step {}", grad[i], self.t + 1)));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub history: usize,
    pub iterations_per_epoch: usize,
    /// Initial trial step of every line search after the first.
    pub lr: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
    /// The epoch stops once `max |g|` falls to this.
    pub tolerance_grad: f64,
    /// The epoch stops once a step or loss change falls below this.
    pub tolerance_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            iterations_per_epoch: 20,
            lr: 1.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            tolerance_grad: 1e-7,
            tolerance_change: 1e-9,
        }
    }
}

/// What happened during one L-BFGS epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Ended early on a tolerance.
    pub converged: bool,
    /// Neither the Wolfe search nor the steepest-descent fallback could
    /// decrease the loss.
    pub stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`, clamped
/// to `bounds`; the midpoint when the cubic has no minimizer.
fn cubic_minimizer(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
struct Probe {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

struct Search {
    probe: Probe,
    evaluations: usize,
    wolfe: bool,
}

/// L-BFGS state carried across epochs.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    config: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    iterations: u64,
    skipped: u64,
}

pub type Evaluation = (f64, Vec<f64>);

impl Lbfgs {
    pub fn new(config: LbfgsConfig) -> Self {
        Lbfgs { config, s: VecDeque::new(), y: VecDeque::new(), iterations: 0, skipped: 0 }
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.config
    }

    pub fn history_len(&self) -> usize {
        self.s.len()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Curvature pairs rejected so far.
    pub fn skipped_pairs(&self) -> u64 {
        self.skipped
    }

    /// Two-loop recursion: `-H g` for the current inverse-Hessian estimate.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = self.s.len();
        if k == 0 {
            return q;
        }
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.y[i], &self.s[i])).collect();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let (s, y) = (&self.s[k - 1], &self.y[k - 1]);
        let gamma = dot(s, y) / dot(y, y);
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..k {
            let beta = rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q
    }

    /// Stores `(s, y)` unless it violates `sᵀy > 1e-10 |s||y|`.
    fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-10 * norm(&s) * norm(&y)) {
            self.skipped += 1;
            return;
        }
        if self.s.len() == self.config.history {
            self.s.pop_front();
            self.y.pop_front();
        }
        if self.config.history > 0 {
            self.s.push_back(s);
            self.y.push_back(y);
        }
    }

    pub fn reset_history(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    /// Runs up to `iterations_per_epoch` quasi-Newton iterations on `x`.
    ///
    /// `eval` must be deterministic. A non-finite value at the starting point
    /// is an error; non-finite trial points inside a line search are treated
    /// as too large and the step is shrunk.
    pub fn epoch<F>(&mut self, x: &mut Vec<f64>, mut eval: F) -> Result<EpochSummary>
    where
        F: FnMut(&[f64]) -> Result<Evaluation>,
    {
        let cfg = self.config;
        let (mut f, mut g) = eval(x)?;
        let mut evaluations = 1;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss {f} at the start of an L-BFGS epoch")));
        }
        let summary = |f: f64, g: &[f64], iterations, evaluations, converged, stalled| EpochSummary {
            value: f,
            grad_norm: norm(g),
            iterations,
            evaluations,
            converged,
            stalled,
        };
        if max_abs(&g) <= cfg.tolerance_grad {
            return Ok(summary(f, &g, 0, evaluations, true, false));
        }
        for it in 0..cfg.iterations_per_epoch {
            let mut d = self.direction(&g);
            let mut gtd = dot(&g, &d);
            if !(gtd < 0.0) {
                // lost positive definiteness numerically; restart
                self.reset_history();
                d = g.iter().map(|v| -v).collect();
                gtd = dot(&g, &d);
            }
            let t0 = if self.iterations == 0 {
                (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0) * cfg.lr
            } else {
                cfg.lr
            };
            let start = Probe { t: 0.0, f, g: g.clone(), gtd };
            let search = self.strong_wolfe(x, &d, &start, t0, &mut eval)?;
            evaluations += search.evaluations;
            let accepted = if search.wolfe {
                Some(search.probe)
            } else {
                self.reset_history();
                let (p, n) = self.backtrack(x, &g, f, &mut eval)?;
                evaluations += n;
                p.map(|p| {
                    d = g.iter().map(|v| -v).collect();
                    p
                })
            };
            let Some(p) = accepted else {
                return Ok(summary(f, &g, it, evaluations, false, true));
            };
            debug_assert!(p.f <= f, "accepted step increased the loss: {} > {f}", p.f);
            let step: Vec<f64> = d.iter().map(|v| p.t * v).collect();
            let x_new = axpy(x, 1.0, &step);
            let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            self.push_pair(step.clone(), y);
            self.iterations += 1;
            let f_old = f;
            *x = x_new;
            f = p.f;
            g = p.g;
            if max_abs(&g) <= cfg.tolerance_grad
                || max_abs(&step) <= cfg.tolerance_change
                || (f - f_old).abs() < cfg.tolerance_change
            {
                return Ok(summary(f, &g, it + 1, evaluations, true, false));
            }
        }
        Ok(summary(f, &g, cfg.iterations_per_epoch, evaluations, false, false))
    }

    fn probe<F>(x: &[f64], d: &[f64], t: f64, eval: &mut F) -> Result<Probe>
    where
        F: FnMut(&[f64]) -> Result<Evaluation>,
    {
        let (f, g) = eval(&axpy(x, t, d))?;
        let gtd = dot(&g, d);
        if f.is_finite() && gtd.is_finite() {
            Ok(Probe { t, f, g, gtd })
        } else {
            Ok(Probe { t, f: f64::INFINITY, g, gtd: f64::NAN })
        }
    }

    /// Bracketing followed by cubic-interpolation zoom. `wolfe` is false when
    /// the evaluation budget runs out first.
    fn strong_wolfe<F>(&self, x: &[f64], d: &[f64], start: &Probe, t0: f64, eval: &mut F) -> Result<Search>
    where
        F: FnMut(&[f64]) -> Result<Evaluation>,
    {
        let cfg = &self.config;
        let (f0, gtd0) = (start.f, start.gtd);
        let armijo = |p: &Probe| p.f <= f0 + cfg.c1 * p.t * gtd0;
        let curvature = |p: &Probe| p.gtd.abs() <= -cfg.c2 * gtd0;
        let done = |probe: Probe, evaluations| {
            debug_assert!(probe.f <= f0 + cfg.c1 * probe.t * gtd0 && probe.gtd.abs() <= -cfg.c2 * gtd0);
            Ok(Search { probe, evaluations, wolfe: true })
        };
        let d_max = max_abs(d);

        let mut prev = start.clone();
        let mut t = t0;
        let mut evals = 0;
        let (mut lo, mut hi);
        loop {
            let p = Self::probe(x, d, t, eval)?;
            evals += 1;
            if !armijo(&p) || (evals > 1 && p.f >= prev.f) {
                lo = prev;
                hi = p;
                break;
            }
            if curvature(&p) {
                return done(p, evals);
            }
            if p.gtd >= 0.0 {
                lo = p;
                hi = prev;
                break;
            }
            if evals >= cfg.max_line_search {
                return Ok(Search { probe: p, evaluations: evals, wolfe: false });
            }
            let next = cubic_minimizer(prev.t, prev.f, prev.gtd, p.t, p.f, p.gtd, (p.t + 0.01 * (p.t - prev.t), 10.0 * p.t));
            prev = p;
            t = next;
        }

        // zoom: `lo` satisfies sufficient decrease and has the lowest value
        // seen; the minimizer lies between `lo.t` and `hi.t`
        while evals < cfg.max_line_search {
            let width = (hi.t - lo.t).abs();
            if width * d_max < cfg.tolerance_change {
                break;
            }
            let (a, b) = if lo.t < hi.t { (lo.t, hi.t) } else { (hi.t, lo.t) };
            let mut t = if hi.f.is_finite() {
                cubic_minimizer(lo.t, lo.f, lo.gtd, hi.t, hi.f, hi.gtd, (a, b))
            } else {
                0.5 * (a + b)
            };
            // keep away from the bracket ends so the interval shrinks
            let margin = 0.1 * width;
            t = t.clamp(a + margin, b - margin);
            let p = Self::probe(x, d, t, eval)?;
            evals += 1;
            if !armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if curvature(&p) {
                    return done(p, evals);
                }
                if p.gtd * (hi.t - lo.t) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        Ok(Search { probe: lo, evaluations: evals, wolfe: false })
    }

    /// Steepest descent with Armijo backtracking from a unit-ℓ₁ step.
    fn backtrack<F>(&self, x: &[f64], g: &[f64], f0: f64, eval: &mut F) -> Result<(Option<Probe>, usize)>
    where
        F: FnMut(&[f64]) -> Result<Evaluation>,
    {
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let gtd = dot(g, &d);
        let mut t = (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0);
        for n in 1..=50 {
            let p = Self::probe(x, &d, t, eval)?;
            if p.f <= f0 + self.config.c1 * t * gtd && p.f < f0 {
                return Ok((Some(p), n));
            }
            t *= 0.5;
        }
        Ok((None, 50))
    }
}
