//! Monte Carlo ensembles of independent realizations and their statistics.
//!
//! Realization `i` uses seed `base_seed + i`. Runs may execute on any number of
//! workers; results are always reduced in realization order, so reports are
//! bit-reproducible.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{check_scheme, SchemeKind};
use crate::lyapunov::{run, HistorySample, LeAccumulator, LeRunConfig, Method};
use crate::model::SdeSystem;
use crate::models::build_model;

/// Share of failed realizations above which an ensemble is flagged.
pub const FAILURE_THRESHOLD: f64 = 0.05;

/// Gaussian 95 % quantile used for the confidence intervals.
pub const Z95: f64 = 1.96;

/// Short label such as `c-em` or `d-mil`.
pub fn method_label(method: Method, scheme: SchemeKind) -> &'static str {
    match (method, scheme) {
        (Method::DiscreteQr, SchemeKind::EulerMaruyama) => "d-em",
        (Method::DiscreteQr, SchemeKind::Milstein) => "d-mil",
        (Method::ContinuousQr, SchemeKind::EulerMaruyama) => "c-em",
        (Method::ContinuousQr, SchemeKind::Milstein) => "c-mil",
    }
}

/// Inverse of [`method_label`].
pub fn parse_method_label(label: &str) -> Option<(Method, SchemeKind)> {
    Some(match label.to_ascii_lowercase().as_str() {
        "d-em" => (Method::DiscreteQr, SchemeKind::EulerMaruyama),
        "d-mil" => (Method::DiscreteQr, SchemeKind::Milstein),
        "c-em" => (Method::ContinuousQr, SchemeKind::EulerMaruyama),
        "c-mil" => (Method::ContinuousQr, SchemeKind::Milstein),
        _ => return None,
    })
}

/// Outcome of one realization.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: usize,
    pub seed: u64,
    pub outcome: Result<LeAccumulator>,
}

/// Per-exponent statistics of `λ_i(T)` over the successful realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub horizon: f64,
    pub h: f64,
    pub method: &'static str,
    pub base_seed: u64,
    /// Realizations that entered the statistics.
    pub n: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation; absent for `n < 2`.
    pub std: Option<Vec<f64>>,
    pub var: Option<Vec<f64>>,
    pub ci95: Option<Vec<(f64, f64)>>,
    pub rel_error_pct: Option<Vec<f64>>,
    pub wall_seconds: f64,
    /// Indices of realizations that failed (non-finite or singular).
    pub failed: Vec<usize>,
}

impl EnsembleReport {
    /// Requested realization count.
    pub fn requested(&self) -> usize {
        self.n + self.failed.len()
    }

    /// Standard error `std / √n` per exponent.
    pub fn std_error(&self) -> Option<Vec<f64>> {
        let s = self.std.as_ref()?;
        let rn = (self.n as f64).sqrt();
        Some(s.iter().map(|v| v / rn).collect())
    }

    pub fn lle(&self) -> f64 {
        self.mean[0]
    }

    pub fn excessive_failures(&self) -> bool {
        self.failed.len() as f64 > FAILURE_THRESHOLD * self.requested() as f64
    }

    /// Turns an over-threshold failure count into [`Error::PartialFailure`].
    pub fn check_failures(&self) -> Result<()> {
        if self.excessive_failures() {
            return Err(Error::PartialFailure {
                failed: self.failed.len(),
                total: self.requested(),
                indices: self.failed.clone(),
            });
        }
        Ok(())
    }

    /// Aggregates realizations in index order.
    pub fn from_realizations(
        cfg: &LeRunConfig,
        base_seed: u64,
        runs: &[Realization],
        oracle: Option<&[f64]>,
        wall_seconds: f64,
    ) -> Result<Self> {
        let mut failed = Vec::new();
        let mut samples: Vec<Vec<f64>> = Vec::with_capacity(runs.len());
        for r in runs {
            match &r.outcome {
                Ok(acc) => {
                    let e = acc.exponents();
                    if e.iter().all(|v| v.is_finite()) {
                        samples.push(e);
                    } else {
                        failed.push(r.index);
                    }
                }
                Err(_) => failed.push(r.index),
            }
        }
        if samples.is_empty() {
            return Err(Error::PartialFailure {
                failed: failed.len(),
                total: runs.len(),
                indices: failed,
            });
        }
        let n = samples.len();
        let d = samples[0].len();
        let mut mean = vec![0.0; d];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let (std, var, ci95) = if n >= 2 {
            let mut var = vec![0.0; d];
            for s in &samples {
                for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
            let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            // keep var = std² exactly as reported
            let var: Vec<f64> = std.iter().map(|s| s * s).collect();
            let half = |s: f64| Z95 * s / (n as f64).sqrt();
            let ci = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| (m - half(*s), m + half(*s)))
                .collect();
            (Some(std), Some(var), Some(ci))
        } else {
            (None, None, None)
        };

        let rel_error_pct = oracle.map(|o| {
            mean.iter()
                .zip(o)
                .map(|(m, r)| 100.0 * (m - r).abs() / r.abs())
                .collect()
        });

        Ok(Self {
            horizon: cfg.horizon,
            h: cfg.h,
            method: method_label(cfg.method, cfg.scheme),
            base_seed,
            n,
            mean,
            std,
            var,
            ci95,
            rel_error_pct,
            wall_seconds,
            failed,
        })
    }
}

/// Worker count for an ensemble; `None` uses the global rayon pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Workers(pub Option<usize>);

fn with_pool<T: Send>(workers: Workers, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers.0 {
        None => Ok(f()),
        Some(0) => Err(Error::config("workers", "must be at least 1")),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `n` realizations with seeds `base_seed + 0..n`. Configuration errors
/// abort; per-path numerical failures are kept in the returned outcomes.
pub fn run_realizations<S: SdeSystem + ?Sized>(
    s: &S,
    cfg: &LeRunConfig,
    n: usize,
    base_seed: u64,
    workers: Workers,
) -> Result<Vec<Realization>> {
    if n == 0 {
        return Err(Error::config("n", "ensemble needs at least one realization"));
    }
    cfg.validate(s.dim())?;
    check_scheme(s, cfg.scheme)?;
    with_pool(workers, || {
        (0..n)
            .into_par_iter()
            .map(|index| {
                let seed = base_seed.wrapping_add(index as u64);
                let mut c = cfg.clone();
                c.seed = seed;
                Realization {
                    index,
                    seed,
                    outcome: run(s, &c),
                }
            })
            .collect()
    })
}

/// Runs an ensemble and summarizes it, failing with
/// [`Error::PartialFailure`] when more than 5 % of the realizations fail.
pub fn run_ensemble<S: SdeSystem + ?Sized>(
    s: &S,
    cfg: &LeRunConfig,
    n: usize,
    base_seed: u64,
    oracle: Option<&[f64]>,
    workers: Workers,
) -> Result<EnsembleReport> {
    let report = run_ensemble_flagged(s, cfg, n, base_seed, oracle, workers)?;
    report.check_failures()?;
    Ok(report)
}

/// Like [`run_ensemble`] but returns the report with its failure list even
/// when the threshold is exceeded.
pub fn run_ensemble_flagged<S: SdeSystem + ?Sized>(
    s: &S,
    cfg: &LeRunConfig,
    n: usize,
    base_seed: u64,
    oracle: Option<&[f64]>,
    workers: Workers,
) -> Result<EnsembleReport> {
    let start = Instant::now();
    let runs = run_realizations(s, cfg, n, base_seed, workers)?;
    let wall = start.elapsed().as_secs_f64();
    EnsembleReport::from_realizations(cfg, base_seed, &runs, oracle, wall)
}

/// Where a swept parameter lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepParam {
    Step,
    Horizon,
    Model(String),
}

impl SweepParam {
    pub fn parse(name: &str) -> Self {
        match name {
            "h" => SweepParam::Step,
            "T" => SweepParam::Horizon,
            other => SweepParam::Model(other.to_string()),
        }
    }
}

/// Ensembles over a list of parameter values of a registered model.
///
/// Every value reuses the same seeds (`base_seed + 0..n`). For model
/// parameters the model is rebuilt and the run starts from its default initial
/// state. Reports are flagged, not rejected, on excessive failures.
pub fn sweep(
    model: &str,
    overrides: &[(String, String)],
    cfg: &LeRunConfig,
    param: &str,
    values: &[f64],
    n: usize,
    base_seed: u64,
    workers: Workers,
) -> Result<Vec<(f64, EnsembleReport)>> {
    let which = SweepParam::parse(param);
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        let mut ov = overrides.to_vec();
        match &which {
            SweepParam::Step => c.h = v,
            SweepParam::Horizon => c.horizon = v,
            SweepParam::Model(name) => ov.push((name.clone(), v.to_string())),
        }
        let m = build_model(model, &ov)?;
        if matches!(which, SweepParam::Model(_)) {
            c.x0 = m.x0.clone();
        }
        let oracle = m.oracle()?;
        let report = run_ensemble_flagged(&*m.system, &c, n, base_seed, oracle.as_deref(), workers)?;
        out.push((v, report));
    }
    Ok(out)
}

/// Mean and variance of the sorted `λ(t)` across realizations at each
/// recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStats {
    pub n: usize,
    pub t: Vec<f64>,
    /// `mean[k][i]`: exponent `i` at time `t[k]`.
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl ConvergenceStats {
    /// Monotone-trend check over the last half of the samples: each variance
    /// may exceed its predecessor by at most three standard deviations of the
    /// sample-variance estimator, `3·√(2/(n−1))·𝕍`.
    pub fn variance_settles(&self) -> bool {
        if self.n < 2 || self.t.len() < 2 {
            return true;
        }
        let slack = 3.0 * (2.0 / (self.n - 1) as f64).sqrt();
        let start = self.t.len() / 2;
        self.var[start..].windows(2).all(|w| {
            w[1].iter()
                .zip(&w[0])
                .all(|(next, prev)| *next <= prev + slack * prev + 1e-300)
        })
    }
}

/// Sorts a history sample's estimates in descending order.
pub fn sorted_sample(s: &HistorySample) -> Vec<f64> {
    let mut v = s.lambda.clone();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn convergence_stats(histories: &[&[HistorySample]]) -> Result<ConvergenceStats> {
    let first = histories
        .first()
        .ok_or_else(|| Error::config("histories", "no realizations"))?;
    for h in histories {
        if h.len() != first.len() || h.iter().zip(first.iter()).any(|(a, b)| a.t != b.t) {
            return Err(Error::MismatchedGrids);
        }
    }
    let n = histories.len();
    let d = first.first().map_or(0, |s| s.lambda.len());
    let mut t = Vec::with_capacity(first.len());
    let mut mean = Vec::with_capacity(first.len());
    let mut var = Vec::with_capacity(first.len());
    for k in 0..first.len() {
        t.push(first[k].t);
        let rows: Vec<Vec<f64>> = histories.iter().map(|h| sorted_sample(&h[k])).collect();
        let mut m = vec![0.0; d];
        for r in &rows {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        let mut s = vec![0.0; d];
        if n >= 2 {
            for r in &rows {
                for ((a, v), mu) in s.iter_mut().zip(r).zip(&m) {
                    *a += (v - mu) * (v - mu);
                }
            }
            s.iter_mut().for_each(|a| *a /= (n - 1) as f64);
        }
        mean.push(m);
        var.push(s);
    }
    Ok(ConvergenceStats { n, t, mean, var })
}
