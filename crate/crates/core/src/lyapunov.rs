//! Discrete and continuous QR engines for Lyapunov exponents of an Itô SDE.
//!
//! Both engines advance the state, a matrix factor and the running log-sums
//! `ψ_i` in lockstep from one [`WienerStream`]; `λ_i(t) = ψ_i(t) / t`.

use crate::error::{Error, Result};
use crate::integrators::{
    apply_orthogonal_generator, check_scheme, orthogonal_generator, state_step_into, transition_step_in_place,
    SchemeKind, StepWorkspace, WienerStream,
};
use crate::linalg::{Matrix, QrWorkspace};
use crate::model::SdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    DiscreteQr,
    ContinuousQr,
}

/// Settings for a single realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LeRunConfig {
    pub method: Method,
    pub scheme: SchemeKind,
    pub h: f64,
    pub horizon: f64,
    /// Steps between factorizations (discrete method only).
    pub reorth_every: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Record `λ(t)` every this many steps.
    pub history_stride: Option<usize>,
}

impl LeRunConfig {
    pub fn new(method: Method, scheme: SchemeKind, h: f64, horizon: f64, x0: Vec<f64>) -> Self {
        Self {
            method,
            scheme,
            h,
            horizon,
            reorth_every: 1,
            seed: 0,
            x0,
            history_stride: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reorth_every(mut self, every: usize) -> Self {
        self.reorth_every = every;
        self
    }

    pub fn with_history(mut self, stride: usize) -> Self {
        self.history_stride = Some(stride);
        self
    }

    /// Number of fixed steps, `round(T / h)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::config("h", "step size must be positive"));
        }
        if !(self.horizon >= self.h) || !self.horizon.is_finite() {
            return Err(Error::config("T", "horizon must be at least one step"));
        }
        if self.reorth_every == 0 {
            return Err(Error::config("reorth_every", "must be at least 1"));
        }
        if self.history_stride == Some(0) {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if self.x0.len() != d {
            return Err(Error::Dimension(format!(
                "initial state has {} entries, system dimension is {d}",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "initial state" });
        }
        Ok(())
    }
}

/// One recorded point of the finite-time estimates, in raw column order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySample {
    pub t: f64,
    pub lambda: Vec<f64>,
}

/// Running log-sums and their finite-time exponent estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LeAccumulator {
    pub psi: Vec<f64>,
    pub t: f64,
    pub history: Vec<HistorySample>,
    /// Itô-integrated `log |det Φ|` along the same path, when tracked.
    pub log_det: Option<f64>,
    /// Raw estimates at 90 % of the horizon (for the tail slope).
    tail_anchor: Option<HistorySample>,
}

impl LeAccumulator {
    fn new(d: usize) -> Self {
        Self {
            psi: vec![0.0; d],
            t: 0.0,
            history: Vec::new(),
            log_det: None,
            tail_anchor: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    /// `ψ_i / t` in Q-column order.
    pub fn raw_exponents(&self) -> Vec<f64> {
        if self.t > 0.0 {
            self.psi.iter().map(|p| p / self.t).collect()
        } else {
            vec![0.0; self.psi.len()]
        }
    }

    /// Finite-time exponents sorted in descending order.
    pub fn exponents(&self) -> Vec<f64> {
        let mut l = self.raw_exponents();
        l.sort_by(|a, b| b.total_cmp(a));
        l
    }

    /// Largest exponent.
    pub fn lle(&self) -> f64 {
        self.exponents()[0]
    }

    /// Slope of the sorted `λ(t)` over the last 10 % of the run; a small
    /// magnitude indicates the estimates have settled.
    pub fn tail_slope(&self) -> Option<Vec<f64>> {
        let anchor = self.tail_anchor.as_ref()?;
        let dt = self.t - anchor.t;
        if dt <= 0.0 {
            return None;
        }
        let mut a = anchor.lambda.clone();
        a.sort_by(|x, y| y.total_cmp(x));
        Some(self.exponents().iter().zip(&a).map(|(e, s)| (e - s) / dt).collect())
    }

    fn record(&mut self, step: usize, steps: usize, h: f64, stride: Option<usize>) {
        self.t = step as f64 * h;
        if let Some(s) = stride {
            if step % s == 0 {
                self.history.push(HistorySample {
                    t: self.t,
                    lambda: self.raw_exponents(),
                });
            }
        }
        if self.tail_anchor.is_none() && step * 10 >= steps * 9 && step < steps {
            self.tail_anchor = Some(HistorySample {
                t: self.t,
                lambda: self.raw_exponents(),
            });
        }
    }
}

fn log_det_increment<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    h: f64,
    dw: &[f64],
    k: SchemeKind,
    jac: &mut Matrix,
    field: &mut [f64],
) -> f64 {
    let d = s.dim();
    s.jacobian(0, x, jac);
    let mut inc = h * jac.trace();
    for (j, &w) in dw.iter().enumerate() {
        s.jacobian(j + 1, x, jac);
        let tr = jac.trace();
        let mut tr_sq = 0.0;
        for a in 0..d {
            for b in 0..d {
                tr_sq += jac[(a, b)] * jac[(b, a)];
            }
        }
        inc += w * tr - 0.5 * h * tr_sq;
        if k == SchemeKind::Milstein {
            s.field(j + 1, x, field);
            s.jacobian_directional(j + 1, x, field, jac);
            inc += 0.5 * (w * w - h) * jac.trace();
        }
    }
    inc
}

fn prepare<S: SdeSystem + ?Sized>(s: &S, cfg: &LeRunConfig, expected: Method) -> Result<WienerStream> {
    if cfg.method != expected {
        return Err(Error::config(
            "method",
            format!("expected {expected:?}, got {:?}", cfg.method),
        ));
    }
    cfg.validate(s.dim())?;
    check_scheme(s, cfg.scheme)?;
    WienerStream::new(cfg.seed, s.noise_channels(), cfg.h)
}

/// Discrete QR method starting from `V₀ = I`.
pub fn discrete_qr_run<S: SdeSystem + ?Sized>(s: &S, cfg: &LeRunConfig) -> Result<LeAccumulator> {
    discrete_qr_run_from(s, cfg, &Matrix::identity(s.dim()), false)
}

/// Discrete QR method from an arbitrary nonsingular initial matrix `v0`; its
/// own `log R₀[i][i]` seed the log-sums.
pub fn discrete_qr_run_from<S: SdeSystem + ?Sized>(
    s: &S,
    cfg: &LeRunConfig,
    v0: &Matrix,
    track_log_det: bool,
) -> Result<LeAccumulator> {
    let mut stream = prepare(s, cfg, Method::DiscreteQr)?;
    let d = s.dim();
    if v0.rows() != d || v0.cols() != d {
        return Err(Error::Dimension("initial transition matrix must be d×d".into()));
    }
    let steps = cfg.steps();
    let mut acc = LeAccumulator::new(d);
    let mut qr = QrWorkspace::new(d);
    qr.factorize(v0)?;
    for i in 0..d {
        acc.psi[i] = qr.r[(i, i)].ln();
    }
    let mut z = qr.q.clone();
    let mut x = cfg.x0.clone();
    let mut x_next = vec![0.0; d];
    let mut dw = vec![0.0; s.noise_channels()];
    let mut ws = StepWorkspace::new(d);
    let mut jac = Matrix::zeros(d, d);
    let mut field = vec![0.0; d];
    let mut log_det = track_log_det.then_some(0.0);

    for n in 1..=steps {
        stream.fill(&mut dw);
        if let Some(ld) = log_det.as_mut() {
            *ld += log_det_increment(s, &x, cfg.h, &dw, cfg.scheme, &mut jac, &mut field);
        }
        transition_step_in_place(s, &x, &mut z, cfg.h, &dw, cfg.scheme, &mut ws)?;
        state_step_into(s, &x, cfg.h, &dw, cfg.scheme, &mut ws, &mut x_next)?;
        std::mem::swap(&mut x, &mut x_next);
        if n % cfg.reorth_every == 0 || n == steps {
            qr.factorize(&z)?;
            for i in 0..d {
                acc.psi[i] += qr.r[(i, i)].ln();
            }
            z.copy_from(&qr.q);
        }
        acc.record(n, steps, cfg.h, cfg.history_stride);
    }
    acc.log_det = log_det;
    Ok(acc)
}

/// Continuous QR method with `Q₀ = I`.
pub fn continuous_qr_run<S: SdeSystem + ?Sized>(s: &S, cfg: &LeRunConfig) -> Result<LeAccumulator> {
    continuous_qr_run_observed(s, cfg, false, |_, _| {})
}

/// Continuous QR method; `observe(step, Q)` sees every projected factor.
pub fn continuous_qr_run_observed<S, F>(
    s: &S,
    cfg: &LeRunConfig,
    track_log_det: bool,
    mut observe: F,
) -> Result<LeAccumulator>
where
    S: SdeSystem + ?Sized,
    F: FnMut(usize, &Matrix),
{
    let mut stream = prepare(s, cfg, Method::ContinuousQr)?;
    let d = s.dim();
    let m = s.noise_channels();
    let steps = cfg.steps();
    let h = cfg.h;
    let milstein = cfg.scheme == SchemeKind::Milstein;
    let mut acc = LeAccumulator::new(d);
    let mut q = Matrix::identity(d);
    let mut x = cfg.x0.clone();
    let mut x_next = vec![0.0; d];
    let mut dw = vec![0.0; m];
    let mut ws = StepWorkspace::new(d);
    let mut field = vec![0.0; d];
    let mut dj = Matrix::zeros(d, d);
    let mut log_det = track_log_det.then_some(0.0);

    for n in 1..=steps {
        stream.fill(&mut dw);
        let psi = &mut acc.psi;
        let mut ld_inc = 0.0;
        orthogonal_generator(s, &x, &q, h, &dw, cfg.scheme, &mut ws, |j, b| {
            let c = if j == 0 { h } else { dw[j - 1] };
            for i in 0..d {
                let bii = b[(i, i)];
                psi[i] += c * bii;
                if j > 0 {
                    psi[i] -= 0.5 * h * bii * bii;
                }
            }
            if track_log_det {
                ld_inc += c * b.trace();
                if j > 0 {
                    let mut tr_sq = 0.0;
                    for a in 0..d {
                        for k in 0..d {
                            tr_sq += b[(a, k)] * b[(k, a)];
                        }
                    }
                    ld_inc -= 0.5 * h * tr_sq;
                }
            }
        });
        if milstein {
            // Correction through the state dependence of (QᵀJ_jQ)^{ii} only.
            for j in 1..=m {
                let w = dw[j - 1];
                let c = 0.5 * (w * w - h);
                s.field(j, &x, &mut field);
                s.jacobian_directional(j, &x, &field, &mut dj);
                for i in 0..d {
                    let mut qdq = 0.0;
                    for k in 0..d {
                        let qki = q[(k, i)];
                        if qki == 0.0 {
                            continue;
                        }
                        let mut row = 0.0;
                        for l in 0..d {
                            row += dj[(k, l)] * q[(l, i)];
                        }
                        qdq += qki * row;
                    }
                    acc.psi[i] += c * qdq;
                }
                if track_log_det {
                    ld_inc += c * dj.trace();
                }
            }
        }
        if let Some(ld) = log_det.as_mut() {
            *ld += ld_inc;
        }
        if acc.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "log-diagonal update",
            });
        }
        apply_orthogonal_generator(&mut q, &mut ws)?;
        observe(n, &q);
        state_step_into(s, &x, h, &dw, cfg.scheme, &mut ws, &mut x_next)?;
        std::mem::swap(&mut x, &mut x_next);
        acc.record(n, steps, h, cfg.history_stride);
    }
    acc.log_det = log_det;
    Ok(acc)
}

/// Runs whichever engine `cfg.method` selects.
pub fn run<S: SdeSystem + ?Sized>(s: &S, cfg: &LeRunConfig) -> Result<LeAccumulator> {
    match cfg.method {
        Method::DiscreteQr => discrete_qr_run(s, cfg),
        Method::ContinuousQr => continuous_qr_run(s, cfg),
    }
}

/// Runs `cfg` while integrating `log |det Φ|` along the same path and returns
/// `|Σ_i λ_i(T) − log|det Φ_T| / T|`.
pub fn liouville_check<S: SdeSystem + ?Sized>(s: &S, cfg: &LeRunConfig) -> Result<f64> {
    let acc = match cfg.method {
        Method::DiscreteQr => discrete_qr_run_from(s, cfg, &Matrix::identity(s.dim()), true)?,
        Method::ContinuousQr => continuous_qr_run_observed(s, cfg, true, |_, _| {})?,
    };
    Ok(liouville_defect(&acc))
}

/// Defect of an accumulator that tracked `log |det Φ|`; `NaN` otherwise.
pub fn liouville_defect(acc: &LeAccumulator) -> f64 {
    match acc.log_det {
        Some(ld) if acc.t > 0.0 => (acc.psi.iter().sum::<f64>() - ld).abs() / acc.t,
        _ => f64::NAN,
    }
}
