//! Benchmark catalog: the scalar example SDAE and two single-machine
//! infinite-bus (SMIB) power-system models, plus a by-name registry.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{reduce_to_underlying, SdeSystem, SemiExplicitSdae};
use crate::oracle::le_reference_example;

// ---------------------------------------------------------------------------
// Scalar example
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleParams {
    pub alpha: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

/// Two-variable SDAE with singular leading matrix `diag(1, 0)`:
///
/// ```text
/// dx₁ = −x₂ dt + (x₁² + 1)^{1/2} dw
///   0 = −α x₁ + arctan x₁ + x₂
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleSdae {
    pub params: ExampleParams,
}

pub fn example_sdae(p: ExampleParams) -> Result<ExampleSdae> {
    if !(p.alpha > 0.0) || !p.alpha.is_finite() {
        return Err(Error::config("alpha", "must be positive"));
    }
    Ok(ExampleSdae { params: p })
}

impl SemiExplicitSdae for ExampleSdae {
    fn diff_dim(&self) -> usize {
        1
    }
    fn alg_dim(&self) -> usize {
        1
    }
    fn noise_channels(&self) -> usize {
        1
    }
    fn diff_field(&self, j: usize, xd: &[f64], xa: &[f64], out: &mut [f64]) {
        out[0] = match j {
            0 => -xa[0],
            _ => (xd[0] * xd[0] + 1.0).sqrt(),
        };
    }
    fn alg_constraint(&self, xd: &[f64], xa: &[f64], out: &mut [f64]) {
        let x = xd[0];
        out[0] = -self.params.alpha * x + x.atan() + xa[0];
    }
    fn resolve(&self, xd: &[f64], out: &mut [f64]) {
        let x = xd[0];
        out[0] = self.params.alpha * x - x.atan();
    }
    fn reduced_jacobian(&self, j: usize, xd: &[f64], out: &mut Matrix) {
        let x = xd[0];
        out[(0, 0)] = match j {
            0 => -self.params.alpha + 1.0 / (1.0 + x * x),
            _ => x / (x * x + 1.0).sqrt(),
        };
    }
    fn reduced_jacobian_directional(&self, j: usize, xd: &[f64], v: &[f64], out: &mut Matrix) {
        let x = xd[0];
        let s = 1.0 + x * x;
        out[(0, 0)] = v[0]
            * match j {
                0 => -2.0 * x / (s * s),
                _ => s.powf(-1.5),
            };
    }
}

// ---------------------------------------------------------------------------
// SMIB case 1: classical machine with a stochastic load
// ---------------------------------------------------------------------------

/// Trigonometric function in the power-balance constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

impl Trig {
    fn value(self, d: f64) -> f64 {
        match self {
            Trig::Cos => d.cos(),
            Trig::Sin => d.sin(),
        }
    }
    fn derivative(self, d: f64) -> f64 {
        match self {
            Trig::Cos => -d.sin(),
            Trig::Sin => d.cos(),
        }
    }
    fn second_derivative(self, d: f64) -> f64 {
        -self.value(d)
    }
}

impl fmt::Display for Trig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trig::Cos => "cos",
            Trig::Sin => "sin",
        })
    }
}

/// Per-unit parameters (`omega_s` in rad/s, `h` in s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smib1Params {
    pub pm: f64,
    pub pl: f64,
    pub xeq: f64,
    pub h: f64,
    pub kd: f64,
    pub omega_s: f64,
    pub v: f64,
    pub e_prime: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub trig: Trig,
}

impl Default for Smib1Params {
    fn default() -> Self {
        Self {
            pm: 0.8,
            pl: 0.3,
            xeq: 0.8,
            h: 3.5,
            kd: 0.4,
            omega_s: 2.0 * PI * 50.0,
            v: 1.0,
            e_prime: 1.05,
            alpha: 1.0,
            beta: 0.4,
            rho: 0.0,
            trig: Trig::Cos,
        }
    }
}

impl Smib1Params {
    /// Line transfer coefficient `E′V / X_eq`.
    pub fn transfer(&self) -> f64 {
        self.e_prime * self.v / self.xeq
    }
}

/// Swing equation with an algebraic power balance and OU load noise.
///
/// Differential state `(δ, ω, η)`, algebraic state `P_e`:
///
/// ```text
///     dδ = (ω − ω_s) dt
///  2H dω = (P_m − P_e − K_D (ω − ω_s)) dt
///     dη = −α η dt + β dw
///      0 = (E′V/X_eq) trig(δ) + P_L + ρ η − P_e
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smib1 {
    pub params: Smib1Params,
}

pub fn smib_case1(p: Smib1Params) -> Result<Smib1> {
    if !(p.h > 0.0) {
        return Err(Error::config("H", "inertia constant must be positive"));
    }
    if !(p.xeq > 0.0) {
        return Err(Error::config("Xeq", "line reactance must be positive"));
    }
    if !(p.rho >= 0.0) {
        return Err(Error::config("rho", "disturbance size must be non-negative"));
    }
    if !(p.alpha > 0.0) {
        return Err(Error::config("alpha", "mean-reversion rate must be positive"));
    }
    if !(p.beta >= 0.0) {
        return Err(Error::config("beta", "noise intensity must be non-negative"));
    }
    Ok(Smib1 { params: p })
}

impl Smib1 {
    /// Stable deterministic equilibrium angle.
    ///
    /// Solves `P_m − P_L = (E′V/X_eq) trig(δ)` by bisection on the branch where
    /// the synchronizing coefficient is positive: `[−π/2, 0]` for the cosine
    /// form, `[0, π/2]` for the sine form.
    pub fn equilibrium_angle(&self) -> Result<f64> {
        let p = &self.params;
        let k = p.transfer();
        let g = |d: f64| p.pm - p.pl - k * p.trig.value(d);
        let (mut lo, mut hi) = match p.trig {
            Trig::Cos => (-FRAC_PI_2, 0.0),
            Trig::Sin => (0.0, FRAC_PI_2),
        };
        let (glo, ghi) = (g(lo), g(hi));
        if glo * ghi > 0.0 {
            return Err(Error::NoEquilibrium(format!(
                "P_m − P_L = {} outside the transfer range [0, {k}]",
                p.pm - p.pl
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) * glo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON {
                break;
            }
        }
        let d = 0.5 * (lo + hi);
        let residual = g(d).abs();
        if residual > 1e-12 {
            return Err(Error::NoEquilibrium(format!("residual {residual:e} after bisection")));
        }
        Ok(d)
    }

    /// `(δ*, ω_s, 0)`.
    pub fn equilibrium(&self) -> Result<Vec<f64>> {
        Ok(vec![self.equilibrium_angle()?, self.params.omega_s, 0.0])
    }

    /// Electrical power from the resolver.
    pub fn electrical_power(&self, delta: f64, eta: f64) -> f64 {
        let p = &self.params;
        p.transfer() * p.trig.value(delta) + p.pl + p.rho * eta
    }

    /// Drift Jacobian at the deterministic equilibrium.
    pub fn equilibrium_jacobian(&self) -> Result<Matrix> {
        let x = self.equilibrium()?;
        let mut j = Matrix::zeros(3, 3);
        self.reduced_jacobian(0, &x, &mut j);
        Ok(j)
    }
}

impl SemiExplicitSdae for Smib1 {
    fn diff_dim(&self) -> usize {
        3
    }
    fn alg_dim(&self) -> usize {
        1
    }
    fn noise_channels(&self) -> usize {
        1
    }
    fn diff_field(&self, j: usize, xd: &[f64], xa: &[f64], out: &mut [f64]) {
        let p = &self.params;
        if j == 0 {
            let slip = xd[1] - p.omega_s;
            out[0] = slip;
            out[1] = (p.pm - xa[0] - p.kd * slip) / (2.0 * p.h);
            out[2] = -p.alpha * xd[2];
        } else {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = p.beta;
        }
    }
    fn alg_constraint(&self, xd: &[f64], xa: &[f64], out: &mut [f64]) {
        out[0] = self.electrical_power(xd[0], xd[2]) - xa[0];
    }
    fn resolve(&self, xd: &[f64], out: &mut [f64]) {
        out[0] = self.electrical_power(xd[0], xd[2]);
    }
    fn reduced_jacobian(&self, j: usize, xd: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        if j > 0 {
            return;
        }
        let p = &self.params;
        let two_h = 2.0 * p.h;
        out[(0, 1)] = 1.0;
        out[(1, 0)] = -p.transfer() * p.trig.derivative(xd[0]) / two_h;
        out[(1, 1)] = -p.kd / two_h;
        out[(1, 2)] = -p.rho / two_h;
        out[(2, 2)] = -p.alpha;
    }
    fn reduced_jacobian_directional(&self, j: usize, xd: &[f64], v: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        if j == 0 {
            let p = &self.params;
            out[(1, 0)] = -p.transfer() * p.trig.second_derivative(xd[0]) * v[0] / (2.0 * p.h);
        }
    }
}

// ---------------------------------------------------------------------------
// SMIB case 2: linearized flux-decay machine with AVR/PSS and regulator noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smib2Params {
    pub omega_s: f64,
    pub h: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub kd: f64,
    pub ka: f64,
    pub tr: f64,
    pub kst: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub tw: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub d_tm: f64,
}

impl Default for Smib2Params {
    fn default() -> Self {
        Self {
            omega_s: 2.0 * PI * 60.0,
            h: 3.0,
            k1: 1.591,
            k2: 1.50,
            k3: 0.333,
            k4: 1.8,
            k5: -0.12,
            k6: 0.3,
            kd: 0.0,
            ka: 200.0,
            tr: 0.02,
            kst: 9.5,
            t1: 0.154,
            t2: 0.033,
            t3: 1.91,
            tw: 1.4,
            alpha: 1.0,
            beta: 0.4,
            rho: 0.0,
            d_tm: 0.0,
        }
    }
}

/// Seven-state linear SDE in `(Δδ, Δω, Δψ_fd, Δv₁, Δv₂, Δv_s, η)`; the noise
/// enters bilinearly through the exciter gain `−K₃K_A(1 + ρη)Δv₁ / T₃`.
#[derive(Debug, Clone, PartialEq)]
pub struct Smib2 {
    pub params: Smib2Params,
    a6: Matrix,
    forcing: [f64; 6],
}

pub fn smib_case2(p: Smib2Params) -> Result<Smib2> {
    for (name, v) in [
        ("H", p.h),
        ("TR", p.tr),
        ("T2", p.t2),
        ("T3", p.t3),
        ("TW", p.tw),
        ("alpha", p.alpha),
    ] {
        if !(v > 0.0) {
            return Err(Error::config(name, "must be positive"));
        }
    }
    if !(p.beta >= 0.0) {
        return Err(Error::config("beta", "must be non-negative"));
    }
    let two_h = 2.0 * p.h;
    let rows: [[f64; 6]; 6] = [
        [0.0, p.omega_s, 0.0, 0.0, 0.0, 0.0],
        [-p.k1 / two_h, -p.kd / two_h, -p.k2 / two_h, 0.0, 0.0, 0.0],
        [
            -p.k3 * p.k4 / p.t3,
            0.0,
            -(1.0 + p.k3 * p.k6 * p.ka) / p.t3,
            -p.k3 * p.ka / p.t3,
            0.0,
            p.k3 * p.ka / p.t3,
        ],
        [-p.k5 / p.tr, 0.0, p.k6 / p.tr, -1.0 / p.tr, 0.0, 0.0],
        [-p.k1 * p.kst, -p.kd * p.kst, -p.k2 * p.kst, 0.0, -1.0 / p.tw, 0.0],
        [
            -p.k1 * p.kst * p.t1 / p.t2,
            -p.kd * p.kst * p.t1 / p.t2,
            -p.k2 * p.kst * p.t1 / p.t2,
            0.0,
            (p.t1 / p.tw + 1.0) / p.t2,
            -1.0 / (p.t2 * p.t2),
        ],
    ];
    let a6 = Matrix::new(6, 6, rows.iter().flatten().copied().collect())?;
    let forcing = [
        0.0,
        p.d_tm / two_h,
        0.0,
        0.0,
        p.kst * p.d_tm / two_h,
        p.kst * p.t1 * p.d_tm / (two_h * p.t2),
    ];
    Ok(Smib2 { params: p, a6, forcing })
}

impl Smib2 {
    /// The deterministic 6×6 block (noise-free, `ρ = 0`).
    pub fn a6(&self) -> &Matrix {
        &self.a6
    }

    fn exciter_gain(&self) -> f64 {
        let p = &self.params;
        -p.k3 * p.ka / p.t3
    }
}

impl SdeSystem for Smib2 {
    fn dim(&self) -> usize {
        7
    }
    fn noise_channels(&self) -> usize {
        1
    }
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let p = &self.params;
        if j == 0 {
            for i in 0..6 {
                out[i] = self.forcing[i] + self.a6.row(i).iter().zip(&x[..6]).map(|(a, b)| a * b).sum::<f64>();
            }
            out[2] += self.exciter_gain() * p.rho * x[6] * x[3];
            out[6] = -p.alpha * x[6];
        } else {
            out[..6].iter_mut().for_each(|v| *v = 0.0);
            out[6] = p.beta;
        }
    }
    fn jacobian(&self, j: usize, x: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        if j > 0 {
            return;
        }
        let p = &self.params;
        for i in 0..6 {
            for k in 0..6 {
                out[(i, k)] = self.a6[(i, k)];
            }
        }
        let g = self.exciter_gain() * p.rho;
        out[(2, 3)] += g * x[6];
        out[(2, 6)] = g * x[3];
        out[(6, 6)] = -p.alpha;
    }
    fn jacobian_directional(&self, j: usize, _x: &[f64], v: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        if j == 0 {
            let g = self.exciter_gain() * self.params.rho;
            out[(2, 3)] = g * v[6];
            out[(2, 6)] = g * v[3];
        }
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Names accepted by [`build_model`].
pub const MODEL_NAMES: [&str; 3] = ["example", "smib1", "smib2"];

/// One-line description per registered model.
pub fn model_descriptions() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "example",
            "scalar SDAE: dx = (-alpha x + atan x) dt + sqrt(x^2+1) dw after reduction",
        ),
        (
            "smib1",
            "classical SMIB with stochastic OU load (delta, omega, eta; algebraic Pe)",
        ),
        (
            "smib2",
            "linearized flux-decay SMIB with AVR/PSS and noisy exciter reference (7 states)",
        ),
    ]
}

/// A model ready to integrate: the (reduced) SDE, its default initial state and
/// the parameter values in effect.
pub struct ModelInstance {
    pub name: String,
    pub system: Box<dyn SdeSystem>,
    pub x0: Vec<f64>,
    pub params: Vec<(String, String)>,
    example_alpha: Option<f64>,
}

impl fmt::Debug for ModelInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelInstance")
            .field("name", &self.name)
            .field("dim", &self.system.dim())
            .field("x0", &self.x0)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelInstance {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Reference exponents, when an independent oracle exists for this model.
    pub fn oracle(&self) -> Result<Option<Vec<f64>>> {
        match self.example_alpha {
            Some(alpha) => Ok(Some(vec![le_reference_example(alpha)?])),
            None => Ok(None),
        }
    }
}

/// Parameter names of a registered model.
pub fn parameter_names(model: &str) -> Result<&'static [&'static str]> {
    Ok(match model {
        "example" => &["alpha"],
        "smib1" => &[
            "Pm", "PL", "Xeq", "H", "KD", "omega_s", "V", "Eprime", "alpha", "beta", "rho", "trig",
        ],
        "smib2" => &[
            "omega_s", "H", "K1", "K2", "K3", "K4", "K5", "K6", "KD", "KA", "TR", "KST", "T1", "T2", "T3", "TW",
            "alpha", "beta", "rho", "dTm",
        ],
        other => return Err(Error::UnknownModel(other.to_string())),
    })
}

fn parse_number(model: &str, key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::config(key, format!("`{value}` is not a finite number (model {model})")))
}

fn canonical<'a>(model: &str, key: &str) -> Result<&'static str> {
    parameter_names(model)?
        .iter()
        .copied()
        .find(|n| n.eq_ignore_ascii_case(key))
        .ok_or_else(|| Error::UnknownParameter {
            model: model.to_string(),
            param: key.to_string(),
        })
}

/// Builds a registered model with `key = value` overrides applied in order.
pub fn build_model(name: &str, overrides: &[(String, String)]) -> Result<ModelInstance> {
    let mut canon = Vec::with_capacity(overrides.len());
    for (k, v) in overrides {
        canon.push((canonical(name, k)?, v.as_str()));
    }
    match name {
        "example" => {
            let mut p = ExampleParams::default();
            for (k, v) in canon {
                if k == "alpha" {
                    p.alpha = parse_number(name, k, v)?;
                }
            }
            let sdae = example_sdae(p)?;
            let x0 = vec![0.0];
            let system = reduce_to_underlying(sdae, &x0)?;
            Ok(ModelInstance {
                name: name.into(),
                system: Box::new(system),
                x0,
                params: vec![("alpha".into(), p.alpha.to_string())],
                example_alpha: Some(p.alpha),
            })
        }
        "smib1" => {
            let mut p = Smib1Params::default();
            for (k, v) in canon {
                if k == "trig" {
                    p.trig = match v.trim().to_ascii_lowercase().as_str() {
                        "cos" => Trig::Cos,
                        "sin" => Trig::Sin,
                        _ => return Err(Error::config("trig", format!("`{v}` is not cos or sin"))),
                    };
                    continue;
                }
                let x = parse_number(name, k, v)?;
                match k {
                    "Pm" => p.pm = x,
                    "PL" => p.pl = x,
                    "Xeq" => p.xeq = x,
                    "H" => p.h = x,
                    "KD" => p.kd = x,
                    "omega_s" => p.omega_s = x,
                    "V" => p.v = x,
                    "Eprime" => p.e_prime = x,
                    "alpha" => p.alpha = x,
                    "beta" => p.beta = x,
                    "rho" => p.rho = x,
                    _ => unreachable!("parameter list and match arms disagree"),
                }
            }
            let model = smib_case1(p)?;
            let x0 = model.equilibrium()?;
            let params = vec![
                ("Pm".into(), p.pm.to_string()),
                ("PL".into(), p.pl.to_string()),
                ("Xeq".into(), p.xeq.to_string()),
                ("H".into(), p.h.to_string()),
                ("KD".into(), p.kd.to_string()),
                ("omega_s".into(), p.omega_s.to_string()),
                ("V".into(), p.v.to_string()),
                ("Eprime".into(), p.e_prime.to_string()),
                ("alpha".into(), p.alpha.to_string()),
                ("beta".into(), p.beta.to_string()),
                ("rho".into(), p.rho.to_string()),
                ("trig".into(), p.trig.to_string()),
            ];
            let system = reduce_to_underlying(model, &x0)?;
            Ok(ModelInstance {
                name: name.into(),
                system: Box::new(system),
                x0,
                params,
                example_alpha: None,
            })
        }
        "smib2" => {
            let mut p = Smib2Params::default();
            for (k, v) in canon {
                let x = parse_number(name, k, v)?;
                let slot = match k {
                    "omega_s" => &mut p.omega_s,
                    "H" => &mut p.h,
                    "K1" => &mut p.k1,
                    "K2" => &mut p.k2,
                    "K3" => &mut p.k3,
                    "K4" => &mut p.k4,
                    "K5" => &mut p.k5,
                    "K6" => &mut p.k6,
                    "KD" => &mut p.kd,
                    "KA" => &mut p.ka,
                    "TR" => &mut p.tr,
                    "KST" => &mut p.kst,
                    "T1" => &mut p.t1,
                    "T2" => &mut p.t2,
                    "T3" => &mut p.t3,
                    "TW" => &mut p.tw,
                    "alpha" => &mut p.alpha,
                    "beta" => &mut p.beta,
                    "rho" => &mut p.rho,
                    "dTm" => &mut p.d_tm,
                    _ => unreachable!("parameter list and match arms disagree"),
                };
                *slot = x;
            }
            let model = smib_case2(p)?;
            let names = parameter_names(name)?;
            let values = [
                p.omega_s, p.h, p.k1, p.k2, p.k3, p.k4, p.k5, p.k6, p.kd, p.ka, p.tr, p.kst, p.t1, p.t2, p.t3, p.tw,
                p.alpha, p.beta, p.rho, p.d_tm,
            ];
            let params = names
                .iter()
                .zip(values)
                .map(|(n, v)| (n.to_string(), v.to_string()))
                .collect();
            Ok(ModelInstance {
                name: name.into(),
                system: Box::new(model),
                x0: vec![0.0; 7],
                params,
                example_alpha: None,
            })
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigen_real_parts;
    use crate::model::{jacobian_consistency, reduce_to_underlying};

    #[test]
    fn example_reduction() {
        let u = reduce_to_underlying(example_sdae(ExampleParams { alpha: 2.0 }).unwrap(), &[0.0]).unwrap();
        assert_eq!(u.eval_field(0, &[0.0]), vec![0.0]);
        assert_eq!(u.eval_field(1, &[0.0]), vec![1.0]);
        for x in [-3.0, -0.4, 0.0, 1.2, 8.0] {
            let f = u.eval_field(0, &[x])[0];
            assert!((f - (-2.0 * x + f64::atan(x))).abs() < 1e-14);
            let g = u.eval_field(1, &[x])[0];
            assert!((g - (x * x + 1.0).sqrt()).abs() < 1e-14);
            let j0 = u.eval_jacobian(0, &[x])[(0, 0)];
            let j1 = u.eval_jacobian(1, &[x])[(0, 0)];
            assert!((j0 - (-2.0 + 1.0 / (1.0 + x * x))).abs() < 1e-14);
            assert!((j1 - x / (x * x + 1.0).sqrt()).abs() < 1e-14);
            assert!(u.sdae().constraint_residual(&[x]) < 1e-12);
        }
    }

    #[test]
    fn smib1_resolver_and_equilibrium() {
        let m = smib_case1(Smib1Params::default()).unwrap();
        assert!((m.electrical_power(0.0, 0.0) - 1.6125).abs() < 1e-12);
        let d = m.equilibrium_angle().unwrap();
        assert!((d.abs() - 1.1800).abs() < 1e-4, "{d}");
        assert!(d < 0.0, "stable branch of the cosine form");
        let p = m.params;
        assert!((p.pm - p.pl - p.transfer() * d.cos()).abs() <= 1e-12);
        let x0 = m.equilibrium().unwrap();
        let u = reduce_to_underlying(m, &x0).unwrap();
        let f = u.eval_field(0, &x0);
        assert!(f.iter().all(|v| v.abs() < 1e-12), "{f:?}");
    }

    #[test]
    fn smib1_sin_form_equilibrium() {
        let m = smib_case1(Smib1Params {
            trig: Trig::Sin,
            ..Default::default()
        })
        .unwrap();
        let d = m.equilibrium_angle().unwrap();
        assert!((d - (0.5f64 / 1.3125).asin()).abs() < 1e-12);
    }

    #[test]
    fn smib1_equilibrium_jacobian_spectrum() {
        // 2×2 swing block: λ² + (K_D/2H) λ + K sinδ*... has Re λ = −K_D/(4H).
        let m = smib_case1(Smib1Params::default()).unwrap();
        let j = m.equilibrium_jacobian().unwrap();
        let re = eigen_real_parts(&j).unwrap();
        let damping = -0.4 / (4.0 * 3.5);
        assert!((re[0] - damping).abs() < 1e-12, "{re:?}");
        assert!((re[1] - damping).abs() < 1e-12, "{re:?}");
        assert!((re[2] + 1.0).abs() < 1e-12, "{re:?}");
    }

    #[test]
    fn smib1_no_equilibrium() {
        let m = smib_case1(Smib1Params {
            pm: 3.0,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(m.equilibrium_angle(), Err(Error::NoEquilibrium(_))));
    }

    #[test]
    fn smib2_structure() {
        let m = smib_case2(Smib2Params::default()).unwrap();
        let x = [0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.7];
        let f = m.eval_field(0, &x);
        assert!((f[6] + 0.7).abs() < 1e-15);
        assert_eq!(m.eval_field(1, &x), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4]);
        assert_eq!(m.eval_jacobian(1, &x), Matrix::zeros(7, 7));
        // ρ = 0 decouples the Δ-block from η
        let j = m.eval_jacobian(0, &x);
        for i in 0..6 {
            assert_eq!(j[(i, 6)], 0.0);
        }
        let zero = m.eval_field(0, &[0.0; 7]);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn smib2_a6_spectrum_is_stable() {
        let m = smib_case2(Smib2Params::default()).unwrap();
        let re = eigen_real_parts(m.a6()).unwrap();
        assert!(re[0] < 0.0 && re[0] > -1.0, "{re:?}");
        let sum: f64 = re.iter().sum();
        assert!((sum - m.a6().trace()).abs() < 1e-9);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut uniform = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let rho = [("rho".to_string(), "0.7".to_string())];
        for (name, overrides) in [("example", &[][..]), ("smib1", &rho[..]), ("smib2", &rho[..])] {
            let m = build_model(name, overrides).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = m.x0.iter().map(|v| v + 3.0 * uniform()).collect();
                let ratio = jacobian_consistency(&*m.system, &x);
                assert!(ratio <= 1.0, "{name} at {x:?}: {ratio}");
            }
        }
    }

    #[test]
    fn registry_validation() {
        assert!(matches!(build_model("nope", &[]), Err(Error::UnknownModel(_))));
        assert!(matches!(
            build_model("example", &[("zeta".into(), "1".into())]),
            Err(Error::UnknownParameter { .. })
        ));
        assert!(build_model("example", &[("alpha".into(), "x".into())]).is_err());
        assert!(build_model("smib1", &[("trig".into(), "tan".into())]).is_err());
        let m = build_model("smib1", &[("RHO".into(), "0.2".into()), ("trig".into(), "sin".into())]).unwrap();
        assert!(m.params.contains(&("rho".to_string(), "0.2".to_string())));
        assert!(m.x0[0] > 0.0);
        let oracle = build_model("example", &[]).unwrap().oracle().unwrap().unwrap();
        assert!((oracle[0] + 1.3385).abs() < 5e-5);
    }
}
