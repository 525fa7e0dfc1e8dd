//! Independent reference values for the engines.
//!
//! The stationary density of a scalar Itô SDE `dx = f₀(x) dt + σ(x) dw` is
//! `p(x) ∝ σ⁻²(x) exp(∫₀ˣ 2f₀/σ²)`. Integrals are taken in the coordinate
//! `x = s·sinh(u)`, which turns algebraic tails into exponential ones, with
//! composite 10-point Gauss–Legendre panels refined by halving.

use crate::error::{Error, Result};
use crate::linalg::{eigen_real_parts, Matrix};

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_3,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// `∫_a^b g` with 10-point Gauss–Legendre.
fn gauss10<G: Fn(f64) -> f64>(a: f64, b: f64, g: G) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        s += w * (g(c - r * x) + g(c + r * x));
    }
    r * s
}

fn gauss10_points(a: f64, b: f64) -> [(f64, f64); 10] {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 10];
    for (k, (x, w)) in GL_NODES.iter().zip(GL_WEIGHTS).enumerate() {
        out[2 * k] = (c - r * x, r * w);
        out[2 * k + 1] = (c + r * x, r * w);
    }
    out
}

/// Tail cut-off: the integrand at `±X` must be below this fraction of its peak.
pub const TAIL_RATIO: f64 = 1e-14;

/// Largest truncation bound tried before giving up.
pub const MAX_BOUND: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySettings {
    /// Fixed truncation bound `X`; chosen adaptively when `None`.
    pub bound: Option<f64>,
    /// Panel count to start refining from.
    pub min_panels: usize,
    /// Stop when the log-normalization changes by less than this.
    pub rel_tol: f64,
    /// Length scale `s` of the `x = s·sinh(u)` map.
    pub scale: f64,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self {
            bound: None,
            min_panels: 64,
            rel_tol: 1e-12,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    /// Quadrature weight including `dx/du`.
    weight: f64,
    log_p: f64,
}

/// Normalized stationary density of a scalar SDE on `[−X, X]`.
pub struct ScalarStationaryDensity<F, G> {
    f0: F,
    sigma2: G,
    scale: f64,
    bound: f64,
    u_max: f64,
    panels: usize,
    /// `∫₀ 2f₀/σ²` at panel boundaries.
    phi_edges: Vec<f64>,
    nodes: Vec<Node>,
    log_norm: f64,
}

impl<F, G> ScalarStationaryDensity<F, G>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    /// Truncation bound `X`.
    pub fn support(&self) -> (f64, f64) {
        (-self.bound, self.bound)
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    /// `log` of the normalizing constant of `σ⁻² exp(∫₀ˣ 2f₀/σ²)`.
    pub fn log_normalization(&self) -> f64 {
        self.log_norm
    }

    fn edge(&self, k: usize) -> f64 {
        -self.u_max + 2.0 * self.u_max * k as f64 / self.panels as f64
    }

    fn phi_integrand(&self, u: f64) -> f64 {
        let x = self.scale * u.sinh();
        2.0 * (self.f0)(x) / (self.sigma2)(x) * self.scale * u.cosh()
    }

    /// Unnormalized log-density `−ln σ²(x) + ∫₀ˣ 2f₀/σ²`.
    pub fn log_unnormalized(&self, x: f64) -> f64 {
        let u = (x / self.scale).asinh();
        let width = 2.0 * self.u_max / self.panels as f64;
        let k = (((u + self.u_max) / width).floor().max(0.0) as usize).min(self.panels);
        let start = self.edge(k);
        let phi = self.phi_edges[k] + gauss10(start, u, |v| self.phi_integrand(v));
        -(self.sigma2)(x).ln() + phi
    }

    /// Normalized density; zero outside the truncated support.
    pub fn pdf(&self, x: f64) -> f64 {
        if x.abs() > self.bound {
            return 0.0;
        }
        (self.log_unnormalized(x) - self.log_norm).exp()
    }

    /// `∫ g(x) p(x) dx` on the truncated support.
    pub fn expectation<H: Fn(f64) -> f64>(&self, g: H) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.weight * g(n.x) * (n.log_p - self.log_norm).exp())
            .sum()
    }

    /// `∫ p dx` with the stored mesh (1 up to rounding).
    pub fn total_mass(&self) -> f64 {
        self.expectation(|_| 1.0)
    }
}

struct Mesh {
    phi_edges: Vec<f64>,
    nodes: Vec<Node>,
    log_norm: f64,
    log_peak: f64,
    log_ends: f64,
}

fn build_mesh<F, G>(f0: &F, sigma2: &G, scale: f64, u_max: f64, panels: usize) -> Result<Mesh>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let width = 2.0 * u_max / panels as f64;
    let edge = |k: usize| -u_max + width * k as f64;
    let phi_integrand = |u: f64| {
        let x = scale * u.sinh();
        2.0 * f0(x) / sigma2(x) * scale * u.cosh()
    };
    let half = panels / 2;
    let mut phi_edges = vec![0.0; panels + 1];
    for k in half..panels {
        phi_edges[k + 1] = phi_edges[k] + gauss10(edge(k), edge(k + 1), phi_integrand);
    }
    for k in (0..half).rev() {
        phi_edges[k] = phi_edges[k + 1] - gauss10(edge(k), edge(k + 1), phi_integrand);
    }

    let mut nodes = Vec::with_capacity(10 * panels);
    for k in 0..panels {
        let a = edge(k);
        for (u, w) in gauss10_points(a, edge(k + 1)) {
            let x = scale * u.sinh();
            let s2 = sigma2(x);
            if !(s2 > 0.0) {
                return Err(Error::NonNormalizable(format!("diffusion vanishes at x = {x}")));
            }
            let phi = phi_edges[k] + gauss10(a, u, phi_integrand);
            let log_p = -s2.ln() + phi;
            nodes.push(Node {
                x,
                weight: w * scale * u.cosh(),
                log_p,
            });
        }
    }

    let log_int = |n: &Node| n.log_p + n.weight.ln();
    let log_peak = nodes.iter().map(log_int).fold(f64::NEG_INFINITY, f64::max);
    if !log_peak.is_finite() {
        return Err(Error::NonNormalizable("density is not finite on the mesh".into()));
    }
    let sum: f64 = nodes.iter().map(|n| n.weight * (n.log_p - log_peak).exp()).sum();
    let log_norm = log_peak + sum.ln();
    let log_ends = log_int(&nodes[0]).max(log_int(&nodes[nodes.len() - 1]));
    Ok(Mesh {
        phi_edges,
        nodes,
        log_norm,
        log_peak,
        log_ends,
    })
}

/// Stationary density with default settings, optionally on a fixed support.
pub fn stationary_density<F, G>(f0: F, sigma2: G, bound: Option<f64>) -> Result<ScalarStationaryDensity<F, G>>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    stationary_density_with(
        f0,
        sigma2,
        &DensitySettings {
            bound,
            ..Default::default()
        },
    )
}

pub fn stationary_density_with<F, G>(
    f0: F,
    sigma2: G,
    settings: &DensitySettings,
) -> Result<ScalarStationaryDensity<F, G>>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let scale = settings.scale;
    let mut panels = settings.min_panels.max(8);
    panels += panels % 2;

    let bound = match settings.bound {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::config("bound", format!("{b} is not a positive finite bound"))),
        None => {
            let mut b = 8.0 * scale;
            loop {
                let u = (b / scale).asinh();
                let mesh = build_mesh(&f0, &sigma2, scale, u, panels)?;
                if mesh.log_ends - mesh.log_peak < TAIL_RATIO.ln() {
                    break b;
                }
                b *= 4.0;
                if b > MAX_BOUND {
                    return Err(Error::NonNormalizable(format!(
                        "tails still above {TAIL_RATIO:e} of the peak at |x| = {MAX_BOUND:e}"
                    )));
                }
            }
        }
    };

    let u_max = (bound / scale).asinh();
    let mut mesh = build_mesh(&f0, &sigma2, scale, u_max, panels)?;
    loop {
        let finer = build_mesh(&f0, &sigma2, scale, u_max, 2 * panels)?;
        let change = (finer.log_norm - mesh.log_norm).abs();
        panels *= 2;
        mesh = finer;
        if change < settings.rel_tol {
            break;
        }
        if panels > 1 << 16 {
            return Err(Error::NonNormalizable(format!(
                "quadrature did not settle (last change {change:e})"
            )));
        }
    }
    if !mesh.log_norm.is_finite() {
        return Err(Error::NonNormalizable("normalization is not finite".into()));
    }

    Ok(ScalarStationaryDensity {
        f0,
        sigma2,
        scale,
        bound,
        u_max,
        panels,
        phi_edges: mesh.phi_edges,
        nodes: mesh.nodes,
        log_norm: mesh.log_norm,
    })
}

fn example_drift(alpha: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| -alpha * x + x.atan()
}

fn example_sigma2(x: f64) -> f64 {
    x * x + 1.0
}

/// Stationary density of `dx = (−αx + arctan x) dt + (x²+1)^{1/2} dw`.
pub fn example_density(
    alpha: f64,
    settings: &DensitySettings,
) -> Result<ScalarStationaryDensity<impl Fn(f64) -> f64, fn(f64) -> f64>> {
    if !(alpha > 0.0) {
        return Err(Error::config("alpha", "must be positive"));
    }
    stationary_density_with(example_drift(alpha), example_sigma2 as fn(f64) -> f64, settings)
}

/// Lyapunov exponent of the scalar example SDE,
/// `λ = −α − ½ E[(x² − 2)/(x² + 1)]` under the stationary law.
///
/// Equivalent to `E[f₀′(x) − ½ σ′(x)²]` with `f₀′ = −α + 1/(1+x²)` and
/// `σ′ = x/(x²+1)^{1/2}`.
pub fn le_reference_example(alpha: f64) -> Result<f64> {
    le_reference_example_with(alpha, &DensitySettings::default())
}

pub fn le_reference_example_with(alpha: f64, settings: &DensitySettings) -> Result<f64> {
    let p = example_density(alpha, settings)?;
    let mass = p.total_mass();
    let m = p.expectation(|x| (x * x - 2.0) / (x * x + 1.0)) / mass;
    Ok(-alpha - 0.5 * m)
}

/// Lyapunov exponent `a − b²/2` of `dx = a x dt + b x dw`.
pub fn le_reference_gbm(a: f64, b: f64) -> f64 {
    a - 0.5 * b * b
}

/// Exponents of the deterministic linear system `ẋ = A x`: the eigenvalue
/// real parts, descending.
pub fn le_reference_linear(a: &Matrix) -> Result<Vec<f64>> {
    eigen_real_parts(a)
}
