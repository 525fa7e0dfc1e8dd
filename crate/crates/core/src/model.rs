//! Itô SDE systems, semi-explicit strangeness-free SDAEs and their reduction
//! to the underlying SDE.
//!
//! Channel index `j = 0` is the drift (paired with `dt`); `j = 1..=m` are the
//! diffusion channels paired with independent Wiener increments.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Tolerance on the algebraic constraint residual at the initial state.
pub const RESOLVER_TOL: f64 = 1e-8;

/// Relative finite-difference step used by the Jacobian fallbacks.
pub const FD_STEP: f64 = 1e-6;

/// A `d`-dimensional Itô SDE `dx = f₀(x) dt + Σ_j f_j(x) dw^j` together with
/// the Jacobians of every vector field.
///
/// Implementations must be pure: the same state always yields the same output,
/// and evaluation from several threads at once is allowed.
pub trait SdeSystem: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of Wiener channels `m`.
    fn noise_channels(&self) -> usize;

    /// Evaluates `f_j(x)` into `out` (`j = 0` is the drift).
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]);

    /// Evaluates `J_j(x) = ∂f_j/∂x` into `out`.
    fn jacobian(&self, j: usize, x: &[f64], out: &mut Matrix);

    /// Directional derivative of `J_j` along `v`, i.e. `d/dε J_j(x + εv)` at 0.
    ///
    /// Used only by the Milstein correction of the log-diagonal equation.
    /// Defaults to a central difference.
    fn jacobian_directional(&self, j: usize, x: &[f64], v: &[f64], out: &mut Matrix) {
        let d = self.dim();
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            out.fill(0.0);
            return;
        }
        let xnorm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let eps = FD_STEP * (1.0 + xnorm) / vnorm;
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
        let mut jm = Matrix::zeros(d, d);
        self.jacobian(j, &xp, out);
        self.jacobian(j, &xm, &mut jm);
        for (o, m) in out.as_mut_slice().iter_mut().zip(jm.as_slice()) {
            *o = (*o - m) / (2.0 * eps);
        }
    }

    /// True when each noise channel can be corrected independently by
    /// Milstein (single channel, or channels acting on disjoint components).
    fn diagonal_noise(&self) -> bool {
        self.noise_channels() <= 1
    }

    fn eval_field(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.field(j, x, &mut out);
        out
    }

    fn eval_jacobian(&self, j: usize, x: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), self.dim());
        self.jacobian(j, x, &mut out);
        out
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_channels(&self) -> usize {
        (**self).noise_channels()
    }
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        (**self).field(j, x, out)
    }
    fn jacobian(&self, j: usize, x: &[f64], out: &mut Matrix) {
        (**self).jacobian(j, x, out)
    }
    fn jacobian_directional(&self, j: usize, x: &[f64], v: &[f64], out: &mut Matrix) {
        (**self).jacobian_directional(j, x, v, out)
    }
    fn diagonal_noise(&self) -> bool {
        (**self).diagonal_noise()
    }
}

/// Central-difference Jacobian of `f`, step `1e-6·(1+|x_k|)` per coordinate.
pub fn finite_difference_jacobian<F>(dim: usize, x: &[f64], mut f: F, out: &mut Matrix)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for k in 0..x.len() {
        let step = FD_STEP * (1.0 + x[k].abs());
        xp[k] = x[k] + step;
        f(&xp, &mut fp);
        xp[k] = x[k] - step;
        f(&xp, &mut fm);
        xp[k] = x[k];
        for i in 0..dim {
            out[(i, k)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
}

/// Largest entrywise violation of the Jacobian consistency check at `x`, as a
/// ratio to the allowed error `max(1e-5, 1e-5·‖J‖_F)`. Values `<= 1` pass.
pub fn jacobian_consistency<S: SdeSystem + ?Sized>(s: &S, x: &[f64]) -> f64 {
    let d = s.dim();
    let mut analytic = Matrix::zeros(d, d);
    let mut numeric = Matrix::zeros(d, d);
    let mut worst: f64 = 0.0;
    for j in 0..=s.noise_channels() {
        s.jacobian(j, x, &mut analytic);
        finite_difference_jacobian(d, x, |y, out| s.field(j, y, out), &mut numeric);
        let tol = 1e-5f64.max(1e-5 * analytic.frobenius_norm());
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            worst = worst.max((a - n).abs() / tol);
        }
    }
    worst
}

/// Semi-explicit strangeness-free SDAE
///
/// ```text
/// dx_D = f₀ᴰ(x_D, x_A) dt + Σ_j f_jᴰ(x_D, x_A) dw^j
///    0 = f₀ᴬ(x_D, x_A)
/// ```
///
/// The algebraic block has no diffusion slot. The model supplies the resolver
/// `x_A = Fᴬ(x_D)` in closed form.
pub trait SemiExplicitSdae: Send + Sync {
    fn diff_dim(&self) -> usize;
    fn alg_dim(&self) -> usize;
    fn noise_channels(&self) -> usize;

    /// `f_jᴰ(x_D, x_A)` for `j = 0..=m`.
    fn diff_field(&self, j: usize, xd: &[f64], xa: &[f64], out: &mut [f64]);

    /// `f₀ᴬ(x_D, x_A)`.
    fn alg_constraint(&self, xd: &[f64], xa: &[f64], out: &mut [f64]);

    /// `Fᴬ(x_D)`.
    fn resolve(&self, xd: &[f64], out: &mut [f64]);

    /// Jacobian of the reduced field `x_D ↦ f_jᴰ(x_D, Fᴬ(x_D))`, including the
    /// chain term through the resolver. Defaults to central differences.
    fn reduced_jacobian(&self, j: usize, xd: &[f64], out: &mut Matrix) {
        let d = self.diff_dim();
        let mut xa = vec![0.0; self.alg_dim()];
        finite_difference_jacobian(
            d,
            xd,
            |y, o| {
                self.resolve(y, &mut xa);
                self.diff_field(j, y, &xa, o);
            },
            out,
        );
    }

    fn reduced_jacobian_directional(&self, j: usize, xd: &[f64], v: &[f64], out: &mut Matrix) {
        let d = self.diff_dim();
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            out.fill(0.0);
            return;
        }
        let xnorm = xd.iter().map(|a| a * a).sum::<f64>().sqrt();
        let eps = FD_STEP * (1.0 + xnorm) / vnorm;
        let xp: Vec<f64> = xd.iter().zip(v).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = xd.iter().zip(v).map(|(a, b)| a - eps * b).collect();
        let mut jm = Matrix::zeros(d, d);
        self.reduced_jacobian(j, &xp, out);
        self.reduced_jacobian(j, &xm, &mut jm);
        for (o, m) in out.as_mut_slice().iter_mut().zip(jm.as_slice()) {
            *o = (*o - m) / (2.0 * eps);
        }
    }

    /// Max-norm of the constraint residual `f₀ᴬ(x_D, Fᴬ(x_D))`.
    fn constraint_residual(&self, xd: &[f64]) -> f64 {
        let a = self.alg_dim();
        if a == 0 {
            return 0.0;
        }
        let mut xa = vec![0.0; a];
        let mut res = vec![0.0; a];
        self.resolve(xd, &mut xa);
        self.alg_constraint(xd, &xa, &mut res);
        res.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// The underlying SDE of a semi-explicit SDAE: the algebraic variables are
/// eliminated through the resolver.
#[derive(Debug, Clone)]
pub struct Underlying<S> {
    sdae: S,
}

impl<S: SemiExplicitSdae> Underlying<S> {
    pub fn sdae(&self) -> &S {
        &self.sdae
    }

    /// Recovers the algebraic variables along a reduced state.
    pub fn algebraic_state(&self, xd: &[f64]) -> Vec<f64> {
        let mut xa = vec![0.0; self.sdae.alg_dim()];
        self.sdae.resolve(xd, &mut xa);
        xa
    }
}

/// Eliminates the algebraic constraints of `sdae`, checking the resolver at `x0`.
pub fn reduce_to_underlying<S: SemiExplicitSdae>(sdae: S, x0: &[f64]) -> Result<Underlying<S>> {
    if x0.len() != sdae.diff_dim() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, model has {} differential variables",
            x0.len(),
            sdae.diff_dim()
        )));
    }
    let residual = sdae.constraint_residual(x0);
    if !(residual <= RESOLVER_TOL) {
        return Err(Error::ResolverInconsistent { residual });
    }
    Ok(Underlying { sdae })
}

impl<S: SemiExplicitSdae> SdeSystem for Underlying<S> {
    fn dim(&self) -> usize {
        self.sdae.diff_dim()
    }

    fn noise_channels(&self) -> usize {
        self.sdae.noise_channels()
    }

    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let a = self.sdae.alg_dim();
        if a <= 8 {
            let mut buf = [0.0; 8];
            self.sdae.resolve(x, &mut buf[..a]);
            self.sdae.diff_field(j, x, &buf[..a], out);
        } else {
            let xa = self.algebraic_state(x);
            self.sdae.diff_field(j, x, &xa, out);
        }
    }

    fn jacobian(&self, j: usize, x: &[f64], out: &mut Matrix) {
        self.sdae.reduced_jacobian(j, x, out);
    }

    fn jacobian_directional(&self, j: usize, x: &[f64], v: &[f64], out: &mut Matrix) {
        self.sdae.reduced_jacobian_directional(j, x, v, out);
    }
}

/// Ornstein–Uhlenbeck parameters for `dη = α(μ − η) dt + β dw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub alpha: f64,
    pub mu: f64,
    pub beta: f64,
}

impl OuParams {
    pub fn new(alpha: f64, mu: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config("alpha", "mean-reversion rate must be positive"));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::config("beta", "noise intensity must be non-negative"));
        }
        if !mu.is_finite() {
            return Err(Error::config("mu", "long-run mean must be finite"));
        }
        Ok(Self { alpha, mu, beta })
    }

    /// Variance `β²/2α` of the stationary law.
    pub fn stationary_variance(&self) -> f64 {
        self.beta * self.beta / (2.0 * self.alpha)
    }
}

/// Scalar OU process as an [`SdeSystem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess(pub OuParams);

pub fn ou_system(p: OuParams) -> OuProcess {
    OuProcess(p)
}

impl SdeSystem for OuProcess {
    fn dim(&self) -> usize {
        1
    }
    fn noise_channels(&self) -> usize {
        1
    }
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let p = &self.0;
        out[0] = match j {
            0 => p.alpha * (p.mu - x[0]),
            _ => p.beta,
        };
    }
    fn jacobian(&self, j: usize, _x: &[f64], out: &mut Matrix) {
        out[(0, 0)] = if j == 0 { -self.0.alpha } else { 0.0 };
    }
    fn jacobian_directional(&self, _j: usize, _x: &[f64], _v: &[f64], out: &mut Matrix) {
        out.fill(0.0);
    }
}

/// Linear SDE `dx = A x dt + Σ_j B_j x dw^j` with constant coefficients.
///
/// The scalar case with `A = a`, `B₁ = b` is geometric Brownian motion, whose
/// Lyapunov exponent is `a − b²/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    pub drift: Matrix,
    pub diffusions: Vec<Matrix>,
}

impl LinearSde {
    pub fn new(drift: Matrix, diffusions: Vec<Matrix>) -> Result<Self> {
        let d = drift.rows();
        if !drift.is_square() || diffusions.iter().any(|b| b.rows() != d || b.cols() != d) {
            return Err(Error::Dimension(
                "linear SDE coefficients must be square and of equal size".into(),
            ));
        }
        Ok(Self { drift, diffusions })
    }

    pub fn deterministic(drift: Matrix) -> Result<Self> {
        Self::new(drift, Vec::new())
    }

    pub fn gbm(a: f64, b: f64) -> Self {
        Self {
            drift: Matrix::from_diag(&[a]),
            diffusions: vec![Matrix::from_diag(&[b])],
        }
    }

    fn coefficient(&self, j: usize) -> &Matrix {
        if j == 0 {
            &self.drift
        } else {
            &self.diffusions[j - 1]
        }
    }
}

impl SdeSystem for LinearSde {
    fn dim(&self) -> usize {
        self.drift.rows()
    }
    fn noise_channels(&self) -> usize {
        self.diffusions.len()
    }
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let c = self.coefficient(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o = c.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn jacobian(&self, j: usize, _x: &[f64], out: &mut Matrix) {
        out.copy_from(self.coefficient(j));
    }
    fn jacobian_directional(&self, _j: usize, _x: &[f64], _v: &[f64], out: &mut Matrix) {
        out.fill(0.0);
    }
    fn diagonal_noise(&self) -> bool {
        self.diffusions.len() <= 1
            || self
                .diffusions
                .iter()
                .all(|b| (0..b.rows()).all(|i| (0..b.cols()).all(|k| i == k || b[(i, k)] == 0.0)))
    }
}

/// `sin η`, a bounded odd map into `[−1, 1]`.
pub fn bounded_sin(eta: f64) -> f64 {
    eta.sin()
}

/// `(2/π) arctan η`, a bounded odd map into `[−1, 1]`.
pub fn bounded_arctan(eta: f64) -> f64 {
    std::f64::consts::FRAC_2_PI * eta.atan()
}
