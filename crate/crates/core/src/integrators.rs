//! Fixed-step Euler–Maruyama and Milstein schemes for the state SDE, the
//! matrix variational SDE and the projected orthogonal-factor SDE.
//!
//! All three steps of one trajectory consume the same Wiener increments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{mul_into, tmul_into, Matrix, QrWorkspace};
use crate::model::SdeSystem;

/// One-step scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    EulerMaruyama,
    Milstein,
}

impl SchemeKind {
    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::EulerMaruyama => "EM",
            SchemeKind::Milstein => "Milstein",
        }
    }
}

/// Reproducible stream of Wiener increments `Δw ~ N(0, h)` for `m` channels.
///
/// The same `(seed, channels, h)` always yields the same sequence.
#[derive(Debug, Clone)]
pub struct WienerStream {
    rng: ChaCha8Rng,
    channels: usize,
    sqrt_h: f64,
    h: f64,
    seed: u64,
}

impl WienerStream {
    pub fn new(seed: u64, channels: usize, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config("h", "step size must be positive"));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            channels,
            sqrt_h: h.sqrt(),
            h,
            seed,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draws the next increment vector into `dw` (length `channels`).
    #[inline]
    pub fn fill(&mut self, dw: &mut [f64]) {
        debug_assert_eq!(dw.len(), self.channels);
        for v in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sqrt_h * z;
        }
    }

    pub fn next_increments(&mut self) -> Vec<f64> {
        let mut dw = vec![0.0; self.channels];
        self.fill(&mut dw);
        dw
    }
}

pub(crate) fn check_scheme<S: SdeSystem + ?Sized>(s: &S, k: SchemeKind) -> Result<()> {
    if k == SchemeKind::Milstein && s.noise_channels() > 1 && !s.diagonal_noise() {
        return Err(Error::MilsteinUnsupported {
            channels: s.noise_channels(),
        });
    }
    Ok(())
}

fn check_inputs<S: SdeSystem + ?Sized>(s: &S, x: &[f64], h: f64, dw: &[f64]) -> Result<()> {
    if x.len() != s.dim() {
        return Err(Error::Dimension(format!(
            "state has {} entries, system dimension is {}",
            x.len(),
            s.dim()
        )));
    }
    if dw.len() != s.noise_channels() {
        return Err(Error::Dimension(format!(
            "{} increments for {} noise channels",
            dw.len(),
            s.noise_channels()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::config("h", "step size must be positive"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "state input" });
    }
    Ok(())
}

/// Scratch buffers shared by the step routines for one system size.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    d: usize,
    field: Vec<f64>,
    jac: Matrix,
    gen: Matrix,
    tmp: Matrix,
    tmp2: Matrix,
    qr: QrWorkspace,
}

impl StepWorkspace {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            field: vec![0.0; d],
            jac: Matrix::zeros(d, d),
            gen: Matrix::zeros(d, d),
            tmp: Matrix::zeros(d, d),
            tmp2: Matrix::zeros(d, d),
            qr: QrWorkspace::new(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// One state step, written into `out`.
pub fn state_step_into<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    h: f64,
    dw: &[f64],
    k: SchemeKind,
    ws: &mut StepWorkspace,
    out: &mut [f64],
) -> Result<()> {
    let d = s.dim();
    s.field(0, x, &mut ws.field);
    for i in 0..d {
        out[i] = x[i] + h * ws.field[i];
    }
    for (j, &w) in dw.iter().enumerate() {
        s.field(j + 1, x, &mut ws.field);
        for i in 0..d {
            out[i] += w * ws.field[i];
        }
        if k == SchemeKind::Milstein {
            // ½ (J_j f_j)(Δw² − h)
            s.jacobian(j + 1, x, &mut ws.jac);
            let c = 0.5 * (w * w - h);
            for i in 0..d {
                let dir: f64 = ws.jac.row(i).iter().zip(&ws.field).map(|(a, b)| a * b).sum();
                out[i] += c * dir;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "state step" });
    }
    Ok(())
}

/// One step of `dx = Σ_j f_j(x) dw^j`.
pub fn state_step<S: SdeSystem + ?Sized>(s: &S, x: &[f64], h: f64, dw: &[f64], k: SchemeKind) -> Result<Vec<f64>> {
    check_inputs(s, x, h, dw)?;
    check_scheme(s, k)?;
    let mut ws = StepWorkspace::new(s.dim());
    let mut out = vec![0.0; s.dim()];
    state_step_into(s, x, h, dw, k, &mut ws, &mut out)?;
    Ok(out)
}

/// Integrates `steps` fixed steps from `x0` with increments from
/// `WienerStream::new(seed, m, h)`, calling `visit(n, x_n)` after each step.
/// Returns the final state.
pub fn simulate<S, F>(
    s: &S,
    x0: &[f64],
    h: f64,
    steps: usize,
    seed: u64,
    k: SchemeKind,
    mut visit: F,
) -> Result<Vec<f64>>
where
    S: SdeSystem + ?Sized,
    F: FnMut(usize, &[f64]),
{
    let mut stream = WienerStream::new(seed, s.noise_channels(), h)?;
    let mut dw = vec![0.0; s.noise_channels()];
    check_inputs(s, x0, h, &dw)?;
    check_scheme(s, k)?;
    let mut ws = StepWorkspace::new(s.dim());
    let mut x = x0.to_vec();
    let mut next = vec![0.0; s.dim()];
    for n in 1..=steps {
        stream.fill(&mut dw);
        state_step_into(s, &x, h, &dw, k, &mut ws, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        visit(n, &x);
    }
    Ok(x)
}

/// Builds the one-step generator `M` such that the step is `Z ↦ Z + M Z`:
/// `M = h J₀ + Σ_j Δw_j J_j [+ ½ Σ_j (Δw_j² − h) J_j²]`.
fn variational_generator<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    h: f64,
    dw: &[f64],
    k: SchemeKind,
    ws: &mut StepWorkspace,
) {
    s.jacobian(0, x, &mut ws.jac);
    for (g, a) in ws.gen.as_mut_slice().iter_mut().zip(ws.jac.as_slice()) {
        *g = h * a;
    }
    for (j, &w) in dw.iter().enumerate() {
        s.jacobian(j + 1, x, &mut ws.jac);
        for (g, a) in ws.gen.as_mut_slice().iter_mut().zip(ws.jac.as_slice()) {
            *g += w * a;
        }
        if k == SchemeKind::Milstein {
            mul_into(&ws.jac, &ws.jac, &mut ws.tmp);
            let c = 0.5 * (w * w - h);
            for (g, a) in ws.gen.as_mut_slice().iter_mut().zip(ws.tmp.as_slice()) {
                *g += c * a;
            }
        }
    }
}

/// In-place transition step: `z := z + M z`.
pub fn transition_step_in_place<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    z: &mut Matrix,
    h: f64,
    dw: &[f64],
    k: SchemeKind,
    ws: &mut StepWorkspace,
) -> Result<()> {
    variational_generator(s, x, h, dw, k, ws);
    mul_into(&ws.gen, z, &mut ws.tmp);
    for (zv, t) in z.as_mut_slice().iter_mut().zip(ws.tmp.as_slice()) {
        *zv += t;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite {
            stage: "transition step",
        });
    }
    Ok(())
}

/// One step of the matrix variational SDE `dZ = Σ_j J_j(x) Z dw^j`, with `x`
/// the state at the start of the step.
pub fn transition_step<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    z: &Matrix,
    h: f64,
    dw: &[f64],
    k: SchemeKind,
) -> Result<Matrix> {
    check_inputs(s, x, h, dw)?;
    check_scheme(s, k)?;
    if z.rows() != s.dim() || z.cols() != s.dim() {
        return Err(Error::Dimension("transition matrix must be d×d".into()));
    }
    let mut ws = StepWorkspace::new(s.dim());
    let mut out = z.clone();
    transition_step_in_place(s, x, &mut out, h, dw, k, &mut ws)?;
    Ok(out)
}

/// Skew-symmetric matrix built from the strictly lower part of `b`:
/// `T[i][l] = b[i][l]` for `i > l`, `T[i][l] = −b[l][i]` for `i < l`, zero diagonal.
pub fn skew_from_lower(b: &Matrix, out: &mut Matrix) {
    let d = b.rows();
    for i in 0..d {
        out[(i, i)] = 0.0;
        for l in 0..i {
            let v = b[(i, l)];
            out[(i, l)] = v;
            out[(l, i)] = -v;
        }
    }
}

/// Allocating wrapper around [`skew_from_lower`].
pub fn t_matrix(b: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(b.rows(), b.cols());
    skew_from_lower(b, &mut t);
    t
}

/// Accumulates the orthogonal-factor generator for one step into `gen`:
/// `G = h T₀ + Σ Δw_j T_j [+ ½ Σ (Δw_j² − h) T_j²]`, where `T_j` comes from
/// `B_j = Qᵀ J_j Q`. Each `B_j` is handed to `visit` (channel index, matrix)
/// so callers can reuse it.
pub(crate) fn orthogonal_generator<S, F>(
    s: &S,
    x: &[f64],
    q: &Matrix,
    h: f64,
    dw: &[f64],
    k: SchemeKind,
    ws: &mut StepWorkspace,
    mut visit: F,
) where
    S: SdeSystem + ?Sized,
    F: FnMut(usize, &Matrix),
{
    ws.gen.fill(0.0);
    for j in 0..=dw.len() {
        s.jacobian(j, x, &mut ws.jac);
        if j > 0 && ws.jac.as_slice().iter().all(|v| *v == 0.0) {
            // additive channel: contributes nothing to ψ, G or log det
            continue;
        }
        // B = Qᵀ J Q
        mul_into(&ws.jac, q, &mut ws.tmp);
        tmul_into(q, &ws.tmp, &mut ws.tmp2);
        visit(j, &ws.tmp2);
        skew_from_lower(&ws.tmp2, &mut ws.tmp);
        let c = if j == 0 { h } else { dw[j - 1] };
        for (g, t) in ws.gen.as_mut_slice().iter_mut().zip(ws.tmp.as_slice()) {
            *g += c * t;
        }
        if j > 0 && k == SchemeKind::Milstein {
            let w = dw[j - 1];
            mul_into(&ws.tmp, &ws.tmp, &mut ws.tmp2);
            let c2 = 0.5 * (w * w - h);
            for (g, t) in ws.gen.as_mut_slice().iter_mut().zip(ws.tmp2.as_slice()) {
                *g += c2 * t;
            }
        }
    }
}

/// `q := orthonormalize(q (I + gen))` using the generator held in `ws`.
pub(crate) fn apply_orthogonal_generator(q: &mut Matrix, ws: &mut StepWorkspace) -> Result<()> {
    mul_into(q, &ws.gen, &mut ws.tmp);
    for (t, qv) in ws.tmp.as_mut_slice().iter_mut().zip(q.as_slice()) {
        *t += qv;
    }
    if !ws.tmp.is_finite() {
        return Err(Error::NonFinite {
            stage: "orthogonal step",
        });
    }
    ws.qr.factorize(&ws.tmp)?;
    q.copy_from(&ws.qr.q);
    Ok(())
}

/// One projected step of `dQ = Σ_j Q T_j(x, Q) dw^j`: a scheme step followed
/// by re-orthonormalization.
pub fn orthogonal_step<S: SdeSystem + ?Sized>(
    s: &S,
    x: &[f64],
    q: &Matrix,
    h: f64,
    dw: &[f64],
    k: SchemeKind,
) -> Result<Matrix> {
    check_inputs(s, x, h, dw)?;
    check_scheme(s, k)?;
    let d = s.dim();
    if q.rows() != d || q.cols() != d {
        return Err(Error::Dimension("orthogonal factor must be d×d".into()));
    }
    let mut ws = StepWorkspace::new(d);
    let mut out = q.clone();
    orthogonal_generator(s, x, q, h, dw, k, &mut ws, |_, _| {});
    apply_orthogonal_generator(&mut out, &mut ws)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSde;

    /// dx = a x dt + b x dw
    fn gbm(a: f64, b: f64) -> LinearSde {
        LinearSde::gbm(a, b)
    }

    #[test]
    fn em_decay_step() {
        let s = LinearSde::deterministic(Matrix::from_diag(&[-1.0])).unwrap();
        let x = state_step(&s, &[1.0], 0.1, &[], SchemeKind::EulerMaruyama).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn gbm_em_and_milstein_steps() {
        let s = gbm(0.5, 1.0);
        let em = state_step(&s, &[1.0], 0.01, &[0.05], SchemeKind::EulerMaruyama).unwrap();
        assert!((em[0] - 1.055).abs() < 1e-14);
        let mil = state_step(&s, &[1.0], 0.01, &[0.05], SchemeKind::Milstein).unwrap();
        // 1.055 + ½·(0.05² − 0.01)
        assert!((mil[0] - 1.05125).abs() < 1e-14);
    }

    #[test]
    fn transition_examples() {
        let s = LinearSde::deterministic(Matrix::from_diag(&[-1.0, -2.0])).unwrap();
        let z = transition_step(
            &s,
            &[0.0, 0.0],
            &Matrix::identity(2),
            0.1,
            &[],
            SchemeKind::EulerMaruyama,
        )
        .unwrap();
        assert!(z.sub(&Matrix::from_diag(&[0.9, 0.8])).frobenius_norm() < 1e-15);

        let g = gbm(0.3, 0.7);
        let zero = transition_step(&g, &[1.0], &Matrix::zeros(1, 1), 0.01, &[0.1], SchemeKind::Milstein).unwrap();
        assert_eq!(zero, Matrix::zeros(1, 1));

        let one = transition_step(
            &g,
            &[1.0],
            &Matrix::identity(1),
            0.01,
            &[0.1],
            SchemeKind::EulerMaruyama,
        )
        .unwrap();
        assert!((one[(0, 0)] - (1.0 + 0.3 * 0.01 + 0.7 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn t_matrix_example() {
        let b = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let t = t_matrix(&b);
        assert_eq!(t, Matrix::from_rows(&[&[0.0, -3.0], &[3.0, 0.0]]).unwrap());
    }

    #[test]
    fn orthogonal_step_trivial_cases() {
        let zero = LinearSde::new(Matrix::zeros(2, 2), vec![Matrix::zeros(2, 2)]).unwrap();
        let rot = {
            let (s, c) = 0.4f64.sin_cos();
            Matrix::from_rows(&[&[c, -s], &[s, c]]).unwrap()
        };
        let q = orthogonal_step(&zero, &[1.0, 2.0], &rot, 0.01, &[0.3], SchemeKind::Milstein).unwrap();
        assert!(q.sub(&rot).frobenius_norm() < 1e-15);

        let g = gbm(-0.7, 2.0);
        let mut q = Matrix::identity(1);
        let mut w = WienerStream::new(1, 1, 0.01).unwrap();
        for _ in 0..1000 {
            let dw = w.next_increments();
            q = orthogonal_step(&g, &[1.0], &q, 0.01, &dw, SchemeKind::EulerMaruyama).unwrap();
            assert_eq!(q[(0, 0)], 1.0);
        }
    }

    #[test]
    fn orthogonal_step_follows_rotation() {
        // dQ = Q T dt with B = QᵀJQ; J = [[0,1],[-1,0]] is skew, so T = QᵀJQ
        // and the exact flow is Q(t) = exp(J t) Q(0).
        let j = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let s = LinearSde::deterministic(j).unwrap();
        let h = 1e-3;
        let mut q = Matrix::identity(2);
        let mut worst: f64 = 0.0;
        for n in 1..=100 {
            let next = orthogonal_step(&s, &[0.0, 0.0], &q, h, &[], SchemeKind::EulerMaruyama).unwrap();
            let exact_one = {
                let (sn, c) = h.sin_cos();
                Matrix::from_rows(&[&[c, sn], &[-sn, c]]).unwrap().matmul(&q)
            };
            worst = worst.max(next.sub(&exact_one).frobenius_norm());
            q = next;
            let t = n as f64 * h;
            let (sn, c) = t.sin_cos();
            let exact = Matrix::from_rows(&[&[c, sn], &[-sn, c]]).unwrap();
            assert!(q.sub(&exact).frobenius_norm() < 10.0 * h * h * n as f64);
        }
        assert!(worst < h * h, "local error {worst:e}");
    }

    #[test]
    fn wiener_stream_reproducible() {
        let mut a = WienerStream::new(42, 3, 1e-2).unwrap();
        let mut b = WienerStream::new(42, 3, 1e-2).unwrap();
        for _ in 0..100 {
            let x = a.next_increments();
            let y = b.next_increments();
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let mut c = WienerStream::new(43, 3, 1e-2).unwrap();
        assert_ne!(a.next_increments(), c.next_increments());
    }

    #[test]
    fn wiener_moments() {
        let h = 0.01;
        let mut w = WienerStream::new(7, 2, h).unwrap();
        let n = 200_000;
        let (mut s1, mut s2, mut cross) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let dw = w.next_increments();
            s1 += dw[0];
            s2 += dw[0] * dw[0];
            cross += dw[0] * dw[1];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64;
        assert!(mean.abs() < 5.0 * (h / n as f64).sqrt());
        assert!((var / h - 1.0).abs() < 0.02);
        assert!((cross / n as f64).abs() < 5.0 * h / (n as f64).sqrt());
    }

    #[test]
    fn milstein_rejects_coupled_noise() {
        let full = LinearSde::new(
            Matrix::identity(2),
            vec![
                Matrix::identity(2),
                Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap(),
            ],
        )
        .unwrap();
        assert!(matches!(
            state_step(&full, &[1.0, 1.0], 0.01, &[0.1, 0.1], SchemeKind::Milstein),
            Err(Error::MilsteinUnsupported { channels: 2 })
        ));
        assert!(state_step(&full, &[1.0, 1.0], 0.01, &[0.1, 0.1], SchemeKind::EulerMaruyama).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let s = LinearSde::deterministic(Matrix::from_diag(&[1e300])).unwrap();
        assert!(matches!(
            state_step(&s, &[1e10], 1.0, &[], SchemeKind::EulerMaruyama),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn simulate_matches_em_recursion() {
        let ou = crate::model::ou_system(crate::model::OuParams::new(2.0, 0.0, 0.0).unwrap());
        let mut seen = 0;
        let end = simulate(&ou, &[1.0], 0.01, 50, 3, SchemeKind::EulerMaruyama, |n, x| {
            seen = n;
            assert!((x[0] - 0.98f64.powi(n as i32)).abs() < 1e-14);
        })
        .unwrap();
        assert_eq!(seen, 50);
        assert!((end[0] - 0.98f64.powi(50)).abs() < 1e-14);
        assert!(simulate(&ou, &[1.0, 2.0], 0.01, 5, 0, SchemeKind::EulerMaruyama, |_, _| {}).is_err());
    }
}
