//! Dense matrix primitives.
//!
//! Only what the Lyapunov engines need: a row-major [`Matrix`], Householder QR
//! with a positive-diagonal normalization, projection onto the orthogonal group,
//! and a small real eigensolver that serves as a cross-check oracle.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative threshold on `|R[i][i]|` below which a factorization is rejected.
pub const RANK_TOL: f64 = 1e-13;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "matrix construction",
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn copy_from(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.copy_from_slice(&other.data);
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        mul_into(self, other, &mut out);
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `‖selfᵀ·self − I‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.cols;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for k in 0..self.rows {
                    dot += self[(k, i)] * self[(k, j)];
                }
                let e = dot - if i == j { 1.0 } else { 0.0 };
                acc += e * e;
            }
        }
        acc.sqrt()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// `out = a · b`, without allocating.
pub fn mul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((out.rows, out.cols), (a.rows, b.cols));
    let (n, p) = (a.cols, b.cols);
    if n == 0 {
        out.fill(0.0);
        return;
    }
    let bd = &b.data[..n * p];
    for (arow, orow) in a.data.chunks_exact(n).zip(out.data.chunks_exact_mut(p)) {
        orow.copy_from_slice(&bd[..p]);
        let a0 = arow[0];
        orow.iter_mut().for_each(|o| *o *= a0);
        for (aik, brow) in arow[1..].iter().zip(bd[p..].chunks_exact(p)) {
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out = aᵀ · b`, without allocating.
pub fn tmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.rows, b.rows);
    assert_eq!((out.rows, out.cols), (a.cols, b.cols));
    let (m, p) = (a.cols, b.cols);
    out.data.iter_mut().for_each(|v| *v = 0.0);
    for (arow, brow) in a.data.chunks_exact(m).zip(b.data.chunks_exact(p)) {
        for (aki, orow) in arow.iter().zip(out.data.chunks_exact_mut(p)) {
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
}

/// Orthogonal/upper-triangular pair with strictly positive diagonal on `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

/// Reusable scratch space for repeated factorizations of one size.
#[derive(Debug, Clone)]
pub struct QrWorkspace {
    pub q: Matrix,
    pub r: Matrix,
    v: Vec<f64>,
    rt: Vec<f64>,
}

impl QrWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            q: Matrix::identity(n),
            r: Matrix::zeros(n, n),
            v: vec![0.0; n],
            rt: vec![0.0; n * n],
        }
    }

    /// Factorizes `a` into `self.q`, `self.r` (Householder, then sign fix).
    pub fn factorize(&mut self, a: &Matrix) -> Result<()> {
        let n = a.rows;
        if !a.is_square() || n != self.r.rows {
            return Err(Error::Dimension(format!(
                "QR workspace of size {} given {}x{}",
                self.r.rows, a.rows, a.cols
            )));
        }
        let norm = a.frobenius_norm();
        // Work on columns stored contiguously: rt[j*n + i] = a[i][j].
        let rt = &mut self.rt;
        for i in 0..n {
            for j in 0..n {
                rt[j * n + i] = a.data[i * n + j];
            }
        }
        let q = &mut self.q.data;
        q.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        let v = &mut self.v;

        for k in 0..n.saturating_sub(1) {
            let m = n - k;
            let col = &rt[k * n + k..(k + 1) * n];
            let sub: f64 = col[1..].iter().map(|x| x * x).sum();
            if sub == 0.0 {
                continue;
            }
            let x0 = col[0];
            let xnorm = (x0 * x0 + sub).sqrt();
            let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
            v[..m].copy_from_slice(col);
            v[0] = x0 - alpha;
            let beta = 2.0 / (v[0] * v[0] + sub);
            let v = &v[..m];

            // R := H R on rows k.., columns k+1..
            for j in k + 1..n {
                let c = &mut rt[j * n + k..(j + 1) * n];
                let s = beta * c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci -= s * vi;
                }
            }
            // Q := Q H on columns k..
            for i in 0..n {
                let row = &mut q[i * n + k..(i + 1) * n];
                let s = beta * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                for (ri, vi) in row.iter_mut().zip(v) {
                    *ri -= s * vi;
                }
            }
            let col = &mut rt[k * n + k..(k + 1) * n];
            col[0] = alpha;
            col[1..].iter_mut().for_each(|x| *x = 0.0);
        }

        let r = &mut self.r.data;
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = if j >= i { rt[j * n + i] } else { 0.0 };
            }
        }
        for i in 0..n {
            let d = r[i * n + i];
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    stage: "QR factorization",
                });
            }
            if d.abs() < RANK_TOL * norm || norm == 0.0 {
                return Err(Error::RankDeficient { index: i, value: d });
            }
            if d < 0.0 {
                r[i * n + i..(i + 1) * n].iter_mut().for_each(|x| *x = -*x);
                for l in 0..n {
                    q[l * n + i] = -q[l * n + i];
                }
            }
        }
        Ok(())
    }
}

/// QR factorization normalized so that every `R[i][i] > 0`, which makes it unique.
pub fn qr_signfix(a: &Matrix) -> Result<QrFactors> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "QR expects a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let mut ws = QrWorkspace::new(a.rows);
    ws.factorize(a)?;
    Ok(QrFactors { q: ws.q, r: ws.r })
}

/// Nearest orthogonal matrix in the QR sense: the `Q` factor of [`qr_signfix`].
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    qr_signfix(a).map(|f| f.q)
}

/// Real parts of all eigenvalues of a small square matrix, in descending order.
///
/// Householder reduction to Hessenberg form followed by Francis double-shift
/// QR iteration. Intended for `d <= 10`.
pub fn eigen_real_parts(a: &Matrix) -> Result<Vec<f64>> {
    let (wr, _) = eigenvalues(a)?;
    let mut re = wr;
    re.sort_by(|x, y| y.total_cmp(x));
    Ok(re)
}

/// Eigenvalues as `(real parts, imaginary parts)`, unordered.
pub fn eigenvalues(a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if !a.is_square() {
        return Err(Error::Dimension("eigenvalues of a non-square matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite {
            stage: "eigenvalue input",
        });
    }
    let mut h = a.clone();
    hessenberg_in_place(&mut h);
    hqr(&h)
}

fn hessenberg_in_place(a: &mut Matrix) {
    let n = a.rows;
    let mut v = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let mut sub = 0.0;
        for i in k + 2..n {
            sub += a[(i, k)] * a[(i, k)];
        }
        if sub == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let xnorm = (x0 * x0 + sub).sqrt();
        let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
        let m = n - k - 1;
        v[0] = x0 - alpha;
        for i in k + 2..n {
            v[i - k - 1] = a[(i, k)];
        }
        let beta = 2.0 / (v[0] * v[0] + sub);
        // A := H A
        for j in 0..n {
            let mut dot = 0.0;
            for i in 0..m {
                dot += v[i] * a[(k + 1 + i, j)];
            }
            let s = beta * dot;
            for i in 0..m {
                a[(k + 1 + i, j)] -= s * v[i];
            }
        }
        // A := A H
        for i in 0..n {
            let mut dot = 0.0;
            for l in 0..m {
                dot += a[(i, k + 1 + l)] * v[l];
            }
            let s = beta * dot;
            for l in 0..m {
                a[(i, k + 1 + l)] -= s * v[l];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (EISPACK `hqr` layout,
/// 1-based internally).
fn hqr(h: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h.rows;
    let cap = 500 * n;
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = h[(i, j)];
        }
    }
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }

    let mut total_its = 0usize;
    let mut nn = n as isize;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        let mut l: isize;
        loop {
            let nu = nn as usize;
            l = nn;
            while l >= 2 {
                let lu = l as usize;
                let mut s = a[lu - 1][lu - 1].abs() + a[lu][lu].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[lu][lu - 1].abs() + s == s {
                    a[lu][lu - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nu][nu];
            if l == nn {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                y = a[nu - 1][nu - 1];
                w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if total_its >= cap || its >= 60 {
                        return Err(Error::NoConvergence { iterations: total_its });
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 1..=nu {
                            a[i][i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_its += 1;
                    let lu = l as usize;
                    let mut m = nu - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s0;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == lu {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nu {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nu - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if lu != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nu - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for i in lu..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nu - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if !(l < nn - 1) {
                break;
            }
        }
    }
    Ok((wr[1..].to_vec(), wi[1..].to_vec()))
}
