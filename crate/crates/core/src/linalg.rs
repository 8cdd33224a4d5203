//! Small dense real matrices: symmetric eigensolver, Cholesky, the Schur
//! factorization of `B⁻¹Q` for SPD `B`, `Q`, and the symmetric matrix
//! exponential with its gradient.
//!
//! Sizes here are channel counts (tens at most), so everything is plain
//! `O(n³)` row-major code.

use std::fmt;

use crate::error::{Result, VrdError};

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Mat::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(VrdError::shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VrdError::NonFinite("matrix"));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(VrdError::shape("ragged matrix rows"));
        }
        Mat::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(VrdError::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(VrdError::shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius inner product `Σ_ij a_ij b_ij`.
    pub fn dot(&self, other: &Mat) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Checks `max|A−Aᵀ| ≤ tol·max|A|` and returns `(A+Aᵀ)/2`.
    pub fn symmetrized(&self, tol: f64) -> Result<Mat> {
        if !self.is_square() {
            return Err(VrdError::shape("symmetric matrix must be square"));
        }
        if self.asymmetry() > tol * self.max_abs() {
            return Err(VrdError::invalid(format!(
                "matrix is not symmetric (asymmetry {:e})",
                self.asymmetry()
            )));
        }
        Ok(Mat::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i))
        }))
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Columns are eigenvectors.
    pub vectors: Mat,
    pub values: Vec<f64>,
}

impl SymEig {
    /// `vectors · diag(f(values)) · vectorsᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let u = &self.vectors;
        Mat::from_fn(n, n, |i, j| {
            (0..n).map(|k| u.get(i, k) * fv[k] * u.get(j, k)).sum()
        })
    }
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eig(a: &Mat) -> Result<SymEig> {
    let mut a = a.symmetrized(SYMMETRY_TOL)?;
    let n = a.rows();
    let mut v = Mat::identity(n);
    let tol = JACOBI_TOL * a.frobenius_norm();

    let off_norm = |a: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off_norm(&a) > tol {
        return Err(VrdError::NonConvergence("Jacobi eigensolver"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&k| a.get(k, k)).collect();
    let vectors = Mat::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(SymEig { vectors, values })
}

/// Lower-triangular `C` with `a = C·Cᵀ`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let a = a.symmetrized(SYMMETRY_TOL)?;
    let n = a.rows();
    let mut c = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= c.get(j, k) * c.get(j, k);
        }
        if !(d > 0.0) {
            return Err(VrdError::NotPositiveDefinite(format!(
                "non-positive Cholesky pivot {d:e} at {j}"
            )));
        }
        let djj = d.sqrt();
        c.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= c.get(i, k) * c.get(j, k);
            }
            c.set(i, j, s / djj);
        }
    }
    Ok(c)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn lower_inverse(c: &Mat) -> Mat {
    let n = c.rows();
    let mut inv = Mat::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= c.get(i, k) * inv.get(k, col);
            }
            inv.set(i, col, s / c.get(i, i));
        }
    }
    inv
}

/// Inverse of an upper-triangular matrix by back substitution.
fn upper_inverse(r: &Mat) -> Mat {
    lower_inverse(&r.transpose()).transpose()
}

/// SPD inverse via Cholesky and triangular solves.
pub fn chol_inverse(a: &Mat) -> Result<Mat> {
    let c = cholesky(a)?;
    let ci = lower_inverse(&c);
    let inv = ci.transpose().matmul(&ci)?;
    inv.symmetrized(1e-8)
}

/// Householder QR with `diag(R) ≥ 0`. Returns `(Q, R)`.
fn qr(x: &Mat) -> (Mat, Mat) {
    let n = x.rows();
    let mut r = x.clone();
    let mut q = Mat::identity(n);
    for k in 0..n.saturating_sub(1) {
        let norm: f64 = (k..n).map(|i| r.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r.get(k, k) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| r.get(i, k)).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // R ← (I − 2vvᵀ/vᵀv) R
        for j in 0..n {
            let dot: f64 = (k..n).map(|i| v[i - k] * r.get(i, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                r.set(i, j, r.get(i, j) - f * v[i - k]);
            }
        }
        // Q ← Q (I − 2vvᵀ/vᵀv)
        for i in 0..n {
            let dot: f64 = (k..n).map(|j| q.get(i, j) * v[j - k]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k..n {
                q.set(i, j, q.get(i, j) - f * v[j - k]);
            }
        }
    }
    for k in 0..n {
        if r.get(k, k) < 0.0 {
            for j in 0..n {
                r.set(k, j, -r.get(k, j));
                q.set(j, k, -q.get(j, k));
            }
        }
        for i in k + 1..n {
            r.set(i, k, 0.0);
        }
    }
    (q, r)
}

/// `a = v·u·vᵀ` with `v` orthonormal and `u` upper triangular.
#[derive(Debug, Clone)]
pub struct SchurForm {
    pub v: Mat,
    pub u: Mat,
}

impl SchurForm {
    pub fn reconstruct(&self) -> Mat {
        self.v
            .matmul(&self.u)
            .and_then(|vu| vu.matmul(&self.v.transpose()))
            .expect("schur factors are square and conformant")
    }
}

/// Real Schur form of `a = B⁻¹Q`, given the Cholesky factor `b_chol` of `B`.
///
/// `a` is similar to the symmetric `S = Cᵀ a C⁻ᵀ = C⁻¹ Q C⁻ᵀ`. With
/// `S = WΛWᵀ`, the eigenvectors of `a` are the columns of `X = C⁻ᵀW`; a QR
/// factorization `X = VR` then gives `a = V (RΛR⁻¹) Vᵀ`. The diagonal of `u`
/// is `Λ` in descending order.
pub fn schur_real(a: &Mat, b_chol: &Mat) -> Result<SchurForm> {
    if !a.is_square() || b_chol.rows() != a.rows() || !b_chol.is_square() {
        return Err(VrdError::shape(
            "schur_real needs conformant square matrices",
        ));
    }
    let n = a.rows();
    let c_inv_t = lower_inverse(b_chol).transpose();
    let s = b_chol.transpose().matmul(a)?.matmul(&c_inv_t)?;
    let s = s
        .symmetrized(1e-8)
        .map_err(|_| VrdError::NotPositiveDefinite("parameters not positive definite".into()))?;
    let eig = sym_eig(&s)?;
    if let Some(bad) = eig.values.iter().find(|&&l| !(l > 0.0)) {
        return Err(VrdError::NotPositiveDefinite(format!(
            "parameters not positive definite (eigenvalue {bad:e})"
        )));
    }
    let x = c_inv_t.matmul(&eig.vectors)?;
    let (v, r) = qr(&x);
    let r_inv = upper_inverse(&r);
    let mut u = r.matmul(&Mat::diag(&eig.values))?.matmul(&r_inv)?;
    for i in 0..n {
        u.set(i, i, eig.values[i]);
        for j in 0..i {
            u.set(i, j, 0.0);
        }
    }
    Ok(SchurForm { v, u })
}

/// Convenience wrapper: Schur form of `B⁻¹Q` from the SPD blocks themselves.
pub fn schur_from_blocks(b: &Mat, q: &Mat) -> Result<SchurForm> {
    let c = cholesky(b)?;
    let a = chol_inverse(b)?.matmul(q)?;
    schur_real(&a, &c)
}

/// Matrix exponential of a symmetric matrix via its eigendecomposition.
pub fn expm_sym(abar: &Mat) -> Result<Mat> {
    let eig = sym_eig(abar)?;
    eig.reconstruct_with(f64::exp).symmetrized(1e-8)
}

/// Divided difference of `exp` at `(li, lj)`; `e^{li}` on the diagonal.
pub fn phi_entry(li: f64, lj: f64) -> f64 {
    let d = li - lj;
    let mid = (0.5 * (li + lj)).exp();
    if d.abs() < 1e-9 {
        mid * (1.0 + d * d / 24.0)
    } else if d.abs() < 1.0 {
        let h = 0.5 * d;
        mid * h.sinh() / h
    } else {
        (li.exp() - lj.exp()) / d
    }
}

/// Gradient through `A = exp(Ā)` for symmetric `Ā`:
/// `U((Uᵀ·Gᵀ·U) ⊙ Φ)Uᵀ` with `G = dL/dA` and `Ā = UΛUᵀ`.
pub fn expm_grad(abar: &Mat, dl_da: &Mat) -> Result<Mat> {
    expm_grad_with(abar, dl_da, phi_entry)
}

/// [`expm_grad`] with a caller-supplied `Φ` rule (used by mutation checks).
pub fn expm_grad_with(abar: &Mat, dl_da: &Mat, phi: impl Fn(f64, f64) -> f64) -> Result<Mat> {
    let n = abar.rows();
    if dl_da.rows() != n || dl_da.cols() != n {
        return Err(VrdError::shape(
            "expm_grad: gradient shape differs from parameter",
        ));
    }
    let eig = sym_eig(abar)?;
    let u = &eig.vectors;
    let ut = u.transpose();
    let inner = ut.matmul(&dl_da.transpose())?.matmul(u)?;
    let phi_m = Mat::from_fn(n, n, |i, j| phi(eig.values[i], eig.values[j]));
    u.matmul(&inner.hadamard(&phi_m)?)?.matmul(&ut)
}

/// Chain rule through `Ā = R + Rᵀ`: `dL/dR = dL/dĀ + (dL/dĀ)ᵀ`.
pub fn symmetrize_param_grad(dl_dabar: &Mat) -> Mat {
    dl_dabar
        .add(&dl_dabar.transpose())
        .expect("transpose of a square matrix is conformant")
}
