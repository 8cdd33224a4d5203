//! Brute-force reference computations.
//!
//! Nothing here calls into the fast solver path: the lattice system is
//! assembled as a dense matrix and solved by Gaussian elimination, the DST is
//! evaluated by direct summation, and derivatives are taken by central
//! differences. Agreement with the fast path is therefore meaningful.

pub mod selftest;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dst::Direction;
use crate::error::{Result, VrdError};
use crate::field::Field;
use crate::linalg::Mat;
use crate::vrd::{energy, vrd_forward, VrdParams};

/// Largest dense system the oracle will allocate (unknowns).
pub const DENSE_SIZE_LIMIT: usize = 5000;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Absolute floor in the relative-error denominator.
pub const FD_REL_FLOOR: f64 = 1e-8;

/// Dense form of `s_o ↦ Bᵒ Δs_o − Qᵒ s_o` on an `height × width` lattice.
///
/// Unknowns are ordered channel-major: `(c, i, j) ↦ c·L + i·width + j`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub n_out: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub matrix: Vec<f64>,
}

impl DenseSystem {
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim + col]
    }

    pub fn flatten(&self, f: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in 0..self.n_out {
            for i in 0..self.height {
                for j in 0..self.width {
                    out[self.index(c, i, j)] = f.get(i, j, c);
                }
            }
        }
        out
    }

    pub fn unflatten(&self, x: &[f64]) -> Result<Field> {
        Field::from_fn(self.height, self.width, self.n_out, |i, j, c| {
            x[self.index(c, i, j)]
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                self.matrix[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                worst = worst.max((self.entry(r, c) - self.entry(c, r)).abs());
            }
        }
        worst
    }

    /// Cholesky of `−M`; succeeds iff `M` is negative definite.
    pub fn is_negative_definite(&self) -> bool {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = -self.entry(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return false;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = -self.entry(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        true
    }
}

/// Dense operator for explicit blocks `Bᵒ`, `Qᵒ` (need not be symmetric).
pub fn dense_assemble_blocks(
    b_o: &Mat,
    q_o: &Mat,
    height: usize,
    width: usize,
) -> Result<DenseSystem> {
    let n_out = b_o.rows();
    if b_o.cols() != n_out || q_o.rows() != n_out || q_o.cols() != n_out {
        return Err(VrdError::shape(
            "dense_assemble: blocks must be square and equal-sized",
        ));
    }
    let dim = n_out * height * width;
    if dim > DENSE_SIZE_LIMIT {
        return Err(VrdError::SizeGuard {
            size: dim,
            limit: DENSE_SIZE_LIMIT,
        });
    }
    let mut sys = DenseSystem {
        n_out,
        height,
        width,
        dim,
        matrix: vec![0.0; dim * dim],
    };
    for a in 0..n_out {
        for i in 0..height {
            for j in 0..width {
                let row = sys.index(a, i, j);
                for b in 0..n_out {
                    let bab = b_o.get(a, b);
                    let diag = sys.index(b, i, j);
                    sys.matrix[row * dim + diag] += -4.0 * bab - q_o.get(a, b);
                    let mut nb = |ii: usize, jj: usize| {
                        let col = sys.index(b, ii, jj);
                        sys.matrix[row * dim + col] += bab;
                    };
                    if i > 0 {
                        nb(i - 1, j);
                    }
                    if i + 1 < height {
                        nb(i + 1, j);
                    }
                    if j > 0 {
                        nb(i, j - 1);
                    }
                    if j + 1 < width {
                        nb(i, j + 1);
                    }
                }
            }
        }
    }
    Ok(sys)
}

pub fn dense_assemble(params: &VrdParams, height: usize, width: usize) -> Result<DenseSystem> {
    params.validate()?;
    dense_assemble_blocks(&params.b_o()?, &params.q_o()?, height, width)
}

/// Gaussian elimination with partial pivoting on a row-major `n × n` system.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = a
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))
            .expect("non-empty pivot range");
        if a[p * n + k].abs() <= 1e-14 * scale {
            return Err(VrdError::Singular(k));
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                a[r * n + c] -= f * a[k * n + c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    Ok(x)
}

pub fn dense_solve_with_blocks(b_o: &Mat, q_o: &Mat, s_p: &Field) -> Result<Field> {
    if s_p.channels() != b_o.rows() {
        return Err(VrdError::shape(
            "dense solve: channel count differs from blocks",
        ));
    }
    let sys = dense_assemble_blocks(b_o, q_o, s_p.height(), s_p.width())?;
    let rhs = sys.flatten(s_p);
    let x = gauss_solve(sys.matrix.clone(), rhs)?;
    sys.unflatten(&x)
}

/// Ground-truth solution of `Bᵒ Δs_o − Qᵒ s_o = s_p`.
pub fn dense_solve_oracle(params: &VrdParams, s_p: &Field) -> Result<Field> {
    params.validate()?;
    dense_solve_with_blocks(&params.b_o()?, &params.q_o()?, s_p)
}

/// 2-D DST-I by `O(L²)` direct summation.
pub fn dst1_2d_direct(f: &Field, direction: Direction) -> Result<Field> {
    let (h, w, ch) = (f.height(), f.width(), f.channels());
    let sin_h: Vec<f64> = (0..h * h)
        .map(|t| (PI * ((t / h) + 1) as f64 * ((t % h) + 1) as f64 / (h + 1) as f64).sin())
        .collect();
    let sin_w: Vec<f64> = (0..w * w)
        .map(|t| (PI * ((t / w) + 1) as f64 * ((t % w) + 1) as f64 / (w + 1) as f64).sin())
        .collect();
    let scale = match direction {
        Direction::Forward => 1.0,
        Direction::Inverse => 4.0 / ((h + 1) * (w + 1)) as f64,
    };
    Field::from_fn(h, w, ch, |k, l, c| {
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += f.get(i, j, c) * sin_h[i * h + k] * sin_w[j * w + l];
            }
        }
        scale * acc
    })
}

/// Stencil Laplacian written out neighbor by neighbor.
pub fn laplacian_direct(f: &Field) -> Field {
    let (h, w) = (f.height() as isize, f.width() as isize);
    let at = |i: isize, j: isize, c: usize| {
        if i < 0 || j < 0 || i >= h || j >= w {
            0.0
        } else {
            f.get(i as usize, j as usize, c)
        }
    };
    Field::from_fn(f.height(), f.width(), f.channels(), |i, j, c| {
        let (i, j) = (i as isize, j as isize);
        at(i - 1, j, c) + at(i + 1, j, c) + at(i, j - 1, c) + at(i, j + 1, c) - 4.0 * at(i, j, c)
    })
    .expect("laplacian of a valid field is valid")
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Central-difference gradient of `loss` at `theta`.
pub fn finite_diff_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            x[k] = theta[k] + h;
            let fp = loss(&x);
            x[k] = theta[k] - h;
            let fm = loss(&x);
            x[k] = theta[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Max over coordinates of `|fd − an| / max(|fd|, |an|, 1e−8)`.
pub fn relative_error(fd: &[f64], analytic: &[f64]) -> FdReport {
    assert_eq!(fd.len(), analytic.len(), "gradient length mismatch");
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (k, (a, b)) in fd.iter().zip(analytic).enumerate() {
        let denom = a.abs().max(b.abs()).max(FD_REL_FLOOR);
        let rel = (a - b).abs() / denom;
        if rel > report.max_rel_err || rel.is_nan() {
            report = FdReport {
                max_rel_err: rel,
                worst_index: k,
            };
        }
    }
    report
}

/// Compares `analytic` against central differences of `loss` at `theta`.
pub fn finite_diff_check(
    loss: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    h: f64,
) -> FdReport {
    relative_error(&finite_diff_gradient(loss, theta, h), analytic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerReport {
    /// Smallest `E(s* + εv) − E(s*)` seen.
    pub worst_margin: f64,
    pub violations: usize,
    pub evaluations: usize,
}

impl MinimizerReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Perturbs the solver output along `trials` random unit fields, for every
/// `ε` in `epsilons` and its negation, and checks the energy never drops.
pub fn minimizer_check(
    params: &VrdParams,
    s_i: &Field,
    trials: usize,
    epsilons: &[f64],
    seed: u64,
) -> Result<MinimizerReport> {
    let (s_o, _) = vrd_forward(s_i, params)?;
    let e0 = energy(s_i, &s_o, params)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut report = MinimizerReport {
        worst_margin: f64::INFINITY,
        violations: 0,
        evaluations: 0,
    };
    for _ in 0..trials {
        let v = Field::from_fn(s_o.height(), s_o.width(), s_o.channels(), |_, _, _| {
            rng.random_range(-1.0..1.0)
        })?;
        let v = v.scale(1.0 / v.norm_l2());
        for &eps in epsilons {
            for signed in [eps, -eps] {
                let margin = energy(s_i, &s_o.axpy(signed, &v)?, params)? - e0;
                report.evaluations += 1;
                report.worst_margin = report.worst_margin.min(margin);
                let strict = signed != 0.0;
                if margin < 0.0 || (strict && margin == 0.0) {
                    report.violations += 1;
                }
            }
        }
    }
    Ok(report)
}
