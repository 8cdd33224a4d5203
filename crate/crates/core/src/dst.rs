//! Type-I discrete sine transforms on lattice planes.
//!
//! The DST-I basis `sin(π(i+1)(k+1)/(n+1))` vanishes on the ring of cells just
//! outside the lattice, so it diagonalizes the 5-point Dirichlet Laplacian.
//! Each 1-D transform is an odd extension to a complex FFT of length
//! `2(n+1)`; two real rows are packed into one complex FFT.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::field::Field;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Rows shorter than this are transformed serially.
const PAR_MIN_SITES: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Eigenvalue of the 1-D Dirichlet second difference for mode `k` on `n` cells.
#[inline]
pub fn laplacian_eigenvalue(k: usize, n: usize) -> f64 {
    2.0 * (PI * (k + 1) as f64 / (n + 1) as f64).cos() - 2.0
}

struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

struct Workspace {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dst1 {
    fn new(n: usize) -> Self {
        let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(2 * (n + 1)));
        Dst1 { n, fft }
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            buf: vec![Complex::default(); 2 * (self.n + 1)],
            scratch: vec![Complex::default(); self.fft.get_inplace_scratch_len()],
        }
    }

    /// Unscaled DST-I of `a` (and `b`, if given) in place.
    fn transform_pair(&self, a: &mut [f64], b: Option<&mut [f64]>, ws: &mut Workspace) {
        let n = self.n;
        let buf = &mut ws.buf;
        buf[0] = Complex::default();
        buf[n + 1] = Complex::default();
        match &b {
            Some(b) => {
                for t in 0..n {
                    let v = Complex::new(a[t], b[t]);
                    buf[t + 1] = v;
                    buf[2 * n + 1 - t] = -v;
                }
            }
            None => {
                for t in 0..n {
                    let v = Complex::new(a[t], 0.0);
                    buf[t + 1] = v;
                    buf[2 * n + 1 - t] = -v;
                }
            }
        }
        self.fft.process_with_scratch(buf, &mut ws.scratch);
        for k in 0..n {
            a[k] = -0.5 * buf[k + 1].im;
        }
        if let Some(b) = b {
            for k in 0..n {
                b[k] = 0.5 * buf[k + 1].re;
            }
        }
    }

    /// Transforms every contiguous row of length `n` in `data`.
    fn rows(&self, data: &mut [f64]) {
        let n = self.n;
        let work = |ws: &mut Workspace, chunk: &mut [f64]| {
            if chunk.len() == 2 * n {
                let (a, b) = chunk.split_at_mut(n);
                self.transform_pair(a, Some(b), ws);
            } else {
                self.transform_pair(chunk, None, ws);
            }
        };
        if data.len() >= PAR_MIN_SITES {
            data.par_chunks_mut(2 * n)
                .for_each_init(|| self.workspace(), |ws, chunk| work(ws, chunk));
        } else {
            let mut ws = self.workspace();
            for chunk in data.chunks_mut(2 * n) {
                work(&mut ws, chunk);
            }
        }
    }
}

/// Out-of-place transpose of a `rows × cols` row-major block.
fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    const BLOCK: usize = 32;
    let mut dst = vec![0.0; src.len()];
    for ib in (0..rows).step_by(BLOCK) {
        for jb in (0..cols).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(rows) {
                for j in jb..(jb + BLOCK).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
    dst
}

/// Planned 2-D DST-I for one lattice size.
pub(crate) struct Dst2 {
    height: usize,
    width: usize,
    along_rows: Dst1,
    along_cols: Dst1,
    eig_rows: Vec<f64>,
    eig_cols: Vec<f64>,
}

impl Dst2 {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        Dst2 {
            height,
            width,
            along_rows: Dst1::new(width),
            along_cols: Dst1::new(height),
            eig_rows: (0..height)
                .map(|k| laplacian_eigenvalue(k, height))
                .collect(),
            eig_cols: (0..width).map(|l| laplacian_eigenvalue(l, width)).collect(),
        }
    }

    fn inverse_scale(&self) -> f64 {
        4.0 / ((self.height + 1) * (self.width + 1)) as f64
    }

    /// Unscaled forward kernel, leaving the spectrum transposed (`width × height`).
    fn forward_transposed(&self, mut plane: Vec<f64>) -> Vec<f64> {
        self.along_rows.rows(&mut plane);
        let mut t = transpose(&plane, self.height, self.width);
        self.along_cols.rows(&mut t);
        t
    }

    /// Unscaled kernel applied to a transposed spectrum, returning a plane.
    fn kernel_from_transposed(&self, mut t: Vec<f64>) -> Vec<f64> {
        self.along_cols.rows(&mut t);
        let mut plane = transpose(&t, self.width, self.height);
        self.along_rows.rows(&mut plane);
        plane
    }

    pub(crate) fn transform(&self, plane: Vec<f64>, direction: Direction) -> Vec<f64> {
        let t = self.forward_transposed(plane);
        let mut out = transpose(&t, self.width, self.height);
        if direction == Direction::Inverse {
            let s = self.inverse_scale();
            out.iter_mut().for_each(|v| *v *= s);
        }
        out
    }

    /// Solves `Δz − λz = f` on the plane with zero exterior values.
    pub(crate) fn helmholtz(&self, f: Vec<f64>, lambda: f64) -> Vec<f64> {
        let mut t = self.forward_transposed(f);
        let s = self.inverse_scale();
        let h = self.height;
        for (l, col) in t.chunks_exact_mut(h).enumerate() {
            let el = self.eig_cols[l] - lambda;
            for (k, v) in col.iter_mut().enumerate() {
                *v *= s / (self.eig_rows[k] + el);
            }
        }
        self.kernel_from_transposed(t)
    }
}

/// Per-channel 2-D DST-I. The inverse is the same kernel scaled by
/// `4 / ((H+1)(W+1))`.
pub fn dst1_2d(f: &Field, direction: Direction) -> Result<Field> {
    f.check_finite()?;
    let plan = Dst2::new(f.height(), f.width());
    let planes: Vec<Vec<f64>> = f
        .planes()
        .into_iter()
        .map(|p| plan.transform(p, direction))
        .collect();
    Field::from_planes(f.height(), f.width(), &planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::laplacian_apply;
    use crate::oracle::dst1_2d_direct;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_field(h: usize, w: usize, c: usize, seed: u64) -> Field {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Field::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn zeros_stay_zero() {
        let f = Field::zeros(3, 5, 2).unwrap();
        assert_eq!(dst1_2d(&f, Direction::Forward).unwrap(), f);
    }

    #[test]
    fn single_cell_forward_is_one() {
        let f = Field::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let out = dst1_2d(&f, Direction::Forward).unwrap();
        assert!((out.get(0, 0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fft_path_matches_direct_summation() {
        let f = random_field(3, 4, 1, 11);
        let fast = dst1_2d(&f, Direction::Forward).unwrap();
        let slow = dst1_2d_direct(&f, Direction::Forward).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let back = dst1_2d(&fast, Direction::Inverse).unwrap();
        for (a, b) in back.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_row_counts_and_degenerate_lattices() {
        for (h, w) in [(1, 7), (7, 1), (5, 3), (2, 9)] {
            let f = random_field(h, w, 2, (h * 31 + w) as u64);
            let fast = dst1_2d(&f, Direction::Forward).unwrap();
            let slow = dst1_2d_direct(&f, Direction::Forward).unwrap();
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn diagonalizes_the_laplacian() {
        let (h, w) = (6, 9);
        let f = random_field(h, w, 1, 5);
        let lf = dst1_2d(&laplacian_apply(&f).unwrap(), Direction::Forward).unwrap();
        let ff = dst1_2d(&f, Direction::Forward).unwrap();
        for k in 0..h {
            for l in 0..w {
                let mu = laplacian_eigenvalue(k, h) + laplacian_eigenvalue(l, w);
                assert!((lf.get(k, l, 0) - mu * ff.get(k, l, 0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn large_plane_uses_parallel_rows_consistently() {
        let f = random_field(130, 140, 1, 9);
        let fast = dst1_2d(&f, Direction::Forward).unwrap();
        let back = dst1_2d(&fast, Direction::Inverse).unwrap();
        let err = back.sub(&f).unwrap().max_abs();
        assert!(err < 1e-12, "{err}");
    }
}
