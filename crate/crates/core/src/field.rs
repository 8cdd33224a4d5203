//! Dense multi-channel fields on a unit-spaced rectangular lattice.
//!
//! Storage is row-major with the channel index innermost, so the sample at
//! `(i, j, c)` lives at `(i * width + j) * channels + c`. Solvers work on
//! single-channel planes extracted with [`Field::plane`].

use crate::error::{Result, VrdError};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Field {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(VrdError::shape(format!(
                "{}x{}x{} field needs {} samples, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        let field = Field {
            height,
            width,
            channels,
            data,
        };
        field.check_finite()?;
        Ok(field)
    }

    /// Builds a field by evaluating `f(i, j, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut out = Field::zeros(height, width, channels)?;
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    out.data[(i * width + j) * channels + c] = f(i, j, c);
                }
            }
        }
        out.check_finite()?;
        Ok(out)
    }

    /// Stacks single-channel planes (each `height * width`, row-major).
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let mut out = Field::zeros(height, width, channels)?;
        for (c, plane) in planes.iter().enumerate() {
            out.set_plane(c, plane)?;
        }
        Ok(out)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of lattice sites, `height * width`.
    pub fn sites(&self) -> usize {
        self.height * self.width
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
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[(i * self.width + j) * self.channels + c] = v;
    }

    /// The channel vector at site `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_lattice(&self, other: &Field) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.same_lattice(other) && self.channels == other.channels
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(VrdError::NonFinite("field"))
        }
    }

    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_plane(&mut self, c: usize, plane: &[f64]) -> Result<()> {
        if c >= self.channels || plane.len() != self.sites() {
            return Err(VrdError::shape(format!(
                "plane {c} of length {} does not fit {}x{}x{}",
                plane.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        let channels = self.channels;
        for (dst, &v) in self.data.iter_mut().skip(c).step_by(channels).zip(plane) {
            *dst = v;
        }
        Ok(())
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Field {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        if !self.same_shape(other) {
            return Err(VrdError::shape("axpy operands differ in shape"));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    /// Per-site linear map `out(x) = m · self(x)`, with `m` of shape
    /// `out_channels × channels`.
    pub fn mix_channels(&self, m: &Mat) -> Result<Field> {
        if m.cols() != self.channels {
            return Err(VrdError::shape(format!(
                "channel map takes {} channels, field has {}",
                m.cols(),
                self.channels
            )));
        }
        let out_c = m.rows();
        let mut out = Field::zeros(self.height, self.width, out_c)?;
        let rows = m.data();
        for (src, dst) in self
            .data
            .chunks_exact(self.channels)
            .zip(out.data.chunks_exact_mut(out_c))
        {
            for (r, d) in dst.iter_mut().enumerate() {
                let row = &rows[r * self.channels..(r + 1) * self.channels];
                *d = row.iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    /// Selects a contiguous channel range as a new field.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Field> {
        if start + len > self.channels {
            return Err(VrdError::shape("channel slice out of range"));
        }
        let mut out = Field::zeros(self.height, self.width, len)?;
        for (src, dst) in self
            .data
            .chunks_exact(self.channels)
            .zip(out.data.chunks_exact_mut(len))
        {
            dst.copy_from_slice(&src[start..start + len]);
        }
        Ok(out)
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(VrdError::shape(format!(
            "field dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

/// 5-point Dirichlet Laplacian of a single row-major plane, written to `out`.
pub fn laplacian_plane(src: &[f64], height: usize, width: usize, out: &mut [f64]) {
    debug_assert_eq!(src.len(), height * width);
    debug_assert_eq!(out.len(), height * width);
    for i in 0..height {
        for j in 0..width {
            let k = i * width + j;
            let mut acc = -4.0 * src[k];
            if i > 0 {
                acc += src[k - width];
            }
            if i + 1 < height {
                acc += src[k + width];
            }
            if j > 0 {
                acc += src[k - 1];
            }
            if j + 1 < width {
                acc += src[k + 1];
            }
            out[k] = acc;
        }
    }
}

/// Applies the 5-point Laplacian to every channel, treating samples outside
/// the lattice as zero.
pub fn laplacian_apply(f: &Field) -> Result<Field> {
    f.check_finite()?;
    let (h, w, c) = (f.height, f.width, f.channels);
    let mut out = Field::zeros(h, w, c)?;
    let src = &f.data;
    let row = w * c;
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * c;
            for ch in 0..c {
                let k = base + ch;
                let mut acc = -4.0 * src[k];
                if i > 0 {
                    acc += src[k - row];
                }
                if i + 1 < h {
                    acc += src[k + row];
                }
                if j > 0 {
                    acc += src[k - c];
                }
                if j + 1 < w {
                    acc += src[k + c];
                }
                out.data[k] = acc;
            }
        }
    }
    Ok(out)
}

/// `Σ_x f(x, channel_f) · g(x, channel_g)` with unit cell area.
pub fn inner_product(f: &Field, g: &Field, channel_f: usize, channel_g: usize) -> Result<f64> {
    if !f.same_lattice(g) {
        return Err(VrdError::shape(format!(
            "inner product of {}x{} and {}x{} lattices",
            f.height, f.width, g.height, g.width
        )));
    }
    if channel_f >= f.channels || channel_g >= g.channels {
        return Err(VrdError::shape("inner product channel out of range"));
    }
    Ok(f.data
        .iter()
        .skip(channel_f)
        .step_by(f.channels)
        .zip(g.data.iter().skip(channel_g).step_by(g.channels))
        .map(|(a, b)| a * b)
        .sum())
}

/// Matrix of all channel-pair inner products, `out[i][j] = ⟨f_i, g_j⟩`.
pub fn inner_product_matrix(f: &Field, g: &Field) -> Result<Mat> {
    if !f.same_lattice(g) {
        return Err(VrdError::shape(
            "inner product matrix of different lattices",
        ));
    }
    let (cf, cg) = (f.channels, g.channels);
    let mut out = vec![0.0; cf * cg];
    for (a, b) in f.data.chunks_exact(cf).zip(g.data.chunks_exact(cg)) {
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut out[i * cg..(i + 1) * cg];
            for (o, &bj) in row.iter_mut().zip(b) {
                *o += ai * bj;
            }
        }
    }
    Mat::from_vec(cf, cg, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_of_zero_is_zero() {
        let f = Field::zeros(3, 4, 2).unwrap();
        assert_eq!(laplacian_apply(&f).unwrap(), f);
    }

    #[test]
    fn laplacian_of_ones_on_3x3() {
        let f = Field::from_vec(3, 3, 1, vec![1.0; 9]).unwrap();
        let l = laplacian_apply(&f).unwrap();
        assert_eq!(l.get(1, 1, 0), 0.0);
        for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(l.get(i, j, 0), -2.0);
        }
        for (i, j) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(l.get(i, j, 0), -1.0);
        }
    }

    #[test]
    fn sine_mode_is_an_eigenfunction() {
        let (h, w) = (4, 5);
        let f = Field::from_fn(h, w, 1, |i, j, _| {
            (PI * (i + 1) as f64 / (h + 1) as f64).sin()
                * (PI * (j + 1) as f64 / (w + 1) as f64).sin()
        })
        .unwrap();
        let mu = 2.0 * (PI / 5.0).cos() + 2.0 * (PI / 6.0).cos() - 4.0;
        let l = laplacian_apply(&f).unwrap();
        for (a, b) in l.data().iter().zip(f.data()) {
            assert!((a - mu * b).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_and_field_laplacians_agree() {
        let f = Field::from_fn(4, 3, 2, |i, j, c| (i * 7 + j * 3 + c) as f64 * 0.1 - 0.4).unwrap();
        let l = laplacian_apply(&f).unwrap();
        for c in 0..2 {
            let p = f.plane(c);
            let mut out = vec![0.0; 12];
            laplacian_plane(&p, 4, 3, &mut out);
            assert_eq!(out, l.plane(c));
        }
    }

    #[test]
    fn inner_product_examples() {
        let f = Field::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Field::from_vec(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(inner_product(&f, &g, 0, 0).unwrap(), 5.0);
        let z = Field::zeros(2, 2, 1).unwrap();
        assert_eq!(inner_product(&z, &g, 0, 0).unwrap(), 0.0);
        assert_eq!(inner_product(&f, &f, 0, 0).unwrap(), 30.0);
        let other = Field::zeros(3, 2, 1).unwrap();
        assert!(matches!(
            inner_product(&f, &other, 0, 0),
            Err(VrdError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Field::zeros(0, 2, 1).is_err());
        assert!(Field::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            Field::from_vec(1, 1, 1, vec![f64::NAN]),
            Err(VrdError::NonFinite(_))
        ));
    }

    #[test]
    fn planes_roundtrip() {
        let f = Field::from_fn(3, 2, 3, |i, j, c| (i + 10 * j + 100 * c) as f64).unwrap();
        let back = Field::from_planes(3, 2, &f.planes()).unwrap();
        assert_eq!(back, f);
    }
}
