//! The reaction-diffusion layer: exact inference of the quadratic lattice
//! energy and its gradients.
//!
//! The output scores `s_o` solve `Bᵒ Δs_o − Qᵒ s_o = s_p` with
//! `s_p = Qⁱ s_i − Bⁱ Δs_i`. Writing `(Bᵒ)⁻¹Qᵒ = V U Vᵀ` decouples the system
//! into scalar Helmholtz problems in `z = Vᵀ s_o` that are solved from the
//! last channel to the first.

use rand::Rng;

use crate::dst::Dst2;
use crate::error::{Result, VrdError};
use crate::field::{inner_product_matrix, laplacian_apply, Field};
use crate::linalg::{
    chol_inverse, cholesky, expm_grad, expm_sym, schur_real, symmetrize_param_grad, Mat, SchurForm,
};

/// Learnable parameters of one layer.
///
/// `Bᵒ = exp(r_b + r_bᵀ)` and `Qᵒ = exp(r_q + r_qᵀ)` are SPD for every value of
/// the free matrices. The cross blocks `b_i`, `q_i` (`n_out × n_in`) are
/// unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct VrdParams {
    pub n_in: usize,
    pub n_out: usize,
    pub r_b: Mat,
    pub r_q: Mat,
    pub b_i: Mat,
    pub q_i: Mat,
}

impl VrdParams {
    /// All-zero parameters: `Bᵒ = Qᵒ = I` and no input coupling.
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        VrdParams {
            n_in,
            n_out,
            r_b: Mat::zeros(n_out, n_out),
            r_q: Mat::zeros(n_out, n_out),
            b_i: Mat::zeros(n_out, n_in),
            q_i: Mat::zeros(n_out, n_in),
        }
    }

    /// Default initialization: identity `Bᵒ`, `Qᵒ`, zero `Bⁱ`, and `Qⁱ` drawn
    /// uniformly from `(−0.1, 0.1)`.
    pub fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let mut p = VrdParams::zeros(n_in, n_out);
        p.q_i = Mat::from_fn(n_out, n_in, |_, _| rng.random_range(-0.1..0.1));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let sq = |m: &Mat| m.rows() == self.n_out && m.cols() == self.n_out;
        let cross = |m: &Mat| m.rows() == self.n_out && m.cols() == self.n_in;
        if self.n_out == 0
            || !sq(&self.r_b)
            || !sq(&self.r_q)
            || !cross(&self.b_i)
            || !cross(&self.q_i)
        {
            return Err(VrdError::shape(format!(
                "parameter blocks inconsistent with n_in={}, n_out={}",
                self.n_in, self.n_out
            )));
        }
        let all = [&self.r_b, &self.r_q, &self.b_i, &self.q_i];
        if all.iter().any(|m| m.data().iter().any(|v| !v.is_finite())) {
            return Err(VrdError::NonFinite("parameters"));
        }
        Ok(())
    }

    /// `B̄ᵒ = r_b + r_bᵀ`.
    pub fn b_bar(&self) -> Mat {
        symmetrize_param_grad(&self.r_b)
    }

    /// `Q̄ᵒ = r_q + r_qᵀ`.
    pub fn q_bar(&self) -> Mat {
        symmetrize_param_grad(&self.r_q)
    }

    pub fn b_o(&self) -> Result<Mat> {
        expm_sym(&self.b_bar())
    }

    pub fn q_o(&self) -> Result<Mat> {
        expm_sym(&self.q_bar())
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        2 * self.n_out * self.n_out + 2 * self.n_out * self.n_in
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened view in `r_q, r_b, q_i, b_i` order.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.r_q, &self.r_b, &self.q_i, &self.b_i]
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn from_flat(n_in: usize, n_out: usize, flat: &[f64]) -> Result<Self> {
        let (sq, cr) = (n_out * n_out, n_out * n_in);
        if flat.len() != 2 * sq + 2 * cr {
            return Err(VrdError::shape("flat parameter vector has wrong length"));
        }
        let p = VrdParams {
            n_in,
            n_out,
            r_q: Mat::from_vec(n_out, n_out, flat[..sq].to_vec())?,
            r_b: Mat::from_vec(n_out, n_out, flat[sq..2 * sq].to_vec())?,
            q_i: Mat::from_vec(n_out, n_in, flat[2 * sq..2 * sq + cr].to_vec())?,
            b_i: Mat::from_vec(n_out, n_in, flat[2 * sq + cr..].to_vec())?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// The derived operator blocks for one parameter setting.
#[derive(Debug, Clone)]
pub struct VrdSystem {
    pub b_o: Mat,
    pub q_o: Mat,
    pub b_o_inv: Mat,
    pub schur: SchurForm,
}

impl VrdSystem {
    pub fn from_params(params: &VrdParams) -> Result<Self> {
        params.validate()?;
        VrdSystem::from_blocks(params.b_o()?, params.q_o()?)
    }

    /// Builds the system from explicit SPD `Bᵒ`, `Qᵒ`.
    pub fn from_blocks(b_o: Mat, q_o: Mat) -> Result<Self> {
        let b_chol = cholesky(&b_o)?;
        let b_o_inv = chol_inverse(&b_o)?;
        let schur = schur_real(&b_o_inv.matmul(&q_o)?, &b_chol)?;
        Ok(VrdSystem {
            b_o,
            q_o,
            b_o_inv,
            schur,
        })
    }

    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        vrd_solve(rhs, &self.schur, &self.b_o_inv)
    }
}

/// State saved by [`vrd_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct VrdCache {
    pub s_o: Field,
    pub s_p: Field,
    pub system: VrdSystem,
}

/// Gradients of a scalar loss with respect to everything a layer touches.
#[derive(Debug, Clone)]
pub struct VrdGrads {
    pub dl_dsp: Field,
    pub dl_dsi: Field,
    pub dl_db_o: Mat,
    pub dl_dq_o: Mat,
    pub dl_db_i: Mat,
    pub dl_dq_i: Mat,
    pub dl_dr_b: Mat,
    pub dl_dr_q: Mat,
}

impl VrdGrads {
    /// Parameter gradient flattened in [`VrdParams::to_flat`] order.
    pub fn params_flat(&self) -> Vec<f64> {
        [&self.dl_dr_q, &self.dl_dr_b, &self.dl_dq_i, &self.dl_db_i]
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }
}

fn check_inputs(s_i: &Field, params: &VrdParams) -> Result<()> {
    params.validate()?;
    if s_i.channels() != params.n_in {
        return Err(VrdError::shape(format!(
            "input has {} channels, layer expects {}",
            s_i.channels(),
            params.n_in
        )));
    }
    Ok(())
}

// Uses BⁱΔs = Δ(Bⁱs) so the Laplacian runs on n_out channels instead of n_in.
fn sp_unchecked(s_i: &Field, params: &VrdParams) -> Result<Field> {
    let n = params.n_out;
    let stacked = Mat::from_fn(2 * n, params.n_in, |r, c| {
        if r < n {
            params.q_i.get(r, c)
        } else {
            params.b_i.get(r - n, c)
        }
    });
    let mixed = s_i.mix_channels(&stacked)?;
    let (h, w) = (s_i.height(), s_i.width());
    let m = mixed.data();
    let (c2, row) = (2 * n, 2 * n * w);
    let mut out = vec![0.0; h * w * n];
    for i in 0..h {
        for j in 0..w {
            let src = (i * w + j) * c2;
            let dst = &mut out[(i * w + j) * n..(i * w + j + 1) * n];
            for (ch, d) in dst.iter_mut().enumerate() {
                let k = src + n + ch;
                let mut lap = -4.0 * m[k];
                if i > 0 {
                    lap += m[k - row];
                }
                if i + 1 < h {
                    lap += m[k + row];
                }
                if j > 0 {
                    lap += m[k - c2];
                }
                if j + 1 < w {
                    lap += m[k + c2];
                }
                *d = m[src + ch] - lap;
            }
        }
    }
    Field::from_vec(h, w, n, out)
}

/// `s_p(x) = Qⁱ s_i(x) − Bⁱ (Δs_i)(x)`.
pub fn assemble_sp(s_i: &Field, params: &VrdParams) -> Result<Field> {
    check_inputs(s_i, params)?;
    sp_unchecked(s_i, params)
}

/// Solves `Δz − λz = f` on a single-channel field with zero exterior.
pub fn helmholtz_solve(f: &Field, lambda: f64) -> Result<Field> {
    if f.channels() != 1 {
        return Err(VrdError::shape(
            "helmholtz_solve takes a single-channel field",
        ));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(VrdError::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    f.check_finite()?;
    let plan = Dst2::new(f.height(), f.width());
    let z = plan.helmholtz(f.data().to_vec(), lambda);
    Field::from_vec(f.height(), f.width(), 1, z)
}

/// Solves `Bᵒ Δs_o − Qᵒ s_o = s_p` by backsubstitution in the Schur basis.
pub fn vrd_solve(s_p: &Field, schur: &SchurForm, b_o_inv: &Mat) -> Result<Field> {
    let n = s_p.channels();
    if schur.u.rows() != n || schur.v.rows() != n || b_o_inv.rows() != n {
        return Err(VrdError::shape(format!(
            "right-hand side has {n} channels, operator has {}",
            schur.u.rows()
        )));
    }
    if let Some(k) = (0..n).find(|&k| !(schur.u.get(k, k) > 0.0)) {
        return Err(VrdError::NotPositiveDefinite(format!(
            "Schur diagonal entry {k} is {}",
            schur.u.get(k, k)
        )));
    }
    s_p.check_finite()?;
    let (h, w) = (s_p.height(), s_p.width());
    let to_basis = schur.v.transpose().matmul(b_o_inv)?;
    let mut rhs = s_p.mix_channels(&to_basis)?.planes();
    let plan = Dst2::new(h, w);
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let mut f = std::mem::take(&mut rhs[k]);
        for (j, zj) in z.iter().enumerate().skip(k + 1) {
            let ukj = schur.u.get(k, j);
            if ukj != 0.0 {
                for (a, b) in f.iter_mut().zip(zj) {
                    *a += ukj * b;
                }
            }
        }
        z[k] = plan.helmholtz(f, schur.u.get(k, k));
    }
    Field::from_planes(h, w, &z)?.mix_channels(&schur.v)
}

/// Exact inference: returns `s_o` and the cache needed by [`vrd_backward`].
pub fn vrd_forward(s_i: &Field, params: &VrdParams) -> Result<(Field, VrdCache)> {
    check_inputs(s_i, params)?;
    let system = VrdSystem::from_params(params)?;
    forward_with_system(s_i, params, system)
}

pub(crate) fn forward_with_system(
    s_i: &Field,
    params: &VrdParams,
    system: VrdSystem,
) -> Result<(Field, VrdCache)> {
    let s_p = sp_unchecked(s_i, params)?;
    let s_o = system.solve(&s_p)?;
    let cache = VrdCache {
        s_o: s_o.clone(),
        s_p,
        system,
    };
    Ok((s_o, cache))
}

/// Backpropagates `dL/ds_o` through one layer.
///
/// `dL/ds_p` solves the same system with `dL/ds_o` as right-hand side (the
/// operator is self-adjoint). Raw block gradients are inner products of
/// `dL/ds_p` with the cached fields; the free-parameter gradients go through
/// the exponential map and the `R + Rᵀ` symmetrization.
pub fn vrd_backward(
    dl_dso: &Field,
    cache: &VrdCache,
    s_i: &Field,
    params: &VrdParams,
) -> Result<VrdGrads> {
    if !dl_dso.same_shape(&cache.s_o) {
        return Err(VrdError::shape("dL/ds_o does not match the cached output"));
    }
    let dl_dsp = cache.system.solve(dl_dso)?;
    // ⟨p, Δs⟩ = ⟨Δp, s⟩, so only Δp is needed
    let lap_p = laplacian_apply(&dl_dsp)?;
    let dl_db_o = inner_product_matrix(&lap_p, &cache.s_o)?.scale(-1.0);
    let dl_dq_o = inner_product_matrix(&dl_dsp, &cache.s_o)?;
    let dl_db_i = inner_product_matrix(&lap_p, s_i)?.scale(-1.0);
    let dl_dq_i = inner_product_matrix(&dl_dsp, s_i)?;
    let dl_dsi = dl_dsp
        .mix_channels(&params.q_i.transpose())?
        .sub(&lap_p.mix_channels(&params.b_i.transpose())?)?;
    let dl_dr_b = symmetrize_param_grad(&expm_grad(&params.b_bar(), &dl_db_o)?);
    let dl_dr_q = symmetrize_param_grad(&expm_grad(&params.q_bar(), &dl_dq_o)?);
    Ok(VrdGrads {
        dl_dsp,
        dl_dsi,
        dl_db_o,
        dl_dq_o,
        dl_db_i,
        dl_dq_i,
        dl_dr_b,
        dl_dr_q,
    })
}

/// `Bᵒ Δs_o − Qᵒ s_o − s_p`, the discrete stationarity residual.
pub fn stationarity_residual(s_o: &Field, s_p: &Field, b_o: &Mat, q_o: &Mat) -> Result<Field> {
    laplacian_apply(s_o)?
        .mix_channels(b_o)?
        .sub(&s_o.mix_channels(q_o)?)?
        .sub(s_p)
}

fn quad_form(m: &Mat, x: &[f64], y: &[f64]) -> f64 {
    (0..m.rows())
        .map(|r| x[r] * m.row(r).iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Discrete energy of `(s_o, s_i)` on the 4-connected lattice.
///
/// Unary terms `s_oᵀQᵒs_o + 2 s_oᵀQⁱs_i` at every site plus, on every edge
/// (including the edges joining boundary sites to the zero exterior),
/// `dᵀBᵒd + 2 dᵀBⁱe` where `d`, `e` are the output and input differences.
/// Input-only terms are taken as zero since no input-input blocks are
/// parameterized; they do not depend on `s_o`.
pub fn energy(s_i: &Field, s_o: &Field, params: &VrdParams) -> Result<f64> {
    check_inputs(s_i, params)?;
    if !s_o.same_lattice(s_i) || s_o.channels() != params.n_out {
        return Err(VrdError::shape(
            "output field does not match input lattice or n_out",
        ));
    }
    let b_o = params.b_o()?;
    let q_o = params.q_o()?;
    let (h, w) = (s_o.height(), s_o.width());
    let (no, ni) = (params.n_out, params.n_in);
    let zero_o = vec![0.0; no];
    let zero_i = vec![0.0; ni];

    let mut e = 0.0;
    for i in 0..h {
        for j in 0..w {
            let so = s_o.pixel(i, j);
            let si = s_i.pixel(i, j);
            e += quad_form(&q_o, so, so) + 2.0 * quad_form(&params.q_i, so, si);
        }
    }

    let mut d = vec![0.0; no];
    let mut di = vec![0.0; ni];
    let mut edge = |a_o: &[f64], a_i: &[f64], b_o_px: &[f64], b_i_px: &[f64]| {
        for k in 0..no {
            d[k] = b_o_px[k] - a_o[k];
        }
        for k in 0..ni {
            di[k] = b_i_px[k] - a_i[k];
        }
        quad_form(&b_o, &d, &d) + 2.0 * quad_form(&params.b_i, &d, &di)
    };
    // horizontal edges, including both boundary edges of each row
    for i in 0..h {
        for j in 0..=w {
            let (lo, li) = if j == 0 {
                (&zero_o[..], &zero_i[..])
            } else {
                (s_o.pixel(i, j - 1), s_i.pixel(i, j - 1))
            };
            let (ro, ri) = if j == w {
                (&zero_o[..], &zero_i[..])
            } else {
                (s_o.pixel(i, j), s_i.pixel(i, j))
            };
            e += edge(lo, li, ro, ri);
        }
    }
    for j in 0..w {
        for i in 0..=h {
            let (uo, ui) = if i == 0 {
                (&zero_o[..], &zero_i[..])
            } else {
                (s_o.pixel(i - 1, j), s_i.pixel(i - 1, j))
            };
            let (bo, bi) = if i == h {
                (&zero_o[..], &zero_i[..])
            } else {
                (s_o.pixel(i, j), s_i.pixel(i, j))
            };
            e += edge(uo, ui, bo, bi);
        }
    }
    Ok(e)
}

/// Impulse response of `Δz − λz = δ` at the center cell, negated so the
/// peak is positive.
pub fn green_function(lambda: f64, height: usize, width: usize) -> Result<Field> {
    let mut delta = Field::zeros(height, width, 1)?;
    delta.set(height / 2, width / 2, 0, 1.0);
    Ok(helmholtz_solve(&delta, lambda)?.scale(-1.0))
}
