//! Invariant checks run by `vrd selftest` and by the acceptance suite.
//!
//! Each check measures one error quantity against a fixed threshold and
//! reports it as a [`Check`].

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{
    dense_solve_oracle, dense_solve_with_blocks, dst1_2d_direct, finite_diff_check,
    finite_diff_gradient, relative_error, FD_STEP,
};
use crate::dst::{dst1_2d, laplacian_eigenvalue, Direction};
use crate::error::Result;
use crate::field::{inner_product, laplacian_apply, Field};
use crate::linalg::{
    expm_grad_with, expm_sym, phi_entry, schur_from_blocks, sym_eig, symmetrize_param_grad, Mat,
};
use crate::model::{parse_arch, softmax_xent, Labels, Network};
use crate::vrd::{
    green_function, stationarity_residual, vrd_backward, vrd_forward, VrdParams, VrdSystem,
};

pub type PhiRule = fn(f64, f64) -> f64;

/// A deliberately wrong `Φ` (arithmetic mean instead of divided difference),
/// used to confirm the gradient checks can fail.
pub fn corrupted_phi(li: f64, lj: f64) -> f64 {
    0.5 * (li.exp() + lj.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured ≤ threshold` (and is not NaN).
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            threshold,
            passed: measured <= threshold,
        }
    }

    /// Passes when `measured > threshold`.
    pub fn above(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            threshold,
            passed: measured > threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}  {:<50} measured={:<12.3e} threshold={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    pub phi: PhiRule,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 20160,
            phi: phi_entry,
        }
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_field(r: &mut impl Rng, h: usize, w: usize, c: usize) -> Field {
    Field::from_fn(h, w, c, |_, _, _| r.random_range(-1.0..1.0)).expect("positive dims")
}

/// Random parameters with moderately conditioned `Bᵒ`, `Qᵒ`.
pub fn random_params(r: &mut impl Rng, n_in: usize, n_out: usize) -> VrdParams {
    let mut m = |a, b, s: f64| Mat::from_fn(a, b, |_, _| s * r.random_range(-1.0..1.0));
    VrdParams {
        n_in,
        n_out,
        r_b: m(n_out, n_out, 0.3),
        r_q: m(n_out, n_out, 0.3),
        b_i: m(n_out, n_in, 0.5),
        q_i: m(n_out, n_in, 0.5),
    }
}

fn random_orthonormal(r: &mut impl Rng, n: usize) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let s = a.add(&a.transpose()).expect("square");
    sym_eig(&s).expect("random symmetric converges").vectors
}

/// DST-I roundtrip, FFT-vs-direct, and Laplacian diagonalization on random fields.
pub fn check_dst_identities(fields: usize, seed: u64) -> Result<Vec<Check>> {
    let mut r = rng(seed);
    let (mut roundtrip, mut direct, mut diag) = (0.0_f64, 0.0_f64, 0.0_f64);
    for t in 0..fields {
        let (h, w) = (r.random_range(1..=24), r.random_range(1..=24));
        let f = random_field(&mut r, h, w, 1);
        let fwd = dst1_2d(&f, Direction::Forward)?;
        roundtrip = roundtrip.max(dst1_2d(&fwd, Direction::Inverse)?.sub(&f)?.max_abs());
        if t % 10 == 0 {
            let slow = dst1_2d_direct(&f, Direction::Forward)?;
            direct = direct.max(fwd.sub(&slow)?.max_abs() / slow.max_abs().max(1.0));
        }
        let lf = dst1_2d(&laplacian_apply(&f)?, Direction::Forward)?;
        for k in 0..h {
            for l in 0..w {
                let mu = laplacian_eigenvalue(k, h) + laplacian_eigenvalue(l, w);
                diag = diag.max((lf.get(k, l, 0) - mu * fwd.get(k, l, 0)).abs());
            }
        }
    }
    Ok(vec![
        Check::at_most("DST-I roundtrip (max abs)", roundtrip, 1e-12),
        Check::at_most("DST-I FFT vs direct summation (rel)", direct, 1e-12),
        Check::at_most("DST-I diagonalizes Laplacian (max abs)", diag, 1e-10),
    ])
}

pub fn check_laplacian_self_adjoint(seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
        let f = random_field(&mut r, h, w, 1);
        let g = random_field(&mut r, h, w, 1);
        let a = inner_product(&laplacian_apply(&f)?, &g, 0, 0)?;
        let b = inner_product(&f, &laplacian_apply(&g)?, 0, 0)?;
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    Ok(Check::at_most(
        "Laplacian self-adjoint <Lf,g>=<f,Lg>",
        worst,
        1e-12,
    ))
}

/// Schur diagonal vs spectrum of `B^{-1/2} Q B^{-1/2}` for random SPD blocks.
pub fn check_schur_spectrum(seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for n in 1..=8 {
        let p = random_params(&mut r, 1, n);
        let (b, q) = (p.b_o()?, p.q_o()?);
        let s = schur_from_blocks(&b, &q)?;
        let be = sym_eig(&b)?;
        let b_mhalf = be.reconstruct_with(|v| 1.0 / v.sqrt());
        let sym = b_mhalf.matmul(&q)?.matmul(&b_mhalf)?.symmetrized(1e-8)?;
        let want = sym_eig(&sym)?.values;
        for (i, w) in want.iter().enumerate() {
            let d = s.u.get(i, i);
            if !(d > 0.0) {
                worst = f64::INFINITY;
            }
            worst = worst.max((d - w).abs());
        }
    }
    Ok(Check::at_most(
        "Schur diag = similar SPD spectrum",
        worst,
        1e-8,
    ))
}

/// `expm_grad` against central differences of `tr(Mᵀ exp(Ā))` along
/// symmetric directions. Odd trials plant an eigenvalue gap of `1e−11`.
pub fn check_expm_grad(trials: usize, seed: u64, phi: PhiRule) -> Result<Check> {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let n = 2 + t % 5;
        let u = random_orthonormal(&mut r, n);
        let mut lambdas: Vec<f64> = (0..n).map(|_| r.random_range(-1.5..1.5)).collect();
        if t % 2 == 1 {
            lambdas[1] = lambdas[0] + 1e-11;
        }
        let abar = u
            .matmul(&Mat::diag(&lambdas))?
            .matmul(&u.transpose())?
            .symmetrized(1e-10)?;
        let m = Mat::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let g = expm_grad_with(&abar, &m, phi)?;
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for i in 0..n {
            for j in i..n {
                let e = Mat::from_fn(n, n, |a, b| {
                    ((a == i && b == j) || (a == j && b == i)) as u8 as f64
                });
                let lp = m.dot(&expm_sym(&abar.add(&e.scale(h))?)?);
                let lm = m.dot(&expm_sym(&abar.sub(&e.scale(h))?)?);
                fd.push((lp - lm) / (2.0 * h));
                an.push(g.dot(&e));
            }
        }
        worst = worst.max(relative_error(&fd, &an).max_rel_err);
    }
    Ok(Check::at_most(
        format!("expm_grad vs finite differences ({trials} draws)"),
        worst,
        1e-5,
    ))
}

/// Fast solver against dense Gaussian elimination over random configurations.
pub fn check_oracle_equivalence(draws: usize, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for t in 0..draws {
        let n_out = 1 + t % 4;
        let n_in = [1, 2, 4][t % 3];
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let p = random_params(&mut r, n_in, n_out);
        let s_i = random_field(&mut r, h, w, n_in);
        let (s_o, cache) = vrd_forward(&s_i, &p)?;
        let slow = dense_solve_oracle(&p, &cache.s_p)?;
        let rel = s_o.sub(&slow)?.norm_l2() / slow.norm_l2().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    Ok(Check::at_most(
        format!("vrd_solve = dense oracle ({draws} draws, rel L2)"),
        worst,
        1e-8,
    ))
}

/// `‖Bᵒ Δs_o − Qᵒ s_o − s_p‖∞ / ‖s_p‖∞` at the forward output.
pub fn check_stationarity(
    sizes: &[(usize, usize)],
    n_in: usize,
    n_out: usize,
    seed: u64,
) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for &(h, w) in sizes {
        let p = random_params(&mut r, n_in, n_out);
        let s_i = random_field(&mut r, h, w, n_in);
        let (s_o, cache) = vrd_forward(&s_i, &p)?;
        let res = stationarity_residual(&s_o, &cache.s_p, &cache.system.b_o, &cache.system.q_o)?;
        worst = worst.max(res.max_abs() / cache.s_p.max_abs());
    }
    let largest = sizes.iter().map(|&(h, w)| h.max(w)).max().unwrap_or(0);
    Ok(Check::at_most(
        format!("stationarity residual (grids to {largest})"),
        worst,
        1e-8,
    ))
}

/// `⟨G f, g⟩ = ⟨f, G g⟩` for the solution operator `G`.
pub fn check_solver_self_adjoint(seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for n_out in 1..=4 {
        let p = random_params(&mut r, 1, n_out);
        let sys = VrdSystem::from_params(&p)?;
        let (h, w) = (r.random_range(2..=9), r.random_range(2..=9));
        let f = random_field(&mut r, h, w, n_out);
        let g = random_field(&mut r, h, w, n_out);
        let (gf, gg) = (sys.solve(&f)?, sys.solve(&g)?);
        let dot = |a: &Field, b: &Field| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| x * y)
                .sum::<f64>()
        };
        let (a, b) = (dot(&gf, &g), dot(&f, &gg));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
    }
    Ok(Check::at_most(
        "solution operator self-adjoint",
        worst,
        1e-9,
    ))
}

/// `Vᵀ Δs = Δ(Vᵀ s)` for random orthonormal `V`.
pub fn check_commutation(seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for n in 1..=5 {
        let v = random_orthonormal(&mut r, n);
        let s = random_field(&mut r, 7, 6, n);
        let a = laplacian_apply(&s)?.mix_channels(&v.transpose())?;
        let b = laplacian_apply(&s.mix_channels(&v.transpose())?)?;
        worst = worst.max(a.sub(&b)?.max_abs());
    }
    Ok(Check::at_most("V^T Laplacian commutation", worst, 1e-12))
}

/// Energy at the solver output vs. random perturbations, counted violations.
pub fn check_minimizer(trials: usize, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let p = random_params(&mut r, 2, 2);
    let s_i = random_field(&mut r, 6, 5, 2);
    let rep = super::minimizer_check(&p, &s_i, trials, &[1e-2, 1.0], seed ^ 0x5eed)?;
    Ok(Check::at_most(
        format!(
            "energy minimizer ({} perturbations, violations)",
            rep.evaluations
        ),
        rep.violations as f64,
        0.0,
    ))
}

/// `E_b(0,1) = B00 + B11 − B10 − B01` over random `r_b` with two outputs.
pub fn check_submodularity(draws: usize, seed: u64) -> Result<Check> {
    let mut r = rng(seed);
    let mut lowest = f64::INFINITY;
    for _ in 0..draws {
        let mut p = VrdParams::zeros(1, 2);
        p.r_b = Mat::from_fn(2, 2, |_, _| r.random_range(-1.0..1.0));
        let b = p.b_o()?;
        lowest = lowest.min(b.get(0, 0) + b.get(1, 1) - b.get(1, 0) - b.get(0, 1));
    }
    Ok(Check::at_most(
        format!("submodularity -E_b(0,1) over {draws} draws"),
        -lowest,
        1e-12,
    ))
}

/// Every gradient of one layer against central differences, with loss
/// `L = ½ Σ s_o²`.
pub fn check_vrd_gradients(
    h: usize,
    w: usize,
    n_in: usize,
    n_out: usize,
    seed: u64,
    phi: PhiRule,
) -> Result<Vec<Check>> {
    let mut r = rng(seed);
    let p = random_params(&mut r, n_in, n_out);
    let s_i = random_field(&mut r, h, w, n_in);
    let (s_o, cache) = vrd_forward(&s_i, &p)?;
    let grads = vrd_backward(&s_o, &cache, &s_i, &p)?;
    let half_sq = |f: &Field| 0.5 * f.data().iter().map(|v| v * v).sum::<f64>();
    let loss_of = |params: &VrdParams, input: &Field| -> f64 {
        half_sq(&vrd_forward(input, params).expect("forward").0)
    };
    let sys = &cache.system;
    let tag = format!("{h}x{w}, Ni={n_in}, No={n_out}");
    let mut checks = Vec::new();
    let mut push = |name: &str, rel: f64| {
        checks.push(Check::at_most(
            format!("dL/d{name} vs FD ({tag})"),
            rel,
            1e-4,
        ));
    };

    let sp = cache.s_p.clone();
    let rep = finite_diff_check(
        |x| {
            half_sq(
                &sys.solve(&Field::from_vec(h, w, n_out, x.to_vec()).expect("shape"))
                    .expect("solve"),
            )
        },
        sp.data(),
        grads.dl_dsp.data(),
        FD_STEP,
    );
    push("s_p", rep.max_rel_err);

    let dense_loss =
        |b: &Mat, q: &Mat| half_sq(&dense_solve_with_blocks(b, q, &sp).expect("dense solve"));
    let rep = finite_diff_check(
        |x| {
            dense_loss(
                &Mat::from_vec(n_out, n_out, x.to_vec()).expect("shape"),
                &sys.q_o,
            )
        },
        sys.b_o.data(),
        grads.dl_db_o.data(),
        FD_STEP,
    );
    push("B^o", rep.max_rel_err);
    let rep = finite_diff_check(
        |x| {
            dense_loss(
                &sys.b_o,
                &Mat::from_vec(n_out, n_out, x.to_vec()).expect("shape"),
            )
        },
        sys.q_o.data(),
        grads.dl_dq_o.data(),
        FD_STEP,
    );
    push("Q^o", rep.max_rel_err);

    let with = |f: &dyn Fn(&mut VrdParams, &[f64]), x: &[f64]| {
        let mut q = p.clone();
        f(&mut q, x);
        loss_of(&q, &s_i)
    };
    let rep = finite_diff_check(
        |x| with(&|q, x| q.b_i.data_mut().copy_from_slice(x), x),
        p.b_i.data(),
        grads.dl_db_i.data(),
        FD_STEP,
    );
    push("B^i", rep.max_rel_err);
    let rep = finite_diff_check(
        |x| with(&|q, x| q.q_i.data_mut().copy_from_slice(x), x),
        p.q_i.data(),
        grads.dl_dq_i.data(),
        FD_STEP,
    );
    push("Q^i", rep.max_rel_err);

    let rep = finite_diff_check(
        |x| loss_of(&p, &Field::from_vec(h, w, n_in, x.to_vec()).expect("shape")),
        s_i.data(),
        grads.dl_dsi.data(),
        FD_STEP,
    );
    push("s^i", rep.max_rel_err);

    let dr_b = symmetrize_param_grad(&expm_grad_with(&p.b_bar(), &grads.dl_db_o, phi)?);
    let dr_q = symmetrize_param_grad(&expm_grad_with(&p.q_bar(), &grads.dl_dq_o, phi)?);
    let fd_b = finite_diff_gradient(
        |x| with(&|q, x| q.r_b.data_mut().copy_from_slice(x), x),
        p.r_b.data(),
        FD_STEP,
    );
    push("r_b", relative_error(&fd_b, dr_b.data()).max_rel_err);
    let fd_q = finite_diff_gradient(
        |x| with(&|q, x| q.r_q.data_mut().copy_from_slice(x), x),
        p.r_q.data(),
        FD_STEP,
    );
    push("r_q", relative_error(&fd_q, dr_q.data()).max_rel_err);
    Ok(checks)
}

/// Whole-network parameter and input gradients under softmax cross-entropy.
pub fn check_network_gradients(arch: &str, h: usize, w: usize, seed: u64) -> Result<Vec<Check>> {
    let mut r = rng(seed);
    let kinds = parse_arch(arch)?;
    let n_in = 2;
    let net = Network::build(&kinds, n_in, seed)?;
    let classes = net.output_channels()?;
    let x = random_field(&mut r, h, w, n_in);
    let labels = Labels::from_fn(h, w, |_, _| r.random_range(0..classes));
    let (scores, caches) = net.forward(&x)?;
    let (_, dl) = softmax_xent(&scores, &labels)?;
    let g = net.backward(&caches, &dl)?;
    let theta = net.params_flat();
    let params_rep = finite_diff_check(
        |t| {
            let mut n = net.clone();
            n.set_params_flat(t).expect("length");
            softmax_xent(&n.forward(&x).expect("forward").0, &labels)
                .expect("loss")
                .0
        },
        &theta,
        &g.flat(),
        FD_STEP,
    );
    let input_rep = finite_diff_check(
        |t| {
            let xi = Field::from_vec(h, w, n_in, t.to_vec()).expect("shape");
            softmax_xent(&net.forward(&xi).expect("forward").0, &labels)
                .expect("loss")
                .0
        },
        x.data(),
        g.dl_dinput.data(),
        FD_STEP,
    );
    Ok(vec![
        Check::at_most(
            format!("network params vs FD [{arch}]"),
            params_rep.max_rel_err,
            1e-3,
        ),
        Check::at_most(
            format!("network input vs FD [{arch}]"),
            input_rep.max_rel_err,
            1e-3,
        ),
    ])
}

/// Largest distance from the center at which the response is still at least
/// `fraction` of the peak.
pub fn support_radius(g: &Field, fraction: f64) -> f64 {
    let (ci, cj) = (g.height() / 2, g.width() / 2);
    let peak = g.get(ci, cj, 0);
    let mut radius = 0.0_f64;
    for i in 0..g.height() {
        for j in 0..g.width() {
            if g.get(i, j, 0) >= fraction * peak {
                let (di, dj) = (i as f64 - ci as f64, j as f64 - cj as f64);
                radius = radius.max((di * di + dj * dj).sqrt());
            }
        }
    }
    radius
}

/// Support radius at `1e−3` of peak: `λ = 1e−6` must exceed `λ = 1e−2`.
pub fn check_green_ordering(size: usize) -> Result<Check> {
    let wide = support_radius(&green_function(1e-6, size, size)?, 1e-3);
    let narrow = support_radius(&green_function(1e-2, size, size)?, 1e-3);
    Ok(Check::above(
        format!("Green radius(1e-6) - radius(1e-2) on {size}x{size}"),
        wide - narrow,
        0.0,
    ))
}

/// The full self-test suite.
pub fn run(opts: &SelftestOptions) -> Result<Vec<Check>> {
    let s = opts.seed;
    let mut out = Vec::new();
    out.extend(check_dst_identities(100, s)?);
    out.push(check_laplacian_self_adjoint(s + 1)?);
    out.push(check_commutation(s + 2)?);
    out.push(check_schur_spectrum(s + 3)?);
    out.push(check_expm_grad(50, s + 4, opts.phi)?);
    out.push(check_oracle_equivalence(20, s + 5)?);
    out.push(check_stationarity(
        &[(1, 9), (16, 16), (64, 48), (128, 128)],
        3,
        4,
        s + 6,
    )?);
    out.push(check_solver_self_adjoint(s + 7)?);
    out.push(check_minimizer(100, s + 8)?);
    out.push(check_submodularity(1000, s + 9)?);
    out.extend(check_vrd_gradients(5, 4, 2, 3, s + 10, opts.phi)?);
    out.extend(check_network_gradients(
        "mix:3,vrd:3,relu,mix:2",
        5,
        5,
        s + 11,
    )?);
    out.push(check_green_ordering(255)?);
    Ok(out)
}

pub fn format_table(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(s, "{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "{} checks, {} failed", checks.len(), failed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_phi_is_caught() {
        let good = check_expm_grad(6, 1, phi_entry).unwrap();
        let bad = check_expm_grad(6, 1, corrupted_phi).unwrap();
        assert!(good.passed, "{good:?}");
        assert!(!bad.passed, "{bad:?}");
        let grads = check_vrd_gradients(4, 3, 1, 2, 2, corrupted_phi).unwrap();
        assert!(grads.iter().any(|c| !c.passed));
    }

    #[test]
    fn check_line_format() {
        let c = Check::at_most("x", 1e-13, 1e-12);
        assert!(c.line().starts_with("PASS  x"));
        assert!(!Check::at_most("y", f64::NAN, 1.0).passed);
    }
}
