//! Stability bounds, steady-state MSE and the optimal stepsize.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkSpec;

use super::moments::KronBundle;
use super::solve::{gmres, spectral_radius_dense, spectral_radius_power, GmresOptions};
use super::sparse::CsrMatrix;

/// Largest Kronecker dimension for which `F` is formed and solved densely.
pub const DENSE_LIMIT: usize = 700;

/// Default truncation order of the Neumann series in [`optimal_stepsize`].
pub const DEFAULT_NEUMANN_ORDER: usize = 5;

/// Relative imaginary-part threshold below which an eigenvalue of `𝓓` counts
/// as real.
pub const REAL_EIGEN_TOL: f64 = 1e-9;

/// Bound on any weighted MSD value before a trace is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub e_phi: f64,
    pub e_omega: f64,
    pub e_theta: f64,
    pub total: f64,
}

impl MseDecomposition {
    pub fn new(e_phi: f64, e_omega: f64, e_theta: f64) -> Self {
        Self { e_phi, e_omega, e_theta, total: e_phi + e_omega + e_theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TheoryOptions {
    /// Drop the `μ²𝓗` term of `F`.
    pub small_step: bool,
}

/// `F = Q_B (I − μ𝓚 + μ²𝓗) Q_A`.
pub fn build_f(bundle: &KronBundle, mu: f64, small_step: bool) -> CsrMatrix {
    let n = bundle.kron_dim();
    let mut g = CsrMatrix::diagonal(&bundle.k_mat.iter().map(|k| 1.0 - mu * k).collect::<Vec<_>>());
    if !small_step && mu != 0.0 {
        g = g.add_scaled(&bundle.h, mu * mu);
    }
    debug_assert_eq!(g.nrows(), n);
    bundle.q_b.matmul(&g).matmul(&bundle.q_a)
}

/// `ρ(F(μ))`: dense eigenvalues up to [`DENSE_LIMIT`], power iteration on the
/// positive map `Fᵀ` above it (or if the dense solve fails).
pub fn spectral_radius(bundle: &KronBundle, mu: f64, small_step: bool) -> f64 {
    if bundle.kron_dim() <= DENSE_LIMIT {
        if let Some(rho) = spectral_radius_dense(&build_f(bundle, mu, small_step).to_dense()) {
            return rho;
        }
    }
    let start = identity_bvec(bundle);
    spectral_radius_power(|v, out| bundle.apply_f_transpose(mu, !small_step, v, out), &start, 1e-10, 3000)
}

fn identity_bvec(bundle: &KronBundle) -> Vec<f64> {
    bundle.layout.bvec_block_identity(&vec![1.0; bundle.layout.blocks])
}

/// `2 / max_k σ_k²`
pub fn mean_stability_bound(spec: &NetworkSpec) -> Result<f64> {
    let max = spec.clients.iter().map(|c| c.input_variance).fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateBound("no client has positive input variance".into()));
    }
    Ok(2.0 / max)
}

/// Eigenvalues of the `(i,l)` diagonal block of `𝓗`.
fn h_block_eigenvalues(bundle: &KronBundle, i: usize, l: usize) -> Vec<f64> {
    let d2 = bundle.layout.dim * bundle.layout.dim;
    let off = bundle.layout.pair_offset(i, l);
    let mut block = DMatrix::zeros(d2, d2);
    let mut diagonal_only = true;
    for r in 0..d2 {
        for c in 0..d2 {
            let v = bundle.h.get(off + r, off + c);
            if v != 0.0 && r != c {
                diagonal_only = false;
            }
            block[(r, c)] = v;
        }
    }
    if diagonal_only {
        block.diagonal().iter().copied().collect()
    } else {
        SymmetricEigen::new(block).eigenvalues.iter().copied().collect()
    }
}

/// Mean-square stability bound
/// `min{1/λ_max(𝓚⁻¹𝓗), 1/max{λ(𝓓) ∈ ℝ, 0}}` with `𝓓 = [[𝓚/2, −𝓗/2], [I, 0]]`.
///
/// `𝓚` is diagonal with one scalar `k` per block pair and `𝓗` is block
/// diagonal on the same pairs, so both problems split per block: `𝓚⁻¹𝓗` has
/// eigenvalues `h/k`, and `𝓓` has the roots of `λ² − (k/2)λ + h/2 = 0` for
/// each eigenvalue `h` of the `𝓗` block. Blocks with `k = 0` (the server
/// pair) are excluded from `𝓚⁻¹𝓗`.
pub fn ms_stability_bound(bundle: &KronBundle) -> Result<f64> {
    let blocks = bundle.layout.blocks;
    let d2 = bundle.layout.dim * bundle.layout.dim;
    let mut kinv_h_max = 0.0f64;
    let mut roots: Vec<(f64, f64)> = Vec::new();
    let mut scale = 0.0f64;
    let mut cached_same: Option<(f64, Vec<f64>)> = None;
    for i in 0..blocks {
        for l in 0..blocks {
            let k = bundle.k_mat[bundle.layout.pair_offset(i, l)];
            let hs = if i == l && i > 0 {
                let var = bundle.spec.clients[i - 1].input_variance;
                match &cached_same {
                    Some((v, eig)) if *v == var => eig.clone(),
                    _ => {
                        let eig = h_block_eigenvalues(bundle, i, l);
                        cached_same = Some((var, eig.clone()));
                        eig
                    }
                }
            } else if i > 0 && l > 0 {
                let h = bundle.h.get(bundle.layout.pair_offset(i, l), bundle.layout.pair_offset(i, l));
                vec![h; d2]
            } else {
                vec![0.0; d2]
            };
            let mut seen: Vec<f64> = Vec::new();
            for h in hs {
                if seen.iter().any(|s| (s - h).abs() <= 1e-14 * h.abs().max(1.0)) {
                    continue;
                }
                seen.push(h);
                if k > 0.0 {
                    kinv_h_max = kinv_h_max.max(h / k);
                }
                scale = scale.max(k / 2.0).max(h.abs() / 2.0).max(1.0);
                roots.push((k, h));
            }
        }
    }
    let mut d_max = 0.0f64;
    for (k, h) in roots {
        let disc = k * k / 4.0 - 2.0 * h;
        let imag = if disc < 0.0 { (-disc).sqrt() / 2.0 } else { 0.0 };
        if imag <= REAL_EIGEN_TOL * scale {
            let re = (k / 2.0 + disc.max(0.0).sqrt()) / 2.0;
            d_max = d_max.max(re);
        }
    }
    let a = if kinv_h_max > 0.0 { 1.0 / kinv_h_max } else { f64::INFINITY };
    let b = if d_max > 0.0 { 1.0 / d_max } else { f64::INFINITY };
    let bound = a.min(b);
    if !bound.is_finite() {
        return Err(Error::DegenerateBound("both stability branches are unbounded (𝓗 = 0 and 𝓚 = 0)".into()));
    }
    Ok(bound)
}

/// Dense `𝓓 = [[𝓚/2, −𝓗/2], [I, 0]]`, for cross-checks on small networks.
pub fn d_matrix_dense(bundle: &KronBundle) -> DMatrix<f64> {
    let n = bundle.kron_dim();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for (i, k) in bundle.k_mat.iter().enumerate() {
        d[(i, i)] = k / 2.0;
        d[(n + i, i)] = 1.0;
    }
    for (r, c, v) in bundle.h.iter() {
        d[(r, n + c)] = -v / 2.0;
    }
    d
}

/// `bvec(w̃_0 w̃_0ᵀ)` for the zero start, where `w̃_0 = 1 ⊗ w*`.
fn initial_deviation(bundle: &KronBundle) -> Vec<f64> {
    let lay = bundle.layout;
    let w = &bundle.spec.true_model;
    let n = lay.ext_dim();
    let d = lay.dim;
    let mut out = vec![0.0; lay.kron_dim()];
    for c in 0..n {
        for r in 0..n {
            out[lay.bvec_index(r, c)] = w[r % d] * w[c % d];
        }
    }
    out
}

/// Weighted MSD `E‖w̃_n‖²_σ` for `n = 0..=iters`, started from the zero model.
///
/// Uses `E‖w̃_{n+1}‖²_σ = E‖w̃_n‖²_{Fᵀσ} + (μ²φ + ω)ᵀσ` unrolled so that the
/// weighting vector is propagated as `(Fᵀ)ʲσ`.
pub fn msd_recursion_trace(bundle: &KronBundle, mu: f64, sigma_weight: &[f64], iters: usize, opts: TheoryOptions) -> Result<Vec<f64>> {
    let n = bundle.kron_dim();
    if sigma_weight.len() != n {
        return Err(Error::Argument(format!("weighting vector has {} entries, expected {n}", sigma_weight.len())));
    }
    let start = initial_deviation(bundle);
    let drive: Vec<f64> = bundle.phi.iter().zip(&bundle.omega).map(|(p, o)| mu * mu * p + o).collect();
    let mut t = sigma_weight.to_vec();
    let mut next = vec![0.0; n];
    let mut forcing = 0.0;
    let mut out = Vec::with_capacity(iters + 1);
    for it in 0..=iters {
        let value = dot(&start, &t) + forcing;
        if !value.is_finite() || value.abs() > DIVERGENCE_GUARD {
            return Err(Error::Divergence { iteration: it, value });
        }
        out.push(value);
        if it == iters {
            break;
        }
        forcing += dot(&drive, &t);
        bundle.apply_f_transpose(mu, !opts.small_step, &t, &mut next);
        std::mem::swap(&mut t, &mut next);
    }
    Ok(out)
}

/// Network MSE trace `(1/K)(E‖w̃_n‖²_σ + tr Θ_ν)` with `σ = Q_Aᵀ bvec(𝓡)`.
pub fn mse_trace(bundle: &KronBundle, mu: f64, iters: usize, opts: TheoryOptions) -> Result<Vec<f64>> {
    let k = bundle.spec.num_clients as f64;
    let e_theta = bundle.theta_nu.iter().sum::<f64>() / k;
    Ok(msd_recursion_trace(bundle, mu, &bundle.sigma, iters, opts)?
        .into_iter()
        .map(|v| v / k + e_theta)
        .collect())
}

/// Solves `(I − Fᵀ) z = σ`.
fn solve_weighting(bundle: &KronBundle, mu: f64, opts: TheoryOptions) -> Result<Vec<f64>> {
    let n = bundle.kron_dim();
    if n <= DENSE_LIMIT {
        let f = build_f(bundle, mu, opts.small_step).to_dense();
        let a = DMatrix::identity(n, n) - f.transpose();
        let z = a
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&bundle.sigma))
            .ok_or_else(|| Error::Solver("I − Fᵀ is singular".into()))?;
        return Ok(z.iter().copied().collect());
    }
    let sol = gmres(
        |v, out| {
            bundle.apply_f_transpose(mu, !opts.small_step, v, out);
            for (o, x) in out.iter_mut().zip(v) {
                *o = x - *o;
            }
        },
        &bundle.sigma,
        GmresOptions::default(),
    )?;
    Ok(sol.x)
}

/// Steady-state MSE without the stability check; the caller vouches for
/// `ρ(F) < 1`.
pub fn steady_state_mse_unchecked(bundle: &KronBundle, mu: f64, opts: TheoryOptions) -> Result<MseDecomposition> {
    let k = bundle.spec.num_clients as f64;
    let z = solve_weighting(bundle, mu, opts)?;
    let e_phi = mu * mu * dot(&bundle.phi, &z) / k;
    let e_omega = if bundle.omega.iter().all(|&w| w == 0.0) { 0.0 } else { dot(&bundle.omega, &z) / k };
    let e_theta = bundle.theta_nu.iter().sum::<f64>() / k;
    Ok(MseDecomposition::new(e_phi, e_omega, e_theta))
}

/// `𝓔 = 𝓔_φ + 𝓔_ω + 𝓔_Θ` with `𝓔_φ = μ²φᵀz/K`, `𝓔_ω = ωᵀz/K`,
/// `𝓔_Θ = tr(Θ_ν)/K` and `z = (I − Fᵀ)⁻¹σ`.
pub fn steady_state_mse(bundle: &KronBundle, mu: f64, opts: TheoryOptions) -> Result<MseDecomposition> {
    let rho = spectral_radius(bundle, mu, opts.small_step);
    if !(rho < 1.0) {
        return Err(Error::Instability { spectral_radius: rho });
    }
    steady_state_mse_unchecked(bundle, mu, opts)
}

/// Neumann-series approximation of the optimal stepsize.
///
/// With `Fᵀ = A₀ − μA₁ + μ²A₂` (`A₀ = Q_AᵀQ_Bᵀ`, `A₁ = Q_Aᵀ𝓚Q_Bᵀ`,
/// `A₂ = Q_Aᵀ𝓗Q_Bᵀ`), `Σ_{j=0}^{J} (Fᵀ)ʲσ = s₀ + μs₁ + μ²s₂ + O(μ³)`, and
/// minimizing `(μ²φ + ω)ᵀ(s₀ + μs₁ + μ²s₂)` to second order gives
/// `μ* = −ωᵀs₁ / (2(φᵀs₀ + ωᵀs₂))`.
pub fn optimal_stepsize(bundle: &KronBundle, order: usize) -> Result<f64> {
    if order < 3 {
        return Err(Error::Argument(format!("Neumann order J must be ≥ 3 (got {order})")));
    }
    if bundle.omega.iter().all(|&w| w == 0.0) {
        return Ok(0.0);
    }
    let n = bundle.kron_dim();
    let apply = |v: &[f64], with_k: bool, with_h: bool| -> Vec<f64> {
        let t = bundle.q_b_t.matvec(v);
        let g: Vec<f64> = if with_k {
            t.iter().zip(&bundle.k_mat).map(|(x, k)| x * k).collect()
        } else if with_h {
            bundle.h.matvec(&t)
        } else {
            t
        };
        bundle.q_a_t.matvec(&g)
    };
    let mut t = [bundle.sigma.clone(), vec![0.0; n], vec![0.0; n]];
    let mut s = t.clone();
    for _ in 0..order {
        let a0t0 = apply(&t[0], false, false);
        let a0t1 = apply(&t[1], false, false);
        let a0t2 = apply(&t[2], false, false);
        let a1t0 = apply(&t[0], true, false);
        let a1t1 = apply(&t[1], true, false);
        let a2t0 = apply(&t[0], false, true);
        let t1: Vec<f64> = a0t1.iter().zip(&a1t0).map(|(a, b)| a - b).collect();
        let t2: Vec<f64> = (0..n).map(|i| a0t2[i] - a1t1[i] + a2t0[i]).collect();
        t = [a0t0, t1, t2];
        for (acc, term) in s.iter_mut().zip(&t) {
            acc.iter_mut().zip(term).for_each(|(a, b)| *a += b);
        }
    }
    let num = -dot(&bundle.omega, &s[1]);
    let den = 2.0 * (dot(&bundle.phi, &s[0]) + dot(&bundle.omega, &s[2]));
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegenerateStepsize(format!("zero or non-finite denominator ({den})")));
    }
    Ok(num / den)
}

/// Minimizer of the exact steady-state MSE over `(0, hi]` by golden-section
/// search, with `hi` defaulting to 0.99 of the smaller stability bound.
pub fn optimal_stepsize_exact(bundle: &KronBundle, hi: Option<f64>, opts: TheoryOptions) -> Result<f64> {
    if bundle.omega.iter().all(|&w| w == 0.0) {
        return Ok(0.0);
    }
    let bound = ms_stability_bound(bundle)?.min(mean_stability_bound(&bundle.spec)?);
    let hi = hi.unwrap_or(0.99 * bound).min(0.99 * bound);
    let lo = hi * 1e-3;
    let f = |mu: f64| steady_state_mse_unchecked(bundle, mu, opts).map(|m| m.total);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    // Search in log-stepsize: the MSE blows up like 1/μ near zero.
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c.exp())?, f(d.exp())?);
    while (b - a).abs() > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d.exp())?;
        }
    }
    Ok(((a + b) / 2.0).exp())
}

/// Everything the theory engine reports for one network and stepsize.
#[derive(Debug, Clone)]
pub struct TheoryResult {
    /// Present when the Kronecker dimension is at most [`DENSE_LIMIT`].
    pub f: Option<CsrMatrix>,
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub theta_nu: Vec<f64>,
    pub mu_max_mean: f64,
    pub mu_max_ms: f64,
    pub spectral_radius: f64,
    pub mse: MseDecomposition,
    pub mu_star: f64,
}

pub fn analyze(bundle: &KronBundle, order: usize, opts: TheoryOptions) -> Result<TheoryResult> {
    let mu = bundle.spec.stepsize;
    let rho = spectral_radius(bundle, mu, opts.small_step);
    if !(rho < 1.0) {
        return Err(Error::Instability { spectral_radius: rho });
    }
    let mse = steady_state_mse_unchecked(bundle, mu, opts)?;
    Ok(TheoryResult {
        f: (bundle.kron_dim() <= DENSE_LIMIT).then(|| build_f(bundle, mu, opts.small_step)),
        phi: bundle.phi.clone(),
        omega: bundle.omega.clone(),
        theta_nu: bundle.theta_nu.clone(),
        mu_max_mean: mean_stability_bound(&bundle.spec)?,
        mu_max_ms: ms_stability_bound(bundle)?,
        spectral_radius: rho,
        mse,
        mu_star: optimal_stepsize(bundle, order)?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
