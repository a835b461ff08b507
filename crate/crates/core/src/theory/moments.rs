//! Expectation matrices of the extended recursion.
//!
//! With `P_k = a_k S_k` (participation times coordinate mask) every block of
//! the combination operator `𝒜`, the aggregation operator `ℬ` and the attack
//! injection operator `𝒞` is affine in the `P_k`:
//!
//! ```text
//! 𝒜: (0,0) = I        (i,0) = P_i          (i,i) = I − P_i
//! ℬ: (0,0) = I − Σ_k P'_k / s               (0,j) = P'_j / s      (i,i) = I
//! 𝒞: (0,j) = P'_j / s
//! ```
//!
//! All products of diagonal blocks are diagonal, so every block of
//! `E[X ⊗_b X]` is a `D² × D²` diagonal assembled from three moments:
//! `E[P_k] = p_c p_e I`, `E[P_k ⊗ P_k]` (same client) and `E[P_k ⊗ P_l]`
//! (distinct clients).

use crate::error::{Error, Result};
use crate::model::{MaskMode, NetworkSpec};

use super::layout::Layout;
use super::sparse::CsrMatrix;

/// Which clients' `P` enter an affine block.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    None,
    Single(usize),
    AllClients,
}

/// `c I + coef · P(term)`
#[derive(Debug, Clone, Copy, PartialEq)]
struct AffineBlock {
    c: f64,
    coef: f64,
    term: Term,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Combine,
    Aggregate,
    Inject,
}

/// Joint selection law of `P_k = a_k S_k` under uniform scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMoments {
    pub num_clients: usize,
    pub dim: usize,
    pub round_size: usize,
    /// `E[P_k]` scalar: `p_c p_e`.
    pub first: f64,
    /// Diagonal of `E[P_k ⊗ P_k]`, length `D²`.
    pub same_client: Vec<f64>,
    /// Scalar of `E[P_k ⊗ P_l] = c I`, `k ≠ l`.
    pub cross_client: f64,
}

impl SelectionMoments {
    pub fn new(spec: &NetworkSpec) -> Self {
        let (k, d, m, s) = (spec.num_clients, spec.model_dim, spec.shared_entries, spec.round_size);
        let pe = spec.sharing_probability();
        let pc = spec.selection_probability();
        let off = if d > 1 { pe * (m as f64 - 1.0) / (d as f64 - 1.0) } else { 0.0 };
        let mut same_client = vec![pc * off; d * d];
        for a in 0..d {
            same_client[a * d + a] = pc * pe;
        }
        let joint = if k > 1 { pc * (s as f64 - 1.0) / (k as f64 - 1.0) } else { 0.0 };
        Self { num_clients: k, dim: d, round_size: s, first: pc * pe, same_client, cross_client: joint * pe * pe }
    }

    fn mean(&self, t: Term) -> f64 {
        match t {
            Term::None => 0.0,
            Term::Single(_) => self.first,
            Term::AllClients => self.num_clients as f64 * self.first,
        }
    }

    /// `E[P(t1) ⊗ P(t2)]` at diagonal position `z`.
    fn product(&self, t1: Term, t2: Term, z: usize) -> f64 {
        let k = self.num_clients as f64;
        let (same, cross) = (self.same_client[z], self.cross_client);
        match (t1, t2) {
            (Term::None, _) | (_, Term::None) => 0.0,
            (Term::Single(a), Term::Single(b)) => {
                if a == b {
                    same
                } else {
                    cross
                }
            }
            (Term::Single(_), Term::AllClients) | (Term::AllClients, Term::Single(_)) => same + (k - 1.0) * cross,
            (Term::AllClients, Term::AllClients) => k * same + k * (k - 1.0) * cross,
        }
    }

    fn expect(&self, x: AffineBlock, y: AffineBlock, z: usize) -> f64 {
        x.c * y.c
            + x.c * y.coef * self.mean(y.term)
            + y.c * x.coef * self.mean(x.term)
            + x.coef * y.coef * self.product(x.term, y.term, z)
    }
}

fn nonzero_blocks(op: Operator, num_clients: usize, round_size: usize) -> Vec<(usize, usize, AffineBlock)> {
    let inv = 1.0 / round_size as f64;
    let mut out = Vec::new();
    match op {
        Operator::Combine => {
            out.push((0, 0, AffineBlock { c: 1.0, coef: 0.0, term: Term::None }));
            for k in 0..num_clients {
                out.push((k + 1, 0, AffineBlock { c: 0.0, coef: 1.0, term: Term::Single(k) }));
                out.push((k + 1, k + 1, AffineBlock { c: 1.0, coef: -1.0, term: Term::Single(k) }));
            }
        }
        Operator::Aggregate => {
            out.push((0, 0, AffineBlock { c: 1.0, coef: -inv, term: Term::AllClients }));
            for k in 0..num_clients {
                out.push((0, k + 1, AffineBlock { c: 0.0, coef: inv, term: Term::Single(k) }));
                out.push((k + 1, k + 1, AffineBlock { c: 1.0, coef: 0.0, term: Term::None }));
            }
        }
        Operator::Inject => {
            for k in 0..num_clients {
                out.push((0, k + 1, AffineBlock { c: 0.0, coef: inv, term: Term::Single(k) }));
            }
        }
    }
    out
}

/// `E[X ⊗_b X]` for one of the three operators.
pub fn expected_self_kron(spec: &NetworkSpec, op: Operator) -> Result<CsrMatrix> {
    require_uniform(spec)?;
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let mom = SelectionMoments::new(spec);
    let blocks = nonzero_blocks(op, spec.num_clients, spec.round_size);
    let d2 = spec.model_dim * spec.model_dim;
    let mut trip = Vec::with_capacity(blocks.len() * blocks.len() * d2);
    for &(i, j, x) in &blocks {
        for &(l, m, y) in &blocks {
            let r0 = lay.pair_offset(i, l);
            let c0 = lay.pair_offset(j, m);
            for z in 0..d2 {
                let v = mom.expect(x, y, z);
                if v != 0.0 {
                    trip.push((r0 + z, c0 + z, v));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(lay.kron_dim(), lay.kron_dim(), trip))
}

fn require_uniform(spec: &NetworkSpec) -> Result<()> {
    match spec.mask_mode {
        MaskMode::Uniform => Ok(()),
        MaskMode::RoundRobin => Err(Error::UnsupportedLaw(
            "the expectation matrices assume uniform coordinate masks; round-robin masks are deterministic".into(),
        )),
    }
}

/// Diagonal of `𝓡 = bdiag{0, σ_1² I, ..., σ_K² I}`.
pub fn build_r(spec: &NetworkSpec) -> Vec<f64> {
    let d = spec.model_dim;
    let mut diag = vec![0.0; (spec.num_clients + 1) * d];
    for (k, c) in spec.clients.iter().enumerate() {
        diag[(k + 1) * d..(k + 2) * d].fill(c.input_variance);
    }
    diag
}

/// Diagonal of `𝓚 = I ⊗_b 𝓡 + 𝓡 ⊗_b I`: block `(i,l)` is `(σ_i² + σ_l²) I`.
pub fn build_k(spec: &NetworkSpec) -> Vec<f64> {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let var = block_variances(spec);
    let d2 = spec.model_dim * spec.model_dim;
    let mut diag = vec![0.0; lay.kron_dim()];
    for i in 0..lay.blocks {
        for l in 0..lay.blocks {
            let off = lay.pair_offset(i, l);
            diag[off..off + d2].fill(var[i] + var[l]);
        }
    }
    diag
}

/// `[0, σ_1², ..., σ_K²]`
fn block_variances(spec: &NetworkSpec) -> Vec<f64> {
    std::iter::once(0.0).chain(spec.clients.iter().map(|c| c.input_variance)).collect()
}

/// `E[x_a x_b x_c x_d]` for a zero-mean Gaussian vector with covariance `σ² I`.
#[inline]
pub fn isserlis_fourth(var: f64, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let delta = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
    var * var * (delta(a, b) * delta(c, d) + delta(a, c) * delta(b, d) + delta(a, d) * delta(b, c))
}

/// `𝓗 = E[X Xᵀ ⊗_b X Xᵀ]`.
///
/// Only blocks `((i,l),(i,l))` with both `i, l` clients are nonzero: the
/// cross-client block is `R_i ⊗ R_l` and the same-client block holds the
/// Gaussian fourth moments `E[x_a x_c x_b x_d]`.
pub fn build_h(spec: &NetworkSpec) -> CsrMatrix {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let d = spec.model_dim;
    let var = block_variances(spec);
    let mut trip = Vec::new();
    for i in 1..lay.blocks {
        for l in 1..lay.blocks {
            let off = lay.pair_offset(i, l);
            if i != l {
                for z in 0..d * d {
                    trip.push((off + z, off + z, var[i] * var[l]));
                }
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        for dd in 0..d {
                            let v = isserlis_fourth(var[i], a, c, b, dd);
                            if v != 0.0 {
                                trip.push((off + a * d + b, off + c * d + dd, v));
                            }
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(lay.kron_dim(), lay.kron_dim(), trip)
}

/// `φ_ν = bvec(E[X Θ_ν Xᵀ]) = bvec(bdiag{0, σ_ν1² R_1, ..., σ_νK² R_K})`.
pub fn build_phi_nu(spec: &NetworkSpec) -> Vec<f64> {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let scales: Vec<f64> = std::iter::once(0.0)
        .chain(spec.clients.iter().map(|c| c.noise_variance * c.input_variance))
        .collect();
    lay.bvec_block_identity(&scales)
}

/// `bvec(Ω_δ) = bvec(bdiag{0, β_k σ_B² p_a I})`.
pub fn build_omega_delta(spec: &NetworkSpec) -> Vec<f64> {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let scales: Vec<f64> = std::iter::once(0.0)
        .chain(spec.clients.iter().map(|c| {
            if c.byzantine {
                spec.attack_variance * spec.attack_probability
            } else {
                0.0
            }
        }))
        .collect();
    lay.bvec_block_identity(&scales)
}

/// Everything the steady-state analysis needs for one network.
#[derive(Debug, Clone)]
pub struct KronBundle {
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub q_a: CsrMatrix,
    pub q_b: CsrMatrix,
    pub q_c: CsrMatrix,
    pub q_a_t: CsrMatrix,
    pub q_b_t: CsrMatrix,
    pub h: CsrMatrix,
    /// Diagonal of `𝓡`, length `N D`.
    pub r_block: Vec<f64>,
    /// Diagonal of `𝓚`, length `N² D²`.
    pub k_mat: Vec<f64>,
    pub phi_nu: Vec<f64>,
    /// `Q_B φ_ν`
    pub phi: Vec<f64>,
    /// `Q_C bvec(Ω_δ)`
    pub omega: Vec<f64>,
    /// Diagonal of `Θ_ν` without the server block.
    pub theta_nu: Vec<f64>,
    /// `Q_Aᵀ bvec(𝓡)`
    pub sigma: Vec<f64>,
    /// `E[P_k ⊗ P_k]` diagonal (`𝒮`).
    pub s_kron: Vec<f64>,
    /// `E[P_k ⊗ I]` diagonal (`𝒮₁`).
    pub s1_kron: Vec<f64>,
    /// `E[P_k ⊗ P_l]`, `k ≠ l`, diagonal (`𝒮₂`).
    pub s2_kron: Vec<f64>,
}

impl KronBundle {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        require_uniform(spec)?;
        let layout = Layout::new(spec.num_clients, spec.model_dim);
        let (q_a, (q_b, q_c)) = rayon::join(
            || expected_self_kron(spec, Operator::Combine),
            || {
                rayon::join(
                    || expected_self_kron(spec, Operator::Aggregate),
                    || expected_self_kron(spec, Operator::Inject),
                )
            },
        );
        let (q_a, q_b, q_c) = (q_a?, q_b?, q_c?);
        let q_a_t = q_a.transpose();
        let q_b_t = q_b.transpose();
        let h = build_h(spec);
        let r_block = build_r(spec);
        let k_mat = build_k(spec);
        let phi_nu = build_phi_nu(spec);
        let phi = q_b.matvec(&phi_nu);
        let omega = q_c.matvec(&build_omega_delta(spec));
        let r_scales: Vec<f64> = block_variances(spec);
        let sigma = q_a_t.matvec(&layout.bvec_block_identity(&r_scales));
        let mom = SelectionMoments::new(spec);
        let d2 = spec.model_dim * spec.model_dim;
        Ok(Self {
            spec: spec.clone(),
            layout,
            q_a,
            q_b,
            q_c,
            q_a_t,
            q_b_t,
            h,
            r_block,
            k_mat,
            phi_nu,
            phi,
            omega,
            theta_nu: spec.noise_variances(),
            sigma,
            s_kron: mom.same_client.clone(),
            s1_kron: vec![mom.first; d2],
            s2_kron: vec![mom.cross_client; d2],
        })
    }

    pub fn kron_dim(&self) -> usize {
        self.layout.kron_dim()
    }

    /// `bvec(𝓡)`
    pub fn bvec_r(&self) -> Vec<f64> {
        self.layout.bvec_block_identity(&block_variances(&self.spec))
    }

    /// `Fᵀ v = Q_Aᵀ (I − μ𝓚 + μ²𝓗) Q_Bᵀ v`; `keep_quadratic = false` drops the
    /// `μ²𝓗` term.
    pub fn apply_f_transpose(&self, mu: f64, keep_quadratic: bool, v: &[f64], out: &mut [f64]) {
        let n = self.kron_dim();
        let mut t = vec![0.0; n];
        self.q_b_t.matvec_into(v, &mut t);
        let mut g = t.clone();
        for ((gi, ti), ki) in g.iter_mut().zip(&t).zip(&self.k_mat) {
            *gi -= mu * ki * ti;
        }
        if keep_quadratic && mu != 0.0 {
            let ht = self.h.matvec(&t);
            for (gi, hi) in g.iter_mut().zip(&ht) {
                *gi += mu * mu * hi;
            }
        }
        self.q_a_t.matvec_into(&g, out);
    }

    /// `F v = Q_B (I − μ𝓚 + μ²𝓗) Q_A v`.
    pub fn apply_f(&self, mu: f64, keep_quadratic: bool, v: &[f64], out: &mut [f64]) {
        let mut t = self.q_a.matvec(v);
        let base = t.clone();
        for ((ti, bi), ki) in t.iter_mut().zip(&base).zip(&self.k_mat) {
            *ti = bi - mu * ki * bi;
        }
        if keep_quadratic && mu != 0.0 {
            let hb = self.h.matvec(&base);
            for (ti, hi) in t.iter_mut().zip(&hb) {
                *ti += mu * mu * hi;
            }
        }
        self.q_b.matvec_into(&t, out);
    }
}
