//! Monte-Carlo oracles for the expectation matrices.
//!
//! Each draw realizes the random operator exactly as the simulator does
//! (client set, then one uniform mask per client), and accumulates only the
//! nonzero products of its block-Kronecker square.

#![allow(dead_code)]

use nalgebra::DMatrix;
use psofed::model::NetworkSpec;
use psofed::schedule::{draw_client_set, draw_selection_mask, MaskCursor};
use psofed::theory::{expected_self_kron, Layout, Operator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    /// Entries nonzero in the theory or in at least one draw.
    pub checked: usize,
    pub passed: usize,
    pub worst: String,
}

impl OracleReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Running first and second moments of every entry of a dense matrix.
struct Accumulator {
    rows: usize,
    cols: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    draws: usize,
}

impl Accumulator {
    fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, sum: vec![0.0; rows * cols], sumsq: vec![0.0; rows * cols], draws: 0 }
    }

    fn add_sparse(&mut self, entries: &[(usize, usize, f64)]) {
        for &(r, c, v) in entries {
            let idx = r * self.cols + c;
            self.sum[idx] += v;
            self.sumsq[idx] += v * v;
        }
        self.draws += 1;
    }

    /// Compares against `expected(r, c)`: within 3 SE, or exact to 1e-12 when
    /// the sample variance is zero.
    fn compare<F: Fn(usize, usize) -> f64>(&self, name: &str, expected: F) -> OracleReport {
        let nd = self.draws as f64;
        let (mut checked, mut passed) = (0, 0);
        let mut worst = (0.0f64, String::new());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let idx = r * self.cols + c;
                let want = expected(r, c);
                let mean = self.sum[idx] / nd;
                if want == 0.0 && self.sumsq[idx] == 0.0 {
                    continue;
                }
                checked += 1;
                let var = (self.sumsq[idx] / nd - mean * mean).max(0.0) * nd / (nd - 1.0);
                let se = (var / nd).sqrt();
                let ok = if se == 0.0 { (mean - want).abs() <= 1e-12 * want.abs().max(1.0) } else { (mean - want).abs() <= 3.0 * se };
                if ok {
                    passed += 1;
                }
                let z = if se == 0.0 { if ok { 0.0 } else { f64::INFINITY } } else { (mean - want).abs() / se };
                if z > worst.0 {
                    worst = (z, format!("({r},{c}) mc={mean:.6} theory={want:.6} z={z:.2}"));
                }
            }
        }
        OracleReport { name: name.into(), checked, passed, worst: worst.1 }
    }
}

pub fn oracle_spec(m: usize, s: usize) -> NetworkSpec {
    let mut spec = NetworkSpec::homogeneous(3, 3, m, s, 0.05, 1.0, 0.01);
    for (k, c) in spec.clients.iter_mut().enumerate() {
        c.input_variance = [0.5, 0.8, 1.1][k];
        c.noise_variance = [0.01, 0.02, 0.03][k];
    }
    spec
}

/// Diagonal of every `P_k = a_k S_k` for one round.
fn draw_p(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (k, d) = (spec.num_clients, spec.model_dim);
    let chosen = draw_client_set(k, spec.round_size, rng).unwrap();
    let mut p = vec![vec![0.0; d]; k];
    for c in 0..k {
        // Every client draws its mask; only selected clients use it.
        let mask = draw_selection_mask(d, spec.shared_entries, spec.mask_mode, &mut MaskCursor::default(), rng).unwrap();
        if chosen.contains(&c) {
            for &i in mask.indices() {
                p[c][i] = 1.0;
            }
        }
    }
    p
}

/// Nonzeros of the realized operator as `(row, col, value)` in the extended
/// `N D × N D` layout.
fn realize(op: Operator, spec: &NetworkSpec, p: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let (k, d) = (spec.num_clients, spec.model_dim);
    let inv = 1.0 / spec.round_size as f64;
    let mut out = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        if v != 0.0 {
            out.push((r, c, v));
        }
    };
    for a in 0..d {
        match op {
            Operator::Combine => {
                push(a, a, 1.0);
                for i in 0..k {
                    let b = (i + 1) * d + a;
                    push(b, a, p[i][a]);
                    push(b, b, 1.0 - p[i][a]);
                }
            }
            Operator::Aggregate => {
                push(a, a, 1.0 - inv * p.iter().map(|pi| pi[a]).sum::<f64>());
                for i in 0..k {
                    let b = (i + 1) * d + a;
                    push(a, b, inv * p[i][a]);
                    push(b, b, 1.0);
                }
            }
            Operator::Inject => {
                for i in 0..k {
                    push(a, (i + 1) * d + a, inv * p[i][a]);
                }
            }
        }
    }
    out
}

fn self_bkron(lay: &Layout, x: &[(usize, usize, f64)], y: &[(usize, usize, f64)], out: &mut Vec<(usize, usize, f64)>) {
    out.clear();
    for &(ra, ca, va) in x {
        for &(rb, cb, vb) in y {
            let (r, c) = lay.bkron_index(ra, ca, rb, cb);
            out.push((r, c, va * vb));
        }
    }
}

pub fn operator_oracle(spec: &NetworkSpec, op: Operator, draws: usize, seed: u64) -> OracleReport {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let theory = expected_self_kron(spec, op).unwrap();
    let mut acc = Accumulator::new(lay.kron_dim(), lay.kron_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prod = Vec::new();
    for _ in 0..draws {
        let p = draw_p(spec, &mut rng);
        let x = realize(op, spec, &p);
        self_bkron(&lay, &x, &x, &mut prod);
        acc.add_sparse(&prod);
    }
    let name = format!("{op:?} (M={}, s={})", spec.shared_entries, spec.round_size);
    acc.compare(&name, |r, c| theory.get(r, c))
}

/// Realized `X Xᵀ = bdiag{0, x_1 x_1ᵀ, ..., x_K x_Kᵀ}` and, when `noise` is
/// set, `X Θ Xᵀ` with the realized noise `ν_k² x_k x_kᵀ`.
fn realize_outer(spec: &NetworkSpec, rng: &mut ChaCha8Rng, noise: bool) -> Vec<(usize, usize, f64)> {
    let d = spec.model_dim;
    let mut out = Vec::new();
    for (k, c) in spec.clients.iter().enumerate() {
        let nx = Normal::new(0.0, c.input_variance.sqrt()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| nx.sample(rng)).collect();
        let scale = if noise {
            let v: f64 = Normal::new(0.0, c.noise_variance.sqrt()).unwrap().sample(rng);
            v * v
        } else {
            1.0
        };
        let off = (k + 1) * d;
        for a in 0..d {
            for b in 0..d {
                out.push((off + a, off + b, scale * x[a] * x[b]));
            }
        }
    }
    out
}

pub fn h_oracle(spec: &NetworkSpec, draws: usize, seed: u64) -> OracleReport {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let theory = psofed::theory::build_h(spec);
    let mut acc = Accumulator::new(lay.kron_dim(), lay.kron_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prod = Vec::new();
    for _ in 0..draws {
        let xx = realize_outer(spec, &mut rng, false);
        self_bkron(&lay, &xx, &xx, &mut prod);
        acc.add_sparse(&prod);
    }
    acc.compare("H", |r, c| theory.get(r, c))
}

pub fn phi_nu_oracle(spec: &NetworkSpec, draws: usize, seed: u64) -> OracleReport {
    let lay = Layout::new(spec.num_clients, spec.model_dim);
    let theory = psofed::theory::build_phi_nu(spec);
    let mut acc = Accumulator::new(1, lay.kron_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for _ in 0..draws {
        entries.clear();
        for (r, c, v) in realize_outer(spec, &mut rng, true) {
            entries.push((0, lay.bvec_index(r, c), v));
        }
        acc.add_sparse(&entries);
    }
    acc.compare("phi_nu", |_, c| theory[c])
}

/// Realized operator as a dense matrix, for structural checks.
pub fn realized_dense(op: Operator, spec: &NetworkSpec, seed: u64) -> DMatrix<f64> {
    let n = Layout::new(spec.num_clients, spec.model_dim).ext_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = draw_p(spec, &mut rng);
    let mut m = DMatrix::zeros(n, n);
    for (r, c, v) in realize(op, spec, &p) {
        m[(r, c)] += v;
    }
    m
}

/// The full AC-2 suite: 9 `(M, s)` combinations × `{Q_A, Q_B, Q_C}`, plus
/// `H` and `φ_ν` (which do not depend on the schedule).
pub fn full_oracle_suite(draws: usize, h_draws: usize) -> Vec<OracleReport> {
    use rayon::prelude::*;
    let mut jobs: Vec<(usize, usize, Operator)> = Vec::new();
    for m in 1..=3 {
        for s in 1..=3 {
            for op in [Operator::Combine, Operator::Aggregate, Operator::Inject] {
                jobs.push((m, s, op));
            }
        }
    }
    let mut reports: Vec<OracleReport> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(m, s, op))| operator_oracle(&oracle_spec(m, s), op, draws, 1000 + i as u64))
        .collect();
    let spec = oracle_spec(1, 1);
    let (h, phi) = rayon::join(|| h_oracle(&spec, h_draws, 7), || phi_nu_oracle(&spec, draws, 8));
    reports.push(h);
    reports.push(phi);
    reports
}
