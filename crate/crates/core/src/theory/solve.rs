//! Iterative linear solve and spectral radius estimation.

use nalgebra::{Complex, DMatrix};
use ndarray::Array2;
use ndarray_linalg::EigVals;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Relative residual target `‖b − A x‖ / ‖b‖`.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, restart: 200, max_iterations: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations.
pub fn gmres<F>(apply: F, b: &[f64], opts: GmresOptions) -> Result<GmresSolution>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(GmresSolution { x, iterations: 0, relative_residual: 0.0 });
    }
    let m = opts.restart.max(1).min(n.max(1));
    let mut total = 0usize;
    let mut ax = vec![0.0; n];
    loop {
        apply(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= opts.tolerance {
            return Ok(GmresSolution { x, iterations: total, relative_residual: beta / bnorm });
        }
        if total >= opts.max_iterations {
            return Err(Error::Solver(format!(
                "GMRES stalled after {total} iterations at relative residual {:.3e}",
                beta / bnorm
            )));
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..m {
            let mut w = vec![0.0; n];
            apply(&basis[j], &mut w);
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][j] = h;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= h * vi);
            }
            let hn = norm(&w);
            hess[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                steps = j;
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            if g[j + 1].abs() / bnorm <= opts.tolerance * 0.5 || hn == 0.0 {
                break;
            }
            w.iter_mut().for_each(|wi| *wi /= hn);
            basis.push(w);
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in i + 1..steps {
                s -= hess[i][k] * y[k];
            }
            y[i] = s / hess[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[k]).for_each(|(xi, vi)| *xi += yk * vi);
        }
        if steps == 0 {
            return Err(Error::Solver("GMRES breakdown on the first Krylov vector".into()));
        }
    }
}

/// Largest eigenvalue modulus of a dense matrix.
/// Eigenvalues of a dense square matrix (LAPACK `dgeev`).
///
/// nalgebra's unshifted Schur iteration stalls on most of the structured
/// moment matrices, so general eigenproblems go through LAPACK. `None` when
/// the routine reports a failure.
pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let a = Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]);
    a.eigvals().ok().map(|ev| ev.iter().map(|z| Complex::new(z.re, z.im)).collect())
}

/// `max |λ|`, or `None` when the eigenvalue iteration does not converge.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> Option<f64> {
    dense_eigenvalues(m).map(|ev| ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Power iteration on a positive linear map from the positive vector `start`.
///
/// Returns the growth rate once two successive estimates agree to `tol`
/// relative, or the last estimate after `max_iter` steps. The estimate is the
/// geometric mean of the last two norm ratios, which damps oscillation between
/// eigenvalues of equal modulus.
pub fn spectral_radius_power<F>(apply: F, start: &[f64], tol: f64, max_iter: usize) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut v = start.to_vec();
    let n0 = norm(&v);
    if n0 == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; v.len()];
    let mut last_ratio = f64::NAN;
    let mut last_est = f64::NAN;
    let mut est = 0.0;
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let ratio = norm(&w);
        if ratio == 0.0 {
            return 0.0;
        }
        if !ratio.is_finite() {
            return f64::INFINITY;
        }
        est = if last_ratio.is_nan() { ratio } else { (ratio * last_ratio).sqrt() };
        if !last_est.is_nan() && (est - last_est).abs() <= tol * est {
            return est;
        }
        last_ratio = ratio;
        last_est = est;
        std::mem::swap(&mut v, &mut w);
        v.iter_mut().for_each(|x| *x /= ratio);
    }
    est
}
