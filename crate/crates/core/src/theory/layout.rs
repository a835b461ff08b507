//! Index bookkeeping for extended vectors, the block Kronecker product and
//! block vectorization.
//!
//! An extended matrix has `N = K + 1` block rows and columns of size `D`; block
//! 0 is the server. For `A ⊗_b B`, block `((i,l),(j,m))` is `A_ij ⊗ B_lm`, so
//! entry `A[iD+a, jD+c] · B[lD+b, mD+d]` lands at row `(iN+l)D² + aD + b` and
//! column `(jN+m)D² + cD + d`. `bvec` stacks `vec(Σ_lj)` with `j` outer and `l`
//! inner, each block vectorized column-major, so that
//! `bvec(A Σ Bᵀ) = (B ⊗_b A) bvec(Σ)`.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// `N`
    pub blocks: usize,
    /// `D`
    pub dim: usize,
}

impl Layout {
    pub fn new(num_clients: usize, dim: usize) -> Self {
        Self { blocks: num_clients + 1, dim }
    }

    /// `N D`
    pub fn ext_dim(&self) -> usize {
        self.blocks * self.dim
    }

    /// `N² D²`
    pub fn kron_dim(&self) -> usize {
        self.ext_dim() * self.ext_dim()
    }

    /// First index of block pair `(i, l)` in the Kronecker space.
    #[inline]
    pub fn pair_offset(&self, i: usize, l: usize) -> usize {
        (i * self.blocks + l) * self.dim * self.dim
    }

    /// Position of `A[ra, ca] · B[rb, cb]` in `A ⊗_b B`.
    #[inline]
    pub fn bkron_index(&self, ra: usize, ca: usize, rb: usize, cb: usize) -> (usize, usize) {
        let d = self.dim;
        let (i, a) = (ra / d, ra % d);
        let (j, c) = (ca / d, ca % d);
        let (l, b) = (rb / d, rb % d);
        let (m, dd) = (cb / d, cb % d);
        (self.pair_offset(i, l) + a * d + b, self.pair_offset(j, m) + c * d + dd)
    }

    /// Position of `Σ[r, c]` in `bvec(Σ)`.
    #[inline]
    pub fn bvec_index(&self, r: usize, c: usize) -> usize {
        let d = self.dim;
        let (l, b) = (r / d, r % d);
        let (j, dd) = (c / d, c % d);
        self.pair_offset(j, l) + dd * d + b
    }

    pub fn bvec(&self, sigma: &DMatrix<f64>) -> Vec<f64> {
        let n = self.ext_dim();
        assert_eq!((sigma.nrows(), sigma.ncols()), (n, n));
        let mut out = vec![0.0; self.kron_dim()];
        for c in 0..n {
            for r in 0..n {
                out[self.bvec_index(r, c)] = sigma[(r, c)];
            }
        }
        out
    }

    pub fn unbvec(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.ext_dim();
        assert_eq!(v.len(), self.kron_dim());
        DMatrix::from_fn(n, n, |r, c| v[self.bvec_index(r, c)])
    }

    /// `bvec` of the block-diagonal matrix `bdiag{c_0 I, c_1 I, ..., c_K I}`.
    pub fn bvec_block_identity(&self, scales: &[f64]) -> Vec<f64> {
        assert_eq!(scales.len(), self.blocks);
        let d = self.dim;
        let mut out = vec![0.0; self.kron_dim()];
        for (k, &s) in scales.iter().enumerate() {
            let off = self.pair_offset(k, k);
            for a in 0..d {
                out[off + a * d + a] = s;
            }
        }
        out
    }

    /// Dense `A ⊗_b B`.
    pub fn bkron_dense(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.ext_dim();
        let mut out = DMatrix::zeros(self.kron_dim(), self.kron_dim());
        for ca in 0..n {
            for ra in 0..n {
                let x = a[(ra, ca)];
                if x == 0.0 {
                    continue;
                }
                for cb in 0..n {
                    for rb in 0..n {
                        let y = b[(rb, cb)];
                        if y != 0.0 {
                            let (r, c) = self.bkron_index(ra, ca, rb, cb);
                            out[(r, c)] = x * y;
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replica_stream, ReplicaPurpose};
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, rng: &mut crate::rng::Stream) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn bvec_round_trips() {
        let lay = Layout::new(2, 2);
        let mut rng = replica_stream(1, 0, ReplicaPurpose::Data);
        let s = random(lay.ext_dim(), &mut rng);
        assert_eq!(lay.unbvec(&lay.bvec(&s)), s);
    }

    #[test]
    fn block_kronecker_vectorization_identity() {
        let lay = Layout::new(2, 2);
        let mut rng = replica_stream(2, 0, ReplicaPurpose::Data);
        let n = lay.ext_dim();
        let (a, b, s) = (random(n, &mut rng), random(n, &mut rng), random(n, &mut rng));
        let lhs = lay.bvec(&(&a * &s * b.transpose()));
        let rhs = lay.bkron_dense(&b, &a) * nalgebra::DVector::from_vec(lay.bvec(&s));
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn block_kronecker_is_ordinary_kronecker_for_one_block() {
        let lay = Layout { blocks: 1, dim: 3 };
        let mut rng = replica_stream(3, 0, ReplicaPurpose::Data);
        let (a, b) = (random(3, &mut rng), random(3, &mut rng));
        assert_eq!(lay.bkron_dense(&a, &b), a.kronecker(&b));
    }

    #[test]
    fn block_identity_vector_matches_dense_bvec() {
        let lay = Layout::new(2, 3);
        let scales = [0.0, 1.5, -2.0];
        let mut dense = DMatrix::zeros(lay.ext_dim(), lay.ext_dim());
        for (k, &s) in scales.iter().enumerate() {
            for a in 0..3 {
                dense[(k * 3 + a, k * 3 + a)] = s;
            }
        }
        assert_eq!(lay.bvec_block_identity(&scales), lay.bvec(&dense));
    }
}
