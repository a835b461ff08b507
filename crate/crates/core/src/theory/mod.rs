//! Closed-form mean-square analysis of PSO-Fed under attack.

pub mod analysis;
pub mod layout;
pub mod moments;
pub mod solve;
pub mod sparse;

pub use analysis::{
    analyze, build_f, mean_stability_bound, ms_stability_bound, msd_recursion_trace, mse_trace,
    optimal_stepsize, optimal_stepsize_exact, spectral_radius, steady_state_mse, steady_state_mse_unchecked,
    MseDecomposition, TheoryOptions, TheoryResult, DEFAULT_NEUMANN_ORDER,
};
pub use layout::Layout;
pub use moments::{build_h, build_k, build_phi_nu, build_r, expected_self_kron, KronBundle, Operator};
pub use sparse::CsrMatrix;
