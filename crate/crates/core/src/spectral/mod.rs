//! Eigen-decompositions, contour projectors, perturbative projector expansions and branch continuation.

pub mod branch;
pub mod contour;
pub mod eigen;
pub mod norms;

pub use branch::{projector_derivative, spectral_function, track_branch, BranchTable, ProjectorDerivative};
pub use contour::{idempotency_defect, riesz_projector, rs_defect, rs_projector, Contour, Projector, RsProjector};
pub use eigen::{
    dense_eig_pairs, dense_eigenvalues, fix_phase, hermitian_eigs, inverse_iteration, shift_invert_nearest, EigenPair,
    HermitianDecomposition,
};
pub use norms::{dense_norm, op_norm, power_norm, LinearMap};
