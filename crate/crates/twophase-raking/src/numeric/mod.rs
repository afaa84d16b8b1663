//! Deterministic RNG streams and dense linear algebra primitives.

mod linalg;
mod rng;

pub use linalg::{
    check_columns_independent, check_gram_full_rank, factor_spd, gram_matrix, invert_spd,
    solve_spd, CholeskyFactor,
};
pub use rng::{draw_bivariate_normal, draw_scaled_inverse_chisq, expit, RngStream};
