//! Benchmark problems with analytically known density ratios.
//!
//! [`MixturePairProblem`] pairs two Gaussian mixtures in `R^d`;
//! [`RegularityProblem`] builds a one-dimensional problem on `[0, 1]` whose
//! log-ratio lies in a periodic Sobolev space of prescribed smoothness.

mod export;
mod mixture;
mod regularity;

pub use export::{read_dataset_csv, write_dataset_csv, write_json, DatasetManifest};
pub use mixture::{
    make_geometric_problem, make_geometric_problem_with_dim, mixture_density, sample_mixture,
    GaussianMixture, MixturePairProblem, GEOMETRIC_DIM,
};
pub use regularity::{
    adjusted_inv_link, adjusted_ratio, l1_ratio_error, make_regularity_problem, sample_regularity,
    sobolev_order_for, RegularityProblem, MIN_GRID_SIZE,
};
