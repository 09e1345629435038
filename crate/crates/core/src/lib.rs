//! Conditional cross-covariance reduction (CCR).
//!
//! Models how the cross-covariance between two random vectors X ∈ ℝ^p1 and
//! Y ∈ ℝ^p2 changes with a grouping variable. For two groups the change is
//! captured by the difference of the group-conditional cross-covariance
//! matrices, Φ = Σ_XY(1) − Σ_XY(2); a sparse rank-r decomposition of its
//! sample estimate selects the variables whose association differs most
//! between the groups. The crate provides:
//!
//! - the grouped-data model and Φ̃ construction ([`data`]),
//! - the two-way iterative hard-thresholding estimator ([`estimator`]),
//! - sparsity selection by sequential sign-flip permutation tests on
//!   leave-two-out resamples, and an information criterion ([`selection`]),
//! - a stacked pairwise extension for three or more groups ([`multigroup`]),
//! - synthetic-data generators and a replication harness ([`simulation`]),
//! - the dense linear-algebra kernels behind all of it ([`linalg`]).

pub mod data;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod multigroup;
pub mod seeding;
pub mod selection;
pub mod simulation;

pub use data::{CrossCovDifference, GroupedDataset};
pub use error::{CcrError, Result};
pub use estimator::{
    correlation_differences, covariance_differences, fit, CcrConfig, CcrFit,
};
pub use linalg::{
    psd_sqrt, qr_orthonormalize, subspace_distance, truncated_svd, OrthonormalBasis, Projector,
    TruncatedSvd,
};
pub use multigroup::{build_stacked_phi, fit_multigroup, group_score_correlations, StackedPhi};
pub use selection::{
    ic_surface, lto_delta_samples, sign_flip_pvalue, spss_select, IcSurface, LtoSamples,
    SpssConfig, SpssResult,
};
pub use simulation::{
    build_population, evaluate, resampling_ratios, run_replications, sample_dataset,
    sparsity_sweep, CovarianceFamily, EvalReport, MetricSummary, Population, ReplicateRow,
    ReplicationConfig, ResamplingScheme, SelectionFrequencies, SimScenario, SweepRow,
};
