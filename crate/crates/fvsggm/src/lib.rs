//! Learning and inference for Gaussian graphical models whose graph is a
//! spanning tree plus a small set of feedback vertices.
//!
//! A zero pattern of the information matrix J = Σ⁻¹ is the model's graph.
//! Trees admit exact linear-time inference but can't express long-range
//! correlation; this crate works with the next family up: graphs that
//! become trees once k designated feedback nodes F are removed. Writing
//! T = V \ F and splitting
//!
//!   J = [ J_F  J_Mᵀ ]
//!       [ J_M  J_T  ],      J_T tree-structured,
//!
//! every global operation reduces to belief propagation on the tree plus
//! k×k dense algebra, so log-determinants, marginals and likelihoods all
//! cost O(k²n) ([`fvs_log_det`], [`fvs_marginals`], [`log_partition`]).
//!
//! Three learners produce maximum-likelihood fits from a covariance:
//!
//! * [`conditioned_chow_liu`] — F is given: condition the empirical
//!   covariance on F, run the classic maximum-mutual-information
//!   spanning-tree fit on the remainder, and reassemble. Exact ML.
//! * [`learn_greedy_fvs`] / [`learn_exact_fvs`] — F is unknown: pick
//!   feedback nodes one at a time by divergence descent, or search all
//!   size-k subsets when the budget allows.
//! * [`latent_chow_liu`] — F is unobserved entirely: alternate between
//!   completing the latent block of the covariance and re-fitting the
//!   family, monotonically decreasing the marginal divergence.
//!
//! [`experiments`] holds seeded generators (long-memory process
//! covariances, random feedback-structured truths) and the sweep/recovery
//! drivers the CLI exposes.

pub mod error;
pub mod experiments;
pub mod fvs;
pub mod gaussian;
pub mod latent;
pub mod observed;
pub mod tree;

pub use error::{Error, Result};
pub use experiments::{
    fbm_covariance, greedy_recovery_study, kl_vs_k_sweep, random_fvs_model, RecoveryReport,
    RecoveryRun, SweepMeta, SweepResult, SweepRow,
};
pub use fvs::{fvs_log_det, fvs_marginals, log_partition, FvsModel, Marginals};
pub use gaussian::{
    block_inverse, empirical_stats, kl_gaussian, sample_gaussian, schur_conditional,
    EmpiricalStats, GaussianDensity, Partition, SymMatrix,
};
pub use latent::{
    default_init, latent_chow_liu, latent_objective, project_p1, project_p2, LatentIteration,
    LatentState, LatentTrace,
};
pub use observed::{
    conditioned_chow_liu, conditioned_chow_liu_cov, fvs_cost, fvs_cost_cov, learn_exact_fvs,
    learn_exact_fvs_cov, learn_greedy_fvs, learn_greedy_fvs_cov, ml_information_matrix,
    GreedyStep, GreedyTrace, ObservedFit, DEFAULT_ENUMERATION_CAP,
};
pub use tree::{
    chow_liu, tree_bp, tree_information_matrix, tree_log_det_inv, SpanningTree, TreeBpResult,
    TreeMatrix,
};
