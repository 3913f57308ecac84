//! Kernel-based Bayes-error estimation and adversarial perturbations that
//! push the estimate upward.
//!
//! The estimator is a leave-one-out Gaussian-kernel posterior. `perturb`
//! differentiates it and runs projected gradient ascent under an L2 or L-inf
//! budget, optionally through a fixed feature embedding from `embed`.
//! `synth` provides datasets with known ground truth.

pub mod embed;
pub mod error;
pub mod estimator;
pub mod perturb;
pub mod synth;
pub mod types;

pub use embed::{apply_embedding, pullback_gradient, Activation, EmbeddingMap, Layer};
pub use error::{Error, Result};
pub use estimator::{
    estimate_bayes_error, estimate_posteriors, gaussian_similarity, median_heuristic_bandwidth, naive_posterior,
    BandwidthRule, BayesErrorEstimate, Posteriors,
};
pub use perturb::{
    bayes_error_through, l2_norm, linf_norm, norm_of, objective_and_gradient, objective_and_gradient_with,
    pga_maximize, pga_maximize_observed, project, GradientReport,
};
pub use synth::{
    analytic_bayes_error, finite_difference_gradient, finite_difference_gradient_excluding, generate_moons,
    sample_truncated_normal_pair, TruncatedNormal, TruncatedNormalPairSpec,
};
pub use types::{
    KernelKind, LabeledDataset, NormOrder, PerturbationConstraint, PgaConfig, PgaDiagnostic, PgaResult,
    PosteriorMatrix, SimilarityKernel, TieBreak,
};
