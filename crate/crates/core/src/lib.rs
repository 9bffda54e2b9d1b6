//! Similarity-only image reconstruction.
//!
//! A target signal is recovered from a black-box oracle that answers nothing
//! but scalar similarity scores. The search runs in a PCA ("eigenface")
//! subspace fitted on public images, using a two-point zero-order gradient
//! estimator and a multi-start schedule. The crate also carries the evaluation
//! machinery around the attack: query budgets, synthetic embedders, a network
//! oracle, and K-fold verification accuracy.
//!
//! Module map:
//!
//! - [`image`]: the [`ImageTensor`] container, mirroring, PNG I/O.
//! - [`rng`]: the counter-based Philox generator every random draw goes through.
//! - [`eigenspace`]: basis fitting, projection, synthesis, the basis file format.
//! - [`oracle`]: the oracle trait, query ledger, synthetic cosine oracles, score degraders.
//! - [`optimizer`]: gradient estimator, ascent loop and the multi-start reconstruction.
//! - [`verify`]: threshold search, K-fold accuracy, replacement evaluation.
//! - [`netbox`]: HTTP/JSON oracle server and the matching remote client.
//! - [`synthetic`]: a procedural face-like corpus for desk-scale experiments.
//! - [`experiment`]: ablation sweeps shared by the CLI and the test suites.

pub mod eigenspace;
pub mod experiment;
pub mod image;
pub mod netbox;
pub mod optimizer;
pub mod oracle;
pub mod rng;
pub mod synthetic;
pub mod verify;

pub use eigenspace::{fit_pca, load_basis, save_basis, BasisError, EigenBasis, LatentCoords};
pub use image::{ImageError, ImageTensor};
pub use optimizer::{
    ascend, estimate_gradient, reconstruct, required_queries, GradientEstimate, OptimizerConfig, Reconstruction,
    RunError, RunTrace,
};
pub use oracle::{
    cosine, make_cosine_oracle, CosineOracle, OracleError, QueryLedger, SimilarityOracle, SyntheticEmbedder, TargetId,
};
pub use verify::{best_threshold, kfold_accuracy, FoldReport, VerificationPair};
