//! Semiparametric Bayesian networks with data-driven KDE bandwidth selection.
//!
//! Conditional KDE nodes can have their joint bandwidth chosen by the normal
//! rule, unbiased cross-validation, smoothed cross-validation or the plug-in
//! method; structures are learned by hill climbing on a cross-validated
//! log-likelihood.

pub mod cpd;
pub mod error;
pub mod graph;
pub mod kde;
pub mod linalg;
pub mod network;
pub mod optimizer;
pub mod selectors;
pub mod stats;
pub mod structure;
pub mod synthetic;

pub use cpd::{CkdeCpd, Cpd, LinearGaussianCpd, NodeType};
pub use error::{Error, Result};
pub use graph::{cpdag_of, shd, Cpdag, Dag};
pub use kde::{Dataset, KdeModel};
pub use linalg::{SpdMatrix, SpdParam};
pub use network::{FitConfig, Spbn, Structure};
pub use selectors::{SelectorConfig, SelectorKind, SelectorResult};
pub use stats::{permutation_median_test, Correction, PairwiseMatrix, PermTestResult};
pub use structure::{best_of_two_starts, cv_score, hill_climb, HcConfig, HcResult};
pub use synthetic::{loglik_abs_error, GroundTruthNet};
