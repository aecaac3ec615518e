//! Distributionally robust linear regression from heterogeneous,
//! multi-environment data.
//!
//! The estimators in this crate assume data generated by a linear structural
//! causal model (SCM) that is shared across environments, while each
//! environment perturbs the system through an *additive intervention*: a
//! random shift added to the structural equations that may move both the
//! means and the covariances of the observed variables. Exploiting that
//! heterogeneity yields prediction models with quantifiable worst-case
//! guarantees over a data-dependent class of unseen test interventions.
//!
//! The crate is organized around sufficient statistics: every estimator
//! consumes per-environment second moments ([`scm::EnvironmentMoments`]),
//! which can be computed exactly from a known SCM ([`scm::ScmSpec`]) or
//! estimated from samples. On top of that sit:
//!
//! - [`estimators`] — DRIG (gradient-invariance regularized least squares)
//!   with its γ→∞ limit, anchor regression, causal Dantzig, group DRO and
//!   the matrix-penalized DRIG-A, all as closed-form solves with diagnostics.
//! - [`robustness`] — the perturbation classes each method is minimax-optimal
//!   against, exact worst-case risk evaluation, and duality checks.
//! - [`adaptation`] — semi-supervised domain adaptation: choosing the DRIG-A
//!   penalty from unlabeled/labeled test samples, with the test-OLS baseline.
//! - [`experiments`] — declaratively configured synthetic studies emitting
//!   tidy CSV/JSON.
//!
//! A command-line interface (`drig`) wraps simulation, fitting on
//! environment-labelled CSV data, experiment replication and worst-case risk
//! evaluation.

pub mod adaptation;
pub mod estimators;
pub mod experiments;
pub mod io;
mod linalg;
pub mod robustness;
pub mod scm;

pub use estimators::{FitResult, GammaMatrix, MethodTag};
pub use scm::{EnvironmentMoments, InterventionLaw, ScmSpec};
