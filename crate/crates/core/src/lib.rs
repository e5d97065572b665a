//! Membership-inference privacy auditing for implicit-feedback recommenders.
//!
//! The crate measures how much a trained recommender leaks about which
//! user-item interactions were in its training set, and what deleting the
//! most exposed data does to both utility and residual leakage:
//!
//! 1. [`dataset`] — ingestion, filtering, leave-two-out splitting, and
//!    negative sampling for implicit-feedback logs.
//! 2. [`models`] — small trainable recommenders (matrix factorization, an
//!    MLP head, and a graph-propagation variant) with a shared SGD loop.
//! 3. [`shadow`] — trains an ensemble of shadow models on random halves of
//!    the training interactions and persists it to an auditable directory.
//! 4. [`stats`] + [`scoring`] — per-interaction hypothesis test against the
//!    shadow OUT population, and the likelihood-ratio exposure score.
//! 5. [`attack_eval`] — ROC/AUC evaluation of the attack and ranking-quality
//!    metrics for trained models.
//! 6. [`unlearn`] — removal planning, retraining, and before/after reports.
//!
//! Everything downstream of a master seed is deterministic: same inputs and
//! seed produce byte-identical artifacts.

pub mod attack_eval;
pub mod dataset;
pub mod error;
pub mod models;
pub mod scoring;
pub mod seed;
pub mod shadow;
pub mod stats;
pub mod types;
pub mod unlearn;

pub use error::{Error, Result};
pub use types::{Interaction, ItemId, LabeledExample, UserId};
