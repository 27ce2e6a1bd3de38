//! Deterministic simulator for a user-consented federated recommender.
//!
//! Clients hold their own interactions and attribute labels, and choose per
//! attribute whether it is private. Training jointly optimises a BPR
//! matrix-factorisation recommender, per-attribute classifiers (trained only
//! by users who disclose the attribute), and an entropy-raising penalty that
//! pushes each private user's embedding towards the classifiers' decision
//! boundary. Uploads are clipped and Laplace-perturbed before aggregation.
//!
//! Module map:
//! - [`numeric`]: kernels, losses, RNG
//! - [`data`]: ingestion, leave-one-out split, privacy simulation
//! - [`recmodel`]: embeddings, BPR, ranking metrics, checkpoints
//! - [`filters`]: attribute estimators and the privacy objective
//! - [`fedprotocol`]: client training, LDP uploads, server aggregation
//! - [`attack`]: attribute inference harness
//! - [`centralprotect`]: server-side post-hoc sanitisation
//! - [`experiment`]: configuration, pipelines, CSV artifacts

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod centralprotect;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fedprotocol;
pub mod filters;
pub mod numeric;
pub mod recmodel;

pub use attack::{AttackReport, MetricKind};
pub use data::{AttrMask, AttributeSchema, InteractionDataset, UserProfiles};
pub use error::{Error, Result};
pub use fedprotocol::{ClientUpdate, FedConfig, RoundMetrics, ServerState};
pub use filters::{AttributeFilter, PrivacyWeights};
pub use numeric::{Matrix, SimRng};
pub use recmodel::RecModel;
