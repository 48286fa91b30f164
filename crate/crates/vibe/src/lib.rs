//! Temporally-adaptive text classification built on a disentangled neural
//! topic model.
//!
//! The library models a corpus that drifts over time. Paired past/future
//! documents are encoded into three latent topic variables — past-exclusive,
//! future-exclusive, and time-invariant — whose separation is enforced by
//! information-bottleneck regularizers on top of the usual variational
//! objective. The time-invariant latent then feeds a two-stage classifier:
//! stage one trains a task head on labeled past data and pseudo-labels
//! unlabeled future data; stage two projects reconstructed bag-of-words
//! features onto the unit sphere and trains task and timestamp heads jointly.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`corpus`]: ingestion, vocabulary, bag-of-words, temporal splits
//! - [`retrieval`]: TF-IDF / BM25 pairing of past docs with future docs
//! - [`ntm`]: the topic model, its objective, and hand-written gradients
//! - [`classify`]: embedding provider, classifier heads, sphere projection
//! - [`train`]: two-stage optimization, gradient checking, grid search
//! - [`synth`]: synthetic drifting corpora with planted ground truth
//! - [`eval`]: accuracy, MMD shift scores, baseline, report emission
//! - [`pipeline`]: glue that runs the stages end to end
//!
//! The `examples/` directory has one runnable program per capability; the
//! `vibe` binary exposes the same stages as subcommands.

pub mod classify;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod ntm;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Result, VibeError};
