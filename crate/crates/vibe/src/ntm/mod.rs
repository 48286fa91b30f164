//! The disentangled neural topic model.
//!
//! Three Gaussian encoders produce past-exclusive, future-exclusive, and
//! shared latents from a document pair; two single-view approximators
//! recover the shared latent from one side alone; two decoders map
//! softmaxed topic mixtures back to vocabulary distributions. The objective
//! combines the pair ELBO with bottleneck regularizers, and every gradient
//! is written out by hand (`objective_backward`) so finite differences can
//! audit the whole path.

pub mod info;
pub mod linalg;
pub mod model;
pub mod objective;

pub use info::interaction_information_discrete;
pub use model::{
    bow_log_likelihood, kl_diag_gaussian, reparameterize, Decoder, GaussianEncoder,
    LatentGaussian, Side, VibeModel, DEFAULT_HIDDEN, DEFAULT_TOPICS, LOG_STD_CLAMP,
};
pub use objective::{
    elbo_pair, objective_backward, objective_forward, objective_gradients, vibe_objective,
    LossBreakdown, PairCache, PairNoise,
};
