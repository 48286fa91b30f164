//! The paired-document objective.
//!
//! For a past/future pair the model maximizes
//!
//! ```text
//! (1+λ)·ELBO + λ·KL[q(zˢ|x,y) ‖ p(zˢ)]
//!           − λ·( KL[q(zˢ|x,y) ‖ rˣ(zˢ|x)] + KL[q(zˢ|x,y) ‖ rʸ(zˢ|y)] )
//! ```
//!
//! where the ELBO is the usual reconstruction-minus-KL bound over all three
//! latents. Training minimizes the negation. Expanding the ELBO leaves a net
//! coefficient of −1 on the shared-latent prior KL; the λ-weighted
//! approximator KLs are what force the shared latent to be recoverable from
//! either view alone. This module computes the value, a per-term breakdown,
//! and exact analytic gradients under the reparameterization trick.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::BowVector;
use crate::error::{Result, VibeError};
use crate::ntm::linalg::SparseVec;
use crate::ntm::model::{
    bow_log_likelihood, reparameterize, DecoderCache, EncoderCache, LatentGaussian, VibeModel,
    LOG_LIKELIHOOD_EPS,
};

/// One standard-normal draw per latent variable.
#[derive(Debug, Clone)]
pub struct PairNoise {
    pub past: Array1<f64>,
    pub shared: Array1<f64>,
    pub future: Array1<f64>,
}

impl PairNoise {
    pub fn zeros(k: usize) -> Self {
        Self { past: Array1::zeros(k), shared: Array1::zeros(k), future: Array1::zeros(k) }
    }

    pub fn sample(rng: &mut impl Rng, k: usize) -> Self {
        let past = Array1::from_iter((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let shared = Array1::from_iter((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let future = Array1::from_iter((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Self { past, shared, future }
    }
}

/// Per-batch (or per-pair) values of every objective term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon_past: f64,
    pub recon_future: f64,
    pub kl_past: f64,
    pub kl_future: f64,
    pub kl_shared_prior: f64,
    pub kl_shared_past_approx: f64,
    pub kl_shared_future_approx: f64,
    pub elbo: f64,
    pub objective: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl LossBreakdown {
    pub fn assemble(
        recon_past: f64,
        recon_future: f64,
        kl_past: f64,
        kl_future: f64,
        kl_shared_prior: f64,
        kl_shared_past_approx: f64,
        kl_shared_future_approx: f64,
        lambda: f64,
    ) -> Self {
        let elbo = recon_past + recon_future - kl_past - kl_future - kl_shared_prior;
        let objective = (1.0 + lambda) * elbo + lambda * kl_shared_prior
            - lambda * (kl_shared_past_approx + kl_shared_future_approx);
        Self {
            recon_past,
            recon_future,
            kl_past,
            kl_future,
            kl_shared_prior,
            kl_shared_past_approx,
            kl_shared_future_approx,
            elbo,
            objective,
            lambda,
            mu: 0.0,
        }
    }

    /// Check the assembly identities and KL non-negativity.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let kls = [
            self.kl_past,
            self.kl_future,
            self.kl_shared_prior,
            self.kl_shared_past_approx,
            self.kl_shared_future_approx,
        ];
        if kls.iter().any(|&k| k < -1e-6 || !k.is_finite()) {
            return Err(VibeError::InvalidInput(format!("negative or non-finite KL: {kls:?}")));
        }
        let elbo = self.recon_past + self.recon_future
            - self.kl_past
            - self.kl_future
            - self.kl_shared_prior;
        if (elbo - self.elbo).abs() > tol {
            return Err(VibeError::InvalidInput(format!(
                "elbo identity violated: {} vs {}",
                elbo, self.elbo
            )));
        }
        let objective = (1.0 + self.lambda) * self.elbo + self.lambda * self.kl_shared_prior
            - self.lambda * (self.kl_shared_past_approx + self.kl_shared_future_approx);
        if (objective - self.objective).abs() > tol {
            return Err(VibeError::InvalidInput(format!(
                "objective identity violated: {} vs {}",
                objective, self.objective
            )));
        }
        Ok(())
    }

    /// Mean of several breakdowns (same λ).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for it in items {
            acc.recon_past += it.recon_past;
            acc.recon_future += it.recon_future;
            acc.kl_past += it.kl_past;
            acc.kl_future += it.kl_future;
            acc.kl_shared_prior += it.kl_shared_prior;
            acc.kl_shared_past_approx += it.kl_shared_past_approx;
            acc.kl_shared_future_approx += it.kl_shared_future_approx;
            acc.elbo += it.elbo;
            acc.objective += it.objective;
        }
        acc.recon_past /= n;
        acc.recon_future /= n;
        acc.kl_past /= n;
        acc.kl_future /= n;
        acc.kl_shared_prior /= n;
        acc.kl_shared_past_approx /= n;
        acc.kl_shared_future_approx /= n;
        acc.elbo /= n;
        acc.objective /= n;
        acc.lambda = items.first().map_or(0.0, |i| i.lambda);
        acc.mu = items.first().map_or(0.0, |i| i.mu);
        acc
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DrawCache {
    pub z_past: Array1<f64>,
    pub z_shared: Array1<f64>,
    pub z_future: Array1<f64>,
    pub dec_past: DecoderCache,
    pub dec_future: DecoderCache,
}

/// Everything retained from the forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub struct PairCache {
    pub(crate) enc_past: EncoderCache,
    pub(crate) q_past: LatentGaussian,
    pub(crate) enc_future: EncoderCache,
    pub(crate) q_future: LatentGaussian,
    pub(crate) enc_shared: EncoderCache,
    pub(crate) q_shared: LatentGaussian,
    pub(crate) approx_past: EncoderCache,
    pub(crate) r_past: LatentGaussian,
    pub(crate) approx_future: EncoderCache,
    pub(crate) r_future: LatentGaussian,
    pub(crate) draws: Vec<DrawCache>,
}

/// Forward pass retaining caches for [`objective_backward`].
pub fn objective_forward(
    model: &VibeModel,
    bow_past: &BowVector,
    bow_future: &BowVector,
    lambda: f64,
    noises: &[PairNoise],
) -> Result<(PairCache, LossBreakdown)> {
    if lambda < 0.0 {
        return Err(VibeError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if noises.is_empty() {
        return Err(VibeError::InvalidInput("need at least one noise draw".into()));
    }
    let (enc_past, q_past) = model.enc_past.forward(SparseVec::from_bow(bow_past));
    let (enc_future, q_future) = model.enc_future.forward(SparseVec::from_bow(bow_future));
    let (enc_shared, q_shared) = model
        .enc_shared
        .forward(SparseVec::from_bow_pair(bow_past, bow_future, model.vocab_size));
    let (approx_past, r_past) = model.approx_past.forward(SparseVec::from_bow(bow_past));
    let (approx_future, r_future) = model.approx_future.forward(SparseVec::from_bow(bow_future));

    let mut draws = Vec::with_capacity(noises.len());
    let mut recon_past = 0.0;
    let mut recon_future = 0.0;
    for noise in noises {
        let z_past = reparameterize(&q_past, &noise.past)?;
        let z_shared = reparameterize(&q_shared, &noise.shared)?;
        let z_future = reparameterize(&q_future, &noise.future)?;
        let dec_past = model.dec_past.forward(&z_past, &z_shared);
        let dec_future = model.dec_future.forward(&z_future, &z_shared);
        recon_past += bow_log_likelihood(bow_past, &dec_past.probs);
        recon_future += bow_log_likelihood(bow_future, &dec_future.probs);
        draws.push(DrawCache { z_past, z_shared, z_future, dec_past, dec_future });
    }
    let n = noises.len() as f64;
    recon_past /= n;
    recon_future /= n;

    let breakdown = LossBreakdown::assemble(
        recon_past,
        recon_future,
        q_past.kl_to_standard(),
        q_future.kl_to_standard(),
        q_shared.kl_to_standard(),
        q_shared.kl_to(&r_past)?,
        q_shared.kl_to(&r_future)?,
        lambda,
    );
    let cache = PairCache {
        enc_past,
        q_past,
        enc_future,
        q_future,
        enc_shared,
        q_shared,
        approx_past,
        r_past,
        approx_future,
        r_future,
        draws,
    };
    Ok((cache, breakdown))
}

/// Full objective with per-term breakdown; `lambda < 0` is rejected.
pub fn vibe_objective(
    model: &VibeModel,
    bow_past: &BowVector,
    bow_future: &BowVector,
    lambda: f64,
    noises: &[PairNoise],
) -> Result<LossBreakdown> {
    objective_forward(model, bow_past, bow_future, lambda, noises).map(|(_, b)| b)
}

/// ELBO-only breakdown (`objective == elbo`).
pub fn elbo_pair(
    model: &VibeModel,
    bow_past: &BowVector,
    bow_future: &BowVector,
    noises: &[PairNoise],
) -> Result<LossBreakdown> {
    vibe_objective(model, bow_past, bow_future, 0.0, noises)
}

/// d(recon)/d(logits) for `recon = Σ_w c_w ln(softmax(logits)_w + ε)`.
fn recon_logit_grad(bow: &SparseVec, probs: &Array1<f64>) -> Array1<f64> {
    let mut g_total = 0.0;
    let mut sparse_g = Vec::with_capacity(bow.0.len());
    for &(w, c) in &bow.0 {
        let p = probs[w];
        let g = c * p / (p + LOG_LIKELIHOOD_EPS);
        sparse_g.push((w, g));
        g_total += g;
    }
    let mut d = probs * (-g_total);
    for (w, g) in sparse_g {
        d[w] += g;
    }
    d
}

/// Accumulate `scale · ∂(−objective)/∂θ` into `grads` (a zeroed clone of the
/// model). The forward cache must come from [`objective_forward`] on the same
/// model and inputs.
pub fn objective_backward(
    model: &VibeModel,
    cache: &PairCache,
    lambda: f64,
    scale: f64,
    grads: &mut VibeModel,
) {
    let k = model.topics;
    let n_draws = cache.draws.len() as f64;
    let recon_coeff = -(1.0 + lambda) * scale / n_draws;

    let mut d_mean_past = Array1::zeros(k);
    let mut d_ls_past = Array1::zeros(k);
    let mut d_mean_shared = Array1::zeros(k);
    let mut d_ls_shared = Array1::zeros(k);
    let mut d_mean_future = Array1::zeros(k);
    let mut d_ls_future = Array1::zeros(k);

    for draw in &cache.draws {
        let mut d_logits_past = recon_logit_grad(&cache.enc_past.input, &draw.dec_past.probs);
        d_logits_past *= recon_coeff;
        let (dz_past, dz_shared_a) =
            model.dec_past.backward(&draw.dec_past, &d_logits_past, &mut grads.dec_past);

        let mut d_logits_future =
            recon_logit_grad(&cache.enc_future.input, &draw.dec_future.probs);
        d_logits_future *= recon_coeff;
        let (dz_future, dz_shared_b) =
            model.dec_future.backward(&draw.dec_future, &d_logits_future, &mut grads.dec_future);

        let dz_shared = dz_shared_a + dz_shared_b;

        // Reparameterization: z = μ + exp(log σ)·ε, so ∂z/∂logσ = z − μ.
        d_mean_past += &dz_past;
        d_ls_past += &(&dz_past * &(&draw.z_past - &cache.q_past.mean));
        d_mean_shared += &dz_shared;
        d_ls_shared += &(&dz_shared * &(&draw.z_shared - &cache.q_shared.mean));
        d_mean_future += &dz_future;
        d_ls_future += &(&dz_future * &(&draw.z_future - &cache.q_future.mean));
    }

    // Prior KLs on the variant latents enter the loss at weight (1+λ).
    let add_std_kl = |g: &LatentGaussian,
                      coeff: f64,
                      d_mean: &mut Array1<f64>,
                      d_ls: &mut Array1<f64>| {
        for i in 0..g.dim() {
            d_mean[i] += coeff * g.mean[i];
            d_ls[i] += coeff * ((2.0 * g.log_std[i]).exp() - 1.0);
        }
    };
    let c_variant = (1.0 + lambda) * scale;
    add_std_kl(&cache.q_past, c_variant, &mut d_mean_past, &mut d_ls_past);
    add_std_kl(&cache.q_future, c_variant, &mut d_mean_future, &mut d_ls_future);
    // Net weight on the shared prior KL after expanding the ELBO is +1.
    add_std_kl(&cache.q_shared, scale, &mut d_mean_shared, &mut d_ls_shared);

    // KL[q(zˢ|x,y) ‖ r] terms at weight λ, into both q and the approximator.
    let c_r = lambda * scale;
    let backprop_approx = |r: &LatentGaussian,
                               enc_cache: &EncoderCache,
                               enc: &crate::ntm::model::GaussianEncoder,
                               grad: &mut crate::ntm::model::GaussianEncoder,
                               d_mean_q: &mut Array1<f64>,
                               d_ls_q: &mut Array1<f64>| {
        let q = &cache.q_shared;
        let mut d_mean_r = Array1::zeros(k);
        let mut d_ls_r = Array1::zeros(k);
        for i in 0..k {
            let var_r = (2.0 * r.log_std[i]).exp();
            let var_q = (2.0 * q.log_std[i]).exp();
            let diff = q.mean[i] - r.mean[i];
            d_mean_q[i] += c_r * diff / var_r;
            d_ls_q[i] += c_r * (var_q / var_r - 1.0);
            d_mean_r[i] = -c_r * diff / var_r;
            d_ls_r[i] = c_r * (1.0 - (var_q + diff * diff) / var_r);
        }
        enc.backward(enc_cache, &d_mean_r, &d_ls_r, grad);
    };
    if lambda != 0.0 {
        backprop_approx(
            &cache.r_past,
            &cache.approx_past,
            &model.approx_past,
            &mut grads.approx_past,
            &mut d_mean_shared,
            &mut d_ls_shared,
        );
        backprop_approx(
            &cache.r_future,
            &cache.approx_future,
            &model.approx_future,
            &mut grads.approx_future,
            &mut d_mean_shared,
            &mut d_ls_shared,
        );
    }

    model.enc_past.backward(&cache.enc_past, &d_mean_past, &d_ls_past, &mut grads.enc_past);
    model
        .enc_future
        .backward(&cache.enc_future, &d_mean_future, &d_ls_future, &mut grads.enc_future);
    model
        .enc_shared
        .backward(&cache.enc_shared, &d_mean_shared, &d_ls_shared, &mut grads.enc_shared);
}

/// Convenience wrapper: gradients of the negated objective for one pair,
/// returned in a freshly zeroed model-shaped holder.
pub fn objective_gradients(
    model: &VibeModel,
    bow_past: &BowVector,
    bow_future: &BowVector,
    lambda: f64,
    noises: &[PairNoise],
) -> Result<(VibeModel, LossBreakdown)> {
    let (cache, breakdown) = objective_forward(model, bow_past, bow_future, lambda, noises)?;
    let mut grads = VibeModel::zeros(model.vocab_size, model.topics, model.hidden);
    objective_backward(model, &cache, lambda, 1.0, &mut grads);
    Ok((grads, breakdown))
}
