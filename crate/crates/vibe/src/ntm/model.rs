//! Model components: diagonal-Gaussian encoders, single-view approximators,
//! and topic decoders.

use ndarray::Array1;
use rand::Rng;

use crate::corpus::BowVector;
use crate::error::{Result, VibeError};
use crate::ntm::linalg::{
    relu, relu_backward, softmax, softmax_backward, Linear, SparseLinear, SparseVec,
};

/// Bound on encoder log standard deviations.
pub const LOG_STD_CLAMP: f64 = 8.0;

/// Default topic count per latent variable.
pub const DEFAULT_TOPICS: usize = 128;
/// Default MLP hidden width.
pub const DEFAULT_HIDDEN: usize = 2048;

/// Which time side of a pair an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Past,
    Future,
}

/// Diagonal Gaussian over the latent topic space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Array1<f64>,
    /// Clamped to `[-LOG_STD_CLAMP, LOG_STD_CLAMP]`.
    pub log_std: Array1<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        Self { mean: Array1::zeros(dim), log_std: Array1::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Closed-form KL divergence to another diagonal Gaussian, summed over
    /// coordinates.
    pub fn kl_to(&self, p: &LatentGaussian) -> Result<f64> {
        if self.dim() != p.dim() {
            return Err(VibeError::DimensionMismatch(format!(
                "kl: {} vs {}",
                self.dim(),
                p.dim()
            )));
        }
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (mq, lq) = (self.mean[i], self.log_std[i]);
            let (mp, lp) = (p.mean[i], p.log_std[i]);
            let vq = (2.0 * lq).exp();
            let vp = (2.0 * lp).exp();
            total += lp - lq + (vq + (mq - mp).powi(2)) / (2.0 * vp) - 0.5;
        }
        Ok(total)
    }

    /// KL to the standard normal prior.
    pub fn kl_to_standard(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (m, l) = (self.mean[i], self.log_std[i]);
            total += 0.5 * (m * m + (2.0 * l).exp() - 1.0) - l;
        }
        total
    }
}

/// `z = mean + exp(log_std) ⊙ noise`.
pub fn reparameterize(g: &LatentGaussian, noise: &Array1<f64>) -> Result<Array1<f64>> {
    if noise.len() != g.dim() {
        return Err(VibeError::DimensionMismatch(format!(
            "noise length {} vs latent dim {}",
            noise.len(),
            g.dim()
        )));
    }
    Ok(&g.mean + &(g.log_std.mapv(f64::exp) * noise))
}

/// Closed-form diagonal-Gaussian KL divergence (free-function form).
pub fn kl_diag_gaussian(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    q.kl_to(p)
}

/// Two-head MLP mapping a sparse input to Gaussian parameters:
/// `h = relu(W_h x + b_h)`, `mean = W_m h + b_m`,
/// `log_std = clamp(W_s h + b_s)`.
#[derive(Debug, Clone)]
pub struct GaussianEncoder {
    pub hidden: SparseLinear,
    pub mean: Linear,
    pub log_std: Linear,
}

/// Forward cache for one encoder application.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub input: SparseVec,
    pub h: Array1<f64>,
    pub log_std_raw: Array1<f64>,
}

impl GaussianEncoder {
    pub fn zeros(in_dim: usize, hidden_dim: usize, latent_dim: usize) -> Self {
        Self {
            hidden: SparseLinear::zeros(hidden_dim, in_dim),
            mean: Linear::zeros(latent_dim, hidden_dim),
            log_std: Linear::zeros(latent_dim, hidden_dim),
        }
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        self.hidden.init_uniform(rng);
        self.mean.init_uniform(rng);
        self.log_std.init_uniform(rng);
    }

    pub fn forward(&self, input: SparseVec) -> (EncoderCache, LatentGaussian) {
        let h = relu(&self.hidden.forward(&input));
        let mean = self.mean.forward(&h);
        let log_std_raw = self.log_std.forward(&h);
        let log_std = log_std_raw.mapv(|v| v.clamp(-LOG_STD_CLAMP, LOG_STD_CLAMP));
        (EncoderCache { input, h, log_std_raw }, LatentGaussian { mean, log_std })
    }

    pub fn gaussian(&self, input: SparseVec) -> LatentGaussian {
        self.forward(input).1
    }

    /// Backpropagate gradients w.r.t. the output Gaussian's mean and
    /// (clamped) log-std into the parameter mirror.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_mean: &Array1<f64>,
        d_log_std: &Array1<f64>,
        grad: &mut GaussianEncoder,
    ) {
        // The clamp saturates: no gradient outside the open interval.
        let mut d_raw = d_log_std.clone();
        for (d, &raw) in d_raw.iter_mut().zip(cache.log_std_raw.iter()) {
            if raw.abs() >= LOG_STD_CLAMP {
                *d = 0.0;
            }
        }
        let mut dh = self.mean.backward(&cache.h, d_mean, &mut grad.mean);
        dh += &self.log_std.backward(&cache.h, &d_raw, &mut grad.log_std);
        let dh_pre = relu_backward(&cache.h, &dh);
        self.hidden.backward(&cache.input, &dh_pre, &mut grad.hidden);
    }
}

/// Decoder from a (variant, shared) latent pair to a vocabulary
/// distribution. Each latent is softmaxed into a topic mixture, the mixtures
/// are concatenated, and a single linear layer produces vocabulary logits.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    pub mix_variant: Array1<f64>,
    pub mix_shared: Array1<f64>,
    pub probs: Array1<f64>,
}

impl Decoder {
    pub fn zeros(vocab: usize, latent_dim: usize) -> Self {
        Self { linear: Linear::zeros(vocab, 2 * latent_dim) }
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        self.linear.init_uniform(rng);
    }

    pub fn forward(&self, z_variant: &Array1<f64>, z_shared: &Array1<f64>) -> DecoderCache {
        let mix_variant = softmax(z_variant);
        let mix_shared = softmax(z_shared);
        let mut joined = Array1::zeros(mix_variant.len() + mix_shared.len());
        joined.slice_mut(ndarray::s![..mix_variant.len()]).assign(&mix_variant);
        joined.slice_mut(ndarray::s![mix_variant.len()..]).assign(&mix_shared);
        let probs = softmax(&self.linear.forward(&joined));
        DecoderCache { mix_variant, mix_shared, probs }
    }

    /// Backward from gradients w.r.t. the vocabulary logits. Returns
    /// gradients w.r.t. the two latent inputs.
    pub fn backward(
        &self,
        cache: &DecoderCache,
        d_logits: &Array1<f64>,
        grad: &mut Decoder,
    ) -> (Array1<f64>, Array1<f64>) {
        let k = cache.mix_variant.len();
        let mut joined = Array1::zeros(2 * k);
        joined.slice_mut(ndarray::s![..k]).assign(&cache.mix_variant);
        joined.slice_mut(ndarray::s![k..]).assign(&cache.mix_shared);
        let d_joined = self.linear.backward(&joined, d_logits, &mut grad.linear);
        let dz_variant =
            softmax_backward(&cache.mix_variant, &d_joined.slice(ndarray::s![..k]).to_owned());
        let dz_shared =
            softmax_backward(&cache.mix_shared, &d_joined.slice(ndarray::s![k..]).to_owned());
        (dz_variant, dz_shared)
    }
}

/// All trainable topic-model parameters: paired-view encoders for the three
/// latents, single-view approximators for the shared latent, and one decoder
/// per time side.
#[derive(Debug, Clone)]
pub struct VibeModel {
    pub vocab_size: usize,
    pub topics: usize,
    pub hidden: usize,
    pub enc_past: GaussianEncoder,
    pub enc_future: GaussianEncoder,
    pub enc_shared: GaussianEncoder,
    pub approx_past: GaussianEncoder,
    pub approx_future: GaussianEncoder,
    pub dec_past: Decoder,
    pub dec_future: Decoder,
}

impl VibeModel {
    pub fn zeros(vocab_size: usize, topics: usize, hidden: usize) -> Self {
        Self {
            vocab_size,
            topics,
            hidden,
            enc_past: GaussianEncoder::zeros(vocab_size, hidden, topics),
            enc_future: GaussianEncoder::zeros(vocab_size, hidden, topics),
            enc_shared: GaussianEncoder::zeros(2 * vocab_size, hidden, topics),
            approx_past: GaussianEncoder::zeros(vocab_size, hidden, topics),
            approx_future: GaussianEncoder::zeros(vocab_size, hidden, topics),
            dec_past: Decoder::zeros(vocab_size, topics),
            dec_future: Decoder::zeros(vocab_size, topics),
        }
    }

    pub fn encode_past(&self, bow: &BowVector) -> LatentGaussian {
        self.enc_past.gaussian(SparseVec::from_bow(bow))
    }

    pub fn encode_future(&self, bow: &BowVector) -> LatentGaussian {
        self.enc_future.gaussian(SparseVec::from_bow(bow))
    }

    pub fn encode_shared(&self, bow_past: &BowVector, bow_future: &BowVector) -> LatentGaussian {
        self.enc_shared.gaussian(SparseVec::from_bow_pair(bow_past, bow_future, self.vocab_size))
    }

    /// Single-view approximation of the shared latent from one document.
    pub fn approx_shared(&self, bow: &BowVector, side: Side) -> LatentGaussian {
        let enc = match side {
            Side::Past => &self.approx_past,
            Side::Future => &self.approx_future,
        };
        enc.gaussian(SparseVec::from_bow(bow))
    }

    pub fn decoder(&self, side: Side) -> &Decoder {
        match side {
            Side::Past => &self.dec_past,
            Side::Future => &self.dec_future,
        }
    }

    /// Vocabulary distribution decoded from a (variant, shared) latent pair.
    pub fn decode(
        &self,
        z_variant: &Array1<f64>,
        z_shared: &Array1<f64>,
        side: Side,
    ) -> Array1<f64> {
        self.decoder(side).forward(z_variant, z_shared).probs
    }
}

/// `Σ_w count_w · ln(probs_w + ε)` with `ε = 1e-10`.
pub const LOG_LIKELIHOOD_EPS: f64 = 1e-10;

pub fn bow_log_likelihood(bow: &BowVector, probs: &Array1<f64>) -> f64 {
    bow.iter().map(|(w, c)| f64::from(c) * (probs[w] + LOG_LIKELIHOOD_EPS).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    
    use rand_distr::StandardNormal;

    fn bow(entries: &[(usize, u32)]) -> BowVector {
        let mut b = BowVector::default();
        for &(i, c) in entries {
            b.add(i, c);
        }
        b
    }

    fn random_model(seed: u64, v: usize, k: usize, h: usize) -> VibeModel {
        let mut model = VibeModel::zeros(v, k, h);
        let mut r = rng::stream(seed, "test-model");
        model.enc_past.init_uniform(&mut r);
        model.enc_future.init_uniform(&mut r);
        model.enc_shared.init_uniform(&mut r);
        model.approx_past.init_uniform(&mut r);
        model.approx_future.init_uniform(&mut r);
        model.dec_past.init_uniform(&mut r);
        model.dec_future.init_uniform(&mut r);
        model
    }

    #[test]
    fn zero_model_encodes_zero_bow_to_zero_mean() {
        let model = VibeModel::zeros(6, 3, 4);
        let g = model.encode_past(&bow(&[]));
        assert_eq!(g.mean, Array1::<f64>::zeros(3));
        assert_eq!(g.log_std, Array1::<f64>::zeros(3));
        let gs = model.encode_shared(&bow(&[]), &bow(&[]));
        assert_eq!(gs.mean, Array1::<f64>::zeros(3));
        let ga = model.approx_shared(&bow(&[]), Side::Past);
        assert_eq!(ga.mean, Array1::<f64>::zeros(3));
    }

    #[test]
    fn encoders_are_deterministic_and_finite_on_large_counts() {
        let model = random_model(1, 8, 3, 5);
        let b = bow(&[(0, 10_000), (5, 3)]);
        let g1 = model.encode_past(&b);
        let g2 = model.encode_past(&b);
        assert_eq!(g1, g2);
        assert!(g1.mean.iter().all(|v| v.is_finite()));
        assert!(g1.log_std.iter().all(|v| v.is_finite()));
        assert!(g1.log_std.iter().all(|v| v.abs() <= LOG_STD_CLAMP));

        let gf = model.encode_future(&b);
        let gs = model.encode_shared(&b, &b);
        let ga = model.approx_shared(&b, Side::Future);
        for g in [&gf, &gs, &ga] {
            assert!(g.mean.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn past_encoder_ignores_every_other_component() {
        // The past posterior factor takes only the past document: perturbing
        // the shared encoder or approximators cannot move its output.
        let mut model = random_model(2, 8, 3, 5);
        let b = bow(&[(1, 2), (4, 1)]);
        let before = model.encode_past(&b);
        model.enc_shared.hidden.w_t.fill(7.0);
        model.approx_past.mean.b.fill(-3.0);
        model.dec_past.linear.w.fill(1.0);
        let after = model.encode_past(&b);
        assert_eq!(before, after);
    }

    #[test]
    fn reparameterize_identities() {
        let g = LatentGaussian { mean: array![1.0, -2.0], log_std: array![0.0, 0.0] };
        let z = reparameterize(&g, &array![0.0, 0.0]).unwrap();
        assert_eq!(z, g.mean);
        let z = reparameterize(&g, &array![0.5, -1.5]).unwrap();
        assert_eq!(z, array![1.5, -3.5]);
        assert!(reparameterize(&g, &array![0.0]).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let g = LatentGaussian { mean: array![0.7, -1.1], log_std: array![0.2, -0.4] };
        let n = 100_000;
        let mut rng = rng::stream(0, "reparam-mc");
        let mut sum = Array1::<f64>::zeros(2);
        for _ in 0..n {
            let noise = Array1::from_iter((0..2).map(|_| rng.sample::<f64, _>(StandardNormal)));
            sum += &reparameterize(&g, &noise).unwrap();
        }
        let mc = sum / n as f64;
        for i in 0..2 {
            let sigma = g.log_std[i].exp();
            let tol = 3.0 * sigma / (n as f64).sqrt();
            assert!((mc[i] - g.mean[i]).abs() < tol, "coord {i}: {} vs {}", mc[i], g.mean[i]);
        }
    }

    #[test]
    fn kl_closed_form_basics() {
        let q = LatentGaussian::standard(3);
        assert_eq!(q.kl_to(&q).unwrap(), 0.0);
        assert_eq!(q.kl_to_standard(), 0.0);

        let q = LatentGaussian { mean: array![1.0], log_std: array![0.0] };
        let p = LatentGaussian::standard(1);
        assert!((q.kl_to(&p).unwrap() - 0.5).abs() < 1e-12);
        assert!((q.kl_to_standard() - 0.5).abs() < 1e-12);

        assert!(q.kl_to(&LatentGaussian::standard(2)).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        let mut rng = rng::stream(3, "kl-mc");
        let dim = 3;
        let rand_gauss = |rng: &mut rand_chacha::ChaCha8Rng| LatentGaussian {
            mean: Array1::from_iter((0..dim).map(|_| rng.gen_range(-1.5..1.5))),
            log_std: Array1::from_iter((0..dim).map(|_| rng.gen_range(-0.7..0.7))),
        };
        let q = rand_gauss(&mut rng);
        let p = rand_gauss(&mut rng);
        let closed = q.kl_to(&p).unwrap();

        let log_pdf = |g: &LatentGaussian, z: &Array1<f64>| -> f64 {
            (0..dim)
                .map(|i| {
                    let s = g.log_std[i].exp();
                    let d = (z[i] - g.mean[i]) / s;
                    -0.5 * d * d - g.log_std[i] - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .sum()
        };
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let noise = Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = reparameterize(&q, &noise).unwrap();
            acc += log_pdf(&q, &z) - log_pdf(&p, &z);
        }
        let mc = acc / n as f64;
        assert!((mc - closed).abs() < 2e-2, "mc {mc} vs closed {closed}");
    }

    #[test]
    fn decode_is_uniform_for_zero_weights_and_always_a_distribution() {
        let model = VibeModel::zeros(5, 2, 3);
        let probs = model.decode(&array![0.3, -0.3], &array![1.0, 2.0], Side::Past);
        for &p in probs.iter() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let model = random_model(4, 5, 2, 3);
        let probs = model.decode(&array![10.0, -4.0], &array![0.0, 0.1], Side::Future);
        assert!((probs.sum() - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn decode_argmax_matches_hand_computation() {
        // V=4, K=2: mixtures are softmax([0,0]) = (.5,.5) on both halves, so
        // logits are the row means of each half; weights below make row 2 win.
        let mut model = VibeModel::zeros(4, 2, 3);
        model.dec_past.linear.w = array![
            [0.0, 0.0, 0.0, 0.0],
            [1.0, -1.0, 0.5, -0.5],
            [2.0, 2.0, 1.0, 1.0],
            [0.0, 1.0, 0.0, -1.0],
        ];
        let probs = model.decode(&array![0.0, 0.0], &array![0.0, 0.0], Side::Past);
        let logits_by_hand = [0.0, 0.0, 3.0, 0.0];
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
        let best = logits_by_hand.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(best, 3.0);
    }

    #[test]
    fn log_likelihood_values() {
        let probs = array![0.25, 0.25, 0.25, 0.25];
        assert_eq!(bow_log_likelihood(&bow(&[]), &probs), 0.0);
        let ll = bow_log_likelihood(&bow(&[(1, 1)]), &probs);
        assert!((ll - 0.25f64.ln()).abs() < 1e-8);
        let probs = array![0.5, 0.25, 0.125, 0.125];
        let ll = bow_log_likelihood(&bow(&[(0, 2), (1, 1)]), &probs);
        assert!((ll - (2.0 * 0.5f64.ln() + 0.25f64.ln())).abs() < 1e-8);
    }
}
