//! Classification on top of the topic model.
//!
//! Stage one predicts class labels for past documents from a fused feature:
//! the document embedding concatenated with the single-view shared-latent
//! mean. The trained head then pseudo-labels future documents. Stage two
//! projects [embedding ⧺ reconstructed BoW] onto the unit sphere and trains
//! task and timestamp heads on past + pseudo-labeled data jointly.

use ndarray::Array1;
use rand::Rng;

use crate::corpus::BowVector;
use crate::error::{Result, VibeError};
use crate::ntm::linalg::{relu, softmax, Linear, SparseVec};
use crate::ntm::model::{DecoderCache, EncoderCache, GaussianEncoder, Side, VibeModel};

/// Default learned embedding width.
pub const DEFAULT_EMBED_DIM: usize = 128;

/// Learned word-embedding table; a document embeds as the count-weighted
/// mean of its word vectors (zero vector for an empty bag).
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    pub table: ndarray::Array2<f64>,
}

impl EmbeddingProvider {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self { table: ndarray::Array2::zeros((vocab, dim)) }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let scale = 1.0 / (self.dim() as f64).sqrt();
        for v in self.table.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }

    pub fn embed(&self, bow: &BowVector) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        if bow.total() == 0 {
            return out;
        }
        let total = f64::from(bow.total());
        for (w, c) in bow.iter() {
            out.scaled_add(f64::from(c) / total, &self.table.row(w));
        }
        out
    }

    /// Accumulate dL/dtable for the count-weighted mean.
    pub fn backward(&self, bow: &BowVector, d_embed: &Array1<f64>, grad: &mut EmbeddingProvider) {
        if bow.total() == 0 {
            return;
        }
        let total = f64::from(bow.total());
        for (w, c) in bow.iter() {
            grad.table.row_mut(w).scaled_add(f64::from(c) / total, d_embed);
        }
    }
}

/// Count-weighted mean embedding (free-function form of the provider op).
pub fn embed(bow: &BowVector, provider: &EmbeddingProvider) -> Array1<f64> {
    provider.embed(bow)
}

/// ReLU MLP + linear output head.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub mlp: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub input: Array1<f64>,
    pub u: Array1<f64>,
}

impl ClassifierHead {
    pub fn zeros(in_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { mlp: Linear::zeros(hidden, in_dim), out: Linear::zeros(classes, hidden) }
    }

    pub fn classes(&self) -> usize {
        self.out.out_dim()
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        self.mlp.init_uniform(rng);
        self.out.init_uniform(rng);
    }

    /// `u = relu(W_mlp·x + b_mlp)`, logits `= W_out·u + b_out`.
    pub fn forward(&self, input: Array1<f64>) -> (HeadCache, Array1<f64>) {
        let u = relu(&self.mlp.forward(&input));
        let logits = self.out.forward(&u);
        (HeadCache { input, u }, logits)
    }

    pub fn predict_probs(&self, input: Array1<f64>) -> Array1<f64> {
        softmax(&self.forward(input).1)
    }

    /// Backward from dL/dlogits; returns dL/dinput.
    pub fn backward(
        &self,
        cache: &HeadCache,
        d_logits: &Array1<f64>,
        grad: &mut ClassifierHead,
    ) -> Array1<f64> {
        let du = self.out.backward(&cache.u, d_logits, &mut grad.out);
        let du_pre = crate::ntm::linalg::relu_backward(&cache.u, &du);
        self.mlp.backward(&cache.input, &du_pre, &mut grad.mlp)
    }
}

/// A future document with its stage-one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledDoc {
    pub id: String,
    pub pseudo_label: usize,
    /// Max softmax probability of the stage-one prediction.
    pub confidence: f64,
}

/// L2-normalized [embedding ⧺ reconstructed BoW] feature. A zero input maps
/// to the first basis vector so the unit-norm invariant always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFeature(pub Array1<f64>);

impl SphereFeature {
    pub fn from_raw(raw: Array1<f64>) -> Self {
        let norm = raw.dot(&raw).sqrt();
        if norm == 0.0 {
            let mut basis = Array1::zeros(raw.len().max(1));
            basis[0] = 1.0;
            return Self(basis);
        }
        Self(raw / norm)
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }
}

fn approx_encoder(model: &VibeModel, side: Side) -> &GaussianEncoder {
    match side {
        Side::Past => &model.approx_past,
        Side::Future => &model.approx_future,
    }
}

fn variant_encoder(model: &VibeModel, side: Side) -> &GaussianEncoder {
    match side {
        Side::Past => &model.enc_past,
        Side::Future => &model.enc_future,
    }
}

/// Concatenate the document embedding with the single-view shared-latent
/// mean for the given side.
fn fused_input(embedding: &Array1<f64>, shared_mean: &Array1<f64>) -> Array1<f64> {
    let mut fused = Array1::zeros(embedding.len() + shared_mean.len());
    fused.slice_mut(ndarray::s![..embedding.len()]).assign(embedding);
    fused.slice_mut(ndarray::s![embedding.len()..]).assign(shared_mean);
    fused
}

/// Stage-one fused feature `u`: the activated MLP layer over
/// [embedding ⧺ r(zˢ|doc).mean].
pub fn stage1_features(
    bow: &BowVector,
    model: &VibeModel,
    provider: &EmbeddingProvider,
    head: &ClassifierHead,
    side: Side,
) -> Array1<f64> {
    let shared = model.approx_shared(bow, side);
    let fused = fused_input(&provider.embed(bow), &shared.mean);
    head.forward(fused).0.u
}

/// Stage-one class distribution for a document.
pub fn stage1_predict(
    bow: &BowVector,
    model: &VibeModel,
    provider: &EmbeddingProvider,
    head: &ClassifierHead,
    side: Side,
) -> Array1<f64> {
    let shared = model.approx_shared(bow, side);
    let fused = fused_input(&provider.embed(bow), &shared.mean);
    head.predict_probs(fused)
}

/// Argmax with ties broken toward the lowest class id.
pub fn argmax_class(probs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of a softmax distribution against a gold class.
pub fn cross_entropy(probs: &Array1<f64>, label: usize) -> f64 {
    -(probs[label].max(1e-300)).ln()
}

/// Pseudo-label future documents with the trained stage-one head: argmax
/// label per document, no confidence filtering.
pub fn pseudo_label(
    docs: &[(String, BowVector)],
    model: &VibeModel,
    provider: &EmbeddingProvider,
    head: &ClassifierHead,
) -> Vec<PseudoLabeledDoc> {
    docs.iter()
        .map(|(id, bow)| {
            let probs = stage1_predict(bow, model, provider, head, Side::Future);
            let label = argmax_class(&probs);
            PseudoLabeledDoc { id: id.clone(), pseudo_label: label, confidence: probs[label] }
        })
        .collect()
}

/// Deterministic single-view reconstruction: decode the side's variant
/// posterior mean together with the side's approximator mean.
pub fn reconstruct_for_projection(
    bow: &BowVector,
    side: Side,
    model: &VibeModel,
) -> Array1<f64> {
    let variant = variant_encoder(model, side).gaussian(SparseVec::from_bow(bow));
    let shared = approx_encoder(model, side).gaussian(SparseVec::from_bow(bow));
    model.decode(&variant.mean, &shared.mean, side)
}

/// Unit-sphere projection of [embedding ⧺ reconstructed BoW].
pub fn sphere_project(
    bow: &BowVector,
    side: Side,
    model: &VibeModel,
    provider: &EmbeddingProvider,
) -> SphereFeature {
    let embedding = provider.embed(bow);
    let recon = reconstruct_for_projection(bow, side, model);
    let mut raw = Array1::zeros(embedding.len() + recon.len());
    raw.slice_mut(ndarray::s![..embedding.len()]).assign(&embedding);
    raw.slice_mut(ndarray::s![embedding.len()..]).assign(&recon);
    SphereFeature::from_raw(raw)
}

/// One stage-two training document.
#[derive(Debug, Clone)]
pub struct Stage2Item {
    pub bow: BowVector,
    pub side: Side,
    /// Gold label for past documents, pseudo-label for future ones.
    pub label: usize,
    pub time_bucket: usize,
    /// Overrides the learned provider when a precomputed embedding file is
    /// supplied.
    pub fixed_embedding: Option<Array1<f64>>,
}

/// Mean task and time cross-entropies over sphere features, and their sum.
pub fn stage2_losses(
    batch: &[Stage2Item],
    model: &VibeModel,
    provider: &EmbeddingProvider,
    head_task: &ClassifierHead,
    head_time: &ClassifierHead,
) -> Result<(f64, f64, f64)> {
    if batch.is_empty() {
        return Err(VibeError::InvalidInput("empty stage-2 batch".into()));
    }
    let mut l_task = 0.0;
    let mut l_time = 0.0;
    for item in batch {
        if item.label >= head_task.classes() {
            return Err(VibeError::InvalidInput(format!(
                "label {} out of range [0, {})",
                item.label,
                head_task.classes()
            )));
        }
        if item.time_bucket >= head_time.classes() {
            return Err(VibeError::InvalidInput(format!(
                "time bucket {} out of range [0, {})",
                item.time_bucket,
                head_time.classes()
            )));
        }
        let sphere = sphere_feature_for(item, model, provider);
        l_task += cross_entropy(&head_task.predict_probs(sphere.0.clone()), item.label);
        l_time += cross_entropy(&head_time.predict_probs(sphere.0), item.time_bucket);
    }
    let n = batch.len() as f64;
    l_task /= n;
    l_time /= n;
    Ok((l_task, l_time, l_task + l_time))
}

fn sphere_feature_for(
    item: &Stage2Item,
    model: &VibeModel,
    provider: &EmbeddingProvider,
) -> SphereFeature {
    let embedding = match &item.fixed_embedding {
        Some(e) => e.clone(),
        None => provider.embed(&item.bow),
    };
    let recon = reconstruct_for_projection(&item.bow, item.side, model);
    let mut raw = Array1::zeros(embedding.len() + recon.len());
    raw.slice_mut(ndarray::s![..embedding.len()]).assign(&embedding);
    raw.slice_mut(ndarray::s![embedding.len()..]).assign(&recon);
    SphereFeature::from_raw(raw)
}

/// Final prediction: argmax of the stage-two task head over the future-side
/// sphere projection; ties go to the lowest class id.
pub fn predict_final(
    bow: &BowVector,
    model: &VibeModel,
    provider: &EmbeddingProvider,
    head_task: &ClassifierHead,
) -> usize {
    let sphere = sphere_project(bow, Side::Future, model, provider);
    argmax_class(&head_task.predict_probs(sphere.0))
}

// ---------------------------------------------------------------------------
// Trainable bundle and gradient plumbing

/// Model dimensions needed to rebuild every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub topics: usize,
    pub hidden: usize,
    pub classes: usize,
    pub time_buckets: usize,
    pub embed: usize,
}

/// Every trainable parameter of the two-stage pipeline.
#[derive(Debug, Clone)]
pub struct VibeState {
    pub dims: Dims,
    pub model: VibeModel,
    pub provider: EmbeddingProvider,
    pub head_stage1: ClassifierHead,
    pub head_stage2_task: ClassifierHead,
    pub head_stage2_time: ClassifierHead,
}

impl VibeState {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            model: VibeModel::zeros(dims.vocab, dims.topics, dims.hidden),
            provider: EmbeddingProvider::zeros(dims.vocab, dims.embed),
            head_stage1: ClassifierHead::zeros(dims.embed + dims.topics, dims.hidden, dims.classes),
            head_stage2_task: ClassifierHead::zeros(
                dims.embed + dims.vocab,
                dims.hidden,
                dims.classes,
            ),
            head_stage2_time: ClassifierHead::zeros(
                dims.embed + dims.vocab,
                dims.hidden,
                dims.time_buckets,
            ),
        }
    }

    /// Same shapes, all zeros: the gradient / optimizer-state holder.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }
}

/// Cache for one stage-one classification forward pass.
pub struct Stage1ClassCache {
    pub bow: BowVector,
    pub fixed_embedding: bool,
    pub enc: EncoderCache,
    pub head: HeadCache,
    pub probs: Array1<f64>,
}

/// Forward pass of the stage-one classifier retaining what backward needs.
pub fn stage1_class_forward(
    bow: &BowVector,
    fixed_embedding: Option<&Array1<f64>>,
    state: &VibeState,
    side: Side,
) -> Stage1ClassCache {
    let enc = approx_encoder(&state.model, side);
    let (enc_cache, shared) = enc.forward(SparseVec::from_bow(bow));
    let embedding = match fixed_embedding {
        Some(e) => e.clone(),
        None => state.provider.embed(bow),
    };
    let fused = fused_input(&embedding, &shared.mean);
    let (head_cache, logits) = state.head_stage1.forward(fused);
    Stage1ClassCache {
        bow: bow.clone(),
        fixed_embedding: fixed_embedding.is_some(),
        enc: enc_cache,
        head: head_cache,
        probs: softmax(&logits),
    }
}

/// Backward for the stage-one cross-entropy: `scale · ∂CE/∂θ` into `grads`.
pub fn stage1_class_backward(
    cache: &Stage1ClassCache,
    label: usize,
    side: Side,
    state: &VibeState,
    scale: f64,
    grads: &mut VibeState,
) {
    let mut d_logits = cache.probs.clone();
    d_logits[label] -= 1.0;
    d_logits *= scale;
    let d_fused = state.head_stage1.backward(&cache.head, &d_logits, &mut grads.head_stage1);

    let e = state.dims.embed;
    let d_embed = d_fused.slice(ndarray::s![..e]).to_owned();
    let d_shared_mean = d_fused.slice(ndarray::s![e..]).to_owned();
    if !cache.fixed_embedding {
        state.provider.backward(&cache.bow, &d_embed, &mut grads.provider);
    }
    let zeros = Array1::zeros(d_shared_mean.len());
    let (enc, grad_enc) = match side {
        Side::Past => (&state.model.approx_past, &mut grads.model.approx_past),
        Side::Future => (&state.model.approx_future, &mut grads.model.approx_future),
    };
    enc.backward(&cache.enc, &d_shared_mean, &zeros, grad_enc);
}

/// Cache for one stage-two item.
pub struct Stage2Cache {
    pub raw: Array1<f64>,
    pub sphere: Array1<f64>,
    pub enc_variant: EncoderCache,
    pub enc_shared: EncoderCache,
    pub dec: DecoderCache,
    pub head_task: HeadCache,
    pub probs_task: Array1<f64>,
    pub head_time: HeadCache,
    pub probs_time: Array1<f64>,
}

pub fn stage2_forward(item: &Stage2Item, state: &VibeState) -> Stage2Cache {
    let model = &state.model;
    let (enc_variant, variant) =
        variant_encoder(model, item.side).forward(SparseVec::from_bow(&item.bow));
    let (enc_shared, shared) =
        approx_encoder(model, item.side).forward(SparseVec::from_bow(&item.bow));
    let dec = model.decoder(item.side).forward(&variant.mean, &shared.mean);
    let embedding = match &item.fixed_embedding {
        Some(e) => e.clone(),
        None => state.provider.embed(&item.bow),
    };
    let mut raw = Array1::zeros(embedding.len() + dec.probs.len());
    raw.slice_mut(ndarray::s![..embedding.len()]).assign(&embedding);
    raw.slice_mut(ndarray::s![embedding.len()..]).assign(&dec.probs);
    let sphere = SphereFeature::from_raw(raw.clone()).0;

    let (head_task, logits_task) = state.head_stage2_task.forward(sphere.clone());
    let (head_time, logits_time) = state.head_stage2_time.forward(sphere.clone());
    Stage2Cache {
        raw,
        sphere,
        enc_variant,
        enc_shared,
        dec,
        head_task,
        probs_task: softmax(&logits_task),
        head_time,
        probs_time: softmax(&logits_time),
    }
}

/// Backward for one stage-two item. When `update_all` is false only the two
/// heads receive gradients; otherwise the gradient flows through the sphere
/// normalization into the provider, decoder, and encoder means.
#[allow(clippy::too_many_arguments)]
pub fn stage2_backward(
    item: &Stage2Item,
    cache: &Stage2Cache,
    state: &VibeState,
    scale: f64,
    update_all: bool,
    grads: &mut VibeState,
) {
    let mut d_task = cache.probs_task.clone();
    d_task[item.label] -= 1.0;
    d_task *= scale;
    let mut d_sphere =
        state.head_stage2_task.backward(&cache.head_task, &d_task, &mut grads.head_stage2_task);

    let mut d_time = cache.probs_time.clone();
    d_time[item.time_bucket] -= 1.0;
    d_time *= scale;
    d_sphere += &state.head_stage2_time.backward(
        &cache.head_time,
        &d_time,
        &mut grads.head_stage2_time,
    );

    if !update_all {
        return;
    }

    // Through the normalization y = v / ‖v‖: dv = (dy − y·(dy·y)) / ‖v‖.
    let norm = cache.raw.dot(&cache.raw).sqrt();
    if norm == 0.0 {
        return; // basis-vector fallback is constant
    }
    let dot = d_sphere.dot(&cache.sphere);
    let d_raw = (&d_sphere - &(&cache.sphere * dot)) / norm;

    let e = state.dims.embed;
    let d_embed = d_raw.slice(ndarray::s![..e]).to_owned();
    let d_recon = d_raw.slice(ndarray::s![e..]).to_owned();
    if item.fixed_embedding.is_none() {
        state.provider.backward(&item.bow, &d_embed, &mut grads.provider);
    }

    // Reconstruction is softmax(logits); convert dL/dprobs to dL/dlogits.
    let d_logits = crate::ntm::linalg::softmax_backward(&cache.dec.probs, &d_recon);
    let (dec, grad_dec) = match item.side {
        Side::Past => (&state.model.dec_past, &mut grads.model.dec_past),
        Side::Future => (&state.model.dec_future, &mut grads.model.dec_future),
    };
    let (d_mean_variant, d_mean_shared) = dec.backward(&cache.dec, &d_logits, grad_dec);

    let zeros = Array1::zeros(d_mean_variant.len());
    let (enc_v, grad_v) = match item.side {
        Side::Past => (&state.model.enc_past, &mut grads.model.enc_past),
        Side::Future => (&state.model.enc_future, &mut grads.model.enc_future),
    };
    enc_v.backward(&cache.enc_variant, &d_mean_variant, &zeros, grad_v);
    let (enc_s, grad_s) = match item.side {
        Side::Past => (&state.model.approx_past, &mut grads.model.approx_past),
        Side::Future => (&state.model.approx_future, &mut grads.model.approx_future),
    };
    enc_s.backward(&cache.enc_shared, &d_mean_shared, &zeros, grad_s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn bow(entries: &[(usize, u32)]) -> BowVector {
        let mut b = BowVector::default();
        for &(i, c) in entries {
            b.add(i, c);
        }
        b
    }

    fn random_state(seed: u64, dims: Dims) -> VibeState {
        let mut state = VibeState::zeros(dims);
        let mut r = rng::stream(seed, "classify-test");
        state.model.enc_past.init_uniform(&mut r);
        state.model.enc_future.init_uniform(&mut r);
        state.model.enc_shared.init_uniform(&mut r);
        state.model.approx_past.init_uniform(&mut r);
        state.model.approx_future.init_uniform(&mut r);
        state.model.dec_past.init_uniform(&mut r);
        state.model.dec_future.init_uniform(&mut r);
        state.provider.init_uniform(&mut r);
        state.head_stage1.init_uniform(&mut r);
        state.head_stage2_task.init_uniform(&mut r);
        state.head_stage2_time.init_uniform(&mut r);
        state
    }

    fn dims() -> Dims {
        Dims { vocab: 6, topics: 3, hidden: 4, classes: 3, time_buckets: 2, embed: 2 }
    }

    #[test]
    fn embedding_is_count_weighted_mean() {
        let mut provider = EmbeddingProvider::zeros(3, 2);
        provider.table = array![[1.0, 0.0], [0.0, 2.0], [4.0, 4.0]];
        assert_eq!(provider.embed(&bow(&[])), array![0.0, 0.0]);
        assert_eq!(provider.embed(&bow(&[(2, 1)])), array![4.0, 4.0]);
        assert_eq!(provider.embed(&bow(&[(0, 1), (1, 1)])), array![0.5, 1.0]);
        assert_eq!(provider.embed(&bow(&[(0, 2), (1, 2)])), array![0.5, 1.0]);
    }

    #[test]
    fn zero_weights_give_zero_features_and_uniform_predictions() {
        let state = VibeState::zeros(dims());
        let b = bow(&[(0, 1), (3, 2)]);
        let u = stage1_features(&b, &state.model, &state.provider, &state.head_stage1, Side::Past);
        assert!(u.iter().all(|&v| v == 0.0));
        let probs =
            stage1_predict(&b, &state.model, &state.provider, &state.head_stage1, Side::Past);
        for &p in probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stage1_features_match_hand_arithmetic_on_a_toy() {
        // One word, embed dim 1, one topic, hidden 1: everything is scalar.
        let d = Dims { vocab: 1, topics: 1, hidden: 1, classes: 2, time_buckets: 2, embed: 1 };
        let mut state = VibeState::zeros(d);
        state.provider.table[[0, 0]] = 3.0;
        state.model.approx_past.mean.b[0] = 0.5; // shared mean = 0.5 for any input
        state.head_stage1.mlp.w = array![[2.0, 4.0]];
        state.head_stage1.mlp.b = array![-1.0];
        // fused = [3.0, 0.5] → pre = 2·3 + 4·0.5 − 1 = 7 → relu = 7.
        let u = stage1_features(
            &bow(&[(0, 1)]),
            &state.model,
            &state.provider,
            &state.head_stage1,
            Side::Past,
        );
        assert!((u[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn stage1_predict_is_a_distribution_and_deterministic() {
        let state = random_state(3, dims());
        let b = bow(&[(1, 2), (5, 1)]);
        let p1 = stage1_predict(&b, &state.model, &state.provider, &state.head_stage1, Side::Past);
        let p2 = stage1_predict(&b, &state.model, &state.provider, &state.head_stage1, Side::Past);
        assert_eq!(p1, p2);
        assert!((p1.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pseudo_labels_break_ties_low_and_preserve_count() {
        let state = VibeState::zeros(dims()); // uniform predictions
        let docs = vec![
            ("a".to_string(), bow(&[(0, 1)])),
            ("b".to_string(), bow(&[(1, 1)])),
            ("c".to_string(), bow(&[])),
        ];
        let out = pseudo_label(&docs, &state.model, &state.provider, &state.head_stage1);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|p| p.pseudo_label == 0));
        assert!(out.iter().all(|p| (p.confidence - 1.0 / 3.0).abs() < 1e-12));

        let state = random_state(4, dims());
        let a = pseudo_label(&docs, &state.model, &state.provider, &state.head_stage1);
        let b = pseudo_label(&docs, &state.model, &state.provider, &state.head_stage1);
        assert_eq!(a, b, "pseudo-labeling is idempotent");
    }

    #[test]
    fn argmax_reads_probabilities() {
        assert_eq!(argmax_class(&array![0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_class(&array![0.4, 0.4, 0.2]), 0);
    }

    #[test]
    fn reconstruction_is_uniform_for_zero_weights_and_valid_generally() {
        let state = VibeState::zeros(dims());
        let probs = reconstruct_for_projection(&bow(&[(0, 1)]), Side::Past, &state.model);
        for &p in probs.iter() {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
        let state = random_state(5, dims());
        let probs = reconstruct_for_projection(&bow(&[(2, 3)]), Side::Future, &state.model);
        assert!((probs.sum() - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn sphere_features_are_unit_norm_with_basis_fallback() {
        let state = random_state(6, dims());
        let s = sphere_project(&bow(&[(0, 2), (4, 1)]), Side::Past, &state.model, &state.provider);
        assert!((s.norm() - 1.0).abs() < 1e-9);

        // Scaling the embedding table changes direction only; norm stays 1.
        let mut scaled = state.clone();
        scaled.provider.table *= 37.0;
        let s2 =
            sphere_project(&bow(&[(0, 2), (4, 1)]), Side::Past, &scaled.model, &scaled.provider);
        assert!((s2.norm() - 1.0).abs() < 1e-9);

        let zero = SphereFeature::from_raw(Array1::zeros(4));
        assert_eq!(zero.0, array![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sphere_projection_matches_hand_normalization() {
        let raw = array![3.0, 0.0, 4.0];
        let s = SphereFeature::from_raw(raw);
        assert_eq!(s.0, array![0.6, 0.0, 0.8]);
    }

    #[test]
    fn stage2_losses_decompose_and_validate_ranges() {
        let state = random_state(7, dims());
        let items = vec![
            Stage2Item {
                bow: bow(&[(0, 1), (2, 1)]),
                side: Side::Past,
                label: 1,
                time_bucket: 0,
                fixed_embedding: None,
            },
            Stage2Item {
                bow: bow(&[(3, 2)]),
                side: Side::Future,
                label: 2,
                time_bucket: 1,
                fixed_embedding: None,
            },
        ];
        let (task, time, sphere) = stage2_losses(
            &items,
            &state.model,
            &state.provider,
            &state.head_stage2_task,
            &state.head_stage2_time,
        )
        .unwrap();
        assert_eq!(sphere, task + time);

        let mut bad = items.clone();
        bad[0].label = 99;
        assert!(stage2_losses(
            &bad,
            &state.model,
            &state.provider,
            &state.head_stage2_task,
            &state.head_stage2_time
        )
        .is_err());
        let mut bad = items;
        bad[1].time_bucket = 5;
        assert!(stage2_losses(
            &bad,
            &state.model,
            &state.provider,
            &state.head_stage2_task,
            &state.head_stage2_time
        )
        .is_err());
    }

    #[test]
    fn near_perfect_heads_drive_stage2_loss_to_zero() {
        let d = dims();
        let mut state = VibeState::zeros(d);
        // Make both heads output a huge logit for class/bucket 0 via biases.
        state.head_stage2_task.out.b[0] = 60.0;
        state.head_stage2_time.out.b[0] = 60.0;
        let items = vec![Stage2Item {
            bow: bow(&[(1, 1)]),
            side: Side::Past,
            label: 0,
            time_bucket: 0,
            fixed_embedding: None,
        }];
        let (task, time, sphere) = stage2_losses(
            &items,
            &state.model,
            &state.provider,
            &state.head_stage2_task,
            &state.head_stage2_time,
        )
        .unwrap();
        assert!(task < 1e-12 && time < 1e-12 && sphere < 1e-12);
    }

    #[test]
    fn final_prediction_is_temperature_invariant_and_matches_external_argmax() {
        let state = random_state(8, dims());
        let b = bow(&[(0, 1), (1, 1), (2, 1)]);
        let pred = predict_final(&b, &state.model, &state.provider, &state.head_stage2_task);

        let sphere = sphere_project(&b, Side::Future, &state.model, &state.provider);
        let probs = state.head_stage2_task.predict_probs(sphere.0);
        assert_eq!(pred, argmax_class(&probs));

        for c in [0.5, 2.0, 13.0] {
            let mut scaled = state.clone();
            scaled.head_stage2_task.out.w *= c;
            scaled.head_stage2_task.out.b *= c;
            let pred_scaled =
                predict_final(&b, &scaled.model, &scaled.provider, &scaled.head_stage2_task);
            assert_eq!(pred, pred_scaled);
        }

        let uniform = VibeState::zeros(dims());
        assert_eq!(
            predict_final(&b, &uniform.model, &uniform.provider, &uniform.head_stage2_task),
            0
        );
    }
}
