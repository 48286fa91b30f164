//! Evaluation: accuracy, kernel two-sample shift scores, the past-only
//! baseline, and report emission.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::{argmax_class, ClassifierHead, EmbeddingProvider};
use crate::corpus::BowVector;
use crate::error::{Result, VibeError};
use crate::ntm::linalg::softmax;
use crate::rng;
use crate::train::TrainConfig;

/// Fraction of exact matches between predictions and gold labels.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(VibeError::DimensionMismatch(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Err(VibeError::InvalidInput("empty prediction list".into()));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class precision and recall.
pub fn per_class_metrics(
    predictions: &[usize],
    gold: &[usize],
    classes: usize,
) -> Vec<(f64, f64)> {
    let mut tp = vec![0usize; classes];
    let mut pred_count = vec![0usize; classes];
    let mut gold_count = vec![0usize; classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        if p < classes {
            pred_count[p] += 1;
        }
        if g < classes {
            gold_count[g] += 1;
        }
        if p == g && p < classes {
            tp[p] += 1;
        }
    }
    (0..classes)
        .map(|c| {
            let precision = if pred_count[c] > 0 { tp[c] as f64 / pred_count[c] as f64 } else { 0.0 };
            let recall = if gold_count[c] > 0 { tp[c] as f64 / gold_count[c] as f64 } else { 0.0 };
            (precision, recall)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unbiased squared maximum mean discrepancy with an RBF kernel whose
/// bandwidth is the median pairwise distance over the pooled sample (the
/// median heuristic). Clamped at 0 from below for reporting.
pub fn mmd_rbf(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    if features_a.is_empty() || features_b.is_empty() {
        return Err(VibeError::InvalidInput("both samples must be non-empty".into()));
    }
    let dim = features_a[0].len();
    for f in features_a.iter().chain(features_b.iter()) {
        if f.len() != dim {
            return Err(VibeError::DimensionMismatch(format!(
                "feature dims {} vs {dim}",
                f.len()
            )));
        }
    }

    let pooled: Vec<&[f64]> =
        features_a.iter().map(|v| v.as_slice()).chain(features_b.iter().map(|v| v.as_slice())).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.is_empty() { 1.0 } else { dists[dists.len() / 2] };
    let bandwidth = if median > 0.0 { median } else { 1.0 };
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let kernel = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();

    let m = features_a.len();
    let n = features_b.len();
    let mut k_aa = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                k_aa += kernel(&features_a[i], &features_a[j]);
            }
        }
    }
    let mut k_bb = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                k_bb += kernel(&features_b[i], &features_b[j]);
            }
        }
    }
    let mut k_ab = 0.0;
    for fa in features_a {
        for fb in features_b {
            k_ab += kernel(fa, fb);
        }
    }
    let mmd2 = if m > 1 { k_aa / (m * (m - 1)) as f64 } else { 0.0 }
        + if n > 1 { k_bb / (n * (n - 1)) as f64 } else { 0.0 }
        - 2.0 * k_ab / (m * n) as f64;
    Ok(mmd2.max(0.0))
}

/// Embedding-bag + MLP classifier trained on past data only: the same
/// architecture family as the stage-one head minus the topic features.
#[derive(Debug, Clone)]
pub struct BaselineClassifier {
    pub provider: EmbeddingProvider,
    pub head: ClassifierHead,
}

impl BaselineClassifier {
    pub fn predict(&self, bow: &BowVector) -> usize {
        let embedding = self.provider.embed(bow);
        argmax_class(&softmax(&self.head.forward(embedding).1))
    }
}

/// Train the past-only baseline by cross-entropy with Adam.
pub fn past_only_baseline(
    train: &[(BowVector, usize)],
    vocab: usize,
    classes: usize,
    config: &TrainConfig,
) -> Result<BaselineClassifier> {
    if train.is_empty() {
        return Err(VibeError::InvalidInput("no baseline training data".into()));
    }
    let mut provider = EmbeddingProvider::zeros(vocab, config.embed_dim);
    let mut head = ClassifierHead::zeros(config.embed_dim, config.hidden, classes);
    let mut init = rng::stream(config.seed, "baseline-init");
    provider.init_uniform(&mut init);
    head.init_uniform(&mut init);

    // Local Adam over the two components (the full-state optimizer is not
    // needed for this two-piece model).
    let mut grad_provider = EmbeddingProvider::zeros(vocab, config.embed_dim);
    let mut grad_head = ClassifierHead::zeros(config.embed_dim, config.hidden, classes);
    let sizes = |p: &EmbeddingProvider, h: &ClassifierHead| {
        vec![p.table.len(), h.mlp.w.len(), h.mlp.b.len(), h.out.w.len(), h.out.b.len()]
    };
    let mut m: Vec<Vec<f64>> =
        sizes(&provider, &head).into_iter().map(|n| vec![0.0; n]).collect();
    let mut v: Vec<Vec<f64>> = m.clone();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut t = 0u64;

    let mut shuffle_rng = rng::stream(config.seed, "baseline-shuffle");
    let epochs = config.warmup_epochs + config.stage1_epochs;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            grad_provider.table.fill(0.0);
            grad_head.mlp.w.fill(0.0);
            grad_head.mlp.b.fill(0.0);
            grad_head.out.w.fill(0.0);
            grad_head.out.b.fill(0.0);
            let inv_b = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (bow, label) = &train[i];
                let embedding = provider.embed(bow);
                let (cache, logits) = head.forward(embedding);
                let probs = softmax(&logits);
                let mut d_logits = probs;
                d_logits[*label] -= 1.0;
                d_logits *= inv_b;
                let d_embed = head.backward(&cache, &d_logits, &mut grad_head);
                provider.backward(bow, &d_embed, &mut grad_provider);
            }
            t += 1;
            let bc1 = 1.0 - beta1.powi(t as i32);
            let bc2 = 1.0 - beta2.powi(t as i32);
            let params: Vec<&mut [f64]> = vec![
                provider.table.as_slice_mut().expect("layout"),
                head.mlp.w.as_slice_mut().expect("layout"),
                head.mlp.b.as_slice_mut().expect("layout"),
                head.out.w.as_slice_mut().expect("layout"),
                head.out.b.as_slice_mut().expect("layout"),
            ];
            let grads: Vec<&[f64]> = vec![
                grad_provider.table.as_slice().expect("layout"),
                grad_head.mlp.w.as_slice().expect("layout"),
                grad_head.mlp.b.as_slice().expect("layout"),
                grad_head.out.w.as_slice().expect("layout"),
                grad_head.out.b.as_slice().expect("layout"),
            ];
            for (idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
                let (ms, vs) = (&mut m[idx], &mut v[idx]);
                for i in 0..p.len() {
                    ms[i] = beta1 * ms[i] + (1.0 - beta1) * g[i];
                    vs[i] = beta2 * vs[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= config.learning_rate * (ms[i] / bc1) / ((vs[i] / bc2).sqrt() + eps);
                }
            }
        }
    }
    Ok(BaselineClassifier { provider, head })
}

/// Evaluation artifacts gathered into one serializable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Class id → (precision, recall).
    pub per_class: BTreeMap<String, (f64, f64)>,
    /// Named sample pairs → squared MMD.
    pub mmd_scores: BTreeMap<String, f64>,
    /// Named subset pairs → top-K vocabulary overlap percentage.
    pub vocab_overlaps: BTreeMap<String, f64>,
    /// Retrieval depth → accuracy, for the data-scale curve.
    pub accuracy_by_depth: BTreeMap<String, f64>,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(VibeError::InvalidInput(format!("accuracy {} out of [0,1]", self.accuracy)));
        }
        for (name, &score) in &self.mmd_scores {
            if score < -1e-9 {
                return Err(VibeError::InvalidInput(format!("mmd {name} is {score}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| VibeError::Parse(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| VibeError::Parse(e.to_string()))
    }
}

/// Write one named curve as `x,value` comma-separated rows.
pub fn write_curve(path: &Path, header: (&str, &str), rows: &[(String, f64)]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{},{}", header.0, header.1)?;
    for (x, y) in rows {
        writeln!(out, "{x},{y}")?;
    }
    Ok(())
}
