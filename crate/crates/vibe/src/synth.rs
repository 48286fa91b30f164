//! Synthetic drifting corpora with planted structure.
//!
//! Every period mixes a fixed set of shared topics (tied to class labels and
//! stable over time) with its own period-exclusive topics. Documents carry
//! ground-truth period ids and topic mixtures, so disentanglement and
//! adaptation gains can be measured exactly.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::TimedDocument;
use crate::error::{Result, VibeError};
use crate::rng;

/// Generator parameters for one drifting corpus.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub vocab_size: usize,
    /// Label-linked topics present in every period; a document's label is
    /// its dominant shared topic.
    pub shared_topics: usize,
    /// Period-exclusive topics per period.
    pub period_topics: usize,
    pub periods: usize,
    pub docs_per_period: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Weight of the shared-topic block in each document's mixture.
    pub mix_shared: f64,
    /// Concentration of topic-word distributions; Dirichlet α = 1/sharpness.
    pub topic_sharpness: f64,
    /// Probability that a document's period-topic mass collapses onto the
    /// topic indexed by (label + period) mod period_topics, planting a
    /// label/period-topic co-occurrence that drifts across periods.
    pub label_period_corr: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            vocab_size: 500,
            shared_topics: 2,
            period_topics: 3,
            periods: 3,
            docs_per_period: 1000,
            doc_len_min: 20,
            doc_len_max: 40,
            mix_shared: 0.5,
            topic_sharpness: 20.0,
            label_period_corr: 0.0,
            seed: 0,
        }
    }
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("shared_topics", self.shared_topics),
            ("period_topics", self.period_topics),
            ("periods", self.periods),
            ("docs_per_period", self.docs_per_period),
            ("doc_len_min", self.doc_len_min),
            ("doc_len_max", self.doc_len_max),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(VibeError::InvalidInput(format!("{name} must be >= 1")));
            }
        }
        if self.doc_len_min > self.doc_len_max {
            return Err(VibeError::InvalidInput("doc_len_min > doc_len_max".into()));
        }
        if !(0.0 < self.mix_shared && self.mix_shared <= 1.0) {
            return Err(VibeError::InvalidInput("mix_shared must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.label_period_corr) {
            return Err(VibeError::InvalidInput("label_period_corr must be in [0, 1]".into()));
        }
        if self.topic_sharpness <= 0.0 {
            return Err(VibeError::InvalidInput("topic_sharpness must be > 0".into()));
        }
        Ok(())
    }
}

/// Ground truth for one generated document.
#[derive(Debug, Clone)]
pub struct DocTruth {
    pub id: String,
    pub period: usize,
    pub label: usize,
    /// Mixture over shared topics then the period's own topics.
    pub mixture: Vec<f64>,
}

/// A generated corpus plus its ground truth, in document order.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: Vec<TimedDocument>,
    pub truth: Vec<DocTruth>,
}

fn sample_dirichlet(rng: &mut impl Rng, dim: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma");
    let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let total: f64 = draws.iter().sum();
    for d in draws.iter_mut() {
        *d /= total;
    }
    draws
}

fn sample_categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let mut u: f64 = rng.gen_range(0.0..1.0);
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Generate the corpus: period by period, each document draws a shared-topic
/// mixture (label = dominant shared topic) and a period-topic mixture, then
/// samples tokens from `mix_shared·shared + (1−mix_shared)·period` word
/// distributions. Timestamps increase strictly across the whole corpus.
pub fn gen_corpus(spec: &DriftSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let v = spec.vocab_size;
    let alpha = 1.0 / spec.topic_sharpness;

    let mut topic_rng = rng::stream(spec.seed, "synth-topics");
    let shared_topics: Vec<Vec<f64>> =
        (0..spec.shared_topics).map(|_| sample_dirichlet(&mut topic_rng, v, alpha)).collect();
    let period_topics: Vec<Vec<Vec<f64>>> = (0..spec.periods)
        .map(|_| {
            (0..spec.period_topics).map(|_| sample_dirichlet(&mut topic_rng, v, alpha)).collect()
        })
        .collect();

    let mut docs = Vec::with_capacity(spec.periods * spec.docs_per_period);
    let mut truth = Vec::with_capacity(docs.capacity());
    for period in 0..spec.periods {
        let mut rng = rng::stream(spec.seed, &format!("synth-docs-p{period}"));
        for i in 0..spec.docs_per_period {
            let shared_mix = sample_dirichlet(&mut rng, spec.shared_topics, 1.0);
            let label = argmax(&shared_mix);
            let correlated = rng.gen_range(0.0..1.0) < spec.label_period_corr;
            let period_mix = if correlated {
                let mut m = vec![0.0; spec.period_topics];
                m[(label + period) % spec.period_topics] = 1.0;
                m
            } else {
                sample_dirichlet(&mut rng, spec.period_topics, 1.0)
            };

            let mut word_dist = vec![0.0; v];
            for (t, &w) in shared_mix.iter().enumerate() {
                let coeff = spec.mix_shared * w;
                for (word, &p) in shared_topics[t].iter().enumerate() {
                    word_dist[word] += coeff * p;
                }
            }
            for (t, &w) in period_mix.iter().enumerate() {
                let coeff = (1.0 - spec.mix_shared) * w;
                for (word, &p) in period_topics[period][t].iter().enumerate() {
                    word_dist[word] += coeff * p;
                }
            }

            let len = if spec.doc_len_min == spec.doc_len_max {
                spec.doc_len_min
            } else {
                rng.gen_range(spec.doc_len_min..=spec.doc_len_max)
            };
            let tokens: Vec<String> = (0..len)
                .map(|_| format!("w{:05}", sample_categorical(&mut rng, &word_dist)))
                .collect();

            let id = format!("p{period}-d{i:05}");
            let timestamp = (period * spec.docs_per_period + i) as i64 * 10;
            let mut doc = TimedDocument::new(id.clone(), tokens, timestamp);
            doc.label = Some(label);
            doc.period = Some(period);
            docs.push(doc);
            let mixture = shared_mix.iter().copied().chain(period_mix.iter().copied()).collect();
            truth.push(DocTruth { id, period, label, mixture });
        }
    }
    Ok(SyntheticCorpus { docs, truth })
}

/// Write the ground-truth sidecar: `doc_id  period  w0,w1,...` per line.
pub fn write_truth(path: &std::path::Path, truth: &[DocTruth]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in truth {
        let mix = t.mixture.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        writeln!(out, "{}\t{}\t{}", t.id, t.period, mix)?;
    }
    Ok(())
}

/// Multinomial logistic probe: fixed 200 full-batch gradient-descent
/// iterations on standardized features from a small seeded init.
fn linear_probe_accuracy(
    features: &[Array1<f64>],
    labels: &[usize],
    classes: usize,
    seed: u64,
) -> f64 {
    let n = features.len();
    let d = features[0].len();

    // Standardize per dimension.
    let mut mean = Array1::<f64>::zeros(d);
    for f in features {
        mean += f;
    }
    mean /= n as f64;
    let mut var = Array1::<f64>::zeros(d);
    for f in features {
        let diff = f - &mean;
        var += &(&diff * &diff);
    }
    var /= n as f64;
    let std = var.mapv(|v| v.sqrt().max(1e-9));
    let xs: Vec<Array1<f64>> = features.iter().map(|f| (f - &mean) / &std).collect();

    let mut init_rng = rng::stream(seed, "probe-init");
    let mut w = Array2::from_shape_fn((classes, d), |_| init_rng.gen_range(-0.01..0.01));
    let mut b = Array1::<f64>::zeros(classes);

    let lr = 1.0;
    for _ in 0..200 {
        let mut gw = Array2::<f64>::zeros((classes, d));
        let mut gb = Array1::<f64>::zeros(classes);
        for (x, &y) in xs.iter().zip(labels) {
            let probs = crate::ntm::linalg::softmax(&(w.dot(x) + &b));
            for c in 0..classes {
                let err = probs[c] - if c == y { 1.0 } else { 0.0 };
                gw.row_mut(c).scaled_add(err / n as f64, x);
                gb[c] += err / n as f64;
            }
        }
        w.scaled_add(-lr, &gw);
        b.scaled_add(-lr, &gb);
    }

    let correct = xs
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let logits = w.dot(*x) + &b;
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best == y
        })
        .count();
    correct as f64 / n as f64
}

/// Fit linear probes predicting the period id from variant-latent means and
/// from shared-latent means; returns (acc on variant latent, acc on shared
/// latent).
pub fn probe_disentanglement(
    variant_means: &[Array1<f64>],
    shared_means: &[Array1<f64>],
    periods: &[usize],
    seed: u64,
) -> Result<(f64, f64)> {
    if variant_means.len() != periods.len() || shared_means.len() != periods.len() {
        return Err(VibeError::DimensionMismatch("features vs period ids".into()));
    }
    if variant_means.is_empty() {
        return Err(VibeError::InvalidInput("empty probe input".into()));
    }
    let distinct = {
        let mut ps: Vec<usize> = periods.to_vec();
        ps.sort_unstable();
        ps.dedup();
        ps
    };
    if distinct.len() < 2 {
        return Err(VibeError::InvalidInput("probe needs at least 2 periods".into()));
    }
    let classes = *distinct.iter().max().expect("non-empty") + 1;
    let acc_variant = linear_probe_accuracy(variant_means, periods, classes, seed);
    let acc_shared = linear_probe_accuracy(shared_means, periods, classes, seed);
    Ok((acc_variant, acc_shared))
}
