//! End-to-end orchestration: vocabulary derivation, sample assembly, the
//! two-stage schedule, probing, and evaluation over a split corpus.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array1;

use crate::classify::{
    predict_final, pseudo_label, sphere_project, PseudoLabeledDoc, VibeState,
};
use crate::corpus::{
    build_vocabulary, temporal_split, to_bow, BowVector, SplitMode, SplitSpec, TimedDocument,
    Vocabulary,
};
use crate::error::{Result, VibeError};
use crate::eval::{accuracy, past_only_baseline, BaselineClassifier};
use crate::ntm::model::Side;
use crate::retrieval::{build_index, pair_training_set, PairedSample, Scheme};
use crate::synth::{gen_corpus, probe_disentanglement, DriftSpec};
use crate::train::{
    init_state, train_stage1, train_stage2, Stage1Sample, StepRecord, TrainConfig,
};

/// Index documents by id.
pub fn doc_index(docs: &[TimedDocument]) -> HashMap<&str, &TimedDocument> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

fn lookup<'a>(
    index: &HashMap<&str, &'a TimedDocument>,
    id: &str,
) -> Result<&'a TimedDocument> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| VibeError::InvalidInput(format!("unknown document id {id:?}")))
}

/// Vocabulary over the documents the model may see during training: the
/// train segment plus the golden adaptive pool. Deterministic, so training
/// and later evaluation re-derive the same mapping from (data, split).
pub fn derive_vocabulary(
    docs: &[TimedDocument],
    split: &SplitSpec,
    max_size: usize,
) -> Result<Vocabulary> {
    let index = doc_index(docs);
    let mut pool: Vec<TimedDocument> = Vec::new();
    for id in split.train.iter().chain(&split.golden_adaptive) {
        pool.push(lookup(&index, id)?.clone());
    }
    build_vocabulary(&pool, max_size)
}

/// Precomputed document embeddings: `doc_id<TAB>v0,v1,...` or
/// `doc_id<TAB>v0<TAB>v1...` per line.
#[derive(Debug, Clone, Default)]
pub struct DocEmbeddings {
    pub map: BTreeMap<String, Array1<f64>>,
    pub dim: usize,
}

impl DocEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        let mut dim = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields
                .next()
                .ok_or_else(|| VibeError::Parse(format!("line {}: empty", lineno + 1)))?;
            let rest: Vec<&str> = fields.collect();
            let values: Vec<f64> = if rest.len() == 1 && rest[0].contains(',') {
                rest[0]
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|e| VibeError::Parse(format!("line {}: {e}", lineno + 1)))
                    })
                    .collect::<Result<_>>()?
            } else {
                rest.iter()
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|e| VibeError::Parse(format!("line {}: {e}", lineno + 1)))
                    })
                    .collect::<Result<_>>()?
            };
            if values.is_empty() {
                return Err(VibeError::Parse(format!("line {}: no embedding values", lineno + 1)));
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(VibeError::DimensionMismatch(format!(
                    "embedding width {} vs {dim} at line {}",
                    values.len(),
                    lineno + 1
                )));
            }
            map.insert(id.to_string(), Array1::from_vec(values));
        }
        Ok(Self { map, dim })
    }

    pub fn get(&self, id: &str) -> Option<Array1<f64>> {
        self.map.get(id).cloned()
    }
}

/// Assemble stage-one samples from retrieval pairs: the past document's bag
/// and label with the retrieved future document's bag.
pub fn build_stage1_samples(
    docs: &[TimedDocument],
    pairs: &[PairedSample],
    vocab: &Vocabulary,
    embeddings: Option<&DocEmbeddings>,
) -> Result<Vec<Stage1Sample>> {
    let index = doc_index(docs);
    let mut bow_cache: HashMap<&str, BowVector> = HashMap::new();
    let mut samples = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let past = lookup(&index, &pair.past)?;
        let future = lookup(&index, &pair.future)?;
        let label = past.label.ok_or_else(|| {
            VibeError::InvalidInput(format!("training document {:?} has no label", past.id))
        })?;
        let bow_past = bow_cache
            .entry(past.id.as_str())
            .or_insert_with(|| to_bow(past, vocab))
            .clone();
        let bow_future =
            bow_cache.entry(future.id.as_str()).or_insert_with(|| to_bow(future, vocab)).clone();
        let fixed_embedding = match embeddings {
            Some(e) => Some(e.get(&past.id).ok_or_else(|| {
                VibeError::InvalidInput(format!("no precomputed embedding for {:?}", past.id))
            })?),
            None => None,
        };
        samples.push(Stage1Sample { bow_past, label, bow_future, fixed_embedding });
    }
    Ok(samples)
}

/// The adaptive-pool documents as (id, bag) rows for pseudo-labeling.
pub fn adaptive_bows(
    docs: &[TimedDocument],
    split: &SplitSpec,
    vocab: &Vocabulary,
) -> Result<Vec<(String, BowVector)>> {
    let index = doc_index(docs);
    split
        .golden_adaptive
        .iter()
        .map(|id| lookup(&index, id).map(|d| (d.id.clone(), to_bow(d, vocab))))
        .collect()
}

/// Time-bucket assignment for stage two. With two buckets, train documents
/// are bucket 0 and adaptive documents bucket 1; with more, buckets are
/// equal-frequency quantiles of the pooled timestamps.
fn assign_buckets(
    train: &[&TimedDocument],
    adaptive: &[&TimedDocument],
    buckets: usize,
) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    if buckets == 2 {
        for d in train {
            out.insert(d.id.clone(), 0);
        }
        for d in adaptive {
            out.insert(d.id.clone(), 1);
        }
        return out;
    }
    let mut all: Vec<(&str, i64)> = train
        .iter()
        .chain(adaptive.iter())
        .map(|d| (d.id.as_str(), d.timestamp))
        .collect();
    all.sort_by_key(|&(_, t)| t);
    let n = all.len();
    for (rank, (id, _)) in all.into_iter().enumerate() {
        let bucket = (rank * buckets / n).min(buckets - 1);
        out.insert(id.to_string(), bucket);
    }
    out
}

/// Stage-two training set: labeled train documents plus pseudo-labeled
/// adaptive documents, with per-document time buckets.
pub fn build_stage2_items(
    docs: &[TimedDocument],
    split: &SplitSpec,
    pseudo: &[PseudoLabeledDoc],
    vocab: &Vocabulary,
    time_buckets: usize,
    embeddings: Option<&DocEmbeddings>,
) -> Result<Vec<crate::classify::Stage2Item>> {
    let index = doc_index(docs);
    let train_docs: Vec<&TimedDocument> =
        split.train.iter().map(|id| lookup(&index, id)).collect::<Result<_>>()?;
    let adaptive_docs: Vec<&TimedDocument> =
        pseudo.iter().map(|p| lookup(&index, &p.id)).collect::<Result<_>>()?;
    let buckets = assign_buckets(&train_docs, &adaptive_docs, time_buckets);

    let embed_for = |id: &str| -> Result<Option<Array1<f64>>> {
        match embeddings {
            Some(e) => e
                .get(id)
                .map(Some)
                .ok_or_else(|| {
                    VibeError::InvalidInput(format!("no precomputed embedding for {id:?}"))
                }),
            None => Ok(None),
        }
    };

    let mut items = Vec::with_capacity(train_docs.len() + adaptive_docs.len());
    for doc in &train_docs {
        let label = doc.label.ok_or_else(|| {
            VibeError::InvalidInput(format!("training document {:?} has no label", doc.id))
        })?;
        items.push(crate::classify::Stage2Item {
            bow: to_bow(doc, vocab),
            side: Side::Past,
            label,
            time_bucket: buckets[&doc.id],
            fixed_embedding: embed_for(&doc.id)?,
        });
    }
    for (doc, p) in adaptive_docs.iter().zip(pseudo) {
        items.push(crate::classify::Stage2Item {
            bow: to_bow(doc, vocab),
            side: Side::Future,
            label: p.pseudo_label,
            time_bucket: buckets[&doc.id],
            fixed_embedding: embed_for(&doc.id)?,
        });
    }
    Ok(items)
}

/// Final-stage predictions for the test segment, in split order.
pub fn predict_test(
    state: &VibeState,
    docs: &[TimedDocument],
    split: &SplitSpec,
    vocab: &Vocabulary,
) -> Result<Vec<(String, usize)>> {
    let index = doc_index(docs);
    split
        .test
        .iter()
        .map(|id| {
            let doc = lookup(&index, id)?;
            let bow = to_bow(doc, vocab);
            Ok((
                doc.id.clone(),
                predict_final(&bow, &state.model, &state.provider, &state.head_stage2_task),
            ))
        })
        .collect()
}

/// Test accuracy of the trained pipeline against gold labels.
pub fn evaluate_test(
    state: &VibeState,
    docs: &[TimedDocument],
    split: &SplitSpec,
    vocab: &Vocabulary,
) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    let index = doc_index(docs);
    let predictions = predict_test(state, docs, split, vocab)?;
    let mut preds = Vec::with_capacity(predictions.len());
    let mut gold = Vec::with_capacity(predictions.len());
    for (id, pred) in &predictions {
        let doc = lookup(&index, id)?;
        let label = doc
            .label
            .ok_or_else(|| VibeError::InvalidInput(format!("test document {id:?} has no label")))?;
        preds.push(*pred);
        gold.push(label);
    }
    let acc = accuracy(&preds, &gold)?;
    Ok((acc, preds, gold))
}

/// Per-document latent features for the disentanglement probe: the variant
/// encoder's posterior mean and the past-side approximator's shared mean,
/// computed uniformly for every document.
pub fn latent_features(
    state: &VibeState,
    docs: &[TimedDocument],
    vocab: &Vocabulary,
) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
    let mut variant = Vec::with_capacity(docs.len());
    let mut shared = Vec::with_capacity(docs.len());
    for doc in docs {
        let bow = to_bow(doc, vocab);
        variant.push(state.model.encode_past(&bow).mean);
        shared.push(state.model.approx_shared(&bow, Side::Past).mean);
    }
    (variant, shared)
}

/// Sphere-space features for a document set (model-space MMD comparisons).
pub fn sphere_features(
    state: &VibeState,
    docs: &[&TimedDocument],
    vocab: &Vocabulary,
    side: Side,
) -> Vec<Vec<f64>> {
    docs.iter()
        .map(|doc| {
            let bow = to_bow(doc, vocab);
            sphere_project(&bow, side, &state.model, &state.provider).0.to_vec()
        })
        .collect()
}

/// Dense TF-IDF rows (raw-data MMD comparisons), using idf from the given
/// pool of documents.
pub fn tfidf_dense_features(
    reference: &[&TimedDocument],
    subset: &[&TimedDocument],
    vocab: &Vocabulary,
) -> Result<Vec<Vec<f64>>> {
    let owned: Vec<TimedDocument> = reference.iter().map(|d| (*d).clone()).collect();
    let index = build_index(&owned, vocab, Scheme::TfidfCosine)?;
    Ok(subset
        .iter()
        .map(|doc| {
            let bow = to_bow(doc, vocab);
            let mut dense = vec![0.0; vocab.size()];
            let mut norm = 0.0;
            for (t, c) in bow.iter() {
                let w = f64::from(c) * index.idf()[t];
                dense[t] = w;
                norm += w * w;
            }
            let norm = norm.sqrt();
            if norm > 0.0 {
                for v in dense.iter_mut() {
                    *v /= norm;
                }
            }
            dense
        })
        .collect())
}

/// Output of synthetic stage-one training.
#[derive(Debug)]
pub struct Stage1Run {
    pub state: VibeState,
    pub docs: Vec<TimedDocument>,
    pub vocab: Vocabulary,
    pub split: SplitSpec,
    pub history: Vec<StepRecord>,
}

/// Generate a drifting corpus, split it, pair train documents with the
/// golden adaptive pool by TF-IDF cosine, and run stage-one training.
pub fn run_synthetic_stage1(spec: &DriftSpec, config: &TrainConfig) -> Result<Stage1Run> {
    let corpus = gen_corpus(spec)?;
    let docs = corpus.docs;
    let split = temporal_split(&docs, &SplitMode::Relative, config.seed)?;
    let vocab = derive_vocabulary(&docs, &split, config.vocab_size)?;
    let index_map = doc_index(&docs);

    let adaptive_docs: Vec<TimedDocument> = split
        .golden_adaptive
        .iter()
        .map(|id| lookup(&index_map, id).cloned())
        .collect::<Result<_>>()?;
    let train_docs: Vec<TimedDocument> =
        split.train.iter().map(|id| lookup(&index_map, id).cloned()).collect::<Result<_>>()?;

    let retrieval_index = build_index(&adaptive_docs, &vocab, Scheme::TfidfCosine)?;
    let pairs =
        pair_training_set(&train_docs, &retrieval_index, config.retrieval_depth, config.seed)?;
    let samples = build_stage1_samples(&docs, &pairs, &vocab, None)?;

    let classes = spec.shared_topics;
    let mut state = init_state(config, vocab.size(), classes);
    let history = train_stage1(&mut state, &samples, config)?;
    Ok(Stage1Run { state, docs, vocab, split, history })
}

/// Everything produced by one synthetic end-to-end run.
#[derive(Debug)]
pub struct SyntheticRun {
    pub state: VibeState,
    pub baseline: BaselineClassifier,
    pub vibe_accuracy: f64,
    pub baseline_accuracy: f64,
    pub pseudo_accuracy: f64,
    pub history: Vec<StepRecord>,
    pub split: SplitSpec,
    pub vocab: Vocabulary,
    pub docs: Vec<TimedDocument>,
}

/// Generate a drifting corpus, split it, pair train documents with the
/// golden adaptive pool, run both training stages, and evaluate against the
/// past-only baseline on the test segment.
pub fn run_synthetic_pipeline(spec: &DriftSpec, config: &TrainConfig) -> Result<SyntheticRun> {
    let Stage1Run { mut state, docs, vocab, split, history } =
        run_synthetic_stage1(spec, config)?;
    let index_map = doc_index(&docs);

    let adaptive = adaptive_bows(&docs, &split, &vocab)?;
    let pseudo = pseudo_label(&adaptive, &state.model, &state.provider, &state.head_stage1);
    let pseudo_accuracy = {
        let gold: Vec<usize> = split
            .golden_adaptive
            .iter()
            .map(|id| lookup(&index_map, id).map(|d| d.label.unwrap_or(0)))
            .collect::<Result<_>>()?;
        let preds: Vec<usize> = pseudo.iter().map(|p| p.pseudo_label).collect();
        accuracy(&preds, &gold)?
    };

    let stage2_items =
        build_stage2_items(&docs, &split, &pseudo, &vocab, config.time_buckets, None)?;
    train_stage2(&mut state, &stage2_items, config)?;

    let (vibe_accuracy, _, _) = evaluate_test(&state, &docs, &split, &vocab)?;

    let classes = state.dims.classes;
    let baseline_data: Vec<(BowVector, usize)> = split
        .train
        .iter()
        .map(|id| {
            lookup(&index_map, id)
                .map(|d| (to_bow(d, &vocab), d.label.expect("synthetic docs are labeled")))
        })
        .collect::<Result<_>>()?;
    let baseline = past_only_baseline(&baseline_data, vocab.size(), classes, config)?;
    let baseline_preds: Vec<usize> = split
        .test
        .iter()
        .map(|id| lookup(&index_map, id).map(|d| baseline.predict(&to_bow(d, &vocab))))
        .collect::<Result<_>>()?;
    let gold: Vec<usize> = split
        .test
        .iter()
        .map(|id| lookup(&index_map, id).map(|d| d.label.expect("labeled")))
        .collect::<Result<_>>()?;
    let baseline_accuracy = accuracy(&baseline_preds, &gold)?;

    Ok(SyntheticRun {
        state,
        baseline,
        vibe_accuracy,
        baseline_accuracy,
        pseudo_accuracy,
        history,
        split,
        vocab,
        docs,
    })
}

/// Probe gap (variant accuracy − shared accuracy) over the whole corpus
/// after stage-one training; larger means cleaner disentanglement.
pub fn disentanglement_gap(
    state: &VibeState,
    docs: &[TimedDocument],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(f64, f64)> {
    let periods: Vec<usize> = docs
        .iter()
        .map(|d| {
            d.period.ok_or_else(|| {
                VibeError::InvalidInput(format!("document {:?} has no period id", d.id))
            })
        })
        .collect::<Result<_>>()?;
    let (variant, shared) = latent_features(state, docs, vocab);
    probe_disentanglement(&variant, &shared, &periods, seed)
}

/// Key=value snapshot of a config for report embedding.
pub fn config_snapshot(config: &TrainConfig) -> BTreeMap<String, String> {
    config
        .to_file_string()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> (Vec<TimedDocument>, SplitSpec) {
        let spec = DriftSpec {
            vocab_size: 60,
            docs_per_period: 20,
            periods: 2,
            doc_len_min: 8,
            doc_len_max: 12,
            seed: 3,
            ..DriftSpec::default()
        };
        let corpus = gen_corpus(&spec).unwrap();
        let split = temporal_split(&corpus.docs, &SplitMode::Relative, 0).unwrap();
        (corpus.docs, split)
    }

    #[test]
    fn vocabulary_excludes_test_only_words() {
        let (docs, split) = tiny_corpus();
        let vocab = derive_vocabulary(&docs, &split, 1000).unwrap();
        assert!(vocab.size() > 0);
        // Deterministic re-derivation.
        let again = derive_vocabulary(&docs, &split, 1000).unwrap();
        assert_eq!(vocab, again);
    }

    #[test]
    fn stage2_bucket_assignment_default_is_past_future() {
        let (docs, split) = tiny_corpus();
        let vocab = derive_vocabulary(&docs, &split, 1000).unwrap();
        let pseudo: Vec<PseudoLabeledDoc> = split
            .golden_adaptive
            .iter()
            .map(|id| PseudoLabeledDoc { id: id.clone(), pseudo_label: 0, confidence: 1.0 })
            .collect();
        let items = build_stage2_items(&docs, &split, &pseudo, &vocab, 2, None).unwrap();
        assert_eq!(items.len(), split.train.len() + split.golden_adaptive.len());
        for item in &items {
            match item.side {
                Side::Past => assert_eq!(item.time_bucket, 0),
                Side::Future => assert_eq!(item.time_bucket, 1),
            }
        }
    }

    #[test]
    fn quantile_buckets_cover_range() {
        let (docs, split) = tiny_corpus();
        let vocab = derive_vocabulary(&docs, &split, 1000).unwrap();
        let pseudo: Vec<PseudoLabeledDoc> = split
            .golden_adaptive
            .iter()
            .map(|id| PseudoLabeledDoc { id: id.clone(), pseudo_label: 0, confidence: 1.0 })
            .collect();
        let items = build_stage2_items(&docs, &split, &pseudo, &vocab, 4, None).unwrap();
        let max_bucket = items.iter().map(|i| i.time_bucket).max().unwrap();
        assert_eq!(max_bucket, 3);
    }

    #[test]
    fn embeddings_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "a\t0.5,1.5\nb\t-1,2\n").unwrap();
        let emb = DocEmbeddings::load(&path).unwrap();
        assert_eq!(emb.dim, 2);
        assert_eq!(emb.get("a").unwrap(), ndarray::array![0.5, 1.5]);

        std::fs::write(&path, "a\t0.5,1.5\nb\t-1\n").unwrap();
        assert!(DocEmbeddings::load(&path).is_err());
    }
}
