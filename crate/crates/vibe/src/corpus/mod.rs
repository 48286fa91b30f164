//! Corpus ingestion: timestamped documents, vocabulary construction,
//! bag-of-words vectors, temporal splits, and the vocabulary-overlap
//! diagnostic.

mod dataset;
mod split;
mod tokenize;

pub use dataset::{load_dataset, write_dataset, DatasetRecord, LabelMap};
pub use split::{temporal_split, SplitMode, SplitSpec};
pub use tokenize::{is_stopword, tokenize, STOPWORDS};

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Result, VibeError};

/// Default vocabulary cap.
pub const DEFAULT_VOCAB_SIZE: usize = 20_000;

/// A tokenized document with a timestamp and optional class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedDocument {
    pub id: String,
    pub tokens: Vec<String>,
    /// Epoch seconds; non-negative.
    pub timestamp: i64,
    pub label: Option<usize>,
    /// Ground-truth period bucket, when known (synthetic corpora).
    pub period: Option<usize>,
}

impl TimedDocument {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, timestamp: i64) -> Self {
        Self { id: id.into(), tokens, timestamp, label: None, period: None }
    }
}

/// Bijective word ↔ id mapping over the most frequent non-stopword tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.id_to_word[id]
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    /// Rebuild from an id-ordered word list (checkpoint sidecars).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut word_to_id = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            if word_to_id.insert(w.clone(), id).is_some() {
                return Err(VibeError::InvalidInput(format!("duplicate vocab word {w:?}")));
            }
        }
        Ok(Self { word_to_id, id_to_word: words })
    }
}

/// Sparse non-negative word counts over a fixed vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BowVector {
    counts: BTreeMap<usize, u32>,
    total: u32,
}

impl BowVector {
    pub fn counts(&self) -> &BTreeMap<usize, u32> {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Distinct in-vocabulary terms.
    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts.iter().map(|(&id, &c)| (id, c))
    }

    pub fn add(&mut self, word_id: usize, count: u32) {
        if count == 0 {
            return;
        }
        *self.counts.entry(word_id).or_insert(0) += count;
        self.total += count;
    }
}

/// Count token frequencies across documents, skipping stopwords.
fn frequencies<'a, I>(docs: I) -> HashMap<&'a str, u64>
where
    I: IntoIterator<Item = &'a TimedDocument>,
{
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        for tok in &doc.tokens {
            if !is_stopword(tok) {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    freq
}

/// Rank words by (frequency desc, word asc) and take the top `k`.
fn top_k_words<'a>(freq: &HashMap<&'a str, u64>, k: usize) -> Vec<&'a str> {
    let mut ranked: Vec<(&str, u64)> = freq.iter().map(|(&w, &c)| (w, c)).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    ranked.into_iter().map(|(w, _)| w).collect()
}

/// Build the vocabulary from the `max_size` most frequent non-stopword
/// tokens. Frequency ties break lexicographically, so the id assignment is
/// deterministic for a fixed corpus.
pub fn build_vocabulary(docs: &[TimedDocument], max_size: usize) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(VibeError::InvalidInput("no documents".into()));
    }
    if max_size == 0 {
        return Err(VibeError::InvalidInput("max_size must be >= 1".into()));
    }
    let freq = frequencies(docs);
    if freq.is_empty() {
        return Err(VibeError::EmptyVocabulary);
    }
    let words = top_k_words(&freq, max_size);
    let id_to_word: Vec<String> = words.into_iter().map(str::to_owned).collect();
    let word_to_id =
        id_to_word.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect::<HashMap<_, _>>();
    Ok(Vocabulary { word_to_id, id_to_word })
}

/// Bag-of-words conversion; out-of-vocabulary tokens are dropped silently.
pub fn to_bow(doc: &TimedDocument, vocab: &Vocabulary) -> BowVector {
    let mut bow = BowVector::default();
    for tok in &doc.tokens {
        if let Some(id) = vocab.id(tok) {
            bow.add(id, 1);
        }
    }
    bow
}

/// Overlap (percent) between the top-`k` most frequent non-stopword words of
/// two document sets: |topK(a) ∩ topK(b)| / min(|topK(a)|, |topK(b)|) × 100.
pub fn vocab_overlap(a: &[TimedDocument], b: &[TimedDocument], k: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(VibeError::InvalidInput("both document sets must be non-empty".into()));
    }
    if k == 0 {
        return Err(VibeError::InvalidInput("k must be >= 1".into()));
    }
    let freq_a = frequencies(a);
    let freq_b = frequencies(b);
    let top_a: HashSet<&str> = top_k_words(&freq_a, k).into_iter().collect();
    let top_b: HashSet<&str> = top_k_words(&freq_b, k).into_iter().collect();
    let denom = top_a.len().min(top_b.len());
    if denom == 0 {
        return Ok(0.0);
    }
    let inter = top_a.intersection(&top_b).count();
    Ok(inter as f64 / denom as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, tokens: &[&str]) -> TimedDocument {
        TimedDocument::new(id, tokens.iter().map(|s| s.to_string()).collect(), 0)
    }

    #[test]
    fn vocabulary_orders_by_frequency_then_word() {
        let docs = [doc("a", &["covid", "mask"]), doc("b", &["covid"])];
        let vocab = build_vocabulary(&docs, 10).unwrap();
        assert_eq!(vocab.size(), 2);
        assert_eq!(vocab.id("covid"), Some(0));
        assert_eq!(vocab.id("mask"), Some(1));
    }

    #[test]
    fn vocabulary_tie_break_is_lexicographic() {
        let docs = [doc("a", &["zebra", "apple", "mango"])];
        let vocab = build_vocabulary(&docs, 2).unwrap();
        assert_eq!(vocab.words(), ["apple".to_string(), "mango".to_string()]);
    }

    #[test]
    fn stopword_only_corpus_is_an_error() {
        let docs = [doc("a", &["the", "and", "of"])];
        match build_vocabulary(&docs, 10) {
            Err(VibeError::EmptyVocabulary) => {}
            other => panic!("expected empty-vocabulary, got {other:?}"),
        }
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let docs = [doc("a", &["x", "y", "y"]), doc("b", &["z", "x", "q"])];
        let v1 = build_vocabulary(&docs, 3).unwrap();
        let v2 = build_vocabulary(&docs, 3).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn bow_counts_and_drops_oov() {
        let vocab =
            Vocabulary::from_words(vec!["covid".into(), "mask".into()]).unwrap();
        let bow = to_bow(&doc("a", &["covid", "covid", "mask", "unknown"]), &vocab);
        assert_eq!(bow.total(), 3);
        assert_eq!(bow.counts().get(&0), Some(&2));
        assert_eq!(bow.counts().get(&1), Some(&1));
        assert!(to_bow(&doc("b", &["zzz"]), &vocab).is_empty());
        assert!(to_bow(&doc("c", &[]), &vocab).is_empty());
    }

    #[test]
    fn overlap_identity_and_disjoint() {
        let a = [doc("a", &["x", "y", "z"])];
        let b = [doc("b", &["p", "q", "r"])];
        assert_eq!(vocab_overlap(&a, &a, 5).unwrap(), 100.0);
        assert_eq!(vocab_overlap(&a, &b, 5).unwrap(), 0.0);
    }

    #[test]
    fn overlap_two_of_three() {
        // top-3 of a = {x, y, z}, top-3 of b = {y, z, w} → 2/3.
        let a = [doc("a", &["x", "x", "x", "y", "y", "z"])];
        let b = [doc("b", &["y", "y", "y", "z", "z", "w"])];
        let got = vocab_overlap(&a, &b, 3).unwrap();
        assert!((got - 200.0 / 3.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn overlap_excludes_stopwords() {
        let a = [doc("a", &["the", "covid"])];
        let b = [doc("b", &["the", "vaccine"])];
        assert_eq!(vocab_overlap(&a, &b, 2).unwrap(), 0.0);
    }
}
