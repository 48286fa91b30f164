//! Lexical retrieval for pairing past training documents with relevant
//! future documents.
//!
//! Two scoring schemes over a fixed vocabulary:
//!
//! - TF-IDF cosine with smoothed idf `ln((1+n)/(1+df)) + 1` and L2-normalized
//!   document rows, so a self-match scores 1.
//! - BM25 with `k1 = 1.2`, `b = 0.75` and idf `ln(1 + (n - df + 0.5)/(df + 0.5))`,
//!   which stays non-negative for every document frequency.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corpus::{to_bow, BowVector, TimedDocument, Vocabulary};
use crate::error::{Result, VibeError};
use crate::rng;

const BM25_K1: f64 = 1.2;
const BM25_B: f64 = 0.75;

/// Default number of future documents paired with each training document.
pub const DEFAULT_RETRIEVAL_DEPTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    TfidfCosine,
    Bm25,
}

impl std::str::FromStr for Scheme {
    type Err = VibeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf" | "tfidf-cosine" => Ok(Scheme::TfidfCosine),
            "bm25" => Ok(Scheme::Bm25),
            other => Err(VibeError::InvalidInput(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Immutable index over a candidate pool.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    scheme: Scheme,
    vocab: Vocabulary,
    doc_ids: Vec<String>,
    timestamps: Vec<i64>,
    /// Sparse rows: tf-idf weights (L2-normalized) or raw term counts for BM25.
    rows: Vec<Vec<(usize, f64)>>,
    /// Per-term idf under the scheme's formula.
    idf: Vec<f64>,
    doc_len: Vec<f64>,
    avg_doc_len: f64,
}

impl LexicalIndex {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// L2-normalized tf-idf row of one pool document (tf-idf scheme only).
    pub fn tfidf_row(&self, doc: usize) -> &[(usize, f64)] {
        &self.rows[doc]
    }
}

/// A past document paired with one retrieved future document.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub past: String,
    pub future: String,
    pub score: f64,
    /// True when the pair came from the seeded-random fallback for a query
    /// with no lexical overlap with the pool.
    pub degenerate: bool,
}

fn smooth_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn bm25_idf(n: usize, df: usize) -> f64 {
    (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

fn tfidf_weights(bow: &BowVector, idf: &[f64]) -> Vec<(usize, f64)> {
    bow.iter().map(|(t, c)| (t, c as f64 * idf[t])).collect()
}

fn l2_normalize(row: &mut [(usize, f64)]) {
    let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in row.iter_mut() {
            *w /= norm;
        }
    }
}

/// Build a deterministic index over `pool` under the chosen scheme.
pub fn build_index(
    pool: &[TimedDocument],
    vocab: &Vocabulary,
    scheme: Scheme,
) -> Result<LexicalIndex> {
    if pool.is_empty() {
        return Err(VibeError::EmptyPool);
    }
    let n = pool.len();
    let bows: Vec<BowVector> = pool.iter().map(|d| to_bow(d, vocab)).collect();

    let mut df = vec![0usize; vocab.size()];
    for bow in &bows {
        for (t, _) in bow.iter() {
            df[t] += 1;
        }
    }
    let idf: Vec<f64> = match scheme {
        Scheme::TfidfCosine => df.iter().map(|&d| smooth_idf(n, d)).collect(),
        Scheme::Bm25 => df.iter().map(|&d| bm25_idf(n, d)).collect(),
    };

    let doc_len: Vec<f64> = bows.iter().map(|b| f64::from(b.total())).collect();
    let avg_doc_len = (doc_len.iter().sum::<f64>() / n as f64).max(1e-12);

    let rows: Vec<Vec<(usize, f64)>> = bows
        .iter()
        .map(|bow| match scheme {
            Scheme::TfidfCosine => {
                let mut row = tfidf_weights(bow, &idf);
                l2_normalize(&mut row);
                row
            }
            Scheme::Bm25 => bow.iter().map(|(t, c)| (t, c as f64)).collect(),
        })
        .collect();

    Ok(LexicalIndex {
        scheme,
        vocab: vocab.clone(),
        doc_ids: pool.iter().map(|d| d.id.clone()).collect(),
        timestamps: pool.iter().map(|d| d.timestamp).collect(),
        rows,
        idf,
        doc_len,
        avg_doc_len,
    })
}

fn score_all(query: &TimedDocument, index: &LexicalIndex) -> Vec<f64> {
    let bow = to_bow(query, &index.vocab);
    let mut scores = vec![0.0; index.len()];
    match index.scheme {
        Scheme::TfidfCosine => {
            let mut q = tfidf_weights(&bow, &index.idf);
            l2_normalize(&mut q);
            let qmap: HashMap<usize, f64> = q.into_iter().collect();
            for (i, row) in index.rows.iter().enumerate() {
                scores[i] = row
                    .iter()
                    .filter_map(|(t, w)| qmap.get(t).map(|qw| qw * w))
                    .sum();
            }
        }
        Scheme::Bm25 => {
            for (i, row) in index.rows.iter().enumerate() {
                let len_norm = 1.0 - BM25_B + BM25_B * index.doc_len[i] / index.avg_doc_len;
                let mut s = 0.0;
                for (t, tf) in row {
                    if bow.counts().contains_key(t) {
                        s += index.idf[*t] * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm);
                    }
                }
                scores[i] = s;
            }
        }
    }
    scores
}

fn rank_descending(index: &LexicalIndex, scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.doc_ids[a].cmp(&index.doc_ids[b]))
    });
    order
}

/// Top-`n` pool documents by score (descending; ties by ascending doc id).
/// Returns fewer than `n` when the pool is smaller.
pub fn retrieve_topn(query: &TimedDocument, index: &LexicalIndex, n: usize) -> Vec<PairedSample> {
    if n == 0 {
        return Vec::new();
    }
    let scores = score_all(query, index);
    let all: Vec<usize> = (0..index.len()).collect();
    rank_descending(index, &scores, &all)
        .into_iter()
        .take(n)
        .map(|i| PairedSample {
            past: query.id.clone(),
            future: index.doc_ids[i].clone(),
            score: scores[i],
            degenerate: false,
        })
        .collect()
}

/// Pair every training document with its top-`n` strictly-later pool
/// documents. A query with no positive-scoring candidate falls back to `n`
/// seeded-random strictly-later pool documents, flagged degenerate. Training
/// documents with no strictly-later pool documents at all yield no pairs.
pub fn pair_training_set(
    train: &[TimedDocument],
    index: &LexicalIndex,
    n: usize,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    if train.is_empty() || index.is_empty() {
        return Err(VibeError::InvalidInput("train set and pool must be non-empty".into()));
    }
    if n == 0 {
        return Err(VibeError::InvalidInput("n must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, "retrieval-fallback");
    let mut pairs = Vec::with_capacity(train.len() * n);
    for doc in train {
        let candidates: Vec<usize> =
            (0..index.len()).filter(|&i| index.timestamps[i] > doc.timestamp).collect();
        if candidates.is_empty() {
            continue;
        }
        let scores = score_all(doc, index);
        let ranked = rank_descending(index, &scores, &candidates);
        let best = scores[ranked[0]];
        if best > 0.0 {
            pairs.extend(ranked.into_iter().take(n).map(|i| PairedSample {
                past: doc.id.clone(),
                future: index.doc_ids[i].clone(),
                score: scores[i],
                degenerate: false,
            }));
        } else {
            let mut picks = candidates.clone();
            picks.shuffle(&mut rng);
            pairs.extend(picks.into_iter().take(n).map(|i| PairedSample {
                past: doc.id.clone(),
                future: index.doc_ids[i].clone(),
                score: 0.0,
                degenerate: true,
            }));
        }
    }
    Ok(pairs)
}

/// Write pairs as tab-separated `past_id  future_id  score` lines.
pub fn write_pairs(path: &Path, pairs: &[PairedSample]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        writeln!(out, "{}\t{}\t{}", p.past, p.future, p.score)?;
    }
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairedSample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (past, future, score) = (it.next(), it.next(), it.next());
        match (past, future, score) {
            (Some(p), Some(f), Some(s)) => pairs.push(PairedSample {
                past: p.to_string(),
                future: f.to_string(),
                score: s
                    .parse()
                    .map_err(|e| VibeError::Parse(format!("line {}: {e}", lineno + 1)))?,
                degenerate: false,
            }),
            _ => {
                return Err(VibeError::Parse(format!("line {}: expected 3 columns", lineno + 1)))
            }
        }
    }
    Ok(pairs)
}
