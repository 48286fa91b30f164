//! Temporal train / validation / adaptive / test splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::TimedDocument;
use crate::error::{Result, VibeError};
use crate::rng;

/// How documents are assigned to the four segments.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// Sort by time; earliest 50% train, latest 30% test. The middle 20% is
    /// partitioned into a seeded random 5% validation sample and 15% golden
    /// adaptive data (percentages of the whole dataset).
    Relative,
    /// Assign by explicit timestamp cut points `[c1, c2, c3]`: train before
    /// `c1`, validation in `[c1, c2)`, golden adaptive in `[c2, c3)`, test at
    /// or after `c3`.
    Absolute { boundaries: Vec<i64> },
}

/// Document-id lists for the four temporal segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub golden_adaptive: Vec<String>,
    pub test: Vec<String>,
    pub mode: String,
    /// Realized timestamp cut points (first validation/adaptive timestamp and
    /// first test timestamp for relative mode; the supplied cuts otherwise).
    pub boundaries: Vec<i64>,
}

impl SplitSpec {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.golden_adaptive.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| VibeError::Parse(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| VibeError::Parse(e.to_string()))
    }
}

/// Split documents into train / validation / golden-adaptive / test segments
/// ordered by time. Validation sampling inside the middle segment uses the
/// seeded stream `"split-validation"` derived from `seed`.
pub fn temporal_split(
    docs: &[TimedDocument],
    mode: &SplitMode,
    seed: u64,
) -> Result<SplitSpec> {
    match mode {
        SplitMode::Relative => relative_split(docs, seed),
        SplitMode::Absolute { boundaries } => absolute_split(docs, boundaries),
    }
}

fn relative_split(docs: &[TimedDocument], seed: u64) -> Result<SplitSpec> {
    let n = docs.len();
    if n < 20 {
        return Err(VibeError::InvalidInput(format!(
            "relative split needs at least 20 documents, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| docs[i].timestamp);

    let n_train = n / 2;
    let n_test = n * 30 / 100;
    let n_val = n * 5 / 100;
    let n_middle = n - n_train - n_test;

    let middle = &order[n_train..n_train + n_middle];
    let mut val_pick: Vec<usize> = (0..n_middle).collect();
    let mut rng = rng::stream(seed, "split-validation");
    val_pick.shuffle(&mut rng);
    let mut is_val = vec![false; n_middle];
    for &p in val_pick.iter().take(n_val) {
        is_val[p] = true;
    }

    let ids = |idx: &[usize]| idx.iter().map(|&i| docs[i].id.clone()).collect::<Vec<_>>();
    let train = ids(&order[..n_train]);
    let test = ids(&order[n_train + n_middle..]);
    let validation: Vec<String> = middle
        .iter()
        .enumerate()
        .filter(|(p, _)| is_val[*p])
        .map(|(_, &i)| docs[i].id.clone())
        .collect();
    let golden_adaptive: Vec<String> = middle
        .iter()
        .enumerate()
        .filter(|(p, _)| !is_val[*p])
        .map(|(_, &i)| docs[i].id.clone())
        .collect();

    let boundaries = vec![docs[order[n_train]].timestamp, docs[order[n_train + n_middle]].timestamp];
    Ok(SplitSpec { train, validation, golden_adaptive, test, mode: "relative".into(), boundaries })
}

fn absolute_split(docs: &[TimedDocument], boundaries: &[i64]) -> Result<SplitSpec> {
    if boundaries.len() != 3 {
        return Err(VibeError::InvalidInput(format!(
            "absolute split needs exactly 3 cut points, got {}",
            boundaries.len()
        )));
    }
    if boundaries.windows(2).any(|w| w[0] > w[1]) {
        return Err(VibeError::BadBoundaries);
    }
    let (c1, c2, c3) = (boundaries[0], boundaries[1], boundaries[2]);
    let mut spec = SplitSpec {
        train: Vec::new(),
        validation: Vec::new(),
        golden_adaptive: Vec::new(),
        test: Vec::new(),
        mode: "absolute".into(),
        boundaries: boundaries.to_vec(),
    };
    for doc in docs {
        let t = doc.timestamp;
        if t < c1 {
            spec.train.push(doc.id.clone());
        } else if t < c2 {
            spec.validation.push(doc.id.clone());
        } else if t < c3 {
            spec.golden_adaptive.push(doc.id.clone());
        } else {
            spec.test.push(doc.id.clone());
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn docs(n: usize) -> Vec<TimedDocument> {
        (0..n)
            .map(|i| TimedDocument::new(format!("d{i}"), vec!["w".into()], i as i64 * 10))
            .collect()
    }

    #[test]
    fn relative_split_sizes_1000() {
        let d = docs(1000);
        let s = temporal_split(&d, &SplitMode::Relative, 0).unwrap();
        assert_eq!(s.train.len(), 500);
        assert_eq!(s.validation.len(), 50);
        assert_eq!(s.golden_adaptive.len(), 150);
        assert_eq!(s.test.len(), 300);
    }

    #[test]
    fn relative_split_sizes_20() {
        let d = docs(20);
        let s = temporal_split(&d, &SplitMode::Relative, 0).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.golden_adaptive.len(), s.test.len()),
            (10, 1, 3, 6)
        );
    }

    #[test]
    fn relative_split_respects_time_order_and_covers_all() {
        let d = docs(137);
        let s = temporal_split(&d, &SplitMode::Relative, 3).unwrap();
        let ts = |ids: &[String]| {
            ids.iter()
                .map(|id| d.iter().find(|x| &x.id == id).unwrap().timestamp)
                .collect::<Vec<_>>()
        };
        let train_max = ts(&s.train).into_iter().max().unwrap();
        let mut middle = ts(&s.validation);
        middle.extend(ts(&s.golden_adaptive));
        let mid_min = *middle.iter().min().unwrap();
        let mid_max = *middle.iter().max().unwrap();
        let test_min = ts(&s.test).into_iter().min().unwrap();
        assert!(train_max <= mid_min && mid_max <= test_min);

        let all: HashSet<&String> =
            s.train.iter().chain(&s.validation).chain(&s.golden_adaptive).chain(&s.test).collect();
        assert_eq!(all.len(), d.len());
        assert_eq!(s.len(), d.len());
    }

    #[test]
    fn too_few_docs_is_an_error() {
        let d = docs(19);
        assert!(temporal_split(&d, &SplitMode::Relative, 0).is_err());
    }

    #[test]
    fn absolute_split_honors_boundaries() {
        let d = docs(40); // timestamps 0..390
        let mode = SplitMode::Absolute { boundaries: vec![100, 200, 300] };
        let s = temporal_split(&d, &mode, 0).unwrap();
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.validation.len(), 10);
        assert_eq!(s.golden_adaptive.len(), 10);
        assert_eq!(s.test.len(), 10);
        assert!(s.train.contains(&"d9".to_string()));
        assert!(s.test.contains(&"d30".to_string()));
    }

    #[test]
    fn non_monotone_boundaries_are_rejected() {
        let d = docs(25);
        let mode = SplitMode::Absolute { boundaries: vec![200, 100, 300] };
        match temporal_split(&d, &mode, 0) {
            Err(VibeError::BadBoundaries) => {}
            other => panic!("expected bad-boundaries, got {other:?}"),
        }
    }

    #[test]
    fn relative_split_is_seed_deterministic() {
        let d = docs(50);
        let a = temporal_split(&d, &SplitMode::Relative, 9).unwrap();
        let b = temporal_split(&d, &SplitMode::Relative, 9).unwrap();
        assert_eq!(a, b);
        let c = temporal_split(&d, &SplitMode::Relative, 10).unwrap();
        assert_eq!(a.train, c.train, "validation sampling must not affect train");
    }
}
