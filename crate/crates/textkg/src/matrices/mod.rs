//! The three nonnegative sparse matrices built from a corpus: token×document
//! TF-IDF, token×token SPPMI co-occurrence, and token×category TF-IDF.
//!
//! Document frequencies are recomputed over the documents actually passed,
//! so every idf is nonnegative even when the caller factorizes a subset of
//! the vocabulary-building corpus. Window distances are measured over
//! in-vocabulary tokens; out-of-vocabulary tokens are dropped before
//! positions are assigned.

pub mod sparse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};

pub use sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurrenceConfig {
    /// Window length in token positions; pairs at distance 1..=window count.
    pub window: usize,
    /// SPPMI shift; ln(shift) is subtracted from each PMI value.
    pub shift: f64,
}

impl Default for CooccurrenceConfig {
    fn default() -> Self {
        CooccurrenceConfig {
            window: 100,
            shift: 4.0,
        }
    }
}

impl CooccurrenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::invalid("co-occurrence window must be ≥ 1"));
        }
        if !(self.shift.is_finite() && self.shift >= 1.0) {
            return Err(Error::invalid(format!(
                "SPPMI shift must be ≥ 1, got {}",
                self.shift
            )));
        }
        Ok(())
    }
}

fn in_vocab_indices(doc: &TokenizedDocument, vocab: &Vocabulary) -> Vec<usize> {
    doc.tokens
        .iter()
        .filter_map(|t| vocab.index_of(t))
        .collect()
}

/// Token×document TF-IDF: entry (f, n) = tf(f, n) · ln(N / df(f)), with df
/// recomputed over `docs`. Tokens present in every document get idf 0 and
/// their rows stay empty. Column order follows document order.
pub fn build_tfidf(docs: &[TokenizedDocument], vocab: &Vocabulary) -> Result<SparseMatrix> {
    if vocab.is_empty() {
        return Err(Error::invalid("TF-IDF requires a non-empty vocabulary"));
    }
    if docs.is_empty() {
        return Err(Error::invalid("TF-IDF requires at least one document"));
    }
    let n_docs = docs.len();
    let per_doc: Vec<BTreeMap<usize, usize>> = docs
        .iter()
        .map(|doc| {
            let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
            for idx in in_vocab_indices(doc, vocab) {
                *tf.entry(idx).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df = vec![0usize; vocab.len()];
    for tf in &per_doc {
        for &f in tf.keys() {
            df[f] += 1;
        }
    }
    let mut triplets = Vec::new();
    for (n, tf) in per_doc.iter().enumerate() {
        for (&f, &count) in tf {
            let idf = (n_docs as f64 / df[f] as f64).ln();
            if idf > 0.0 {
                triplets.push((f, n, count as f64 * idf));
            }
        }
    }
    SparseMatrix::from_triplets(vocab.len(), n_docs, triplets)
}

/// Symmetric token×token co-occurrence counts: for every within-document
/// position pair at distance 1..=window, both (a, b) and (b, a) are
/// incremented, so a same-token pair adds 2 to its diagonal cell. Windows
/// never cross document boundaries.
pub fn build_cooccurrence(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    window: usize,
) -> Result<SparseMatrix> {
    if window < 1 {
        return Err(Error::invalid("co-occurrence window must be ≥ 1"));
    }
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for doc in docs {
        let ids = in_vocab_indices(doc, vocab);
        for t in 0..ids.len() {
            for u in (t + 1)..ids.len().min(t + window + 1) {
                *counts.entry((ids[t], ids[u])).or_insert(0) += 1;
                *counts.entry((ids[u], ids[t])).or_insert(0) += 1;
            }
        }
    }
    let triplets = counts
        .into_iter()
        .map(|((r, c), v)| (r, c, v as f64))
        .collect();
    SparseMatrix::from_triplets(vocab.len(), vocab.len(), triplets)
}

/// Shifted positive PMI over symmetric counts: with `total` the sum of all
/// entries and `row(i)` the i-th row sum, entry (i, j) becomes
/// max(ln(c · total / (row(i) · row(j))) − ln(shift), 0); zeros are omitted.
/// The diagonal is kept and clipped like any other entry.
pub fn sppmi(counts: &SparseMatrix, shift: f64) -> Result<SparseMatrix> {
    if !(shift.is_finite() && shift >= 1.0) {
        return Err(Error::invalid(format!("SPPMI shift must be ≥ 1, got {shift}")));
    }
    if counts.n_rows() != counts.n_cols() {
        return Err(Error::invalid("SPPMI input must be square"));
    }
    if counts.is_empty() {
        return Err(Error::invalid("SPPMI input has no nonzero counts"));
    }
    for (r, c, v) in counts.iter() {
        if v.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "count at ({r}, {c}) is {v}; counts must be integers"
            )));
        }
        if counts.get(c, r) != v {
            return Err(Error::invalid(format!(
                "counts not symmetric at ({r}, {c})"
            )));
        }
    }
    let total = counts.sum();
    let rows = counts.row_sums();
    let log_shift = shift.ln();
    let mut triplets = Vec::new();
    for (r, c, v) in counts.iter() {
        let value = (v * total / (rows[r] * rows[c])).ln() - log_shift;
        if value > 0.0 {
            triplets.push((r, c, value));
        }
    }
    SparseMatrix::from_triplets(counts.n_rows(), counts.n_cols(), triplets)
}

/// Token×category TF-IDF: each category is one super-document (its
/// documents' tokens concatenated); entry (f, l) = tf(f, l) · ln(L / cf(f))
/// where cf counts the categories containing f. Categories are ordered
/// lexicographically; a token present in every category gets no entries.
pub fn build_category_matrix(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    doc_category: &BTreeMap<String, String>,
) -> Result<SparseMatrix> {
    if vocab.is_empty() {
        return Err(Error::invalid("category matrix requires a non-empty vocabulary"));
    }
    let mut super_docs: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    for doc in docs {
        let category = doc_category
            .get(&doc.doc_id)
            .ok_or_else(|| Error::invalid(format!("document {:?} has no category", doc.doc_id)))?;
        let tf = super_docs.entry(category).or_default();
        for idx in in_vocab_indices(doc, vocab) {
            *tf.entry(idx).or_insert(0) += 1;
        }
    }
    let n_cats = super_docs.len();
    if n_cats == 0 {
        return Err(Error::invalid("category matrix requires at least one document"));
    }
    let mut cf = vec![0usize; vocab.len()];
    for tf in super_docs.values() {
        for &f in tf.keys() {
            cf[f] += 1;
        }
    }
    let mut triplets = Vec::new();
    for (l, tf) in super_docs.values().enumerate() {
        for (&f, &count) in tf {
            let idf = (n_cats as f64 / cf[f] as f64).ln();
            if idf > 0.0 {
                triplets.push((f, l, count as f64 * idf));
            }
        }
    }
    SparseMatrix::from_triplets(vocab.len(), n_cats, triplets)
}

/// The category labels `build_category_matrix` would use as columns, in
/// column order.
pub fn category_labels(
    docs: &[TokenizedDocument],
    doc_category: &BTreeMap<String, String>,
) -> Result<Vec<String>> {
    let mut labels: Vec<String> = Vec::new();
    for doc in docs {
        let category = doc_category
            .get(&doc.doc_id)
            .ok_or_else(|| Error::invalid(format!("document {:?} has no category", doc.doc_id)))?;
        labels.push(category.clone());
    }
    labels.sort_unstable();
    labels.dedup();
    Ok(labels)
}
