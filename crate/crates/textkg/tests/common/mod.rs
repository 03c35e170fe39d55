//! Brute-force oracles and helpers shared by the acceptance suite.
//!
//! Every oracle here recomputes its target from first principles with plain
//! nested loops over dense arrays, deliberately sharing no code with the
//! library implementations it checks. Agreement is therefore evidence that
//! the sparse, incremental implementations match their definitions.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use textkg::corpus::TokenizedDocument;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vocabulary indices of a document's in-vocabulary tokens, in occurrence
/// order. Out-of-vocabulary tokens are skipped without leaving a gap.
fn occurrence_indices(doc: &TokenizedDocument, vocab: &[String]) -> Vec<usize> {
    let lookup: BTreeMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    doc.tokens
        .iter()
        .filter_map(|t| lookup.get(t.as_str()).copied())
        .collect()
}

/// Token×document TF-IDF from the definition: entry (f, n) is
/// tf(f, n) · ln(N / df(f)), kept only when the log factor is positive.
pub fn brute_tfidf(docs: &[TokenizedDocument], vocab: &[String]) -> Array2<f64> {
    let n = docs.len();
    let mut tf = Array2::<f64>::zeros((vocab.len(), n));
    for (j, doc) in docs.iter().enumerate() {
        for f in occurrence_indices(doc, vocab) {
            tf[[f, j]] += 1.0;
        }
    }
    let mut out = Array2::<f64>::zeros((vocab.len(), n));
    for f in 0..vocab.len() {
        let df = (0..n).filter(|&j| tf[[f, j]] > 0.0).count();
        if df == 0 {
            continue;
        }
        let idf = (n as f64 / df as f64).ln();
        if idf <= 0.0 {
            continue;
        }
        for j in 0..n {
            if tf[[f, j]] > 0.0 {
                out[[f, j]] = tf[[f, j]] * idf;
            }
        }
    }
    out
}

/// Symmetric co-occurrence counts from the definition: every ordered pair
/// of in-vocabulary positions within a document at distance 1..=window adds
/// one count in each direction; windows never span documents.
pub fn brute_cooccurrence(
    docs: &[TokenizedDocument],
    vocab: &[String],
    window: usize,
) -> Array2<f64> {
    let v = vocab.len();
    let mut counts = Array2::<f64>::zeros((v, v));
    for doc in docs {
        let ids = occurrence_indices(doc, vocab);
        for p in 0..ids.len() {
            for q in 0..ids.len() {
                if q > p && q - p <= window {
                    counts[[ids[p], ids[q]]] += 1.0;
                    counts[[ids[q], ids[p]]] += 1.0;
                }
            }
        }
    }
    counts
}

/// Shifted positive PMI from the definition, applied entrywise to a dense
/// count matrix: max(ln(c·total / (row_i·row_j)) − ln(shift), 0).
pub fn brute_sppmi(counts: &Array2<f64>, shift: f64) -> Array2<f64> {
    let v = counts.nrows();
    let total: f64 = counts.sum();
    let rows: Vec<f64> = (0..v).map(|i| counts.row(i).sum()).collect();
    let mut out = Array2::<f64>::zeros((v, v));
    for i in 0..v {
        for j in 0..v {
            let c = counts[[i, j]];
            if c == 0.0 {
                continue;
            }
            let value = (c * total / (rows[i] * rows[j])).ln() - shift.ln();
            if value > 0.0 {
                out[[i, j]] = value;
            }
        }
    }
    out
}

/// Token×category TF-IDF from the definition: one super-document per
/// category (lexicographic column order), entry (f, l) is
/// tf(f, l) · ln(L / cf(f)) kept only when the log factor is positive.
pub fn brute_category(
    docs: &[TokenizedDocument],
    vocab: &[String],
    doc_category: &BTreeMap<String, String>,
) -> (Vec<String>, Array2<f64>) {
    let labels: Vec<String> = docs
        .iter()
        .map(|d| doc_category[&d.doc_id].clone())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let l_count = labels.len();
    let mut tf = Array2::<f64>::zeros((vocab.len(), l_count));
    for doc in docs {
        let cat = &doc_category[&doc.doc_id];
        let l = labels.iter().position(|c| c == cat).unwrap();
        for f in occurrence_indices(doc, vocab) {
            tf[[f, l]] += 1.0;
        }
    }
    let mut out = Array2::<f64>::zeros((vocab.len(), l_count));
    for f in 0..vocab.len() {
        let cf = (0..l_count).filter(|&l| tf[[f, l]] > 0.0).count();
        if cf == 0 {
            continue;
        }
        let idf = (l_count as f64 / cf as f64).ln();
        if idf <= 0.0 {
            continue;
        }
        for l in 0..l_count {
            if tf[[f, l]] > 0.0 {
                out[[f, l]] = tf[[f, l]] * idf;
            }
        }
    }
    (labels, out)
}

/// Relative Frobenius reconstruction error ‖A − W·H‖_F / ‖A‖_F computed
/// with plain dense loops.
pub fn brute_rel_error(a: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let (rows, cols) = a.dim();
    let k = w.ncols();
    assert_eq!(w.nrows(), rows);
    assert_eq!(h.dim(), (k, cols));
    let mut residual = 0.0;
    let mut norm = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let mut approx = 0.0;
            for t in 0..k {
                approx += w[[i, t]] * h[[t, j]];
            }
            let d = a[[i, j]] - approx;
            residual += d * d;
            norm += a[[i, j]] * a[[i, j]];
        }
    }
    (residual / norm).sqrt()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "oracle and implementation shapes differ");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// All permutations of 0..k, for brute-force cluster relabeling (k ≤ 6).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    assert!(k <= 6, "factorial blowup");
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for p in &out {
            for v in 0..k {
                if !p.contains(&v) {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
        }
        out = next;
    }
    out
}

/// Best agreement fraction between two clusterings of the same items over
/// all k! relabelings of `predicted`.
pub fn best_agreement(reference: &[usize], predicted: &[usize], k: usize) -> f64 {
    assert_eq!(reference.len(), predicted.len());
    assert!(!reference.is_empty());
    let mut best = 0usize;
    for perm in permutations(k) {
        let hits = reference
            .iter()
            .zip(predicted)
            .filter(|(r, p)| **r == perm[**p])
            .count();
        best = best.max(hits);
    }
    best as f64 / reference.len() as f64
}
