//! Recursive topic trees over document coefficient clustering.
//!
//! Each document is assigned to the topic with the largest coefficient in
//! its column of H. The documents of a topic form a sub-corpus, which is
//! re-ingested from scratch: the vocabulary is re-filtered (tokens common
//! to the whole sub-corpus fall out through the document-frequency cap),
//! the matrices are rebuilt, and the factorization runs again. Recursion
//! stops at `max_depth`, below `min_docs`, or wherever the policy says so.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, filter_documents, TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::matrices::{
    build_category_matrix, build_cooccurrence, build_tfidf, sppmi, CooccurrenceConfig,
};
use crate::nmf::relative_error;
use crate::seed::{mix, TAG_NODE};
use crate::split::{run_split, SplitParams};
use crate::SparseMatrix;

/// One ranked keyword of a topic: the raw basis weight and the weight
/// relative to the column's L1 mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub token: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Which topics of a node get expanded into children.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpandPolicy {
    /// Every topic with enough documents becomes a child.
    #[default]
    All,
    /// Only the listed topic indices, keyed by node id ("root", "root/2").
    /// Nodes absent from the map are not expanded.
    Selected(BTreeMap<String, Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyParams {
    /// Maximum node depth; the root is depth 0.
    pub max_depth: usize,
    /// Topics with fewer documents stay leaves.
    pub min_docs: usize,
    /// Ranked keywords kept per topic.
    pub keyword_count: usize,
    /// Per-node vocabulary rebuild: minimum document frequency.
    pub min_df: usize,
    /// Per-node vocabulary rebuild: maximum document-frequency fraction.
    pub max_df_fraction: f64,
    /// Documents with fewer in-vocabulary tokens drop out of a node.
    pub min_tokens: usize,
    /// Token co-occurrence settings; None disables the S matrix.
    pub cooccurrence: Option<CooccurrenceConfig>,
    /// Whether to build the category matrix per node.
    pub use_categories: bool,
    pub expand_policy: ExpandPolicy,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        HierarchyParams {
            max_depth: 1,
            min_docs: 20,
            keyword_count: 50,
            min_df: 3,
            max_df_fraction: 0.9,
            min_tokens: 10,
            cooccurrence: Some(CooccurrenceConfig::default()),
            use_categories: true,
            expand_policy: ExpandPolicy::All,
        }
    }
}

impl HierarchyParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_docs < 1 {
            return Err(Error::invalid("min_docs must be at least 1"));
        }
        if self.keyword_count < 1 {
            return Err(Error::invalid("keyword_count must be at least 1"));
        }
        if self.min_df < 1 {
            return Err(Error::invalid("min_df must be at least 1"));
        }
        if !(self.max_df_fraction > 0.0 && self.max_df_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "max_df_fraction must lie in (0, 1], got {}",
                self.max_df_fraction
            )));
        }
        if let Some(cfg) = &self.cooccurrence {
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicNode {
    /// Path of ancestor topic indices, e.g. "root/3/1".
    pub node_id: String,
    pub depth: usize,
    /// Every document handed to this node, including later drops.
    pub doc_ids: Vec<String>,
    /// Documents that fell below `min_tokens` after vocabulary re-filtering.
    pub dropped: Vec<String>,
    /// Per-node vocabulary; None when it emptied and the node is a bare leaf.
    pub vocab: Option<Vocabulary>,
    /// Topic count; 0 marks a node that could not be factorized.
    pub k: usize,
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub rel_error: Option<f64>,
    /// (doc_id, topic) for each document that survived re-filtering.
    pub assignments: Vec<(String, usize)>,
    /// Ranked keywords per topic.
    pub keywords: Vec<Vec<KeywordEntry>>,
    /// Per-topic counts of document categories.
    pub category_histogram: Vec<BTreeMap<String, usize>>,
    pub children: BTreeMap<usize, TopicNode>,
}

/// Assigns each column of a nonnegative coefficient matrix to its largest
/// row, ties toward the smaller index. All-zero columns go to topic 0 with
/// a warning; the assignment is total either way.
pub fn h_cluster(h: &Array2<f64>) -> Vec<usize> {
    let mut zero_columns = 0usize;
    let assignments = (0..h.ncols())
        .map(|j| {
            let mut best = 0usize;
            let mut best_value = 0.0;
            for (i, v) in h.column(j).iter().enumerate() {
                if *v > best_value {
                    best_value = *v;
                    best = i;
                }
            }
            if best_value == 0.0 {
                zero_columns += 1;
            }
            best
        })
        .collect();
    if zero_columns > 0 {
        log::warn!("{zero_columns} all-zero coefficient columns assigned to topic 0");
    }
    assignments
}

/// The n largest-weight tokens per basis column, descending by weight with
/// ties toward the lexicographically smaller token. Zero-weight tokens are
/// never reported; a zero column yields an empty list with a warning.
pub fn top_keywords(w: &Array2<f64>, vocab: &Vocabulary, n: usize) -> Vec<Vec<KeywordEntry>> {
    assert_eq!(w.nrows(), vocab.len(), "basis rows must match the vocabulary");
    (0..w.ncols())
        .map(|j| {
            let column = w.column(j);
            let l1: f64 = column.sum();
            if l1 == 0.0 {
                log::warn!("basis column {j} is all zeros; no keywords");
                return Vec::new();
            }
            let mut entries: Vec<KeywordEntry> = column
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(i, v)| KeywordEntry {
                    token: vocab.token(i).to_string(),
                    raw: *v,
                    normalized: *v / l1,
                })
                .collect();
            entries.sort_by(|a, b| b.raw.total_cmp(&a.raw).then_with(|| a.token.cmp(&b.token)));
            entries.truncate(n);
            entries
        })
        .collect()
}

fn doc_ids(docs: &[TokenizedDocument]) -> Vec<String> {
    docs.iter().map(|d| d.doc_id.clone()).collect()
}

fn bare_leaf(
    node_id: String,
    depth: usize,
    docs: &[TokenizedDocument],
    dropped: Vec<String>,
    vocab: Option<Vocabulary>,
    reason: &str,
) -> TopicNode {
    log::warn!("{node_id}: {reason}; keeping the node as an unfactorized leaf");
    TopicNode {
        node_id,
        depth,
        doc_ids: doc_ids(docs),
        dropped,
        vocab,
        k: 0,
        w: Array2::zeros((0, 0)),
        h: Array2::zeros((0, 0)),
        rel_error: None,
        assignments: Vec::new(),
        keywords: Vec::new(),
        category_histogram: Vec::new(),
        children: BTreeMap::new(),
    }
}

/// Builds the topic tree. Every node re-ingests its sub-corpus: vocabulary
/// re-filtering, matrix rebuilds, and a full SPLIT factorization, then
/// recurses into the expanded topics. A node whose vocabulary empties (or
/// whose matrices vanish) becomes a leaf with a warning rather than an
/// error. With a checkpoint root, each node reuses its own chunk-factor
/// checkpoints; stale node checkpoints are discarded and recomputed, since
/// an upstream change legitimately reshapes the sub-corpora.
pub fn build_topic_tree(
    docs: &[TokenizedDocument],
    doc_category: &BTreeMap<String, String>,
    params: &HierarchyParams,
    split: &SplitParams,
    checkpoint_root: Option<&Path>,
) -> Result<TopicNode> {
    params.validate()?;
    split.validate()?;
    if docs.is_empty() {
        return Err(Error::invalid("topic tree requires a non-empty corpus"));
    }
    build_node(
        docs.to_vec(),
        "root".to_string(),
        String::new(),
        0,
        *split,
        params,
        doc_category,
        checkpoint_root,
    )
    .map_err(|e| e.in_stage("hierarchy"))
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    docs: Vec<TokenizedDocument>,
    node_id: String,
    rel_path: String,
    depth: usize,
    split: SplitParams,
    params: &HierarchyParams,
    doc_category: &BTreeMap<String, String>,
    checkpoint_root: Option<&Path>,
) -> Result<TopicNode> {
    let vocab = match build_vocabulary(&docs, params.min_df, params.max_df_fraction) {
        Ok(v) => v,
        Err(Error::EmptyVocabulary { .. }) => {
            return Ok(bare_leaf(node_id, depth, &docs, Vec::new(), None, "vocabulary emptied"))
        }
        Err(e) => return Err(e),
    };
    let (kept, dropped) = filter_documents(&docs, &vocab, params.min_tokens);
    if kept.is_empty() {
        return Ok(bare_leaf(
            node_id,
            depth,
            &docs,
            dropped,
            Some(vocab),
            "no documents survived re-filtering",
        ));
    }

    let x = build_tfidf(&kept, &vocab)?;
    if x.is_empty() {
        return Ok(bare_leaf(
            node_id,
            depth,
            &docs,
            dropped,
            Some(vocab),
            "tf-idf matrix has no nonzero entries",
        ));
    }
    let s = match &params.cooccurrence {
        Some(cfg) => {
            let counts = build_cooccurrence(&kept, &vocab, cfg.window)?;
            let s = sppmi(&counts, cfg.shift)?;
            if s.is_empty() {
                log::warn!("{node_id}: co-occurrence matrix emptied after shifting; skipped");
                None
            } else {
                Some(s)
            }
        }
        None => None,
    };
    let c = if params.use_categories {
        let c = build_category_matrix(&kept, &vocab, doc_category)?;
        if c.is_empty() {
            log::warn!("{node_id}: category matrix has no nonzero entries; skipped");
            None
        } else {
            Some(c)
        }
    } else {
        None
    };

    let mut node_split = split;
    node_split.m = split.m.min(kept.len());
    let checkpoint_dir = checkpoint_root.map(|root| root.join(&rel_path));
    let outcome = match run_split(&x, s.as_ref(), c.as_ref(), &node_split, checkpoint_dir.as_deref())
    {
        Err(Error::Checkpoint(msg)) => {
            let dir = checkpoint_dir.as_ref().expect("checkpoint error implies a directory");
            log::warn!("{node_id}: discarding stale split checkpoint: {msg}");
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            run_split(&x, s.as_ref(), c.as_ref(), &node_split, Some(dir))?
        }
        other => other?,
    };
    let w = outcome.side.w;
    let h = outcome.side.h;
    let k = outcome.side.t;
    let rel_error = relative_error(&x, &w, &h)?;
    let topic_of = h_cluster(&h);
    let assignments: Vec<(String, usize)> = kept
        .iter()
        .zip(&topic_of)
        .map(|(d, t)| (d.doc_id.clone(), *t))
        .collect();
    let keywords = top_keywords(&w, &vocab, params.keyword_count);

    let mut category_histogram = vec![BTreeMap::new(); k];
    for (doc, topic) in kept.iter().zip(&topic_of) {
        if let Some(category) = doc_category.get(&doc.doc_id) {
            *category_histogram[*topic].entry(category.clone()).or_insert(0) += 1;
        }
    }

    let expand: BTreeSet<usize> = match &params.expand_policy {
        ExpandPolicy::All => (0..k).collect(),
        ExpandPolicy::Selected(map) => {
            let indices = map.get(&node_id).cloned().unwrap_or_default();
            for idx in &indices {
                if *idx >= k {
                    return Err(Error::invalid(format!(
                        "{node_id}: expand_policy selects topic {idx}, but the node has {k} topics"
                    )));
                }
            }
            indices.into_iter().collect()
        }
    };
    let children: BTreeMap<usize, TopicNode> = if depth < params.max_depth {
        let candidates: Vec<(usize, Vec<TokenizedDocument>)> = expand
            .into_iter()
            .map(|idx| {
                let docs: Vec<TokenizedDocument> = kept
                    .iter()
                    .zip(&topic_of)
                    .filter(|(_, t)| **t == idx)
                    .map(|(d, _)| d.clone())
                    .collect();
                (idx, docs)
            })
            .filter(|(_, docs)| docs.len() >= params.min_docs)
            .collect();
        candidates
            .into_par_iter()
            .map(|(idx, child_docs)| {
                let child_rel = if rel_path.is_empty() {
                    idx.to_string()
                } else {
                    format!("{rel_path}/{idx}")
                };
                let child_split =
                    split.with_master_seed(mix(&[TAG_NODE, split.nmfk.master_seed, idx as u64]));
                build_node(
                    child_docs,
                    format!("{node_id}/{idx}"),
                    child_rel,
                    depth + 1,
                    child_split,
                    params,
                    doc_category,
                    checkpoint_root,
                )
                .map(|node| (idx, node))
            })
            .collect::<Result<_>>()?
    } else {
        BTreeMap::new()
    };

    Ok(TopicNode {
        node_id,
        depth,
        doc_ids: doc_ids(&docs),
        dropped,
        vocab: Some(vocab),
        k,
        w,
        h,
        rel_error: Some(rel_error),
        assignments,
        keywords,
        category_histogram,
        children,
    })
}

/// The machine-readable half of a node directory; factors and vocabulary
/// live in their own files.
#[derive(Debug, Serialize, Deserialize)]
struct NodeMeta {
    node_id: String,
    depth: usize,
    k: usize,
    rel_error: Option<f64>,
    vocabulary_size: Option<usize>,
    doc_ids: Vec<String>,
    dropped: Vec<String>,
    assignments: Vec<(String, usize)>,
    keywords: Vec<Vec<KeywordEntry>>,
    category_histogram: Vec<BTreeMap<String, usize>>,
    children: Vec<usize>,
}

/// Writes the tree as a directory mirror: one folder per node holding the
/// factors (w.txt, h.txt), vocabulary, tab-separated keyword and assignment
/// tables, the drop list, per-topic category histograms, and meta.json.
/// Children nest as subdirectories named by topic index.
pub fn write_tree(node: &TopicNode, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if node.k > 0 {
        SparseMatrix::from_dense(&node.w)?.save(&dir.join("w.txt"))?;
        SparseMatrix::from_dense(&node.h)?.save(&dir.join("h.txt"))?;
    }
    if let Some(vocab) = &node.vocab {
        vocab.save(&dir.join("vocab.txt"))?;
    }

    let write_text = |name: &str, content: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))
    };

    let mut keywords = String::from("topic\trank\ttoken\traw\tnormalized\n");
    for (topic, list) in node.keywords.iter().enumerate() {
        for (rank, entry) in list.iter().enumerate() {
            keywords.push_str(&format!(
                "{topic}\t{}\t{}\t{:.16e}\t{:.16e}\n",
                rank + 1,
                entry.token,
                entry.raw,
                entry.normalized
            ));
        }
    }
    write_text("keywords.tsv", keywords)?;

    let mut assignments = String::from("doc_id\ttopic\n");
    for (doc_id, topic) in &node.assignments {
        assignments.push_str(&format!("{doc_id}\t{topic}\n"));
    }
    write_text("assignments.tsv", assignments)?;

    let mut dropped = String::new();
    for doc_id in &node.dropped {
        dropped.push_str(doc_id);
        dropped.push('\n');
    }
    write_text("dropped.txt", dropped)?;

    if node.category_histogram.iter().any(|h| !h.is_empty()) {
        let mut hist = String::from("topic\tcategory\tcount\n");
        for (topic, counts) in node.category_histogram.iter().enumerate() {
            for (category, count) in counts {
                hist.push_str(&format!("{topic}\t{category}\t{count}\n"));
            }
        }
        write_text("category_histogram.tsv", hist)?;
    }

    let meta = NodeMeta {
        node_id: node.node_id.clone(),
        depth: node.depth,
        k: node.k,
        rel_error: node.rel_error,
        vocabulary_size: node.vocab.as_ref().map(Vocabulary::len),
        doc_ids: node.doc_ids.clone(),
        dropped: node.dropped.clone(),
        assignments: node.assignments.clone(),
        keywords: node.keywords.clone(),
        category_histogram: node.category_histogram.clone(),
        children: node.children.keys().copied().collect(),
    };
    let path = dir.join("meta.json");
    let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut file, &meta)
        .map_err(|e| Error::invalid(format!("meta serialization failed: {e}")))?;
    file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;

    for (idx, child) in &node.children {
        write_tree(child, &dir.join(idx.to_string()))?;
    }
    Ok(())
}

/// Reads a directory mirror back into a tree, bit-exact with what
/// `write_tree` wrote.
pub fn read_tree(dir: &Path) -> Result<TopicNode> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: NodeMeta = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&meta_path, None, format!("invalid node meta: {e}")))?;

    let (w, h) = if meta.k > 0 {
        (
            SparseMatrix::load(&dir.join("w.txt"))?.to_dense(),
            SparseMatrix::load(&dir.join("h.txt"))?.to_dense(),
        )
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    };
    let vocab = match meta.vocabulary_size {
        Some(_) => Some(Vocabulary::load(&dir.join("vocab.txt"))?),
        None => None,
    };
    let mut children = BTreeMap::new();
    for idx in meta.children {
        children.insert(idx, read_tree(&dir.join(idx.to_string()))?);
    }
    Ok(TopicNode {
        node_id: meta.node_id,
        depth: meta.depth,
        doc_ids: meta.doc_ids,
        dropped: meta.dropped,
        vocab,
        k: meta.k,
        w,
        h,
        rel_error: meta.rel_error,
        assignments: meta.assignments,
        keywords: meta.keywords,
        category_histogram: meta.category_histogram,
        children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmfk::NmfkParams;
    use ndarray::array;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn h_cluster_picks_the_largest_row() {
        let h = array![[0.2, 0.5], [0.7, 0.5], [0.1, 0.3]];
        assert_eq!(h_cluster(&h), vec![1, 0]);
    }

    #[test]
    fn h_cluster_breaks_ties_toward_the_smaller_index() {
        let h = array![[0.5], [0.5]];
        assert_eq!(h_cluster(&h), vec![0]);
    }

    #[test]
    fn h_cluster_is_scale_invariant() {
        let h = array![[0.2, 0.1, 0.4], [0.3, 0.6, 0.2]];
        let scaled = &h * 17.5;
        assert_eq!(h_cluster(&h), h_cluster(&scaled));
    }

    #[test]
    fn h_cluster_sends_zero_columns_to_topic_zero() {
        let h = array![[0.0, 0.3], [0.0, 0.1]];
        assert_eq!(h_cluster(&h), vec![0, 0]);
    }

    fn two_token_vocab() -> Vocabulary {
        let docs = vec![
            TokenizedDocument {
                doc_id: "d1".into(),
                tokens: vec!["a".into(), "b".into()],
            },
            TokenizedDocument {
                doc_id: "d2".into(),
                tokens: vec!["a".into(), "b".into()],
            },
        ];
        build_vocabulary(&docs, 1, 1.0).unwrap()
    }

    #[test]
    fn top_keywords_ranks_by_weight() {
        let vocab = two_token_vocab();
        let w = array![[0.1], [0.9]];
        let lists = top_keywords(&w, &vocab, 1);
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].len(), 1);
        assert_eq!(lists[0][0].token, "b");
        assert_eq!(lists[0][0].raw, 0.9);
        assert_eq!(lists[0][0].normalized, 0.9);
    }

    #[test]
    fn top_keywords_ties_break_lexicographically() {
        let vocab = two_token_vocab();
        let w = array![[0.5], [0.5]];
        let lists = top_keywords(&w, &vocab, 1);
        assert_eq!(lists[0][0].token, "a");
    }

    #[test]
    fn top_keywords_reports_all_nonzeros_when_n_is_large() {
        let vocab = two_token_vocab();
        let w = array![[0.4, 0.0], [0.0, 0.6]];
        let lists = top_keywords(&w, &vocab, 10);
        assert_eq!(lists[0].len(), 1);
        assert_eq!(lists[1].len(), 1);
        let sum: f64 = lists[0].iter().map(|e| e.normalized).sum();
        assert_eq!(sum, 1.0, "n beyond nonzeros covers the whole L1 mass");
    }

    #[test]
    fn top_keywords_zero_column_is_empty() {
        let vocab = two_token_vocab();
        let w = array![[0.4, 0.0], [0.6, 0.0]];
        let lists = top_keywords(&w, &vocab, 5);
        assert!(lists[1].is_empty());
    }

    #[test]
    fn top_keywords_normalized_weights_sum_below_one() {
        let vocab = {
            let docs = vec![TokenizedDocument {
                doc_id: "d".into(),
                tokens: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            }];
            build_vocabulary(&docs, 1, 1.0).unwrap()
        };
        let w = array![[0.4], [0.3], [0.2], [0.1]];
        let lists = top_keywords(&w, &vocab, 2);
        let sum: f64 = lists[0].iter().map(|e| e.normalized).sum();
        assert!(sum < 1.0);
        assert_eq!(lists[0][0].token, "a");
        assert_eq!(lists[0][1].token, "b");
    }

    /// Two super-topics, each with two sub-topics. Every document carries
    /// all of its super-topic's tokens (so they die at the child's df cap)
    /// plus a sample of its sub-topic's tokens.
    fn planted_two_level(docs_per_leaf: usize, seed: u64) -> Vec<TokenizedDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let supers = ["alpha", "beta"];
        let subs = [["apple", "avocado"], ["banana", "berry"]];
        let mut docs = Vec::new();
        for (si, super_name) in supers.iter().enumerate() {
            for sub_name in subs[si].iter() {
                for d in 0..docs_per_leaf {
                    let mut tokens = Vec::new();
                    for t in 0..6 {
                        for _ in 0..2 {
                            tokens.push(format!("{super_name}{t}"));
                        }
                    }
                    let mut picks: Vec<usize> = (0..5).collect();
                    picks.shuffle(&mut rng);
                    for t in &picks[..3] {
                        for _ in 0..rng.random_range(1..=3) {
                            tokens.push(format!("{sub_name}{t}"));
                        }
                    }
                    docs.push(TokenizedDocument {
                        doc_id: format!("{super_name}-{sub_name}-{d}"),
                        tokens,
                    });
                }
            }
        }
        docs.shuffle(&mut rng);
        docs
    }

    fn test_params(max_depth: usize) -> (HierarchyParams, SplitParams) {
        let hierarchy = HierarchyParams {
            max_depth,
            min_docs: 5,
            keyword_count: 10,
            min_df: 2,
            max_df_fraction: 0.8,
            min_tokens: 1,
            cooccurrence: None,
            use_categories: false,
            expand_policy: ExpandPolicy::All,
        };
        let split = SplitParams {
            m: 2,
            nmfk: NmfkParams {
                k_min: 1,
                k_max: 4,
                n_perturbs: 10,
                master_seed: 2024,
                ..NmfkParams::default()
            },
            ..SplitParams::default()
        };
        (hierarchy, split)
    }

    #[test]
    fn max_depth_zero_builds_only_the_root() {
        let docs = planted_two_level(15, 3);
        let (hp, sp) = test_params(0);
        let root = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert!(root.children.is_empty());
        assert_eq!(root.depth, 0);
        assert_eq!(root.node_id, "root");
        assert_eq!(root.doc_ids.len(), 60);
    }

    #[test]
    fn planted_two_level_corpus_recovers_both_levels() {
        let docs = planted_two_level(15, 3);
        let (hp, sp) = test_params(1);
        let root = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert_eq!(root.k, 2, "root separates the two super-topics");
        assert_eq!(root.children.len(), 2);

        // Root assignment purity: documents of one super-topic share a topic.
        for super_name in ["alpha", "beta"] {
            let topics: BTreeSet<usize> = root
                .assignments
                .iter()
                .filter(|(id, _)| id.starts_with(super_name))
                .map(|(_, t)| *t)
                .collect();
            assert_eq!(topics.len(), 1, "{super_name} split across root topics");
        }

        for child in root.children.values() {
            assert_eq!(child.depth, 1);
            assert_eq!(child.k, 2, "{}: sub-topics not separated", child.node_id);
            assert!(child.children.is_empty(), "max_depth reached");
            assert!(child.node_id.starts_with("root/"));
            // The super-topic tokens appear in every child document, so the
            // df cap must have dropped them from the child vocabulary.
            let vocab = child.vocab.as_ref().unwrap();
            assert!(vocab.tokens().iter().all(|t| !t.starts_with("alpha") && !t.starts_with("beta")));

            // Sub-topic purity with permutation matching: count agreements
            // under both labelings and take the better one.
            let labels: Vec<(usize, usize)> = child
                .assignments
                .iter()
                .map(|(id, topic)| {
                    let planted = usize::from(id.contains("avocado") || id.contains("berry"));
                    (planted, *topic)
                })
                .collect();
            let direct = labels.iter().filter(|(p, t)| p == t).count();
            let swapped = labels.iter().filter(|(p, t)| *p == 1 - *t).count();
            let agree = direct.max(swapped) as f64 / labels.len() as f64;
            assert!(agree >= 0.9, "{}: purity {agree}", child.node_id);
        }

        // Child documents partition the root's kept documents exactly.
        let child_total: usize = root.children.values().map(|c| c.doc_ids.len()).sum();
        assert_eq!(child_total, root.assignments.len());
    }

    #[test]
    fn small_topics_stay_leaves() {
        let docs = planted_two_level(15, 3);
        let (mut hp, sp) = test_params(1);
        hp.min_docs = 1000;
        let root = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert_eq!(root.k, 2);
        assert!(root.children.is_empty());
    }

    #[test]
    fn selected_policy_expands_only_listed_topics() {
        let docs = planted_two_level(15, 3);
        let (mut hp, sp) = test_params(1);
        hp.expand_policy = ExpandPolicy::Selected(BTreeMap::from([(
            "root".to_string(),
            vec![0],
        )]));
        let root = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert_eq!(root.children.len(), 1);
        assert!(root.children.contains_key(&0));

        hp.expand_policy =
            ExpandPolicy::Selected(BTreeMap::from([("root".to_string(), vec![9])]));
        let err = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap_err();
        assert!(err.to_string().contains("topic 9"), "{err}");
    }

    #[test]
    fn emptied_vocabulary_becomes_a_bare_leaf() {
        let docs = planted_two_level(15, 3);
        let (mut hp, sp) = test_params(1);
        hp.min_df = 10_000;
        let root = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert_eq!(root.k, 0);
        assert!(root.children.is_empty());
        assert!(root.vocab.is_none());
        assert_eq!(root.doc_ids.len(), 60);
        assert!(root.assignments.is_empty());
    }

    #[test]
    fn tree_is_deterministic() {
        let docs = planted_two_level(12, 7);
        let (hp, sp) = test_params(1);
        let categories: BTreeMap<String, String> = docs
            .iter()
            .map(|d| {
                let cat = if d.doc_id.starts_with("alpha") { "cs.LG" } else { "math.OC" };
                (d.doc_id.clone(), cat.to_string())
            })
            .collect();
        let a = build_topic_tree(&docs, &categories, &hp, &sp, None).unwrap();
        let b = build_topic_tree(&docs, &categories, &hp, &sp, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_histograms_count_assigned_documents() {
        let docs = planted_two_level(15, 3);
        let (hp, sp) = test_params(0);
        let categories: BTreeMap<String, String> = docs
            .iter()
            .map(|d| {
                let cat = if d.doc_id.starts_with("alpha") { "cs.LG" } else { "math.OC" };
                (d.doc_id.clone(), cat.to_string())
            })
            .collect();
        let root = build_topic_tree(&docs, &categories, &hp, &sp, None).unwrap();
        let total: usize = root
            .category_histogram
            .iter()
            .flat_map(|h| h.values())
            .sum();
        assert_eq!(total, root.assignments.len());
        // Pure super-topics: each topic's histogram holds a single category.
        for hist in &root.category_histogram {
            assert_eq!(hist.len(), 1);
        }
    }

    #[test]
    fn tree_round_trips_through_the_directory_mirror() {
        let docs = planted_two_level(12, 7);
        let (hp, sp) = test_params(1);
        let categories: BTreeMap<String, String> = docs
            .iter()
            .map(|d| (d.doc_id.clone(), "stat.ML".to_string()))
            .collect();
        let root = build_topic_tree(&docs, &categories, &hp, &sp, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_tree(&root, dir.path()).unwrap();

        for name in ["w.txt", "h.txt", "vocab.txt", "keywords.tsv", "assignments.tsv", "dropped.txt", "meta.json"] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        let keywords = std::fs::read_to_string(dir.path().join("keywords.tsv")).unwrap();
        assert!(keywords.starts_with("topic\trank\ttoken\traw\tnormalized\n"));
        for idx in root.children.keys() {
            assert!(dir.path().join(idx.to_string()).join("meta.json").exists());
        }

        let reread = read_tree(dir.path()).unwrap();
        assert_eq!(reread, root);
    }

    #[test]
    fn node_checkpoints_survive_a_rerun() {
        let docs = planted_two_level(12, 7);
        let (hp, sp) = test_params(1);
        let dir = tempfile::tempdir().unwrap();
        let a = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, Some(dir.path())).unwrap();
        assert!(dir.path().join("split_manifest.json").exists());
        let b = build_topic_tree(&docs, &BTreeMap::new(), &hp, &sp, Some(dir.path())).unwrap();
        assert_eq!(a, b);

        // A changed corpus stales the node checkpoints; they are discarded
        // and recomputed rather than surfacing an error.
        let smaller = planted_two_level(11, 7);
        let c = build_topic_tree(&smaller, &BTreeMap::new(), &hp, &sp, Some(dir.path())).unwrap();
        let d = build_topic_tree(&smaller, &BTreeMap::new(), &hp, &sp, None).unwrap();
        assert_eq!(c, d);
    }
}
