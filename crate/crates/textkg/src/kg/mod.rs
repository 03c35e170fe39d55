//! Multi-modal knowledge graph assembly.
//!
//! Documents, topics, keywords, entities, categories, and authors become
//! typed nodes; metadata and factorization results become typed edges.
//! Entity mentions come either from an external annotation file or from a
//! built-in gazetteer matcher. Node ids are namespaced (`doc:`, `topic:`,
//! `kw:`, `ent:`, `cat:`, `author:`) so the six kinds can never collide.

pub mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::hierarchy::TopicNode;

/// The six entity labels kept from a typical NER tag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityLabel {
    Organization,
    Event,
    Person,
    Location,
    Product,
    GeopoliticalEntity,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 6] = [
        EntityLabel::Organization,
        EntityLabel::Event,
        EntityLabel::Person,
        EntityLabel::Location,
        EntityLabel::Product,
        EntityLabel::GeopoliticalEntity,
    ];

    /// Parses a label, accepting both full names and the common NER
    /// shorthands (ORG, GPE, ...), case-insensitively. Unknown labels are
    /// None; callers decide whether that skips or errors.
    pub fn parse(text: &str) -> Option<EntityLabel> {
        match text.to_ascii_lowercase().as_str() {
            "organization" | "org" => Some(EntityLabel::Organization),
            "event" => Some(EntityLabel::Event),
            "person" => Some(EntityLabel::Person),
            "location" | "loc" => Some(EntityLabel::Location),
            "product" => Some(EntityLabel::Product),
            "geopoliticalentity" | "geopolitical_entity" | "gpe" => {
                Some(EntityLabel::GeopoliticalEntity)
            }
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityLabel::Organization => "Organization",
            EntityLabel::Event => "Event",
            EntityLabel::Person => "Person",
            EntityLabel::Location => "Location",
            EntityLabel::Product => "Product",
            EntityLabel::GeopoliticalEntity => "GeopoliticalEntity",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One entity mention in one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub doc_id: String,
    pub label: EntityLabel,
    /// The text as it appeared.
    pub surface: String,
    /// Case-folded, whitespace-collapsed surface; the entity identity key.
    pub normalized: String,
}

/// Case-folds and collapses whitespace runs to single spaces.
pub fn normalize_surface(surface: &str) -> String {
    surface
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Result of reading an annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationIngest {
    pub annotations: Vec<EntityAnnotation>,
    /// Records whose label fell outside the six-label set.
    pub skipped_labels: usize,
}

/// Reads tab-separated annotation records: doc_id, label, text (the text
/// keeps any further tabs). Labels outside the six-label set are skipped
/// and counted; duplicate (doc_id, label, normalized) triples collapse to
/// the first occurrence. Blank lines are ignored.
pub fn ingest_annotations(path: &Path) -> Result<AnnotationIngest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut annotations = Vec::new();
    let mut seen: BTreeSet<(String, EntityLabel, String)> = BTreeSet::new();
    let mut skipped_labels = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.splitn(3, '\t');
        let doc_id = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, Some(lineno), "record missing doc_id"))?;
        let label_text = parts
            .next()
            .ok_or_else(|| Error::parse(path, Some(lineno), "record missing label"))?;
        let surface = parts
            .next()
            .ok_or_else(|| Error::parse(path, Some(lineno), "record missing text"))?;
        let Some(label) = EntityLabel::parse(label_text) else {
            skipped_labels += 1;
            continue;
        };
        let normalized = normalize_surface(surface);
        if normalized.is_empty() {
            return Err(Error::parse(path, Some(lineno), "annotation text is blank"));
        }
        if seen.insert((doc_id.to_string(), label, normalized.clone())) {
            annotations.push(EntityAnnotation {
                doc_id: doc_id.to_string(),
                label,
                surface: surface.to_string(),
                normalized,
            });
        }
    }
    Ok(AnnotationIngest {
        annotations,
        skipped_labels,
    })
}

/// True at ASCII word boundaries: position 0 / end of text, or a
/// non-alphanumeric neighbor.
fn is_boundary(bytes: &[u8], pos: usize) -> bool {
    if pos == 0 || pos >= bytes.len() {
        return true;
    }
    !bytes[pos - 1].is_ascii_alphanumeric() || !bytes[pos].is_ascii_alphanumeric()
}

/// ASCII-lowercases, preserving byte offsets (unlike full case folding).
fn ascii_lower(text: &str) -> String {
    text.chars()
        .map(|c| c.to_ascii_lowercase())
        .collect::<String>()
}

/// Scans title and body for gazetteer terms, case-insensitively (ASCII) and
/// at word boundaries. Overlapping matches resolve longest-first, then
/// leftmost. One annotation per distinct (document, label, normalized term).
pub fn gazetteer_match(
    docs: &[DocumentRecord],
    gazetteer: &BTreeMap<EntityLabel, Vec<String>>,
) -> Vec<EntityAnnotation> {
    struct Candidate {
        start: usize,
        len: usize,
        label: EntityLabel,
        term_index: usize,
    }
    let terms: Vec<(EntityLabel, String, String)> = gazetteer
        .iter()
        .flat_map(|(label, list)| {
            list.iter().filter(|t| !t.trim().is_empty()).map(move |t| {
                (*label, ascii_lower(t.trim()), normalize_surface(t))
            })
        })
        .collect();
    let mut out = Vec::new();
    for doc in docs {
        let haystack = format!("{} {}", doc.title, doc.body);
        let lowered = ascii_lower(&haystack);
        let bytes = lowered.as_bytes();
        let mut candidates: Vec<Candidate> = Vec::new();
        for (term_index, (label, needle, _)) in terms.iter().enumerate() {
            let mut from = 0usize;
            while let Some(found) = lowered[from..].find(needle.as_str()) {
                let start = from + found;
                let end = start + needle.len();
                if is_boundary(bytes, start) && is_boundary(bytes, end) {
                    candidates.push(Candidate {
                        start,
                        len: needle.len(),
                        label: *label,
                        term_index,
                    });
                }
                from = start + 1;
            }
        }
        candidates.sort_by(|a, b| {
            b.len
                .cmp(&a.len)
                .then(a.start.cmp(&b.start))
                .then(a.label.cmp(&b.label))
        });
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut seen: BTreeSet<(EntityLabel, usize)> = BTreeSet::new();
        for c in candidates {
            let end = c.start + c.len;
            if taken.iter().any(|(s, e)| c.start < *e && *s < end) {
                continue;
            }
            taken.push((c.start, end));
            if seen.insert((c.label, c.term_index)) {
                out.push(EntityAnnotation {
                    doc_id: doc.doc_id.clone(),
                    label: c.label,
                    surface: haystack[c.start..end].to_string(),
                    normalized: terms[c.term_index].2.clone(),
                });
            }
        }
    }
    // One annotation per (doc, label, normalized); order by identity.
    out.sort();
    out.dedup_by(|a, b| {
        a.doc_id == b.doc_id && a.label == b.label && a.normalized == b.normalized
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Document,
    Topic,
    Keyword,
    Entity,
    Category,
    Author,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Document => "Document",
            NodeKind::Topic => "Topic",
            NodeKind::Keyword => "Keyword",
            NodeKind::Entity => "Entity",
            NodeKind::Category => "Category",
            NodeKind::Author => "Author",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Declared alphabetically so the derived order matches the serialized
/// names; edge listings group by kind in the same order either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    AuthoredBy,
    HasKeyword,
    HasTopic,
    InCategory,
    Mentions,
    SharesEntity,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::AuthoredBy => "AUTHORED_BY",
            EdgeKind::HasKeyword => "HAS_KEYWORD",
            EdgeKind::HasTopic => "HAS_TOPIC",
            EdgeKind::InCategory => "IN_CATEGORY",
            EdgeKind::Mentions => "MENTIONS",
            EdgeKind::SharesEntity => "SHARES_ENTITY",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub node_id: String,
    pub kind: NodeKind,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes_total: usize,
    pub edges_total: usize,
    pub nodes_by_kind: BTreeMap<String, usize>,
    pub edges_by_kind: BTreeMap<String, usize>,
}

/// A typed property graph. Nodes are keyed by id; edges by (src, dst, kind),
/// so duplicates are impossible by construction. Stats are maintained
/// incrementally and can be verified against a recount.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, GraphNode>,
    edges: BTreeMap<(String, String, EdgeKind), Option<f64>>,
    stats: GraphStats,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, node_id: &str) -> Option<&GraphNode> {
        self.nodes.get(node_id)
    }

    /// Nodes in node_id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    /// Edges in (src, dst, kind) order.
    pub fn edges(&self) -> impl Iterator<Item = GraphEdge> + '_ {
        self.edges.iter().map(|((src, dst, kind), weight)| GraphEdge {
            src: src.clone(),
            dst: dst.clone(),
            kind: *kind,
            weight: *weight,
        })
    }

    pub fn stats(&self) -> &GraphStats {
        &self.stats
    }

    /// Inserts a node; an existing node with the same id is left untouched.
    pub fn insert_node(&mut self, node: GraphNode) {
        let kind = node.kind;
        self.nodes.entry(node.node_id.clone()).or_insert_with(|| {
            self.stats.nodes_total += 1;
            *self.stats.nodes_by_kind.entry(kind.to_string()).or_insert(0) += 1;
            node
        });
    }

    /// Inserts an edge; both endpoints must already exist. Re-inserting the
    /// same (src, dst, kind) replaces the weight without duplicating.
    pub fn insert_edge(
        &mut self,
        src: &str,
        dst: &str,
        kind: EdgeKind,
        weight: Option<f64>,
    ) -> Result<()> {
        for endpoint in [src, dst] {
            if !self.nodes.contains_key(endpoint) {
                return Err(Error::invalid(format!(
                    "edge {kind} references missing node {endpoint:?}"
                )));
            }
        }
        if let Some(w) = weight {
            if !w.is_finite() {
                return Err(Error::invalid(format!(
                    "edge {src:?} -> {dst:?} has non-finite weight"
                )));
            }
        }
        let key = (src.to_string(), dst.to_string(), kind);
        if self.edges.insert(key, weight).is_none() {
            self.stats.edges_total += 1;
            *self.stats.edges_by_kind.entry(kind.to_string()).or_insert(0) += 1;
        }
        Ok(())
    }

    /// Recounts every invariant: referential integrity and stats equality.
    pub fn validate(&self) -> Result<()> {
        for (src, dst, kind) in self.edges.keys() {
            for endpoint in [src, dst] {
                if !self.nodes.contains_key(endpoint) {
                    return Err(Error::invalid(format!(
                        "edge {kind} references missing node {endpoint:?}"
                    )));
                }
            }
        }
        let mut recount = GraphStats {
            nodes_total: self.nodes.len(),
            edges_total: self.edges.len(),
            ..GraphStats::default()
        };
        for node in self.nodes.values() {
            *recount.nodes_by_kind.entry(node.kind.to_string()).or_insert(0) += 1;
        }
        for (_, _, kind) in self.edges.keys() {
            *recount.edges_by_kind.entry(kind.to_string()).or_insert(0) += 1;
        }
        if recount != self.stats {
            return Err(Error::invalid(format!(
                "graph stats drifted: counted {recount:?}, stored {:?}",
                self.stats
            )));
        }
        Ok(())
    }
}

pub fn doc_node_id(doc_id: &str) -> String {
    format!("doc:{doc_id}")
}

pub fn topic_node_id(tree_path: &str, topic: usize) -> String {
    format!("topic:{tree_path}#{topic}")
}

pub fn keyword_node_id(token: &str) -> String {
    format!("kw:{token}")
}

pub fn entity_node_id(label: EntityLabel, normalized: &str) -> String {
    format!("ent:{label}:{normalized}")
}

pub fn category_node_id(category: &str) -> String {
    format!("cat:{category}")
}

pub fn author_node_id(author: &str) -> String {
    format!("author:{author}")
}

/// Builds the graph for one topic-tree node: Document nodes with their
/// observable attributes, Topic nodes for the node's k topics, Keyword
/// nodes from the ranked keyword lists, Entity nodes deduped by
/// (label, normalized), plus Category and Author nodes from metadata.
/// Every assigned document gets exactly one HAS_TOPIC edge (weight = its
/// argmax coefficient after L1-normalizing the column); documents the node
/// dropped during re-filtering get none, with a warning.
pub fn assemble_graph(
    docs: &[DocumentRecord],
    node: &TopicNode,
    annotations: &[EntityAnnotation],
) -> Result<KnowledgeGraph> {
    let covered: BTreeSet<&str> = node.doc_ids.iter().map(String::as_str).collect();
    let known: BTreeSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    for doc in docs {
        if !covered.contains(doc.doc_id.as_str()) {
            return Err(Error::invalid(format!(
                "document {:?} is not covered by topic node {:?}",
                doc.doc_id, node.node_id
            )));
        }
    }
    for ann in annotations {
        if !known.contains(ann.doc_id.as_str()) {
            return Err(Error::invalid(format!(
                "annotation references unknown document {:?}",
                ann.doc_id
            )));
        }
    }

    let mut g = KnowledgeGraph::new();

    for doc in docs {
        let mut attributes = BTreeMap::new();
        attributes.insert("doc_id".to_string(), doc.doc_id.clone());
        attributes.insert("title".to_string(), doc.title.clone());
        if let Some(year) = doc.year {
            attributes.insert("year".to_string(), year.to_string());
        }
        if let Some(doi) = &doc.doi {
            attributes.insert("doi".to_string(), doi.clone());
        }
        if let Some(category) = &doc.primary_category {
            attributes.insert("primary_category".to_string(), category.clone());
        }
        g.insert_node(GraphNode {
            node_id: doc_node_id(&doc.doc_id),
            kind: NodeKind::Document,
            attributes,
        });
    }

    let mut topic_doc_counts = vec![0usize; node.k];
    for (_, topic) in &node.assignments {
        if *topic < node.k {
            topic_doc_counts[*topic] += 1;
        }
    }
    for (topic, count) in topic_doc_counts.iter().enumerate() {
        let mut attributes = BTreeMap::new();
        attributes.insert("path".to_string(), node.node_id.clone());
        attributes.insert("topic_index".to_string(), topic.to_string());
        attributes.insert("n_docs".to_string(), count.to_string());
        g.insert_node(GraphNode {
            node_id: topic_node_id(&node.node_id, topic),
            kind: NodeKind::Topic,
            attributes,
        });
    }

    for (topic, list) in node.keywords.iter().enumerate() {
        let topic_id = topic_node_id(&node.node_id, topic);
        for entry in list {
            let kw_id = keyword_node_id(&entry.token);
            g.insert_node(GraphNode {
                node_id: kw_id.clone(),
                kind: NodeKind::Keyword,
                attributes: BTreeMap::from([("token".to_string(), entry.token.clone())]),
            });
            g.insert_edge(&kw_id, &topic_id, EdgeKind::HasKeyword, Some(entry.normalized))?;
        }
    }

    // HAS_TOPIC: the assignment index maps straight onto H's columns.
    let assigned: BTreeSet<&str> = node.assignments.iter().map(|(id, _)| id.as_str()).collect();
    for (j, (doc_id, topic)) in node.assignments.iter().enumerate() {
        if !known.contains(doc_id.as_str()) {
            continue;
        }
        let column = node.h.column(j);
        let l1: f64 = column.sum();
        let weight = if l1 > 0.0 { column[*topic] / l1 } else { 0.0 };
        g.insert_edge(
            &doc_node_id(doc_id),
            &topic_node_id(&node.node_id, *topic),
            EdgeKind::HasTopic,
            Some(weight),
        )?;
    }
    let skipped = docs
        .iter()
        .filter(|d| !assigned.contains(d.doc_id.as_str()))
        .count();
    if skipped > 0 {
        log::warn!("{skipped} documents have no topic assignment at {:?}", node.node_id);
    }

    for ann in annotations {
        let ent_id = entity_node_id(ann.label, &ann.normalized);
        g.insert_node(GraphNode {
            node_id: ent_id.clone(),
            kind: NodeKind::Entity,
            attributes: BTreeMap::from([
                ("label".to_string(), ann.label.to_string()),
                ("normalized".to_string(), ann.normalized.clone()),
                ("surface".to_string(), ann.surface.clone()),
            ]),
        });
        g.insert_edge(&doc_node_id(&ann.doc_id), &ent_id, EdgeKind::Mentions, None)?;
    }

    for doc in docs {
        let doc_id = doc_node_id(&doc.doc_id);
        for category in &doc.categories {
            let cat_id = category_node_id(category);
            g.insert_node(GraphNode {
                node_id: cat_id.clone(),
                kind: NodeKind::Category,
                attributes: BTreeMap::from([("category".to_string(), category.clone())]),
            });
            g.insert_edge(&doc_id, &cat_id, EdgeKind::InCategory, None)?;
        }
        for author in &doc.authors {
            let author_id = author_node_id(author);
            g.insert_node(GraphNode {
                node_id: author_id.clone(),
                kind: NodeKind::Author,
                attributes: BTreeMap::from([("name".to_string(), author.clone())]),
            });
            g.insert_edge(&doc_id, &author_id, EdgeKind::AuthoredBy, None)?;
        }
    }

    g.validate()?;
    Ok(g)
}

/// Caps the number of document pairs SHARES_ENTITY may create.
pub const DEFAULT_MAX_SHARED_PAIRS: usize = 1_000_000;

/// Adds one SHARES_ENTITY edge per unordered document pair that mentions at
/// least one common entity, weighted by the number of shared entities. The
/// source is the lexicographically smaller document id; re-running changes
/// nothing. Fails rather than exceeding `max_pairs` edges.
pub fn add_community_edges_with_limit(
    mut g: KnowledgeGraph,
    max_pairs: usize,
) -> Result<KnowledgeGraph> {
    let mut entity_docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for edge in g.edges() {
        if edge.kind == EdgeKind::Mentions {
            entity_docs.entry(edge.dst).or_default().push(edge.src);
        }
    }
    let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for docs in entity_docs.values() {
        for i in 0..docs.len() {
            for j in (i + 1)..docs.len() {
                let (a, b) = if docs[i] <= docs[j] {
                    (docs[i].clone(), docs[j].clone())
                } else {
                    (docs[j].clone(), docs[i].clone())
                };
                *pair_counts.entry((a, b)).or_insert(0) += 1;
                if pair_counts.len() > max_pairs {
                    return Err(Error::invalid(format!(
                        "shared-entity pairs exceed the {max_pairs} cap; \
                         raise the cap or prune annotations"
                    )));
                }
            }
        }
    }
    for ((a, b), count) in pair_counts {
        g.insert_edge(&a, &b, EdgeKind::SharesEntity, Some(count as f64))?;
    }
    g.validate()?;
    Ok(g)
}

pub fn add_community_edges(g: KnowledgeGraph) -> Result<KnowledgeGraph> {
    add_community_edges_with_limit(g, DEFAULT_MAX_SHARED_PAIRS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::KeywordEntry;
    use ndarray::array;
    use std::io::Write;

    #[test]
    fn label_parsing_accepts_shorthands() {
        assert_eq!(EntityLabel::parse("ORG"), Some(EntityLabel::Organization));
        assert_eq!(EntityLabel::parse("gpe"), Some(EntityLabel::GeopoliticalEntity));
        assert_eq!(EntityLabel::parse("Person"), Some(EntityLabel::Person));
        assert_eq!(EntityLabel::parse("loc"), Some(EntityLabel::Location));
        assert_eq!(EntityLabel::parse("Date"), None);
        assert_eq!(EntityLabel::ALL.len(), 6);
    }

    #[test]
    fn surface_normalization_folds_case_and_whitespace() {
        assert_eq!(normalize_surface("Alice  Smith"), "alice smith");
        assert_eq!(normalize_surface("  MNIST\t"), "mnist");
    }

    fn write_annotations(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn ingest_normalizes_skips_and_dedups() {
        let file = write_annotations(&[
            "d1\tPerson\tAlice  Smith",
            "d1\tDate\t2020-01-01",
            "d1\tProduct\tMNIST",
            "d1\tProduct\tmnist",
            "",
            "d2\tORG\tAcme Labs",
        ]);
        let ingest = ingest_annotations(file.path()).unwrap();
        assert_eq!(ingest.skipped_labels, 1);
        assert_eq!(ingest.annotations.len(), 3);
        assert_eq!(ingest.annotations[0].normalized, "alice smith");
        assert_eq!(ingest.annotations[1].surface, "MNIST");
        assert_eq!(ingest.annotations[2].label, EntityLabel::Organization);
    }

    #[test]
    fn ingest_rejects_malformed_records() {
        let file = write_annotations(&["d1\tPerson"]);
        let err = ingest_annotations(file.path()).unwrap_err();
        assert!(err.to_string().contains("missing text"), "{err}");

        let file = write_annotations(&["d1\tPerson\t   "]);
        let err = ingest_annotations(file.path()).unwrap_err();
        assert!(err.to_string().contains("blank"), "{err}");
    }

    fn doc(id: &str, title: &str, body: &str) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            authors: Vec::new(),
            primary_category: None,
            categories: Vec::new(),
            year: None,
            doi: None,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn gazetteer_matches_case_insensitively() {
        let docs = vec![doc("d1", "A study", "Benchmarks run on MNIST digits.")];
        let gaz = BTreeMap::from([(EntityLabel::Product, vec!["mnist".to_string()])]);
        let found = gazetteer_match(&docs, &gaz);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].surface, "MNIST");
        assert_eq!(found[0].normalized, "mnist");
        assert_eq!(found[0].label, EntityLabel::Product);
    }

    #[test]
    fn gazetteer_empty_is_vacuous() {
        let docs = vec![doc("d1", "t", "some text")];
        assert!(gazetteer_match(&docs, &BTreeMap::new()).is_empty());
    }

    #[test]
    fn gazetteer_prefers_the_longest_match() {
        let docs = vec![doc("d1", "", "We visited New York last fall.")];
        let gaz = BTreeMap::from([(
            EntityLabel::GeopoliticalEntity,
            vec!["new york".to_string(), "york".to_string()],
        )]);
        let found = gazetteer_match(&docs, &gaz);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].normalized, "new york");
    }

    #[test]
    fn gazetteer_respects_word_boundaries() {
        let docs = vec![doc("d1", "", "prevention of events")];
        let gaz = BTreeMap::from([(EntityLabel::Event, vec!["event".to_string()])]);
        assert!(gazetteer_match(&docs, &gaz).is_empty());
    }

    #[test]
    fn gazetteer_dedups_repeated_mentions() {
        let docs = vec![doc("d1", "MNIST", "MNIST and again mnist.")];
        let gaz = BTreeMap::from([(EntityLabel::Product, vec!["mnist".to_string()])]);
        assert_eq!(gazetteer_match(&docs, &gaz).len(), 1);
    }

    fn tiny_node(doc_ids: &[&str]) -> TopicNode {
        TopicNode {
            node_id: "root".to_string(),
            depth: 0,
            doc_ids: doc_ids.iter().map(|s| s.to_string()).collect(),
            dropped: Vec::new(),
            vocab: None,
            k: 1,
            w: array![[1.0]],
            h: array![[0.4, 0.7]],
            rel_error: Some(0.0),
            assignments: doc_ids.iter().map(|s| (s.to_string(), 0usize)).collect(),
            keywords: vec![vec![KeywordEntry {
                token: "kw1".to_string(),
                raw: 0.9,
                normalized: 0.9,
            }]],
            category_histogram: vec![BTreeMap::new()],
            children: BTreeMap::new(),
        }
    }

    #[test]
    fn minimal_fixture_counts_match() {
        let docs = vec![doc("d1", "one", "body"), doc("d2", "two", "body")];
        let node = tiny_node(&["d1", "d2"]);
        let g = assemble_graph(&docs, &node, &[]).unwrap();
        assert_eq!(g.node_count(), 4, "2 documents, 1 topic, 1 keyword");
        assert_eq!(g.edge_count(), 3, "2 HAS_TOPIC, 1 HAS_KEYWORD");
        let topic_edges: Vec<GraphEdge> = g
            .edges()
            .filter(|e| e.kind == EdgeKind::HasTopic)
            .collect();
        assert_eq!(topic_edges.len(), 2);
        for edge in &topic_edges {
            assert_eq!(edge.weight, Some(1.0), "k=1 normalizes to weight 1");
        }
        g.validate().unwrap();
    }

    #[test]
    fn empty_corpus_builds_an_empty_graph() {
        let node = TopicNode {
            doc_ids: Vec::new(),
            assignments: Vec::new(),
            keywords: Vec::new(),
            category_histogram: Vec::new(),
            k: 0,
            w: array![[]],
            h: array![[]],
            ..tiny_node(&[])
        };
        let g = assemble_graph(&[], &node, &[]).unwrap();
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn metadata_becomes_nodes_and_edges() {
        let mut d1 = doc("d1", "one", "body");
        d1.authors = vec!["Ada Lovelace".to_string()];
        d1.categories = vec!["cs.LG".to_string(), "stat.ML".to_string()];
        d1.primary_category = Some("cs.LG".to_string());
        d1.year = Some(2021);
        d1.doi = Some("10.1000/x".to_string());
        let docs = vec![d1, doc("d2", "two", "body")];
        let node = tiny_node(&["d1", "d2"]);
        let anns = vec![EntityAnnotation {
            doc_id: "d1".to_string(),
            label: EntityLabel::Product,
            surface: "MNIST".to_string(),
            normalized: "mnist".to_string(),
        }];
        let g = assemble_graph(&docs, &node, &anns).unwrap();
        assert!(g.node("doc:d1").is_some());
        assert!(g.node("topic:root#0").is_some());
        assert!(g.node("kw:kw1").is_some());
        assert!(g.node("ent:Product:mnist").is_some());
        assert!(g.node("cat:cs.LG").is_some());
        assert!(g.node("cat:stat.ML").is_some());
        assert!(g.node("author:Ada Lovelace").is_some());
        let d1_node = g.node("doc:d1").unwrap();
        assert_eq!(d1_node.attributes["year"], "2021");
        assert_eq!(d1_node.attributes["doi"], "10.1000/x");
        assert_eq!(g.stats().nodes_by_kind["Category"], 2);
        assert_eq!(g.stats().edges_by_kind["IN_CATEGORY"], 2);
        assert_eq!(g.stats().edges_by_kind["MENTIONS"], 1);
        assert_eq!(g.stats().edges_by_kind["AUTHORED_BY"], 1);
    }

    #[test]
    fn unknown_annotation_doc_is_an_error() {
        let docs = vec![doc("d1", "one", "body")];
        let node = tiny_node(&["d1"]);
        let anns = vec![EntityAnnotation {
            doc_id: "ghost".to_string(),
            label: EntityLabel::Person,
            surface: "X".to_string(),
            normalized: "x".to_string(),
        }];
        assert!(assemble_graph(&docs, &node, &anns).is_err());
    }

    #[test]
    fn topic_out_degree_is_exactly_one() {
        let docs = vec![doc("d1", "one", "b"), doc("d2", "two", "b")];
        let node = tiny_node(&["d1", "d2"]);
        let g = assemble_graph(&docs, &node, &[]).unwrap();
        for d in ["doc:d1", "doc:d2"] {
            let out = g
                .edges()
                .filter(|e| e.kind == EdgeKind::HasTopic && e.src == d)
                .count();
            assert_eq!(out, 1);
        }
    }

    #[test]
    fn keyword_weights_per_topic_sum_below_one() {
        let docs = vec![doc("d1", "one", "b"), doc("d2", "two", "b")];
        let mut node = tiny_node(&["d1", "d2"]);
        node.keywords = vec![vec![
            KeywordEntry { token: "a".into(), raw: 0.5, normalized: 0.5 },
            KeywordEntry { token: "b".into(), raw: 0.3, normalized: 0.3 },
        ]];
        let g = assemble_graph(&docs, &node, &[]).unwrap();
        let sum: f64 = g
            .edges()
            .filter(|e| e.kind == EdgeKind::HasKeyword && e.dst == "topic:root#0")
            .map(|e| e.weight.unwrap())
            .sum();
        assert!(sum <= 1.0 + 1e-12, "sum = {sum}");
    }

    fn entity(n: &str) -> EntityAnnotation {
        EntityAnnotation {
            doc_id: String::new(),
            label: EntityLabel::Organization,
            surface: n.to_string(),
            normalized: n.to_string(),
        }
    }

    fn mention_fixture(mentions: &[(&str, &str)]) -> KnowledgeGraph {
        let ids: BTreeSet<&str> = mentions.iter().map(|(d, _)| *d).collect();
        let docs: Vec<DocumentRecord> = ids.iter().map(|d| doc(d, "t", "b")).collect();
        let doc_ids: Vec<&str> = ids.into_iter().collect();
        let mut node = tiny_node(&doc_ids);
        node.h = ndarray::Array2::from_elem((1, doc_ids.len()), 0.5);
        let anns: Vec<EntityAnnotation> = mentions
            .iter()
            .map(|(d, e)| EntityAnnotation {
                doc_id: d.to_string(),
                ..entity(e)
            })
            .collect();
        assemble_graph(&docs, &node, &anns).unwrap()
    }

    #[test]
    fn three_docs_sharing_one_entity_link_pairwise() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "acme"), ("d3", "acme")]);
        let g = add_community_edges(g).unwrap();
        let shares: Vec<GraphEdge> = g
            .edges()
            .filter(|e| e.kind == EdgeKind::SharesEntity)
            .collect();
        assert_eq!(shares.len(), 3, "C(3,2) pairs");
        for e in &shares {
            assert_eq!(e.weight, Some(1.0));
            assert!(e.src < e.dst, "source is the smaller id");
        }
    }

    #[test]
    fn shared_entity_weight_counts_common_entities() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "acme"), ("d1", "zeus"), ("d2", "zeus")]);
        let g = add_community_edges(g).unwrap();
        let shares: Vec<GraphEdge> = g
            .edges()
            .filter(|e| e.kind == EdgeKind::SharesEntity)
            .collect();
        assert_eq!(shares.len(), 1);
        assert_eq!(shares[0].weight, Some(2.0));
    }

    #[test]
    fn no_shared_entities_adds_nothing() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "zeus")]);
        let before = g.edge_count();
        let g = add_community_edges(g).unwrap();
        assert_eq!(g.edge_count(), before);
    }

    #[test]
    fn community_edges_are_idempotent() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "acme")]);
        let once = add_community_edges(g).unwrap();
        let twice = add_community_edges(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn pair_cap_is_enforced() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "acme"), ("d3", "acme")]);
        let err = add_community_edges_with_limit(g, 2).unwrap_err();
        assert!(err.to_string().contains("cap"), "{err}");
    }

    #[test]
    fn shares_entity_weight_matches_brute_force() {
        let g = mention_fixture(&[
            ("d1", "acme"),
            ("d2", "acme"),
            ("d3", "acme"),
            ("d1", "zeus"),
            ("d3", "zeus"),
            ("d2", "hera"),
        ]);
        let g = add_community_edges(g).unwrap();
        let mentions: Vec<(String, String)> = g
            .edges()
            .filter(|e| e.kind == EdgeKind::Mentions)
            .map(|e| (e.src, e.dst))
            .collect();
        for edge in g.edges().filter(|e| e.kind == EdgeKind::SharesEntity) {
            let of = |d: &str| -> BTreeSet<String> {
                mentions
                    .iter()
                    .filter(|(src, _)| src == d)
                    .map(|(_, dst)| dst.clone())
                    .collect()
            };
            let shared = of(&edge.src).intersection(&of(&edge.dst)).count();
            assert_eq!(edge.weight, Some(shared as f64));
        }
    }

    #[test]
    fn stats_match_recounts_after_mutations() {
        let g = mention_fixture(&[("d1", "acme"), ("d2", "acme")]);
        let g = add_community_edges(g).unwrap();
        g.validate().unwrap();
        assert_eq!(g.stats().nodes_total, g.node_count());
        assert_eq!(g.stats().edges_total, g.edge_count());
    }
}
