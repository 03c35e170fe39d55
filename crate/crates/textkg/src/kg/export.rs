//! Graph serialization: JSON Lines (lossless, re-importable), GraphML for
//! graph tooling, and idempotent Cypher MERGE statements for property-graph
//! databases. All three list nodes before edges, nodes sorted by id and
//! edges by (src, dst, kind), so exports are byte-deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeKind, GraphNode, KnowledgeGraph, NodeKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Jsonl,
    Graphml,
    Cypher,
}

impl ExportFormat {
    pub fn parse(text: &str) -> Result<ExportFormat> {
        match text.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "graphml" => Ok(ExportFormat::Graphml),
            "cypher" => Ok(ExportFormat::Cypher),
            other => Err(Error::invalid(format!(
                "unknown export format {other:?}; expected jsonl, graphml, or cypher"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum JsonlRecord {
    Node {
        id: String,
        kind: NodeKind,
        attributes: BTreeMap<String, String>,
    },
    Edge {
        src: String,
        dst: String,
        kind: EdgeKind,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        weight: Option<f64>,
    },
}

/// Writes the graph in the requested format.
pub fn export_graph(g: &KnowledgeGraph, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::Jsonl => to_jsonl(g)?,
        ExportFormat::Graphml => to_graphml(g),
        ExportFormat::Cypher => to_cypher(g),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_jsonl(g: &KnowledgeGraph) -> Result<String> {
    let mut out = String::new();
    for node in g.nodes() {
        let record = JsonlRecord::Node {
            id: node.node_id.clone(),
            kind: node.kind,
            attributes: node.attributes.clone(),
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    for edge in g.edges() {
        let record = JsonlRecord::Edge {
            src: edge.src,
            dst: edge.dst,
            kind: edge.kind,
            weight: edge.weight,
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Reads a JSON Lines export back into a graph. Exporting and re-importing
/// reproduces the original graph exactly (weights bit-for-bit).
pub fn import_jsonl(path: &Path) -> Result<KnowledgeGraph> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut g = KnowledgeGraph::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, Some(idx + 1), e.to_string()))?;
        match record {
            JsonlRecord::Node { id, kind, attributes } => g.insert_node(GraphNode {
                node_id: id,
                kind,
                attributes,
            }),
            JsonlRecord::Edge { src, dst, kind, weight } => {
                g.insert_edge(&src, &dst, kind, weight)?
            }
        }
    }
    g.validate()?;
    Ok(g)
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn to_graphml(g: &KnowledgeGraph) -> String {
    // Every distinct attribute name needs a <key> declaration up front.
    let mut attr_names: Vec<String> = g
        .nodes()
        .flat_map(|n| n.attributes.keys().cloned())
        .collect();
    attr_names.sort();
    attr_names.dedup();

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
    );
    out.push_str(
        "  <key id=\"kind\" for=\"node\" attr.name=\"kind\" attr.type=\"string\"/>\n",
    );
    for (i, name) in attr_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "  <key id=\"a{i}\" for=\"node\" attr.name=\"{}\" attr.type=\"string\"/>",
            xml_escape(name)
        );
    }
    out.push_str(
        "  <key id=\"ekind\" for=\"edge\" attr.name=\"kind\" attr.type=\"string\"/>\n",
    );
    out.push_str(
        "  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n",
    );
    out.push_str("  <graph id=\"G\" edgedefault=\"directed\">\n");
    let key_of: BTreeMap<&str, usize> = attr_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    for node in g.nodes() {
        let _ = writeln!(out, "    <node id=\"{}\">", xml_escape(&node.node_id));
        let _ = writeln!(out, "      <data key=\"kind\">{}</data>", node.kind);
        for (name, value) in &node.attributes {
            let _ = writeln!(
                out,
                "      <data key=\"a{}\">{}</data>",
                key_of[name.as_str()],
                xml_escape(value)
            );
        }
        out.push_str("    </node>\n");
    }
    for edge in g.edges() {
        let _ = writeln!(
            out,
            "    <edge source=\"{}\" target=\"{}\">",
            xml_escape(&edge.src),
            xml_escape(&edge.dst)
        );
        let _ = writeln!(out, "      <data key=\"ekind\">{}</data>", edge.kind);
        if let Some(w) = edge.weight {
            let _ = writeln!(out, "      <data key=\"weight\">{w:?}</data>");
        }
        out.push_str("    </edge>\n");
    }
    out.push_str("  </graph>\n");
    out.push_str("</graphml>\n");
    out
}

fn cypher_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out
}

fn to_cypher(g: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for node in g.nodes() {
        let mut props = format!("node_id: \"{}\"", cypher_escape(&node.node_id));
        for (name, value) in &node.attributes {
            let _ = write!(props, ", {name}: \"{}\"", cypher_escape(value));
        }
        let _ = writeln!(out, "MERGE (n:{} {{{props}}});", node.kind);
    }
    for edge in g.edges() {
        let weight = match edge.weight {
            Some(w) => format!(" SET r.weight = {w:?}"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "MATCH (a {{node_id: \"{}\"}}), (b {{node_id: \"{}\"}}) \
             MERGE (a)-[r:{}]->(b){weight};",
            cypher_escape(&edge.src),
            cypher_escape(&edge.dst),
            edge.kind
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{
        add_community_edges, assemble_graph, EntityAnnotation, EntityLabel, GraphEdge,
    };
    use crate::corpus::DocumentRecord;
    use crate::hierarchy::{KeywordEntry, TopicNode};
    use ndarray::array;
    use std::collections::BTreeSet;

    fn fixture() -> KnowledgeGraph {
        let mut d1 = DocumentRecord {
            doc_id: "d1".to_string(),
            title: "A \"quoted\" title <with> specials & breaks".to_string(),
            body: String::new(),
            authors: vec!["Ada Lovelace".to_string()],
            primary_category: Some("cs.LG".to_string()),
            categories: vec!["cs.LG".to_string()],
            year: Some(2021),
            doi: None,
            extra: Default::default(),
        };
        d1.body.push_str("text");
        let d2 = DocumentRecord {
            doc_id: "d2".to_string(),
            title: "plain".to_string(),
            body: "text".to_string(),
            authors: Vec::new(),
            primary_category: None,
            categories: Vec::new(),
            year: None,
            doi: None,
            extra: Default::default(),
        };
        let node = TopicNode {
            node_id: "root".to_string(),
            depth: 0,
            doc_ids: vec!["d1".to_string(), "d2".to_string()],
            dropped: Vec::new(),
            vocab: None,
            k: 1,
            w: array![[1.0]],
            h: array![[0.25, 0.75]],
            rel_error: Some(0.1),
            assignments: vec![("d1".to_string(), 0), ("d2".to_string(), 0)],
            keywords: vec![vec![KeywordEntry {
                token: "alpha".to_string(),
                raw: 1.0,
                normalized: 1.0,
            }]],
            category_histogram: vec![Default::default()],
            children: Default::default(),
        };
        let anns = vec![
            EntityAnnotation {
                doc_id: "d1".to_string(),
                label: EntityLabel::Product,
                surface: "MNIST".to_string(),
                normalized: "mnist".to_string(),
            },
            EntityAnnotation {
                doc_id: "d2".to_string(),
                label: EntityLabel::Product,
                surface: "mnist".to_string(),
                normalized: "mnist".to_string(),
            },
        ];
        let g = assemble_graph(&[d1, d2], &node, &anns).unwrap();
        add_community_edges(g).unwrap()
    }

    #[test]
    fn format_parsing_is_case_insensitive() {
        assert_eq!(ExportFormat::parse("JSONL").unwrap(), ExportFormat::Jsonl);
        assert_eq!(ExportFormat::parse("GraphML").unwrap(), ExportFormat::Graphml);
        assert!(ExportFormat::parse("dot").is_err());
    }

    #[test]
    fn jsonl_lists_sorted_nodes_before_edges() {
        let g = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        export_graph(&g, ExportFormat::Jsonl, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), g.node_count() + g.edge_count());
        let first_edge = lines
            .iter()
            .position(|l| l.contains("\"type\":\"edge\""))
            .unwrap();
        assert_eq!(first_edge, g.node_count(), "all nodes precede all edges");
        let node_ids: Vec<String> = lines[..first_edge]
            .iter()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        let mut sorted = node_ids.clone();
        sorted.sort();
        assert_eq!(node_ids, sorted);
    }

    #[test]
    fn jsonl_round_trips_exactly() {
        let g = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        export_graph(&g, ExportFormat::Jsonl, &path).unwrap();
        let back = import_jsonl(&path).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn empty_graph_exports_an_empty_jsonl() {
        let g = KnowledgeGraph::new();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        export_graph(&g, ExportFormat::Jsonl, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert_eq!(import_jsonl(&path).unwrap(), g);
    }

    #[test]
    fn graphml_escapes_and_counts() {
        let g = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.graphml");
        export_graph(&g, ExportFormat::Graphml, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<?xml"));
        assert!(text.contains("&quot;quoted&quot;"));
        assert!(text.contains("&lt;with&gt;"));
        assert_eq!(text.matches("<node id=").count(), g.node_count());
        assert_eq!(text.matches("<edge source=").count(), g.edge_count());
        assert!(text.trim_end().ends_with("</graphml>"));
    }

    #[test]
    fn cypher_emits_one_merge_per_element() {
        let g = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cypher");
        export_graph(&g, ExportFormat::Cypher, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), g.node_count() + g.edge_count());
        for line in &lines {
            assert!(line.contains("MERGE"), "{line}");
            assert!(line.ends_with(';'));
        }
        assert!(text.contains("\\\"quoted\\\""));
        let share = lines
            .iter()
            .find(|l| l.contains("SHARES_ENTITY"))
            .unwrap();
        assert!(share.contains("SET r.weight = 1.0"), "{share}");
    }

    #[test]
    fn exports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        export_graph(&fixture(), ExportFormat::Jsonl, &a).unwrap();
        export_graph(&fixture(), ExportFormat::Jsonl, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn edge_listing_orders_by_src_dst_kind() {
        let g = fixture();
        let edges: Vec<GraphEdge> = g.edges().collect();
        let keys: Vec<(String, String, EdgeKind)> = edges
            .iter()
            .map(|e| (e.src.clone(), e.dst.clone(), e.kind))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let distinct: BTreeSet<_> = keys.iter().collect();
        assert_eq!(distinct.len(), keys.len(), "no duplicate (src, dst, kind)");
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let g = KnowledgeGraph::new();
        let err = export_graph(&g, ExportFormat::Jsonl, Path::new("/nonexistent/dir/g.jsonl"))
            .unwrap_err();
        assert!(err.to_string().contains("g.jsonl"), "{err}");
    }
}
