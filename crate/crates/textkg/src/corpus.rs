//! Corpus loading, text cleaning, and vocabulary construction.
//!
//! Loading is strict: a record without a usable id or body fails the whole
//! load with its line number rather than being silently skipped, and a
//! duplicated id reports both offending lines. Cleaning is a fixed-order
//! pipeline whose output is idempotent under re-cleaning; lemma maps are
//! chain-resolved at load time so single application reaches a fixed point.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    /// Abstract or other main text.
    pub body: String,
    pub authors: Vec<String>,
    /// When present, always a member of `categories`.
    pub primary_category: Option<String>,
    pub categories: Vec<String>,
    pub year: Option<i32>,
    pub doi: Option<String>,
    /// Remaining scalar fields, stringified; compound values kept as JSON text.
    pub extra: BTreeMap<String, String>,
}

/// Maps record field names in the input file to their roles. Any field not
/// named here lands in `DocumentRecord::extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMapping {
    pub id: String,
    pub title: String,
    pub body: String,
    pub authors: String,
    pub categories: String,
    /// Optional dedicated primary-category field; when unset the first
    /// category is primary.
    pub primary_category: Option<String>,
    pub year: String,
    pub doi: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            id: "id".into(),
            title: "title".into(),
            body: "abstract".into(),
            authors: "authors".into(),
            categories: "categories".into(),
            primary_category: None,
            year: "year".into(),
            doi: "doi".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CleaningConfig {
    /// Compared against tokens after lowercasing and lemma application.
    pub stopwords: BTreeSet<String>,
    /// Removed from raw text before any other step; matched
    /// case-insensitively.
    pub stop_phrases: Vec<String>,
    /// Documents with fewer surviving in-vocabulary tokens are excluded.
    pub min_tokens: usize,
    pub join_hyphens: bool,
    pub lowercase: bool,
    pub strip_non_ascii: bool,
    /// Values must be fixed points of the map (the file loader resolves
    /// chains); the map is applied once per token.
    pub lemma_map: Option<BTreeMap<String, String>>,
}

impl CleaningConfig {
    /// The defaults used by the pipeline: lowercase, hyphen joining, and
    /// non-ASCII stripping on, a ten-token document floor.
    pub fn standard() -> Self {
        CleaningConfig {
            min_tokens: 10,
            join_hyphens: true,
            lowercase: true,
            strip_non_ascii: true,
            ..CleaningConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Lexicographically ordered, distinct.
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    /// Document frequency, aligned with `tokens`; every entry ≥ 1.
    df: Vec<usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn df(&self, idx: usize) -> usize {
        self.df[idx]
    }

    /// Two-column `token<TAB>df` text form, one line per token in order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (t, d) in self.tokens.iter().zip(&self.df) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&d.to_string());
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut df = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `token<TAB>df`"))?;
            let count: usize = count
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "df is not an integer"))?;
            if count == 0 {
                return Err(Error::parse(path, idx + 1, "df must be ≥ 1"));
            }
            if let Some(last) = tokens.last() {
                if last >= &token.to_string() {
                    return Err(Error::parse(path, idx + 1, "tokens not in ascending order"));
                }
            }
            tokens.push(token.to_string());
            df.push(count);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { tokens, index, df })
    }
}

/// Reads line-delimited JSON records. Strict: a record missing its id or
/// body field fails the load with the line number, and duplicate ids report
/// both lines. Blank lines are permitted and skipped.
pub fn load_corpus(path: &Path, mapping: &FieldMapping) -> Result<Vec<DocumentRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), mapping, path)
}

/// [`load_corpus`] over any buffered reader; `origin` labels error messages.
pub fn parse_corpus<R: BufRead>(
    reader: R,
    mapping: &FieldMapping,
    origin: &Path,
) -> Result<Vec<DocumentRecord>> {
    let mut records = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin, lineno, format!("invalid JSON: {e}")))?;
        let record = record_from_value(value, mapping)
            .map_err(|msg| Error::parse(origin, lineno, msg))?;
        if let Some(first) = seen.insert(record.doc_id.clone(), lineno) {
            return Err(Error::parse(
                origin,
                lineno,
                format!(
                    "duplicate doc_id {:?} (first seen on line {first})",
                    record.doc_id
                ),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

fn record_from_value(
    value: serde_json::Value,
    mapping: &FieldMapping,
) -> std::result::Result<DocumentRecord, String> {
    use serde_json::Value;

    let Value::Object(mut obj) = value else {
        return Err("record is not a JSON object".into());
    };

    let scalar_string = |v: &Value| -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    };

    let doc_id = obj
        .remove(&mapping.id)
        .as_ref()
        .and_then(scalar_string)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| format!("record missing doc_id (field {:?})", mapping.id))?;

    let body = obj
        .remove(&mapping.body)
        .and_then(|v| match v {
            Value::String(s) => Some(s),
            _ => None,
        })
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| format!("record missing body (field {:?})", mapping.body))?;

    let title = obj
        .remove(&mapping.title)
        .as_ref()
        .and_then(scalar_string)
        .unwrap_or_default();

    let authors = match obj.remove(&mapping.authors) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(scalar_string)
            .filter(|s| !s.trim().is_empty())
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s],
        _ => Vec::new(),
    };

    let mut categories: Vec<String> = match obj.remove(&mapping.categories) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(scalar_string)
            .filter(|s| !s.trim().is_empty())
            .collect(),
        // A single space-separated string of category codes is common.
        Some(Value::String(s)) => s.split_whitespace().map(str::to_string).collect(),
        _ => Vec::new(),
    };

    let explicit_primary = mapping
        .primary_category
        .as_ref()
        .and_then(|field| obj.remove(field))
        .as_ref()
        .and_then(scalar_string)
        .filter(|s| !s.trim().is_empty());
    let primary_category = match explicit_primary {
        Some(p) => {
            if !categories.contains(&p) {
                categories.insert(0, p.clone());
            }
            Some(p)
        }
        None => categories.first().cloned(),
    };

    let year = obj.remove(&mapping.year).and_then(|v| match v {
        Value::Number(n) => n.as_i64().and_then(|y| i32::try_from(y).ok()),
        Value::String(s) if s.len() == 4 => s.parse().ok(),
        _ => None,
    });

    let doi = obj
        .remove(&mapping.doi)
        .as_ref()
        .and_then(scalar_string)
        .filter(|s| !s.trim().is_empty());

    let extra = obj
        .into_iter()
        .filter_map(|(k, v)| {
            let text = match v {
                Value::Null => return None,
                Value::String(s) => s,
                other => other.to_string(),
            };
            Some((k, text))
        })
        .collect();

    Ok(DocumentRecord {
        doc_id,
        title,
        body,
        authors,
        primary_category,
        categories,
        year,
        doi,
        extra,
    })
}

static TAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static EMAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap());

/// Cleans raw text into tokens. Steps run in this fixed order: strip stop
/// phrases; strip tags, emails, non-ASCII, symbols, and newlines; lowercase;
/// join hyphenated words; whitespace-tokenize; apply the lemma map; drop
/// stopwords and one-character tokens.
pub fn clean_text(raw: &str, cfg: &CleaningConfig) -> Vec<String> {
    let mut text = raw.to_string();
    for phrase in &cfg.stop_phrases {
        text = strip_phrase(&text, phrase);
    }
    let text = TAG_RE.replace_all(&text, " ");
    let text = EMAIL_RE.replace_all(&text, " ");
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if cfg.strip_non_ascii && !ch.is_ascii() {
            continue; // dropped without a space: accents vanish inside words
        }
        if ch.is_alphanumeric() || ch == '-' {
            cleaned.push(ch);
        } else {
            cleaned.push(' '); // symbols and all whitespace become separators
        }
    }
    let cleaned = if cfg.lowercase {
        cleaned.to_lowercase()
    } else {
        cleaned
    };
    let cleaned = join_hyphens(&cleaned, cfg.join_hyphens);

    cleaned
        .split_whitespace()
        .map(|tok| match &cfg.lemma_map {
            Some(map) => map.get(tok).cloned().unwrap_or_else(|| tok.to_string()),
            None => tok.to_string(),
        })
        .filter(|tok| tok.chars().count() > 1 && !cfg.stopwords.contains(tok))
        .collect()
}

/// Removes every case-insensitive occurrence of `phrase`, replacing it with
/// a space so the removal never glues neighbors together.
fn strip_phrase(text: &str, phrase: &str) -> String {
    if phrase.is_empty() {
        return text.to_string();
    }
    let haystack = text.to_lowercase();
    let needle = phrase.to_lowercase();
    // Only spliceable when lowercasing preserves byte offsets; true for
    // ASCII, and for non-ASCII we fall back to exact matching.
    if haystack.len() != text.len() {
        return text.replace(phrase, " ");
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = 0usize;
    while let Some(pos) = haystack[rest..].find(&needle) {
        out.push_str(&text[rest..rest + pos]);
        out.push(' ');
        rest += pos + needle.len();
    }
    out.push_str(&text[rest..]);
    out
}

/// With joining on, deletes hyphens between alphanumeric neighbors
/// ("deep-learning" → "deeplearning"); every other hyphen becomes a space.
fn join_hyphens(text: &str, join: bool) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &ch) in chars.iter().enumerate() {
        if ch != '-' {
            out.push(ch);
            continue;
        }
        let between = join
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric());
        if !between {
            out.push(' ');
        }
    }
    out
}

/// Builds the df-filtered vocabulary over `docs`: a token is retained iff
/// `min_df ≤ df(t)` and `df(t) ≤ max_df_fraction · N`. Tokens are ordered
/// lexicographically. Fails with a threshold report if nothing survives.
pub fn build_vocabulary(
    docs: &[TokenizedDocument],
    min_df: usize,
    max_df_fraction: f64,
) -> Result<Vocabulary> {
    if min_df < 1 {
        return Err(Error::invalid("min_df must be ≥ 1"));
    }
    if !(max_df_fraction > 0.0 && max_df_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "max_df_fraction must be in (0, 1], got {max_df_fraction}"
        )));
    }
    if docs.is_empty() {
        return Err(Error::invalid("vocabulary requires at least one document"));
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for tok in distinct {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let n_docs = docs.len();
    let distinct_tokens = counts.len();
    let max_df = max_df_fraction * n_docs as f64;

    let mut tokens = Vec::new();
    let mut df = Vec::new();
    for (tok, count) in counts {
        if count >= min_df && count as f64 <= max_df {
            tokens.push(tok.to_string());
            df.push(count);
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_df,
            max_df_fraction,
            distinct_tokens,
            n_docs,
        });
    }
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary { tokens, index, df })
}

/// Restricts each document to in-vocabulary tokens (order preserved) and
/// excludes documents left with fewer than `min_tokens`. Returns the kept
/// documents and the ids of the excluded ones, both in input order.
pub fn filter_documents(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    min_tokens: usize,
) -> (Vec<TokenizedDocument>, Vec<String>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for doc in docs {
        let tokens: Vec<String> = doc
            .tokens
            .iter()
            .filter(|t| vocab.index_of(t).is_some())
            .cloned()
            .collect();
        if tokens.len() < min_tokens {
            dropped.push(doc.doc_id.clone());
        } else {
            kept.push(TokenizedDocument {
                doc_id: doc.doc_id.clone(),
                tokens,
            });
        }
    }
    (kept, dropped)
}

/// One token per line; blank lines ignored.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Two whitespace-separated columns per line: surface form, lemma. Chains
/// (a→b alongside b→c) are resolved to their fixed point at load so that one
/// application suffices; cycles are an error.
pub fn load_lemma_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (surface, lemma) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(l), None) => (s, l),
            _ => return Err(Error::parse(path, idx + 1, "expected `surface lemma`")),
        };
        if map.insert(surface.to_string(), lemma.to_string()).is_some() {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("surface form {surface:?} mapped twice"),
            ));
        }
    }
    let keys: Vec<String> = map.keys().cloned().collect();
    for key in keys {
        let mut target = map[&key].clone();
        let mut hops = 0usize;
        while let Some(next) = map.get(&target) {
            if *next == target {
                break;
            }
            target = next.clone();
            hops += 1;
            if hops > map.len() {
                return Err(Error::parse(
                    path,
                    None,
                    format!("lemma map contains a cycle reachable from {key:?}"),
                ));
            }
        }
        map.insert(key, target);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, tokens: &[&str]) -> TokenizedDocument {
        TokenizedDocument {
            doc_id: id.into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn cfg() -> CleaningConfig {
        CleaningConfig::standard()
    }

    #[test]
    fn clean_empty_input() {
        assert!(clean_text("", &cfg()).is_empty());
    }

    #[test]
    fn clean_applies_fixed_order() {
        let mut c = cfg();
        c.stop_phrases = vec!["All rights reserved.".into()];
        let got = clean_text("Deep-Learning attacks. All rights reserved.", &c);
        assert_eq!(got, vec!["deeplearning", "attacks"]);
    }

    #[test]
    fn clean_lowercases_before_stopword_removal() {
        let mut c = cfg();
        c.stopwords.insert("the".into());
        assert!(clean_text("the THE The", &c).is_empty());
    }

    #[test]
    fn clean_strips_tags_emails_and_symbols() {
        let got = clean_text(
            "<b>Robust</b> systems; contact j.doe@example.org (v2)",
            &cfg(),
        );
        assert_eq!(got, vec!["robust", "systems", "contact", "v2"]);
    }

    #[test]
    fn clean_drops_one_char_tokens_and_applies_lemma() {
        let mut c = cfg();
        c.lemma_map = Some([("attacks".to_string(), "attack".to_string())].into());
        let got = clean_text("a attacks x", &c);
        assert_eq!(got, vec!["attack"]);
    }

    #[test]
    fn hyphen_join_only_between_alphanumerics() {
        let got = clean_text("state-of-the-art - trailing-", &cfg());
        assert_eq!(got, vec!["stateoftheart", "trailing"]);
        let mut c = cfg();
        c.join_hyphens = false;
        let got = clean_text("state-of-the-art", &c);
        assert_eq!(got, vec!["state", "of", "the", "art"]);
    }

    #[test]
    fn stop_phrase_matching_is_case_insensitive() {
        let mut c = cfg();
        c.stop_phrases = vec!["all rights reserved".into()];
        let got = clean_text("Results. ALL RIGHTS RESERVED here", &c);
        assert_eq!(got, vec!["results", "here"]);
    }

    fn rejoin(tokens: &[String]) -> String {
        tokens.join(" ")
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(
            raw in "[ a-zA-Z0-9<>@.;-]{0,80}",
            stops in proptest::collection::btree_set("[a-z]{2,5}", 0..4),
        ) {
            let mut c = cfg();
            c.stopwords = stops;
            let once = clean_text(&raw, &c);
            let twice = clean_text(&rejoin(&once), &c);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocabulary_retention_is_monotone(
            texts in proptest::collection::vec(
                proptest::collection::vec("[a-d]{2}", 1..6), 1..6),
            min_df in 1usize..4,
            frac_pct in 30u32..=100,
        ) {
            let docs: Vec<_> = texts
                .iter()
                .enumerate()
                .map(|(i, toks)| doc(&format!("d{i}"), &toks.iter().map(String::as_str).collect::<Vec<_>>()))
                .collect();
            let frac = frac_pct as f64 / 100.0;
            let base = build_vocabulary(&docs, min_df, frac);
            let stricter_df = build_vocabulary(&docs, min_df + 1, frac);
            let stricter_frac = build_vocabulary(&docs, min_df, frac * 0.75);
            for stricter in [stricter_df, stricter_frac] {
                let base_tokens: BTreeSet<_> = base
                    .as_ref()
                    .map(|v| v.tokens().iter().cloned().collect())
                    .unwrap_or_default();
                if let Ok(v) = stricter {
                    for t in v.tokens() {
                        prop_assert!(base_tokens.contains(t), "{t} appeared under stricter thresholds");
                    }
                }
            }
        }
    }

    #[test]
    fn vocabulary_example_empty_is_error() {
        let docs = [doc("1", &["a", "b"]), doc("2", &["a", "c"]), doc("3", &["a"])];
        let err = build_vocabulary(&docs, 2, 0.8).unwrap_err();
        assert!(matches!(err, Error::EmptyVocabulary { .. }), "{err}");
    }

    #[test]
    fn vocabulary_example_counts() {
        let docs = [doc("1", &["a", "b"]), doc("2", &["a", "c"]), doc("3", &["a"])];
        let v = build_vocabulary(&docs, 1, 1.0).unwrap();
        assert_eq!(v.tokens(), ["a", "b", "c"]);
        assert_eq!((v.df(0), v.df(1), v.df(2)), (3, 1, 1));
    }

    #[test]
    fn vocabulary_df_counts_documents_not_occurrences() {
        let docs = [doc("1", &["x", "x", "y"])];
        let v = build_vocabulary(&docs, 1, 1.0).unwrap();
        assert_eq!(v.tokens(), ["x", "y"]);
        assert_eq!((v.df(0), v.df(1)), (1, 1));
    }

    #[test]
    fn vocabulary_save_load_round_trip() {
        let docs = [doc("1", &["b", "a"]), doc("2", &["a"])];
        let v = build_vocabulary(&docs, 1, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }

    #[test]
    fn filter_documents_restricts_and_drops() {
        let docs = [doc("keep", &["a", "z", "b", "a"]), doc("tiny", &["z", "z"])];
        let v = build_vocabulary(&[doc("1", &["a", "b"])], 1, 1.0).unwrap();
        let (kept, dropped) = filter_documents(&docs, &v, 2);
        assert_eq!(kept, vec![doc("keep", &["a", "b", "a"])]);
        assert_eq!(dropped, vec!["tiny"]);
    }

    fn mapping() -> FieldMapping {
        FieldMapping::default()
    }

    #[test]
    fn parse_corpus_empty_file() {
        let got = parse_corpus("".as_bytes(), &mapping(), Path::new("c.jsonl")).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn parse_corpus_keeps_file_order_and_fields() {
        let lines = concat!(
            r#"{"id":"d1","title":"T1","abstract":"A1","authors":["X","Y"],"categories":"cs.CR cs.LG","year":2021,"doi":"10.1/x","note":"n"}"#,
            "\n",
            r#"{"id":"d2","abstract":"A2","authors":"Solo","categories":["math.CO"],"year":"1999"}"#,
            "\n",
            r#"{"id":3,"abstract":"A3"}"#,
            "\n",
        );
        let got = parse_corpus(lines.as_bytes(), &mapping(), Path::new("c.jsonl")).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].doc_id, "d1");
        assert_eq!(got[0].categories, vec!["cs.CR", "cs.LG"]);
        assert_eq!(got[0].primary_category.as_deref(), Some("cs.CR"));
        assert_eq!(got[0].year, Some(2021));
        assert_eq!(got[0].extra.get("note").map(String::as_str), Some("n"));
        assert_eq!(got[1].authors, vec!["Solo"]);
        assert_eq!(got[1].year, Some(1999));
        assert_eq!(got[2].doc_id, "3");
        assert_eq!(got[2].primary_category, None);
    }

    #[test]
    fn parse_corpus_rejects_duplicates_with_both_lines() {
        let lines = concat!(
            r#"{"id":"d1","abstract":"A"}"#,
            "\n",
            r#"{"id":"d1","abstract":"B"}"#,
            "\n",
        );
        let err = parse_corpus(lines.as_bytes(), &mapping(), Path::new("c.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains(":2"), "{msg}");
    }

    #[test]
    fn parse_corpus_rejects_missing_fields_and_bad_json() {
        for line in [
            r#"{"title":"no id","abstract":"A"}"#,
            r#"{"id":"d1"}"#,
            r#"{"id":"d1","abstract":"   "}"#,
            r#"not json"#,
            r#"[1,2]"#,
        ] {
            let err = parse_corpus(line.as_bytes(), &mapping(), Path::new("c.jsonl"));
            assert!(err.is_err(), "expected rejection for {line}");
        }
    }

    #[test]
    fn explicit_primary_category_is_inserted() {
        let mut m = mapping();
        m.primary_category = Some("primary".into());
        let line = r#"{"id":"d","abstract":"A","categories":["x"],"primary":"y"}"#;
        let got = parse_corpus(line.as_bytes(), &m, Path::new("c")).unwrap();
        assert_eq!(got[0].primary_category.as_deref(), Some("y"));
        assert_eq!(got[0].categories, vec!["y", "x"]);
    }

    #[test]
    fn lemma_loader_resolves_chains_and_rejects_cycles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lemma.tsv");
        std::fs::write(&path, "running run\nran run\nrun run\n").unwrap();
        let map = load_lemma_map(&path).unwrap();
        assert_eq!(map["running"], "run");

        std::fs::write(&path, "a b\nb c\n").unwrap();
        let map = load_lemma_map(&path).unwrap();
        assert_eq!(map["a"], "c");

        std::fs::write(&path, "a b\nb a\n").unwrap();
        assert!(load_lemma_map(&path).is_err());
    }

    #[test]
    fn stopword_loader_trims_and_skips_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop.txt");
        std::fs::write(&path, "the\n\n  of\n").unwrap();
        let set = load_stopwords(&path).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains("the") && set.contains("of"));
    }
}
