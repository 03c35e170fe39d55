//! Configuration-driven orchestration: corpus → cleaned tokens → sparse
//! matrices → topic tree → knowledge graph → exports.
//!
//! The pipeline runs seven sequential stages (ingest, clean, matrices,
//! hierarchy, annotations, graph, export). Every stage records an entry in
//! `manifest.json` — an inputs hash, the seed in effect, wall time, and the
//! SHA-256 of each output file. Rerunning with an unchanged configuration
//! skips stages whose inputs hash matches and whose outputs are intact;
//! changing a setting invalidates exactly the stages whose inputs embed it.
//! All randomness flows from the single `master_seed`, so two runs with the
//! same configuration produce bit-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_vocabulary, clean_text, filter_documents, load_corpus, load_lemma_map, load_stopwords,
    CleaningConfig, DocumentRecord, FieldMapping, TokenizedDocument,
};
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_topic_tree, read_tree, write_tree, ExpandPolicy, HierarchyParams, TopicNode,
};
use crate::kg::export::{export_graph, import_jsonl, ExportFormat};
use crate::kg::{
    add_community_edges_with_limit, assemble_graph, gazetteer_match, ingest_annotations,
    EntityAnnotation, EntityLabel, DEFAULT_MAX_SHARED_PAIRS,
};
use crate::matrices::{
    build_category_matrix, build_cooccurrence, build_tfidf, sppmi, CooccurrenceConfig,
};
use crate::split::SplitParams;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Where the corpus lives and how its fields map onto document roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// JSON-lines corpus file, one document object per line.
    pub path: PathBuf,
    #[serde(default)]
    pub fields: FieldMapping,
}

/// Text-cleaning switches plus optional resource files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    pub lowercase: bool,
    pub join_hyphens: bool,
    pub strip_non_ascii: bool,
    /// Documents with fewer in-vocabulary tokens drop out of a node.
    pub min_tokens: usize,
    /// Removed from raw text before tokenization, case-insensitively.
    pub stop_phrases: Vec<String>,
    /// Stopword list, one token per line.
    pub stopwords: Option<PathBuf>,
    /// Lemma map, `surface<TAB>lemma` per line.
    pub lemmas: Option<PathBuf>,
}

impl Default for CleaningSection {
    fn default() -> Self {
        CleaningSection {
            lowercase: true,
            join_hyphens: true,
            strip_non_ascii: true,
            min_tokens: 10,
            stop_phrases: Vec::new(),
            stopwords: None,
            lemmas: None,
        }
    }
}

/// Document-frequency thresholds for the vocabulary. The defaults suit
/// very large corpora; small corpora want far smaller `min_df`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularySection {
    /// Tokens in fewer documents are dropped.
    pub min_df: usize,
    /// Tokens in more than this fraction of documents are dropped.
    pub max_df_fraction: f64,
}

impl Default for VocabularySection {
    fn default() -> Self {
        VocabularySection {
            min_df: 500,
            max_df_fraction: 0.8,
        }
    }
}

/// Which side matrices to build alongside TF-IDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatricesSection {
    /// Build the token co-occurrence matrix and its SPPMI transform.
    pub use_cooccurrence: bool,
    /// Co-occurrence window length in token positions.
    pub window: usize,
    /// SPPMI shift; ln(shift) is subtracted from each PMI value.
    pub shift: f64,
    /// Build the token-by-category count matrix.
    pub use_categories: bool,
}

impl Default for MatricesSection {
    fn default() -> Self {
        let cooc = CooccurrenceConfig::default();
        MatricesSection {
            use_cooccurrence: true,
            window: cooc.window,
            shift: cooc.shift,
            use_categories: true,
        }
    }
}

/// Topic-tree shape controls; the per-node vocabulary and matrix settings
/// come from the vocabulary/cleaning/matrices sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    /// Maximum node depth; the root is depth 0.
    pub max_depth: usize,
    /// Topics with fewer documents stay leaves.
    pub min_docs: usize,
    /// Ranked keywords kept per topic.
    pub keyword_count: usize,
    pub expand_policy: ExpandPolicy,
}

impl Default for HierarchySection {
    fn default() -> Self {
        let p = HierarchyParams::default();
        HierarchySection {
            max_depth: p.max_depth,
            min_docs: p.min_docs,
            keyword_count: p.keyword_count,
            expand_policy: p.expand_policy,
        }
    }
}

/// Entity sources: an annotation file, gazetteer term files, or both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationsSection {
    /// Tab-separated annotation records: doc_id, label, text.
    pub path: Option<PathBuf>,
    /// Per-label term files (one term per line, `#` comments allowed),
    /// keyed by entity label name.
    pub gazetteer: BTreeMap<String, PathBuf>,
}

/// Which topic-tree node the graph is assembled from, and whether
/// shared-entity edges are added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Tree-node path like "root" or "root/1/0".
    pub node: String,
    /// Add one SHARES_ENTITY edge per document pair with common entities.
    pub community_edges: bool,
    /// Abort instead of creating more shared-entity pairs than this.
    pub max_shared_pairs: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            node: "root".to_string(),
            community_edges: true,
            max_shared_pairs: DEFAULT_MAX_SHARED_PAIRS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Formats written by the export stage; at least one.
    pub formats: Vec<ExportFormat>,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            formats: vec![ExportFormat::Jsonl],
        }
    }
}

fn default_split() -> SplitParams {
    // The reference configuration for large corpora used twenty chunks.
    SplitParams {
        m: 20,
        ..SplitParams::default()
    }
}

fn default_master_seed() -> u64 {
    42
}

/// The full pipeline configuration, deserialized from a TOML file whose
/// sections mirror these fields. Relative paths (including `output_dir`)
/// resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Every stage writes beneath this directory.
    pub output_dir: PathBuf,
    /// Single source of randomness for the whole run.
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub cleaning: CleaningSection,
    #[serde(default)]
    pub vocabulary: VocabularySection,
    #[serde(default)]
    pub matrices: MatricesSection,
    /// Chunked-factorization settings, including the rank search.
    #[serde(default = "default_split")]
    pub split: SplitParams,
    #[serde(default)]
    pub hierarchy: HierarchySection,
    #[serde(default)]
    pub annotations: AnnotationsSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub export: ExportSection,
}

/// Reads and parses a TOML config file, resolving relative paths against
/// the file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::parse(path, None, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.resolve_paths(base);
    Ok(config)
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&path);
    }
}

impl PipelineConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.corpus.path);
        if let Some(p) = &mut self.cleaning.stopwords {
            resolve(base, p);
        }
        if let Some(p) = &mut self.cleaning.lemmas {
            resolve(base, p);
        }
        if let Some(p) = &mut self.annotations.path {
            resolve(base, p);
        }
        for p in self.annotations.gazetteer.values_mut() {
            resolve(base, p);
        }
    }

    /// Checks parameter ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        require_file(&self.corpus.path, "corpus")?;
        if let Some(p) = &self.cleaning.stopwords {
            require_file(p, "stopwords")?;
        }
        if let Some(p) = &self.cleaning.lemmas {
            require_file(p, "lemma map")?;
        }
        if let Some(p) = &self.annotations.path {
            require_file(p, "annotations")?;
        }
        for (label, path) in &self.annotations.gazetteer {
            if EntityLabel::parse(label).is_none() {
                return Err(Error::invalid(format!(
                    "unknown gazetteer label {label:?}; expected one of {}",
                    EntityLabel::ALL.map(|l| l.as_str()).join(", ")
                )));
            }
            require_file(path, "gazetteer term")?;
        }
        if self.export.formats.is_empty() {
            return Err(Error::invalid("export.formats must list at least one format"));
        }
        if self.graph.max_shared_pairs < 1 {
            return Err(Error::invalid("graph.max_shared_pairs must be ≥ 1"));
        }
        parse_node_path(&self.graph.node)?;
        self.split_params().validate()?;
        self.hierarchy_params().validate()?;
        Ok(())
    }

    /// Loads cleaning resources and assembles the cleaning settings.
    pub fn cleaning_config(&self) -> Result<CleaningConfig> {
        let stopwords = match &self.cleaning.stopwords {
            Some(p) => load_stopwords(p)?,
            None => BTreeSet::new(),
        };
        let lemma_map = match &self.cleaning.lemmas {
            Some(p) => Some(load_lemma_map(p)?),
            None => None,
        };
        Ok(CleaningConfig {
            stopwords,
            stop_phrases: self.cleaning.stop_phrases.clone(),
            min_tokens: self.cleaning.min_tokens,
            join_hyphens: self.cleaning.join_hyphens,
            lowercase: self.cleaning.lowercase,
            strip_non_ascii: self.cleaning.strip_non_ascii,
            lemma_map,
        })
    }

    /// Topic-tree parameters assembled from the hierarchy, vocabulary,
    /// cleaning, and matrices sections.
    pub fn hierarchy_params(&self) -> HierarchyParams {
        HierarchyParams {
            max_depth: self.hierarchy.max_depth,
            min_docs: self.hierarchy.min_docs,
            keyword_count: self.hierarchy.keyword_count,
            min_df: self.vocabulary.min_df,
            max_df_fraction: self.vocabulary.max_df_fraction,
            min_tokens: self.cleaning.min_tokens,
            cooccurrence: self.matrices.use_cooccurrence.then_some(CooccurrenceConfig {
                window: self.matrices.window,
                shift: self.matrices.shift,
            }),
            use_categories: self.matrices.use_categories,
            expand_policy: self.hierarchy.expand_policy.clone(),
        }
    }

    /// Factorization parameters with the master seed threaded in.
    pub fn split_params(&self) -> SplitParams {
        self.split.with_master_seed(self.master_seed)
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} file {} does not exist",
            path.display()
        )))
    }
}

/// Parses a tree-node path like "root/2/0" into child indices.
pub fn parse_node_path(path: &str) -> Result<Vec<usize>> {
    let mut parts = path.split('/');
    if parts.next() != Some("root") {
        return Err(Error::invalid(format!(
            "topic-node path {path:?} must start with \"root\""
        )));
    }
    parts
        .map(|part| {
            part.parse::<usize>().map_err(|_| {
                Error::invalid(format!(
                    "bad segment {part:?} in topic-node path {path:?}; segments after \
                     \"root\" are child indices"
                ))
            })
        })
        .collect()
}

/// Walks the topic tree along a "root/i/j" path.
pub fn find_node<'a>(root: &'a TopicNode, path: &str) -> Result<&'a TopicNode> {
    let mut node = root;
    for idx in parse_node_path(path)? {
        node = node.children.get(&idx).ok_or_else(|| {
            Error::invalid(format!(
                "topic node {path:?} not found: {:?} has no child {idx}",
                node.node_id
            ))
        })?;
    }
    Ok(node)
}

// ---------------------------------------------------------------------------
// Stages and the manifest
// ---------------------------------------------------------------------------

/// The seven pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Clean,
    Matrices,
    Hierarchy,
    Annotations,
    Graph,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Clean,
        Stage::Matrices,
        Stage::Hierarchy,
        Stage::Annotations,
        Stage::Graph,
        Stage::Export,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Matrices => "matrices",
            Stage::Hierarchy => "hierarchy",
            Stage::Annotations => "annotations",
            Stage::Graph => "graph",
            Stage::Export => "export",
        }
    }

    pub fn parse(text: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == text.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown stage {text:?}; expected one of {}",
                    Stage::ALL.map(|s| s.name()).join(", ")
                ))
            })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    /// Digest of everything the stage's result depends on.
    pub inputs_hash: String,
    /// The seed governing the stage's randomness.
    pub seed: u64,
    pub wall_ms: u64,
    pub outputs: Vec<StageOutput>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub config_digest: String,
    pub master_seed: u64,
    pub entries: BTreeMap<String, StageEntry>,
}

fn manifest_path(output_dir: &Path) -> PathBuf {
    output_dir.join("manifest.json")
}

fn load_manifest(output_dir: &Path) -> PipelineManifest {
    let path = manifest_path(output_dir);
    match std::fs::read_to_string(&path) {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(manifest) => manifest,
            Err(e) => {
                log::warn!("ignoring unreadable manifest {}: {e}", path.display());
                PipelineManifest::default()
            }
        },
        Err(_) => PipelineManifest::default(),
    }
}

fn save_manifest(output_dir: &Path, manifest: &PipelineManifest) -> Result<()> {
    let path = manifest_path(output_dir);
    let tmp = output_dir.join("manifest.json.tmp");
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn json_digest<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)
        .map_err(|e| Error::invalid(format!("digest serialization failed: {e}")))?;
    Ok(sha256_hex(text.as_bytes()))
}

fn digest_parts(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

/// Concatenated output hashes of an already-run stage.
fn upstream_digest(manifest: &PipelineManifest, stage: Stage) -> String {
    let entry = manifest
        .entries
        .get(stage.name())
        .unwrap_or_else(|| panic!("stage {stage} ran before its dependents"));
    entry
        .outputs
        .iter()
        .map(|o| o.sha256.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Executed { wall_ms: u64 },
    Skipped,
}

/// Per-stage outcome of one `run_pipeline` call, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub statuses: Vec<(Stage, StageStatus)>,
}

enum CheckpointState {
    Intact,
    Missing,
}

fn verify_outputs(output_dir: &Path, entry: &StageEntry) -> Result<CheckpointState> {
    for output in &entry.outputs {
        let path = output_dir.join(&output.path);
        if !path.is_file() {
            return Ok(CheckpointState::Missing);
        }
        if file_digest(&path)? != output.sha256 {
            return Err(Error::Checkpoint(format!(
                "stage `{}` output {} changed on disk since it was recorded; \
                 delete {} or rerun with --from {}",
                entry.stage,
                output.path,
                output_dir.display(),
                entry.stage
            )));
        }
    }
    Ok(CheckpointState::Intact)
}

fn relative_outputs(output_dir: &Path, paths: &[PathBuf]) -> Result<Vec<StageOutput>> {
    let mut outputs = Vec::with_capacity(paths.len());
    for path in paths {
        let rel = path
            .strip_prefix(output_dir)
            .map_err(|_| {
                Error::invalid(format!(
                    "stage output {} is outside the output directory",
                    path.display()
                ))
            })?
            .to_string_lossy()
            .into_owned();
        outputs.push(StageOutput {
            path: rel,
            sha256: file_digest(path)?,
        });
    }
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(outputs)
}

/// Runs one stage with checkpointing. `reset_dir` is cleared before a
/// recompute so stale files from older configurations cannot linger.
#[allow(clippy::too_many_arguments)]
fn run_stage<T>(
    manifest: &mut PipelineManifest,
    output_dir: &Path,
    reset_dir: &Path,
    stage: Stage,
    inputs_hash: String,
    seed: u64,
    force: bool,
    compute: impl FnOnce() -> Result<(T, Vec<PathBuf>)>,
    reload: impl FnOnce() -> Result<T>,
) -> Result<(T, StageStatus)> {
    let name = stage.name();
    if !force {
        if let Some(entry) = manifest.entries.get(name) {
            if entry.inputs_hash == inputs_hash {
                match verify_outputs(output_dir, entry).map_err(|e| e.in_stage(name))? {
                    CheckpointState::Intact => {
                        let value = reload().map_err(|e| e.in_stage(name))?;
                        return Ok((value, StageStatus::Skipped));
                    }
                    CheckpointState::Missing => {
                        log::info!("stage {name}: outputs missing, recomputing");
                    }
                }
            }
        }
    }
    if reset_dir.exists() {
        std::fs::remove_dir_all(reset_dir).map_err(|e| Error::io(reset_dir, e))?;
    }
    std::fs::create_dir_all(reset_dir).map_err(|e| Error::io(reset_dir, e))?;
    let start = Instant::now();
    let (value, paths) = compute().map_err(|e| e.in_stage(name))?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let outputs = relative_outputs(output_dir, &paths).map_err(|e| e.in_stage(name))?;
    manifest.entries.insert(
        name.to_string(),
        StageEntry {
            stage: name.to_string(),
            inputs_hash,
            seed,
            wall_ms,
            outputs,
        },
    );
    save_manifest(output_dir, manifest)?;
    Ok((value, StageStatus::Executed { wall_ms }))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(
            &serde_json::to_string(item)
                .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(line).map_err(|e| Error::parse(path, Some(idx + 1), e.to_string()))?,
        );
    }
    Ok(items)
}

/// Every file under `dir`, recursively, in sorted order.
fn walk_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn sanitize_tsv_field(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

/// Loads per-label gazetteer term files. Lines are trimmed; empty lines and
/// `#` comments are skipped. Labels were validated with the config.
fn load_gazetteer(
    sources: &BTreeMap<String, PathBuf>,
) -> Result<BTreeMap<EntityLabel, Vec<String>>> {
    let mut gazetteer: BTreeMap<EntityLabel, Vec<String>> = BTreeMap::new();
    for (label_text, path) in sources {
        let label = EntityLabel::parse(label_text).ok_or_else(|| {
            Error::invalid(format!("unknown gazetteer label {label_text:?}"))
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let terms: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        gazetteer.entry(label).or_default().extend(terms);
    }
    Ok(gazetteer)
}

/// The category used for documents whose metadata has none.
pub const UNCATEGORIZED: &str = "(uncategorized)";

fn doc_category_map(records: &[DocumentRecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .map(|r| {
            (
                r.doc_id.clone(),
                r.primary_category
                    .clone()
                    .unwrap_or_else(|| UNCATEGORIZED.to_string()),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Runs the pipeline end to end under `config.output_dir`, reusing intact
/// stage checkpoints. `from` forces re-execution of that stage and every
/// later one regardless of checkpoint state.
pub fn run_pipeline(config: &PipelineConfig, from: Option<Stage>) -> Result<RunReport> {
    config.validate()?;
    let out = config.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = load_manifest(out);
    manifest.config_digest = json_digest(config)?;
    manifest.master_seed = config.master_seed;
    let force = |stage: Stage| from.is_some_and(|f| stage >= f);
    let seed = config.master_seed;
    let mut statuses = Vec::new();

    // ingest: parse the corpus into document records.
    let ingest_dir = out.join("ingest");
    let documents_path = ingest_dir.join("documents.jsonl");
    let ingest_hash = digest_parts(&[
        "ingest",
        &file_digest(&config.corpus.path)?,
        &json_digest(&config.corpus.fields)?,
    ]);
    let (records, status) = run_stage(
        &mut manifest,
        out,
        &ingest_dir,
        Stage::Ingest,
        ingest_hash,
        seed,
        force(Stage::Ingest),
        || {
            let records = load_corpus(&config.corpus.path, &config.corpus.fields)?;
            write_jsonl(&documents_path, &records)?;
            Ok((records, vec![documents_path.clone()]))
        },
        || read_jsonl(&documents_path),
    )?;
    statuses.push((Stage::Ingest, status));

    // clean: tokenize title + body and fix each document's category.
    let clean_dir = out.join("clean");
    let tokens_path = clean_dir.join("tokens.jsonl");
    let categories_path = clean_dir.join("categories.json");
    let mut clean_parts = vec![
        "clean".to_string(),
        upstream_digest(&manifest, Stage::Ingest),
        json_digest(&config.cleaning)?,
    ];
    if let Some(p) = &config.cleaning.stopwords {
        clean_parts.push(file_digest(p)?);
    }
    if let Some(p) = &config.cleaning.lemmas {
        clean_parts.push(file_digest(p)?);
    }
    let clean_hash = digest_parts(&clean_parts.iter().map(String::as_str).collect::<Vec<_>>());
    let ((tokenized, doc_category), status) = run_stage(
        &mut manifest,
        out,
        &clean_dir,
        Stage::Clean,
        clean_hash,
        seed,
        force(Stage::Clean),
        || {
            let cleaning = config.cleaning_config()?;
            let tokenized: Vec<TokenizedDocument> = records
                .iter()
                .map(|r| TokenizedDocument {
                    doc_id: r.doc_id.clone(),
                    tokens: clean_text(&format!("{} {}", r.title, r.body), &cleaning),
                })
                .collect();
            write_jsonl(&tokens_path, &tokenized)?;
            let doc_category = doc_category_map(&records);
            let mut text = serde_json::to_string_pretty(&doc_category)
                .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
            text.push('\n');
            std::fs::write(&categories_path, text).map_err(|e| Error::io(&categories_path, e))?;
            Ok((
                (tokenized, doc_category),
                vec![tokens_path.clone(), categories_path.clone()],
            ))
        },
        || {
            let tokenized = read_jsonl(&tokens_path)?;
            let text = std::fs::read_to_string(&categories_path)
                .map_err(|e| Error::io(&categories_path, e))?;
            let doc_category = serde_json::from_str(&text)
                .map_err(|e| Error::parse(&categories_path, None, e.to_string()))?;
            Ok((tokenized, doc_category))
        },
    )?;
    statuses.push((Stage::Clean, status));

    // matrices: corpus-level vocabulary and sparse matrices, for inspection
    // and as an early check that the thresholds leave data behind. The
    // hierarchy stage rebuilds all of these per node.
    let matrices_dir = out.join("matrices");
    let matrices_hash = digest_parts(&[
        "matrices",
        &upstream_digest(&manifest, Stage::Clean),
        &json_digest(&config.vocabulary)?,
        &json_digest(&config.matrices)?,
        &config.cleaning.min_tokens.to_string(),
    ]);
    let ((), status) = run_stage(
        &mut manifest,
        out,
        &matrices_dir,
        Stage::Matrices,
        matrices_hash,
        seed,
        force(Stage::Matrices),
        || {
            let vocab = build_vocabulary(
                &tokenized,
                config.vocabulary.min_df,
                config.vocabulary.max_df_fraction,
            )?;
            let (kept, dropped) = filter_documents(&tokenized, &vocab, config.cleaning.min_tokens);
            if kept.is_empty() {
                return Err(Error::invalid(format!(
                    "no documents survive cleaning: all {} fall below min_tokens={}",
                    dropped.len(),
                    config.cleaning.min_tokens
                )));
            }
            let vocab_path = matrices_dir.join("vocab.txt");
            let tfidf_path = matrices_dir.join("tfidf.txt");
            vocab.save(&vocab_path)?;
            build_tfidf(&kept, &vocab)?.save(&tfidf_path)?;
            let mut outputs = vec![vocab_path, tfidf_path];
            if config.matrices.use_cooccurrence {
                let counts = build_cooccurrence(&kept, &vocab, config.matrices.window)?;
                let sppmi_path = matrices_dir.join("cooccurrence_sppmi.txt");
                sppmi(&counts, config.matrices.shift)?.save(&sppmi_path)?;
                outputs.push(sppmi_path);
            }
            if config.matrices.use_categories {
                let category_path = matrices_dir.join("category.txt");
                build_category_matrix(&kept, &vocab, &doc_category)?.save(&category_path)?;
                outputs.push(category_path);
            }
            Ok(((), outputs))
        },
        || Ok(()),
    )?;
    statuses.push((Stage::Matrices, status));

    // hierarchy: the recursive topic tree. Factor checkpoints live beside
    // the tree and survive reruns; the tree directory is the output.
    let hierarchy_dir = out.join("hierarchy");
    let tree_dir = hierarchy_dir.join("tree");
    let checkpoints_dir = hierarchy_dir.join("checkpoints");
    let hierarchy_hash = digest_parts(&[
        "hierarchy",
        &upstream_digest(&manifest, Stage::Clean),
        &json_digest(&config.hierarchy_params())?,
        &json_digest(&config.split_params())?,
        &config.master_seed.to_string(),
    ]);
    let (tree, status) = run_stage(
        &mut manifest,
        out,
        &tree_dir,
        Stage::Hierarchy,
        hierarchy_hash,
        seed,
        force(Stage::Hierarchy),
        || {
            let tree = build_topic_tree(
                &tokenized,
                &doc_category,
                &config.hierarchy_params(),
                &config.split_params(),
                Some(&checkpoints_dir),
            )?;
            write_tree(&tree, &tree_dir)?;
            Ok((tree, walk_files(&tree_dir)?))
        },
        || read_tree(&tree_dir),
    )?;
    statuses.push((Stage::Hierarchy, status));

    // annotations: merge the annotation file (first) with gazetteer matches,
    // then canonicalize through the on-disk TSV so resumed and fresh runs
    // agree byte-for-byte.
    let annotations_dir = out.join("annotations");
    let annotations_path = annotations_dir.join("annotations.tsv");
    let mut ann_parts = vec![
        "annotations".to_string(),
        upstream_digest(&manifest, Stage::Ingest),
        json_digest(&config.annotations)?,
    ];
    if let Some(p) = &config.annotations.path {
        ann_parts.push(file_digest(p)?);
    }
    for path in config.annotations.gazetteer.values() {
        ann_parts.push(file_digest(path)?);
    }
    let annotations_hash =
        digest_parts(&ann_parts.iter().map(String::as_str).collect::<Vec<_>>());
    let (annotations, status) = run_stage(
        &mut manifest,
        out,
        &annotations_dir,
        Stage::Annotations,
        annotations_hash,
        seed,
        force(Stage::Annotations),
        || {
            let mut merged: Vec<EntityAnnotation> = Vec::new();
            let mut seen: BTreeSet<(String, EntityLabel, String)> = BTreeSet::new();
            if let Some(p) = &config.annotations.path {
                let ingest = ingest_annotations(p)?;
                if ingest.skipped_labels > 0 {
                    log::warn!(
                        "{} annotation records with unsupported labels skipped",
                        ingest.skipped_labels
                    );
                }
                for ann in ingest.annotations {
                    seen.insert((ann.doc_id.clone(), ann.label, ann.normalized.clone()));
                    merged.push(ann);
                }
            }
            let gazetteer = load_gazetteer(&config.annotations.gazetteer)?;
            if !gazetteer.is_empty() {
                for ann in gazetteer_match(&records, &gazetteer) {
                    if seen.insert((ann.doc_id.clone(), ann.label, ann.normalized.clone())) {
                        merged.push(ann);
                    }
                }
            }
            merged.sort();
            let mut text = String::new();
            for ann in &merged {
                if ann.doc_id.contains(['\t', '\n', '\r']) {
                    return Err(Error::invalid(format!(
                        "document id {:?} contains control characters the annotation \
                         format cannot carry",
                        ann.doc_id
                    )));
                }
                text.push_str(&format!(
                    "{}\t{}\t{}\n",
                    ann.doc_id,
                    ann.label,
                    sanitize_tsv_field(&ann.surface)
                ));
            }
            std::fs::write(&annotations_path, text)
                .map_err(|e| Error::io(&annotations_path, e))?;
            // Re-read the canonical file so the value matches a reload.
            let canonical = ingest_annotations(&annotations_path)?;
            Ok((canonical.annotations, vec![annotations_path.clone()]))
        },
        || Ok(ingest_annotations(&annotations_path)?.annotations),
    )?;
    statuses.push((Stage::Annotations, status));

    // graph: assemble the knowledge graph from the selected tree node.
    let graph_dir = out.join("graph");
    let graph_path = graph_dir.join("graph.jsonl");
    let graph_hash = digest_parts(&[
        "graph",
        &upstream_digest(&manifest, Stage::Hierarchy),
        &upstream_digest(&manifest, Stage::Annotations),
        &json_digest(&config.graph)?,
    ]);
    let (graph, status) = run_stage(
        &mut manifest,
        out,
        &graph_dir,
        Stage::Graph,
        graph_hash,
        seed,
        force(Stage::Graph),
        || {
            let node = find_node(&tree, &config.graph.node)?;
            let covered: BTreeSet<&str> = node.doc_ids.iter().map(String::as_str).collect();
            let docs: Vec<DocumentRecord> = records
                .iter()
                .filter(|r| covered.contains(r.doc_id.as_str()))
                .cloned()
                .collect();
            let known: BTreeSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            let kept: Vec<EntityAnnotation> = annotations
                .iter()
                .filter(|a| known.contains(a.doc_id.as_str()))
                .cloned()
                .collect();
            let outside = annotations.len() - kept.len();
            if outside > 0 {
                log::warn!(
                    "{outside} annotations reference documents outside node {:?}",
                    config.graph.node
                );
            }
            let mut graph = assemble_graph(&docs, node, &kept)?;
            if config.graph.community_edges {
                graph = add_community_edges_with_limit(graph, config.graph.max_shared_pairs)?;
            }
            export_graph(&graph, ExportFormat::Jsonl, &graph_path)?;
            Ok((graph, vec![graph_path.clone()]))
        },
        || import_jsonl(&graph_path),
    )?;
    statuses.push((Stage::Graph, status));

    // export: write the graph in every configured format.
    let export_dir = out.join("export");
    let export_hash = digest_parts(&[
        "export",
        &upstream_digest(&manifest, Stage::Graph),
        &json_digest(&config.export)?,
    ]);
    let ((), status) = run_stage(
        &mut manifest,
        out,
        &export_dir,
        Stage::Export,
        export_hash,
        seed,
        force(Stage::Export),
        || {
            let mut outputs = Vec::new();
            let mut seen = BTreeSet::new();
            for &format in &config.export.formats {
                if !seen.insert(format) {
                    continue;
                }
                let path = export_dir.join(format!("graph.{}", extension(format)));
                export_graph(&graph, format, &path)?;
                outputs.push(path);
            }
            Ok(((), outputs))
        },
        || Ok(()),
    )?;
    statuses.push((Stage::Export, status));

    Ok(RunReport { statuses })
}

pub fn extension(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Jsonl => "jsonl",
        ExportFormat::Graphml => "graphml",
        ExportFormat::Cypher => "cypher",
    }
}

// ---------------------------------------------------------------------------
// Checkpoint-backed commands
// ---------------------------------------------------------------------------

fn assembled_graph_path(config: &PipelineConfig) -> Result<PathBuf> {
    let path = config.output_dir.join("graph").join("graph.jsonl");
    if !path.is_file() {
        return Err(Error::invalid(format!(
            "{} not found; run the pipeline first (the graph stage writes it)",
            path.display()
        )));
    }
    Ok(path)
}

/// Re-exports the already-assembled graph without rerunning the pipeline.
/// Returns the path written.
pub fn export_from_checkpoint(
    config: &PipelineConfig,
    format: ExportFormat,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    let graph = import_jsonl(&assembled_graph_path(config)?)?;
    let path = out.unwrap_or_else(|| {
        config
            .output_dir
            .join("export")
            .join(format!("graph.{}", extension(format)))
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    export_graph(&graph, format, &path)?;
    Ok(path)
}

/// Tab-separated run statistics: graph node/edge counts per kind, and the
/// per-topic category histograms of every tree node.
pub fn stats_report(config: &PipelineConfig) -> Result<String> {
    let graph = import_jsonl(&assembled_graph_path(config)?)?;
    let tree_dir = config.output_dir.join("hierarchy").join("tree");
    if !tree_dir.is_dir() {
        return Err(Error::invalid(format!(
            "{} not found; run the pipeline first (the hierarchy stage writes it)",
            tree_dir.display()
        )));
    }
    let tree = read_tree(&tree_dir)?;

    let mut out = String::from("section\tkey\tsubkey\tcount\n");
    for (kind, count) in &graph.stats().nodes_by_kind {
        out.push_str(&format!("node_kind\t{kind}\t\t{count}\n"));
    }
    for (kind, count) in &graph.stats().edges_by_kind {
        out.push_str(&format!("edge_kind\t{kind}\t\t{count}\n"));
    }
    let mut stack = vec![&tree];
    while let Some(node) = stack.pop() {
        for (topic, histogram) in node.category_histogram.iter().enumerate() {
            for (category, count) in histogram {
                out.push_str(&format!(
                    "topic_category\t{}#{topic}\t{category}\t{count}\n",
                    node.node_id
                ));
            }
        }
        // Reverse so the stack pops children in index order.
        stack.extend(node.children.values().rev());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EdgeKind;
    use std::fmt::Write as _;

    /// Writes a small two-topic corpus plus annotation and gazetteer files,
    /// and a config that exercises every stage quickly.
    fn fixture(dir: &Path, seed: u64) -> PathBuf {
        let alpha = ["drift", "plasma", "torus", "field", "pulse"];
        let beta = ["ledger", "market", "asset", "yield", "trade"];
        let mut corpus = String::new();
        for d in 0..10 {
            let family: &[&str] = if d % 2 == 0 { &alpha } else { &beta };
            let mut body = String::new();
            for (t, token) in family.iter().enumerate() {
                let reps = 2 + ((d + t) % 3);
                for _ in 0..reps {
                    body.push_str(token);
                    body.push(' ');
                }
            }
            let category = if d % 2 == 0 { "phys.PL" } else { "econ.TR" };
            let title = if d == 0 { "A study of MNIST drift" } else { "notes" };
            writeln!(
                corpus,
                concat!(
                    "{{\"id\":\"doc{:02}\",\"title\":\"{}\",\"abstract\":\"{}\",",
                    "\"authors\":[\"Author {}\"],\"categories\":[\"{}\"],\"year\":2020}}"
                ),
                d,
                title,
                body.trim(),
                d % 3,
                category
            )
            .unwrap();
        }
        std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
        std::fs::write(
            dir.join("annotations.tsv"),
            "doc00\tPerson\tAda Lovelace\ndoc01\tDate\t2020\n",
        )
        .unwrap();
        std::fs::write(dir.join("products.txt"), "# terms\nmnist\n").unwrap();

        let config = format!(
            r#"
output_dir = "out"
master_seed = {seed}

[corpus]
path = "corpus.jsonl"

[cleaning]
min_tokens = 1

[vocabulary]
min_df = 1
max_df_fraction = 1.0

[matrices]
window = 10

[split]
m = 2

[split.nmfk]
k_min = 1
k_max = 2
n_perturbs = 4

[hierarchy]
max_depth = 0
min_docs = 2

[annotations]
path = "annotations.tsv"

[annotations.gazetteer]
product = "products.txt"

[export]
formats = ["jsonl", "graphml", "cypher"]
"#
        );
        let config_path = dir.join("config.toml");
        std::fs::write(&config_path, config).unwrap();
        config_path
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "").unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, "output_dir = \"out\"\n[corpus]\npath = \"c.jsonl\"\n").unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config.master_seed, 42);
        assert_eq!(config.split.m, 20);
        assert_eq!(config.matrices.window, 100);
        assert_eq!(config.matrices.shift, 4.0);
        assert_eq!(config.vocabulary.min_df, 500);
        assert_eq!(config.vocabulary.max_df_fraction, 0.8);
        assert_eq!(config.cleaning.min_tokens, 10);
        assert_eq!(config.export.formats, vec![ExportFormat::Jsonl]);
        // Relative paths resolve against the config file's directory.
        assert_eq!(config.corpus.path, dir.path().join("c.jsonl"));
        assert_eq!(config.output_dir, dir.path().join("out"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(
            &path,
            "output_dir = \"out\"\ntypo_key = 1\n[corpus]\npath = \"c.jsonl\"\n",
        )
        .unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn validation_requires_existing_paths() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path(), 1);
        let mut config = load_config(&config_path).unwrap();
        config.validate().unwrap();
        config.corpus.path = dir.path().join("missing.jsonl");
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn validation_rejects_unknown_gazetteer_labels() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path(), 1);
        let mut config = load_config(&config_path).unwrap();
        config
            .annotations
            .gazetteer
            .insert("color".to_string(), dir.path().join("products.txt"));
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("color"), "{err}");
    }

    #[test]
    fn stage_parsing_matches_names() {
        for stage in Stage::ALL {
            assert_eq!(Stage::parse(stage.name()).unwrap(), stage);
        }
        assert_eq!(Stage::parse("GRAPH").unwrap(), Stage::Graph);
        assert!(Stage::parse("mystery").is_err());
    }

    #[test]
    fn node_paths_parse_and_resolve() {
        assert_eq!(parse_node_path("root").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_node_path("root/2/0").unwrap(), vec![2, 0]);
        assert!(parse_node_path("tree/1").is_err());
        assert!(parse_node_path("root/x").is_err());
    }

    fn executed(report: &RunReport, stage: Stage) -> bool {
        report
            .statuses
            .iter()
            .any(|(s, st)| *s == stage && matches!(st, StageStatus::Executed { .. }))
    }

    fn all_skipped(report: &RunReport) -> bool {
        report
            .statuses
            .iter()
            .all(|(_, st)| *st == StageStatus::Skipped)
    }

    #[test]
    fn full_run_writes_every_stage_output() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 7)).unwrap();
        let report = run_pipeline(&config, None).unwrap();
        assert_eq!(report.statuses.len(), 7);
        assert!(report
            .statuses
            .iter()
            .all(|(_, st)| matches!(st, StageStatus::Executed { .. })));
        let out = &config.output_dir;
        for rel in [
            "manifest.json",
            "ingest/documents.jsonl",
            "clean/tokens.jsonl",
            "clean/categories.json",
            "matrices/vocab.txt",
            "matrices/tfidf.txt",
            "matrices/cooccurrence_sppmi.txt",
            "matrices/category.txt",
            "hierarchy/tree/meta.json",
            "annotations/annotations.tsv",
            "graph/graph.jsonl",
            "export/graph.jsonl",
            "export/graph.graphml",
            "export/graph.cypher",
        ] {
            assert!(out.join(rel).is_file(), "{rel} missing");
        }
        let manifest = load_manifest(out);
        assert_eq!(manifest.entries.len(), 7);
        // Recorded hashes match the files on disk.
        for entry in manifest.entries.values() {
            for output in &entry.outputs {
                assert_eq!(
                    file_digest(&out.join(&output.path)).unwrap(),
                    output.sha256,
                    "{} hash drifted",
                    output.path
                );
            }
        }
        // The annotation file contributed Ada Lovelace; the gazetteer
        // contributed MNIST; the Date record was skipped.
        let graph = import_jsonl(&out.join("graph/graph.jsonl")).unwrap();
        assert!(graph.node("ent:Person:ada lovelace").is_some());
        assert!(graph.node("ent:Product:mnist").is_some());
        assert_eq!(graph.stats().nodes_by_kind["Document"], 10);
        let topic_edges = graph
            .edges()
            .filter(|e| e.kind == EdgeKind::HasTopic)
            .count();
        assert_eq!(topic_edges, 10);
    }

    #[test]
    fn rerun_skips_all_stages_and_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 11)).unwrap();
        run_pipeline(&config, None).unwrap();
        let before = std::fs::read(config.output_dir.join("export/graph.jsonl")).unwrap();
        let report = run_pipeline(&config, None).unwrap();
        assert!(all_skipped(&report), "{:?}", report.statuses);
        let after = std::fs::read(config.output_dir.join("export/graph.jsonl")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn two_fresh_runs_are_bit_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config_a = load_config(&fixture(dir_a.path(), 13)).unwrap();
        let config_b = load_config(&fixture(dir_b.path(), 13)).unwrap();
        run_pipeline(&config_a, None).unwrap();
        run_pipeline(&config_b, None).unwrap();
        for rel in ["export/graph.jsonl", "export/graph.graphml", "export/graph.cypher"] {
            let a = std::fs::read(config_a.output_dir.join(rel)).unwrap();
            let b = std::fs::read(config_b.output_dir.join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn from_reruns_only_downstream_stages() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 17)).unwrap();
        run_pipeline(&config, None).unwrap();
        let report = run_pipeline(&config, Some(Stage::Graph)).unwrap();
        for stage in [
            Stage::Ingest,
            Stage::Clean,
            Stage::Matrices,
            Stage::Hierarchy,
            Stage::Annotations,
        ] {
            assert!(!executed(&report, stage), "{stage} should have skipped");
        }
        assert!(executed(&report, Stage::Graph));
        assert!(executed(&report, Stage::Export));
    }

    #[test]
    fn tampered_outputs_abort_with_a_hint() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 19)).unwrap();
        run_pipeline(&config, None).unwrap();
        let victim = config.output_dir.join("matrices/tfidf.txt");
        let mut bytes = std::fs::read(&victim).unwrap();
        bytes.push(b'!');
        std::fs::write(&victim, bytes).unwrap();
        let err = run_pipeline(&config, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--from matrices"), "{msg}");
        // The suggested remediation works.
        let report = run_pipeline(&config, Some(Stage::Matrices)).unwrap();
        assert!(executed(&report, Stage::Matrices));
    }

    #[test]
    fn changing_the_seed_reruns_factorization_only() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 23)).unwrap();
        run_pipeline(&config, None).unwrap();
        let mut reseeded = config.clone();
        reseeded.master_seed = 24;
        let report = run_pipeline(&reseeded, None).unwrap();
        for stage in [Stage::Ingest, Stage::Clean, Stage::Matrices, Stage::Annotations] {
            assert!(!executed(&report, stage), "{stage} should have skipped");
        }
        for stage in [Stage::Hierarchy, Stage::Graph, Stage::Export] {
            assert!(executed(&report, stage), "{stage} should have rerun");
        }
    }

    #[test]
    fn stats_report_lists_kinds_and_histograms() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 29)).unwrap();
        run_pipeline(&config, None).unwrap();
        let report = stats_report(&config).unwrap();
        let mut lines = report.lines();
        assert_eq!(lines.next().unwrap(), "section\tkey\tsubkey\tcount");
        assert!(report.contains("node_kind\tDocument\t\t10"));
        assert!(report.contains("edge_kind\tHAS_TOPIC\t\t10"));
        assert!(report.contains("topic_category\troot#"));
        assert!(report.contains("phys.PL"));
    }

    #[test]
    fn export_command_needs_a_completed_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&fixture(dir.path(), 31)).unwrap();
        let err = export_from_checkpoint(&config, ExportFormat::Graphml, None).unwrap_err();
        assert!(err.to_string().contains("run the pipeline first"), "{err}");
        run_pipeline(&config, None).unwrap();
        let target = dir.path().join("sidecar.graphml");
        let written =
            export_from_checkpoint(&config, ExportFormat::Graphml, Some(target.clone())).unwrap();
        assert_eq!(written, target);
        assert!(target.is_file());
    }
}
