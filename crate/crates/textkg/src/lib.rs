//! Corpus-to-knowledge-graph pipeline.
//!
//! The crate turns a document corpus into a hierarchy of topics and a typed
//! knowledge graph in five layers:
//!
//! 1. [`corpus`]: load records, clean text, build a df-filtered vocabulary.
//! 2. [`matrices`]: sparse TF-IDF, SPPMI co-occurrence, and category
//!    matrices over that vocabulary.
//! 3. [`nmf`] and [`nmfk`]: nonnegative factorization at fixed rank, and
//!    ensemble-stability selection of the rank itself.
//! 4. [`split`] and [`hierarchy`]: chunked factorization merged back
//!    losslessly, side-information fusion, and recursive sub-topic trees.
//! 5. [`kg`]: document/topic/keyword/entity graph assembly and export.
//!
//! [`pipeline`] orchestrates the layers behind a checkpointing CLI. Every
//! random draw derives from one master seed ([`seed`]), so equal configs
//! reproduce equal artifacts bit-for-bit.

pub mod corpus;
pub mod error;
pub mod hierarchy;
pub mod kg;
pub mod matrices;
pub mod nmf;
pub mod pipeline;
pub mod nmfk;
pub mod seed;
pub mod split;

pub use error::{Error, Result};
pub use matrices::SparseMatrix;

/// Runs every Rust code block in the guide (`book/`) as a doc-test, so the
/// guide can never drift from the crate it documents.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }

    chapter!(introduction, "introduction.md");
    chapter!(corpus, "corpus.md");
    chapter!(matrices, "matrices.md");
    chapter!(factorization, "factorization.md");
    chapter!(rank_selection, "rank-selection.md");
    chapter!(chunked_factorization, "chunked-factorization.md");
    chapter!(hierarchy, "hierarchy.md");
    chapter!(knowledge_graph, "knowledge-graph.md");
    chapter!(pipeline, "pipeline.md");
}
