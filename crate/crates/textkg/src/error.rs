use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file whose contents violate its format. `line` is 1-based when known.
    #[error("{path}{}: {msg}", line.map(|n| format!(":{n}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "vocabulary is empty after document-frequency filtering \
         (min_df={min_df}, max_df_fraction={max_df_fraction}, \
         {distinct_tokens} distinct tokens over {n_docs} documents)"
    )]
    EmptyVocabulary {
        min_df: usize,
        max_df_fraction: f64,
        distinct_tokens: usize,
        n_docs: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Pipeline stage failure; the CLI maps this to its own exit code.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: impl Into<Option<usize>>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line: line.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
