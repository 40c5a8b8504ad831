use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("decode error: unknown token id {0}")]
    Decode(u32),

    #[error("sequence of {needed} tokens exceeds the maximum length {max}; {fits} item(s) fit")]
    Truncation { needed: usize, max: usize, fits: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("encode error: {0}")]
    Encode(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("{path} line {line}: {msg}")]
    Jsonl { path: String, line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}
