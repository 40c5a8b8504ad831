//! Sequence representation, window prompting, metrics and synthetic data for
//! point-conditioned text parsing.
//!
//! Every parsing task (word spotting, key information extraction, table
//! recognition, hierarchical text detection) is expressed as three token
//! sequences sharing one vocabulary: a structured points sequence of text
//! centers interleaved with task tags, a 16-point region sequence per
//! center, and a character content sequence per center.

pub mod codec;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod prompting;
pub mod synth;
pub mod table;
pub mod vocab;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{Point, Polygon16, QuantizedPoint, QuantizerConfig};
pub use vocab::{build_vocab, Task, TokenId, VocabSpec, Vocabulary};
