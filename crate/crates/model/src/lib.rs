//! A small encoder/decoder transformer over feature grids with a tape-based
//! reverse-mode autodiff, trained to emit structured point sequences and
//! decoded in two stages: center points first, then a polygon and a
//! transcription per point.

pub mod checkpoint;
pub mod decode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use decode::{greedy_decode, infer_document, Decoded, ParsedDocument};
pub use error::{ModelError, Result};
pub use model::{DecoderKind, Model, ModelConfig};
pub use train::{train, PromptMode, TrainConfig, TrainReport};
