//! Scene input, embedding provider client, and ranking/report output.

pub mod provider;
pub mod records;
pub mod results;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use provider::{fetch_embeddings, EmbeddingCache, ProviderConfig, ProviderError, RetryPolicy};
pub use records::{load_scenes, parse_scenes, write_scenes, CaptionRecord, SceneRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    InvalidField { line: usize, message: String },
    #[error("line {line}: hallucinated must be 0 or 1, got {value}")]
    InvalidLabel { line: usize, value: u8 },
    #[error("scene {scene_id}, caption {caption_id}: embedding has {got} dimensions, expected {expected}")]
    DimensionMismatch {
        scene_id: String,
        caption_id: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate caption {caption_id} in scene {scene_id}")]
    DuplicateId { scene_id: String, caption_id: String },
    #[error("scene {scene_id}, caption {caption_id}: no embedding and no provider configured")]
    MissingEmbeddings { scene_id: String, caption_id: String },
    #[error("scene {scene_id}: {message}")]
    InvalidScene { scene_id: String, message: String },
}

impl IoError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
