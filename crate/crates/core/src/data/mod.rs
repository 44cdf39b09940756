//! Behaviors, profiles, datasets and the synthetic generator.

mod atomic_set;
mod generator;
mod io;
mod types;
mod vocab;

pub use atomic_set::{extract_atomic_set, AtomicSet};
pub use generator::{generate_synthetic, shuffle_labels, GenConfig, GenTruth, Generated};
pub use io::{
    load_dataset, parse_items, parse_records, parse_users, save_dataset, ItemLine, Manifest, RecordLine, UserLine,
    SCHEMA_VERSION,
};
pub use types::{AtomicBehavior, CtrRecord, Dataset, ItemProfile, Split, UserProfile};
pub use vocab::{Vocab, UNK_TOKEN};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("behavior text is empty after trimming")]
    EmptyText,
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
