//! Dataset loading, batching, hierarchy parsing and the planted-dependency
//! synthetic generator.
//!
//! The on-disk format is JSONL, one instance per line:
//!
//! ```text
//! {"features": [[0, 1.5], [7, -0.25]], "labels": ["/person", "/person/artist"]}
//! ```
//!
//! Label hierarchies are encoded in the names themselves as path prefixes;
//! there is no separate hierarchy file.

mod dataset;
mod synth;
mod vocab;

pub use dataset::{
    dump_dataset, epoch_batches, load_dataset, load_dataset_from_reader, sample_batch,
    validate_hierarchy, Batch, DatasetRole, HierarchyReport, Instance, MultiLabelDataset,
};
pub use synth::{synth_generate, CoPair, SynthConfig, SynthOutput};
pub use vocab::LabelVocab;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown label {label:?} at line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[cfg(test)]
mod tests;
