//! Alignment sharpness and word error rate evaluation.

mod attention;
mod report;
mod wer;

pub use attention::{read_attention, sharpness_score, write_attention, AttentionMatrix, ROW_SUM_TOLERANCE};
pub use report::{quantile, sharpness_report, write_sharpness_csv, SummaryStats};
pub use wer::{
    normalize_text, read_sus_pairs, read_sus_tsv, sus_report, wer, write_sus_csv, SusReport, WerBreakdown,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("row {row} sums to {sum}, not 1")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("weight at row {row}, column {col} is outside [0, 1]: {value}")]
    WeightOutOfRange { row: usize, col: usize, value: f64 },
    #[error("attention matrix has no valid frames")]
    NoValidFrames,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label '{0}' has no matrices")]
    EmptyLabel(String),
    #[error("reference has no words")]
    EmptyReference,
    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("no sentence pairs")]
    NoPairs,
    #[error("malformed attention file {path}: {reason}")]
    MalformedAttnFile { path: PathBuf, reason: String },
    #[error("malformed SUS input {path}: {reason}")]
    MalformedSusInput { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
