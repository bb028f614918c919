//! Benchmark data: the two-state HMM with known salient cells, an ICU-like
//! stand-in with a planted late signal, and CSV ingestion.

mod archive;
mod csv_io;
mod dataset;
mod hmm;
mod icu;

pub use archive::{bytes_to_f64s, f64s_to_bytes, load_dataset, read_archive, save_dataset, write_archive};
pub use csv_io::{impute_forward_fill, load_csv, CsvSchema, LabelKind};
pub use dataset::{Labels, TimeSeriesDataset};
pub use hmm::{cholesky3, generate_hmm, label_probability, salient_feature, HmmConfig, HMM_FEATURES};
pub use icu::{generate_icu_like, late_score, IcuConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("covariance matrix is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("csv: {0}")]
    Csv(String),
    #[error("ragged time indices in samples {samples:?}")]
    RaggedTime { samples: Vec<String> },
    #[error("io: {0}")]
    Io(String),
    #[error("archive format: {0}")]
    Format(String),
}
