//! Data sources for online calibration experiments: a group-shift
//! synthetic generator, a Gaussian stream with known quantiles, a small
//! correlated image stream, CSV ingestion with warm-up normalization, and
//! trace export.

pub mod error;
pub mod image;
pub mod known;
pub mod sample;
pub mod synthetic;
pub mod tabular;
pub mod trace_io;

pub use error::{Result, StreamError};
pub use image::{ImageSample, ImageStream, ImageStreamConfig};
pub use known::{KnownQuantileConfig, KnownQuantileStream};
pub use sample::{pairs, ColumnStats, Sample, Standardizer, WarmupStandardized};
pub use synthetic::{GroupSchedule, SyntheticConfig, SyntheticStream};
pub use tabular::{csv_ingest, CsvStream, CsvStreamConfig, TimestampFormat};
pub use trace_io::{read_multi_trace, read_trace, write_multi_trace, write_trace};
