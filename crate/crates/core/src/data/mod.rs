//! Dataset generation and preparation for the emissions network: steady and
//! transient logging from the plant, correlation-based input screening,
//! Mahalanobis outlier rejection, steady-state rebalancing, and the
//! train/validation/test split.

mod generate;
mod io;
mod pipeline;
mod stats;
mod types;

pub use generate::{generate_steady, generate_transient, STEADY_POINTS, TRANSIENT_SAMPLES};
pub use io::{dataset_from_csv, dataset_to_csv, read_dataset, write_dataset, DatasetSchema};
pub use pipeline::{
    balance, filter_outliers, prepare, select_inputs, split, steady_self_distance_cutoff,
    ChannelScreen, PrepareReport, Selection, OUTLIER_PERCENTILE, SELECT_THRESHOLD,
    STEADY_DUPLICATION,
};
pub use stats::{mahalanobis, normalized_xcov, percentile, DatasetStats, MahalanobisFactor};
pub use types::{Dataset, Sample, SampleKind, SplitDataset, SPLIT_RATIOS};
