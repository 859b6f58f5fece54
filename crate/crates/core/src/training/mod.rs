//! Dataset construction, augmentation, topology-disjoint splits, the
//! training loop and evaluation.

mod augment;
mod dataset;
mod split;
mod trainer;

pub use augment::{augment, AugmentConfig};
pub use dataset::{build_dataset, read_ndjson, write_ndjson, GraphSample};
pub use split::{kfold_split, train_test_split};
pub use trainer::{
    evaluate, mean_std, train, write_history_csv, EpochRecord, GridPoint, MetricsTable, SampleMetrics, TrainConfig,
    TrainOutcome,
};
