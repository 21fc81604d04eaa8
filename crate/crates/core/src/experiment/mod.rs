//! End-to-end MNIST runs, finetuning and output artifacts.

mod artifacts;
mod config;
mod run;

pub use artifacts::{
    encode_pgm, export_representations, linearize_filters, rnn_train, to_gray, write_filters,
    IMAGE_SIDE,
};
pub use config::{
    Algorithm, DataConfig, DiscreteKind, EstimatorParams, ExperimentConfig, LayerConfig,
};
pub use run::{
    argmax, build_network, classification_error, finetune_with, load_splits, predict_proba,
    prepare_splits, run_experiment, run_experiment_with, AngleRow, FinetuneOutput, MetricsRow,
    RunOutput, Splits, ANGLES_HEADER, METRICS_HEADER,
};
