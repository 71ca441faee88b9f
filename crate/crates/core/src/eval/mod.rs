//! Datasets, splits, perturbations, metrics and experiment runners.

mod dataset;
mod experiment;
mod metrics;
mod record;
mod split;
mod synthetic;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetMeta};
pub use experiment::{
    aggregate, run_ood_experiment, run_seeds, run_shift_sweep, train_on_split, Baseline, BaselineKind, OodExperiment,
    OodKind, Prediction, ShiftKind, UncertaintyModel, DEFAULT_SHIFT_LEVELS,
};
pub use metrics::{accuracy, auc_pr, auc_roc, brier, ece, ece_from_confidence};
pub use record::{records_to_csv, write_results, ResultRecord};
pub use split::{
    left_out_class_setup, perturb_features, perturb_features_among, stratified_split, FeatureNoise, LeftOutSetup,
    SplitRatios, SplitSpec, UNLABELED,
};
pub use synthetic::{make_synthetic_benchmark, SyntheticConfig};
