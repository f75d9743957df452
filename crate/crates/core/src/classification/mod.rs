//! Severity classification from the biomarker vector.

pub mod metrics;
pub mod model;
pub mod protocol;
pub mod records;
pub mod windowed;

pub use metrics::{classification_metrics, ClassificationMetrics};
pub use model::{mlp_architectures, train_flat, ClassifierModel, ModelSpec, Standardizer};
pub use protocol::{
    baseline_sweep, default_candidates, evaluate_protocol, train, BaselineSweep, EvalReport, Model, DEFAULT_N_SEEDS,
    DEFAULT_SPLIT,
};
pub use records::{derive_severity, read_cohort, write_cohort, SlideRecord};
pub use windowed::{route, train_windowed, Route, WindowedClassifier};
