//! Validation schemes, training, metrics, experiments and reports.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod split;
pub mod train;

pub use experiment::{
    audit_leakage, compare, declared_comparisons, make_plan, run_experiment, Comparison, ExperimentConfig,
    ExperimentReport, LeakageAudit, ResultRow, Variant,
};
pub use metrics::{balanced_accuracy, exact_permutation_p, paired_permutation_test, sampled_permutation_p, PermutationResult};
pub use split::{make_8fold_plan, make_loso_plan, Fold, Scheme, SplitKey, SplitPlan};
pub use train::{evaluate_balanced_accuracy, predict_epochs, train_model, TrainConfig, TrainOutcome};
