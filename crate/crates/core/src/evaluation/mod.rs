//! Metrics, confidence intervals, significance tests and feature importance.

mod importance;
mod metrics;
mod stats;

pub use importance::{permutation_importance, rank_importance, Importance};
pub use metrics::{
    aggregated_vote_share, evaluate_fold, macro_f1, macro_f1_indices, true_vote_share, tvd, F1Scores, FoldMetrics,
    VoteShareVector,
};
pub use stats::{average_ranks, bootstrap_ci, fold_ci, ranksum_test, CiMethod, ConfidenceInterval, RankSumResult};
