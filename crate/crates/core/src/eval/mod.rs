//! Bidirectional retrieval metrics and the rank-averaging baseline.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{
    baseline_b1, evaluate, score_matrix, Direction, EvalOutcome, Rankings, RetrievalReport,
    ScoreMode, SimilarityMatrix,
};
pub use metrics::{first_relevant_rank, rank_row, recall_at_k, rsum, DirectionReport};
pub use report::ReportFile;
