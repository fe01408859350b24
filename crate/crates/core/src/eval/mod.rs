//! Evaluation: precision/recall against reference predictions,
//! Bradley-Terry ranking of pairwise judgments, and an ICP baseline.

pub mod bt;
pub mod icp;
pub mod pr;

pub use bt::{fit_bradley_terry, fit_bradley_terry_from, kendall_tau, read_judgments, JudgmentSet, Ranking};
pub use icp::{icp_score, kabsch, IcpParams, IcpResult};
pub use pr::{precision_recall, read_predictions, CurvePoint, PrCurve, Prediction, PredictionSet, Source};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("truth set is empty, recall is undefined")]
    EmptyTruth,
    #[error("match radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("predictions are for scene {0} but truth is for scene {1}")]
    SceneMismatch(String, String),
    #[error("duplicate prediction for affordance {affordance_id} at one location")]
    DuplicatePrediction { affordance_id: u32 },
    #[error("non-finite prediction")]
    NonFinite,
    #[error("item {0} has no comparisons")]
    NoComparisons(String),
    #[error("item {0} compared with itself")]
    SelfComparison(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("winner {winner} is neither {a} nor {b}")]
    InvalidWinner { winner: String, a: String, b: String },
    #[error("ICP needs two non-empty clouds")]
    EmptyCloud,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
