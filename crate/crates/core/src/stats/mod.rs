//! Subjective-score processing and model-evaluation statistics.

mod correlation;
mod logistic;
mod ratings;

pub use correlation::{accuracy, average_ranks, plcc, srcc, CorrelationReport};
pub use logistic::{logistic_fit, logistic_fit_seeded, logistic_value, LogisticFit};
pub use ratings::{compute_mos, screen_subjects, MosRecord, Rating, RatingTable, ScreeningReport, SubjectScreening};
