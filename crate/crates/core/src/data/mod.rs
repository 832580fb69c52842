//! Corpus ingestion, synthetic corpora, k-fold splits and evaluation.

mod corpus;
mod metrics;
mod split;
mod synthetic;
mod ttest;

pub use corpus::{load_corpus, parse_corpus, Corpus, Vocabulary, UNK};
pub use metrics::{
    evaluate, load_predictions, parse_predictions, summarize_folds, EvalResult, MeanStd,
    Prediction, TaskScores,
};
pub use split::{kfold_split, position_stats, FoldSplit, FoldStats, SplitReport};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use ttest::{student_t_sf, ttest_onesample};
