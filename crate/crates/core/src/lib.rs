//! Sentence-aware multi-mask graph attention with Activation Sort, for
//! emotion-cause pair extraction at desk scale.
//!
//! The pipeline, bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode tape with an explicit
//!   stop-gradient node.
//! - [`segmentation`]: clauses, sentences and the multi-mask matrix.
//! - [`activation_sort`]: rank labels that replace raw prediction scores.
//! - [`egat`]: attention scores, normalisation and masked aggregation.
//! - [`heads`]: predictions and losses, including the sort loss.
//! - [`model`]: the assembled encoder, training, checkpoints and gradient audit.
//! - [`data`]: corpora, synthetic data, k-fold splits and metrics.
//!
//! ```
//! use eagat::data::{generate_synthetic, SyntheticSpec};
//! use eagat::model::{ModelConfig, ModelState};
//!
//! let corpus = generate_synthetic(4, 7, SyntheticSpec::default())?;
//! let config = ModelConfig { hidden_size: 8, ..Default::default() };
//! let mut state = ModelState::new(config, corpus.vocabulary.clone())?;
//! let before = state.loss(&corpus.documents[0])?.total;
//! state.train(&corpus.documents, 20, |_, _| {})?;
//! assert!(state.loss(&corpus.documents[0])?.total < before);
//! # Ok::<(), eagat::Error>(())
//! ```

pub mod activation_sort;
pub mod autodiff;
pub mod data;
pub mod egat;
mod error;
pub mod heads;
pub mod model;
pub mod segmentation;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/multimask.md")]
    mod multimask {}
    #[doc = include_str!("../../../book/src/activation-sort.md")]
    mod activation_sort {}
    #[doc = include_str!("../../../book/src/egat.md")]
    mod egat {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
