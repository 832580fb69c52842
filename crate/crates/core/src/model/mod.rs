//! The assembled encoder: embedding stand-in, E-GAT layers bridged by
//! Activation Sort, heads and losses, plus training and auditing.

mod audit;
mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use audit::{
    gradient_audit, gradient_audit_with_step, stop_gradient_audit, AuditReport, GroupCheck,
    StopGradientCheck, StopGradientStatus, TransitionCheck,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Bridge, ModelConfig, CONFIG_KEYS};
pub use forward::{EncodedDoc, ForwardTrace, LayerState};
pub use params::{HeadParams, LayerParams, ModelParams, ParamVars};
pub use train::AdamState;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::{Prediction, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::LossReport;
use crate::segmentation::Document;

/// Parameters, vocabulary and optimiser state of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub step: u64,
}

impl ModelState {
    /// Fresh model, initialised from `config.seed`.
    pub fn new(config: ModelConfig, vocabulary: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&config, vocabulary.len(), &mut rng);
        let optimizer = AdamState::zeros_like(&params);
        Ok(ModelState {
            config,
            vocabulary,
            params,
            optimizer,
            step: 0,
        })
    }

    /// Token ids and labels of `doc`. Fails for documents longer than
    /// `max_doc_len`.
    pub fn encode(&self, doc: &Document) -> Result<EncodedDoc> {
        if doc.len() > self.config.max_doc_len {
            return Err(Error::config(format!(
                "document {} has {} clauses but max_doc_len is {}",
                doc.doc_id(),
                doc.len(),
                self.config.max_doc_len
            )));
        }
        EncodedDoc::new(doc, &self.vocabulary)
    }

    fn tape(&self) -> Tape {
        let mut tape = Tape::new();
        tape.set_stop_gradient_enabled(!self.config.disable_stop_gradient);
        tape
    }

    /// Clause embeddings: mean of the clause's token vectors.
    pub fn embed_document(&self, doc: &Document) -> Result<Tensor> {
        let enc = self.encode(doc)?;
        let mut tape = Tape::new();
        let table = tape.constant(self.params.token_embedding.clone());
        let x = tape.gather_rows(table, enc.token_groups)?;
        Ok(tape.value(x).clone())
    }

    pub fn forward(&self, doc: &Document) -> Result<ForwardTrace> {
        let enc = self.encode(doc)?;
        let mut tape = self.tape();
        let graph = forward::build_graph(&mut tape, &self.params, &self.config, &enc)?;
        Ok(ForwardTrace::from_graph(&tape, &graph))
    }

    pub fn loss(&self, doc: &Document) -> Result<LossReport> {
        let enc = self.encode(doc)?;
        let mut tape = self.tape();
        let graph = forward::build_graph(&mut tape, &self.params, &self.config, &enc)?;
        Ok(graph.report(&tape))
    }

    /// Loss report and `d total / d param` in [`ModelParams::named`] order.
    pub fn gradients(&self, doc: &Document) -> Result<(LossReport, Vec<Tensor>)> {
        self.gradients_encoded(&self.encode(doc)?)
    }

    pub(crate) fn gradients_encoded(&self, enc: &EncodedDoc) -> Result<(LossReport, Vec<Tensor>)> {
        let mut tape = self.tape();
        let graph = forward::build_graph(&mut tape, &self.params, &self.config, enc)?;
        let report = graph.report(&tape);
        if !report.is_finite() {
            return Err(Error::NonFinite {
                doc_id: enc.doc_id.clone(),
            });
        }
        tape.backward(graph.total)?;
        let grads = graph
            .params
            .all()
            .into_iter()
            .map(|v| tape.grad_or_zeros(v))
            .collect();
        Ok((report, grads))
    }

    /// Extract emotions, causes and pairs whose final-layer probability is
    /// strictly above `threshold`.
    pub fn predict(&self, doc: &Document, threshold: f64) -> Result<Prediction> {
        let trace = self.forward(doc)?;
        Ok(extract(doc.doc_id(), trace.last(), threshold))
    }

    pub fn predict_all(&self, docs: &[Document], threshold: f64) -> Result<Vec<Prediction>> {
        docs.iter().map(|d| self.predict(d, threshold)).collect()
    }
}

/// Threshold one layer's probabilities into 1-based prediction sets.
pub fn extract(doc_id: &str, layer: &LayerState, threshold: f64) -> Prediction {
    let above = |p: &[f64]| -> Vec<usize> {
        p.iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(i, _)| i + 1)
            .collect()
    };
    let (n, m) = layer.pairs.shape();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| layer.pairs[(i, j)] > threshold)
        .map(|(i, j)| (i + 1, j + 1))
        .collect();
    Prediction::new(doc_id, above(&layer.emotion), above(&layer.cause), pairs)
}
