//! The L-layer forward pass and its loss graph.
//!
//! Layer 1 builds its adjacency from the clause embeddings. Every later layer
//! ranks the previous layer's detached predictions, turns the ranks into
//! attention scores, and adds the normalised grid to the previous adjacency.
//!
//! The sort loss compares each layer's gold-pair probability with the
//! previous layer's. Its gradient must not reach the previous layer, so the
//! current-layer operand is computed on a "sort view" of the layer: same
//! values, but every input inherited from layer `l-1` (its adjacency, and
//! `h^(l-1)` or the tanh bridge when those are in use) is detached.

use serde::{Deserialize, Serialize};

use crate::activation_sort::{embed_ranks, RankMap};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Vocabulary;
use crate::egat::{
    attention_scores, masked_aggregate, normalize, rank_attention_scores, Activations,
};
use crate::error::{Error, Result};
use crate::heads::{
    bce_loss, gold_pair_probability, predict_emotion_cause, predict_pairs, sort_transition_parts,
    total_loss, LayerLoss, LossReport,
};
use crate::model::{Bridge, ModelConfig, ModelParams, ParamVars};
use crate::segmentation::{build_multimask, Document, MultiMask};

/// A document converted to token ids, mask and label vectors.
#[derive(Clone, Debug)]
pub struct EncodedDoc {
    pub doc_id: String,
    pub token_groups: Vec<Vec<usize>>,
    pub mask: MultiMask,
    pub emotion_labels: Vec<f64>,
    pub cause_labels: Vec<f64>,
    pub pair_labels: Vec<f64>,
    /// 0-based gold pair positions.
    pub gold_pairs: Vec<(usize, usize)>,
}

impl EncodedDoc {
    pub fn new(doc: &Document, vocab: &Vocabulary) -> Result<Self> {
        let token_groups = doc
            .clauses()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let ids: Vec<usize> = c.tokens().iter().map(|t| vocab.id(t)).collect();
                if ids.is_empty() {
                    Err(Error::contract(format!(
                        "document {}: clause {} has no tokens",
                        doc.doc_id(),
                        k + 1
                    )))
                } else {
                    Ok(ids)
                }
            })
            .collect::<Result<_>>()?;
        Ok(EncodedDoc {
            doc_id: doc.doc_id().to_string(),
            token_groups,
            mask: build_multimask(doc),
            emotion_labels: doc.emotion_labels(),
            cause_labels: doc.cause_labels(),
            pair_labels: doc.pair_labels(),
            gold_pairs: doc.pairs().iter().map(|&(e, c)| (e - 1, c - 1)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.token_groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_groups.is_empty()
    }
}

/// Tape handles of one layer.
#[derive(Clone, Debug)]
pub(crate) struct LayerNodes {
    pub scores: Var,
    pub rank_grid: Option<Var>,
    pub adjacency: Var,
    pub h: Var,
    pub emotion: Var,
    pub cause: Var,
    pub pairs: Var,
    pub ranks: Option<RankMap>,
    pub gold_prob: Option<Var>,
    pub loss_e: Var,
    pub loss_c: Var,
    pub loss_pair: Var,
    /// `sg(P^{l-1}) - P^l` and the hinge term built on it.
    pub sort_gap: Option<Var>,
    pub sort_term: Option<Var>,
}

#[derive(Clone, Debug)]
pub(crate) struct Graph {
    pub params: ParamVars,
    pub clause_embeddings: Var,
    pub layers: Vec<LayerNodes>,
    pub loss_e: Var,
    pub loss_c: Var,
    pub loss_pair: Var,
    pub loss_sort: Var,
    pub total: Var,
}

impl Graph {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let v = |x: Var| tape.value(x).item();
        LossReport {
            loss_e: v(self.loss_e),
            loss_c: v(self.loss_c),
            loss_pair: v(self.loss_pair),
            loss_sort: v(self.loss_sort),
            total: v(self.total),
            per_layer: self
                .layers
                .iter()
                .enumerate()
                .map(|(k, n)| LayerLoss {
                    layer: k + 1,
                    loss_e: v(n.loss_e),
                    loss_c: v(n.loss_c),
                    loss_pair: v(n.loss_pair),
                    loss_sort: n.sort_term.map(v),
                })
                .collect(),
        }
    }
}

/// Features layer `l` scores its attention from, given layer `l-1`.
fn bridge_features(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ParamVars,
    prev: &LayerNodes,
) -> Result<(Var, Var, Option<RankMap>)> {
    match cfg.bridge {
        Bridge::Tanh => {
            let e = tape.tanh(prev.emotion);
            let c = tape.tanh(prev.cause);
            Ok((e, c, None))
        }
        Bridge::Sort => {
            let ye = tape.stop_gradient(prev.emotion);
            let yc = tape.stop_gradient(prev.cause);
            let ranks = RankMap::compute(
                tape.value(ye).data(),
                tape.value(yc).data(),
                cfg.label_scheme,
            )?;
            let (e, c) = match vars.rank_embedding {
                Some(table) if !cfg.rank_raw_scalar => (
                    embed_ranks(tape, table, &ranks.emotion)?,
                    embed_ranks(tape, table, &ranks.cause)?,
                ),
                _ => {
                    let as_column = |r: &[u64]| {
                        Tensor::column(&r.iter().map(|&v| v as f64).collect::<Vec<_>>())
                    };
                    (
                        tape.constant(as_column(&ranks.emotion)),
                        tape.constant(as_column(&ranks.cause)),
                    )
                }
            };
            Ok((e, c, Some(ranks)))
        }
    }
}

struct LayerOut {
    scores: Var,
    rank_grid: Option<Var>,
    adjacency: Var,
    h: Var,
}

fn heads_and_losses(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ParamVars,
    doc: &EncodedDoc,
    out: LayerOut,
    ranks: Option<RankMap>,
) -> Result<LayerNodes> {
    let (emotion, cause) = predict_emotion_cause(tape, out.h, &vars.heads)?;
    let pairs = predict_pairs(tape, out.h, &vars.heads)?;
    let gold_prob = gold_pair_probability(tape, pairs, &doc.gold_pairs)?;
    let literal = cfg.paper_literal_bce;
    Ok(LayerNodes {
        scores: out.scores,
        rank_grid: out.rank_grid,
        adjacency: out.adjacency,
        h: out.h,
        emotion,
        cause,
        pairs,
        ranks,
        gold_prob,
        loss_e: bce_loss(tape, emotion, &doc.emotion_labels, literal)?,
        loss_c: bce_loss(tape, cause, &doc.cause_labels, literal)?,
        loss_pair: bce_loss(tape, pairs, &doc.pair_labels, literal)?,
        sort_gap: None,
        sort_term: None,
    })
}

/// Record the whole model and its losses for one document.
pub(crate) fn build_graph(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    doc: &EncodedDoc,
) -> Result<Graph> {
    let vars = params.register(tape);
    let act: Activations = cfg.activations();
    let mask = &doc.mask;
    let x = tape.gather_rows(vars.token_embedding, doc.token_groups.clone())?;

    let first = &vars.layers[0];
    let scores = attention_scores(tape, x, first.score_row, first.score_col)?;
    let adjacency = normalize(tape, scores, &act);
    let h = masked_aggregate(tape, adjacency, x, mask, first.mask_weights, &act)?;
    let out = LayerOut {
        scores,
        rank_grid: None,
        adjacency,
        h,
    };
    let mut layers = vec![heads_and_losses(tape, cfg, &vars, doc, out, None)?];

    for l in 2..=cfg.num_layers {
        let prev = layers.last().expect("layer 1 exists").clone();
        let lv = vars.layers[l - 1].clone();
        let (feat_e, feat_c, ranks) = bridge_features(tape, cfg, &vars, &prev)?;
        let scores = rank_attention_scores(tape, feat_e, feat_c, lv.score_row, lv.score_col)?;
        let grid = normalize(tape, scores, &act);
        let adjacency = tape.add(grid, prev.adjacency)?;
        let input = if cfg.feed_previous_h { prev.h } else { x };
        let h = masked_aggregate(tape, adjacency, input, mask, lv.mask_weights, &act)?;
        let out = LayerOut {
            scores,
            rank_grid: Some(grid),
            adjacency,
            h,
        };
        let mut node = heads_and_losses(tape, cfg, &vars, doc, out, ranks)?;

        if let (Some(prev_p), Some(cur_p)) = (prev.gold_prob, node.gold_prob) {
            let current = if tape.stop_gradient_enabled() {
                let grid_sv = match cfg.bridge {
                    Bridge::Sort => grid,
                    Bridge::Tanh => {
                        let fe = tape.stop_gradient(feat_e);
                        let fc = tape.stop_gradient(feat_c);
                        let s = rank_attention_scores(tape, fe, fc, lv.score_row, lv.score_col)?;
                        normalize(tape, s, &act)
                    }
                };
                let a_prev = tape.stop_gradient(prev.adjacency);
                let a_sv = tape.add(grid_sv, a_prev)?;
                let input_sv = if cfg.feed_previous_h {
                    tape.stop_gradient(prev.h)
                } else {
                    x
                };
                let h_sv = masked_aggregate(tape, a_sv, input_sv, mask, lv.mask_weights, &act)?;
                let pairs_sv = predict_pairs(tape, h_sv, &vars.heads)?;
                gold_pair_probability(tape, pairs_sv, &doc.gold_pairs)?.expect("gold pairs present")
            } else {
                cur_p
            };
            let (gap, term) = sort_transition_parts(tape, prev_p, current, cfg.sort_margin)?;
            node.sort_gap = Some(gap);
            node.sort_term = Some(term);
        }
        layers.push(node);
    }

    let sum_of = |tape: &mut Tape, pick: fn(&LayerNodes) -> Var| -> Result<Var> {
        let vs: Vec<Var> = layers.iter().map(pick).collect();
        tape.add_all(&vs)
    };
    let loss_e = sum_of(tape, |n| n.loss_e)?;
    let loss_c = sum_of(tape, |n| n.loss_c)?;
    let loss_pair = sum_of(tape, |n| n.loss_pair)?;
    let sort_terms: Vec<Var> = layers.iter().filter_map(|n| n.sort_term).collect();
    let loss_sort = if sort_terms.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        tape.add_all(&sort_terms)?
    };
    let total = total_loss(
        tape,
        [loss_e, loss_c, loss_pair, loss_sort],
        &cfg.loss_weights,
    )?;

    Ok(Graph {
        params: vars,
        clause_embeddings: x,
        layers,
        loss_e,
        loss_c,
        loss_pair,
        loss_sort,
        total,
    })
}

/// Recorded intermediates of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    /// Pre-normalisation attention scores `e^(l)`.
    pub scores: Tensor,
    /// `normalize(e^(l))` for layers `l >= 2`.
    pub rank_grid: Option<Tensor>,
    pub adjacency: Tensor,
    pub h: Tensor,
    pub emotion: Vec<f64>,
    pub cause: Vec<f64>,
    pub pairs: Tensor,
    /// Present for layers `l >= 2` with the sort bridge.
    pub ranks: Option<RankMap>,
}

/// Everything the forward pass computed for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub clause_embeddings: Tensor,
    pub layers: Vec<LayerState>,
    pub losses: LossReport,
}

impl ForwardTrace {
    pub(crate) fn from_graph(tape: &Tape, g: &Graph) -> Self {
        let layers = g
            .layers
            .iter()
            .map(|n| LayerState {
                scores: tape.value(n.scores).clone(),
                rank_grid: n.rank_grid.map(|v| tape.value(v).clone()),
                adjacency: tape.value(n.adjacency).clone(),
                h: tape.value(n.h).clone(),
                emotion: tape.value(n.emotion).data().to_vec(),
                cause: tape.value(n.cause).data().to_vec(),
                pairs: tape.value(n.pairs).clone(),
                ranks: n.ranks.clone(),
            })
            .collect();
        ForwardTrace {
            clause_embeddings: tape.value(g.clause_embeddings).clone(),
            layers,
            losses: g.report(tape),
        }
    }

    /// `h^(L)`.
    pub fn final_h(&self) -> &Tensor {
        &self.layers.last().expect("at least one layer").h
    }

    pub fn last(&self) -> &LayerState {
        self.layers.last().expect("at least one layer")
    }
}
