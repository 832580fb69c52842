//! Finite-difference audit of the analytic gradients, plus the stop-gradient
//! contract of the sort loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    relative_error_with_floor, resolution_floor, Tape, Tensor, Var, FD_STEP, GRAD_TOLERANCE,
};
use crate::error::Result;
use crate::model::forward::{build_graph, Graph};
use crate::model::{EncodedDoc, ModelParams, ModelState};
use crate::segmentation::Document;

/// Agreement of one parameter tensor's analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index, analytic and numeric value of the entry with the largest
    /// relative error.
    pub worst: (usize, f64, f64),
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopGradientStatus {
    Pass,
    Fail,
    /// Stop-gradient was disabled on purpose, so the contract is expected to break.
    ExpectedFail,
    /// Single-layer model: there is no sort loss.
    NotApplicable,
}

/// One layer transition `l-1 -> l` of the sort loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionCheck {
    /// The deeper layer `l`.
    pub layer: usize,
    /// Largest `|d term / d theta|` over layer-`(l-1)` parameters.
    pub term_grad: f64,
    /// Same for the hinge argument, which is informative even when the hinge is flat.
    pub gap_grad: f64,
    /// `gap_grad` again with stop-gradient disabled.
    pub contrast_gap_grad: f64,
    /// Whether nudging a layer-`(l-1)` parameter moves the recorded sort loss.
    pub value_changes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopGradientCheck {
    pub status: StopGradientStatus,
    pub transitions: Vec<TransitionCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub doc_id: String,
    pub step: f64,
    pub tolerance: f64,
    /// Gradient magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub total_loss: f64,
    pub groups: Vec<GroupCheck>,
    pub stop_gradient: StopGradientCheck,
}

impl AuditReport {
    pub fn gradients_pass(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    /// Gradients agree and the stop-gradient check did not fail unexpectedly.
    pub fn passed(&self) -> bool {
        self.gradients_pass() && self.stop_gradient.status != StopGradientStatus::Fail
    }
}

fn tape_for(state: &ModelState, replay: Option<&[Tensor]>) -> Tape {
    let mut tape = match replay {
        Some(values) => Tape::replaying(values.to_vec()),
        None => Tape::new(),
    };
    tape.set_stop_gradient_enabled(!state.config.disable_stop_gradient);
    tape
}

fn total_at(state: &ModelState, params: &ModelParams, enc: &EncodedDoc, frozen: &[Tensor]) -> f64 {
    let mut tape = tape_for(state, Some(frozen));
    match build_graph(&mut tape, params, &state.config, enc) {
        Ok(g) => tape.value(g.total).item(),
        Err(_) => f64::NAN,
    }
}

/// Compare analytic gradients of the total loss with central differences for
/// every parameter tensor, and check that the sort loss sends no gradient to
/// the shallower layer of each transition.
///
/// Detached values are frozen at their unperturbed values during the
/// perturbed passes, so both sides differentiate the same function.
pub fn gradient_audit(doc: &Document, state: &ModelState) -> Result<AuditReport> {
    gradient_audit_with_step(doc, state, FD_STEP)
}

/// [`gradient_audit`] with another difference step. Shrinking the step
/// separates truncation error (falls quadratically) from a wrong gradient
/// (does not fall).
pub fn gradient_audit_with_step(
    doc: &Document,
    state: &ModelState,
    step: f64,
) -> Result<AuditReport> {
    let enc = state.encode(doc)?;
    let mut tape = tape_for(state, None);
    tape.capture_stop_gradients();
    let graph = build_graph(&mut tape, &state.params, &state.config, &enc)?;
    let frozen = tape.take_captured();
    let total_loss = tape.value(graph.total).item();
    let floor = resolution_floor(total_loss, step);
    tape.backward(graph.total)?;
    let analytic: Vec<Tensor> = graph
        .params
        .all()
        .into_iter()
        .map(|v| tape.grad_or_zeros(v))
        .collect();

    let named = state.params.named();
    let groups = named
        .iter()
        .enumerate()
        .map(|(k, (name, tensor))| {
            let errors: Vec<(f64, f64, f64, f64)> = (0..tensor.len())
                .into_par_iter()
                .map(|e| {
                    let eval = |delta: f64| {
                        let mut p = state.params.clone();
                        p.tensors_mut()[k].data_mut()[e] += delta;
                        total_at(state, &p, &enc, &frozen)
                    };
                    let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                    let a = analytic[k].data()[e];
                    (
                        relative_error_with_floor(a, numeric, floor),
                        (a - numeric).abs(),
                        a,
                        numeric,
                    )
                })
                .collect();
            let (worst, max_rel) = errors.iter().enumerate().fold((0, 0.0), |best, (i, e)| {
                if e.0 > best.1 {
                    (i, e.0)
                } else {
                    best
                }
            });
            let max_abs = errors.iter().map(|e| e.1).fold(0.0, f64::max);
            let finite = errors.iter().all(|e| e.0.is_finite());
            GroupCheck {
                name: name.clone(),
                entries: tensor.len(),
                max_rel_error: max_rel,
                max_abs_error: max_abs,
                worst: (worst, errors[worst].2, errors[worst].3),
                passed: finite && max_rel < GRAD_TOLERANCE,
            }
        })
        .collect();

    Ok(AuditReport {
        doc_id: enc.doc_id.clone(),
        step,
        tolerance: GRAD_TOLERANCE,
        floor,
        total_loss,
        groups,
        stop_gradient: stop_gradient_check(state, &enc)?,
    })
}

/// Only the stop-gradient part of [`gradient_audit`], without finite differences.
pub fn stop_gradient_audit(doc: &Document, state: &ModelState) -> Result<StopGradientCheck> {
    stop_gradient_check(state, &state.encode(doc)?)
}

/// Largest `|d root / d theta|` over layer `l`'s parameters.
fn layer_grad(
    state: &ModelState,
    enc: &EncodedDoc,
    sg: bool,
    l: usize,
    pick: fn(&Graph, usize) -> Var,
) -> Result<f64> {
    let mut tape = Tape::new();
    tape.set_stop_gradient_enabled(sg);
    let graph = build_graph(&mut tape, &state.params, &state.config, enc)?;
    tape.backward(pick(&graph, l))?;
    Ok(graph
        .params
        .layer(l - 1)
        .into_iter()
        .map(|v| {
            tape.grad_or_zeros(v)
                .data()
                .iter()
                .fold(0.0f64, |m, g| m.max(g.abs()))
        })
        .fold(0.0, f64::max))
}

fn sort_value(state: &ModelState, params: &ModelParams, enc: &EncodedDoc) -> Result<f64> {
    let mut tape = tape_for(state, None);
    let graph = build_graph(&mut tape, params, &state.config, enc)?;
    Ok(tape.value(graph.loss_sort).item())
}

fn stop_gradient_check(state: &ModelState, enc: &EncodedDoc) -> Result<StopGradientCheck> {
    let layers = state.config.num_layers;
    if layers < 2 || enc.gold_pairs.is_empty() {
        return Ok(StopGradientCheck {
            status: StopGradientStatus::NotApplicable,
            transitions: Vec::new(),
        });
    }
    let sg = !state.config.disable_stop_gradient;
    let term = |g: &Graph, l: usize| g.layers[l - 1].sort_term.expect("transition term");
    let gap = |g: &Graph, l: usize| g.layers[l - 1].sort_gap.expect("transition gap");
    let base = sort_value(state, &state.params, enc)?;

    let mut transitions = Vec::new();
    for l in 2..=layers {
        let mut nudged = state.params.clone();
        nudged.layers[l - 2].score_row.data_mut()[0] += 1e-3;
        transitions.push(TransitionCheck {
            layer: l,
            term_grad: layer_grad(state, enc, sg, l, term)?,
            gap_grad: layer_grad(state, enc, sg, l, gap)?,
            contrast_gap_grad: layer_grad(state, enc, false, l, gap)?,
            value_changes: sort_value(state, &nudged, enc)? != base,
        });
    }
    let contract_holds = transitions
        .iter()
        .all(|t| t.term_grad == 0.0 && t.gap_grad == 0.0);
    let contrast_flips = transitions.iter().all(|t| t.contrast_gap_grad > 0.0);
    let status = match (sg, contract_holds && contrast_flips) {
        (true, true) => StopGradientStatus::Pass,
        (true, false) => StopGradientStatus::Fail,
        (false, _) if contract_holds => StopGradientStatus::Fail,
        (false, _) => StopGradientStatus::ExpectedFail,
    };
    Ok(StopGradientCheck {
        status,
        transitions,
    })
}
