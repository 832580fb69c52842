//! Enhanced graph attention: additive attention scores, the LeakyReLU-ratio
//! row normalisation, and aggregation split over the three mask relations.
//!
//! All functions record onto a caller-supplied [`Tape`].

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::segmentation::{MultiMask, Relation};

/// Activation and stabiliser settings shared by every layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activations {
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    pub epsilon: f64,
}

impl Default for Activations {
    fn default() -> Self {
        Activations {
            leaky_slope: 0.2,
            elu_alpha: 1.0,
            epsilon: 1e-12,
        }
    }
}

/// `e[i][j] = (X w_row)[i] + (X w_col)[j]`.
pub fn attention_scores(tape: &mut Tape, x: Var, w_row: Var, w_col: Var) -> Result<Var> {
    let rows = tape.matmul(x, w_row)?;
    let cols = tape.matmul(x, w_col)?;
    tape.outer_sum(rows, cols)
}

/// Same outer-sum grid, rows scored from emotion-rank features and columns
/// from cause-rank features.
pub fn rank_attention_scores(
    tape: &mut Tape,
    emotion_ranks: Var,
    cause_ranks: Var,
    w_row: Var,
    w_col: Var,
) -> Result<Var> {
    if tape.shape(emotion_ranks) != tape.shape(cause_ranks) {
        return Err(Error::Shape {
            op: "rank_attention_scores",
            left: tape.shape(emotion_ranks),
            right: tape.shape(cause_ranks),
        });
    }
    let rows = tape.matmul(emotion_ranks, w_row)?;
    let cols = tape.matmul(cause_ranks, w_col)?;
    tape.outer_sum(rows, cols)
}

/// `A[i][j] = LeakyReLU(e[i][j]) / (sum_k LeakyReLU(e[i][k]) + eps)`.
///
/// A ratio, not a softmax: with negative scores, rows can leave `[0, 1]`.
pub fn normalize(tape: &mut Tape, e: Var, act: &Activations) -> Var {
    let activated = tape.leaky_relu(e, act.leaky_slope);
    tape.row_normalize(activated, act.epsilon)
}

/// `A_l = normalize(e_l) + A_{l-1}`.
pub fn residual_adjacency(
    tape: &mut Tape,
    e: Var,
    previous: Var,
    act: &Activations,
) -> Result<Var> {
    let normalized = normalize(tape, e, act);
    tape.add(normalized, previous)
}

/// Indicator of mask relation `rel` as a 0/1 tensor.
pub fn mask_indicator(mask: &MultiMask, rel: Relation) -> Tensor {
    let n = mask.size();
    Tensor::from_fn(n, n, |i, j| {
        f64::from(u8::from(mask.get(i, j) == rel.value()))
    })
}

/// `A_m`: `A` with every entry whose mask value differs from `m` set to zero.
pub fn split_adjacency(tape: &mut Tape, a: Var, mask: &MultiMask) -> Result<[Var; 3]> {
    let n = mask.size();
    if tape.shape(a) != (n, n) {
        return Err(Error::Shape {
            op: "split_adjacency",
            left: tape.shape(a),
            right: (n, n),
        });
    }
    let mut parts = [a; 3];
    for (slot, rel) in parts.iter_mut().zip(Relation::ALL) {
        let ind = tape.constant(mask_indicator(mask, rel));
        *slot = tape.mul(a, ind)?;
    }
    Ok(parts)
}

/// `h = sum_m ELU(A_m X W_m)`.
pub fn masked_aggregate(
    tape: &mut Tape,
    a: Var,
    x: Var,
    mask: &MultiMask,
    weights: [Var; 3],
    act: &Activations,
) -> Result<Var> {
    let parts = split_adjacency(tape, a, mask)?;
    let mut terms = Vec::with_capacity(3);
    for (a_m, w_m) in parts.into_iter().zip(weights) {
        let ax = tape.matmul(a_m, x)?;
        let axw = tape.matmul(ax, w_m)?;
        terms.push(tape.elu(axw, act.elu_alpha));
    }
    tape.add_all(&terms)
}
