//! Emotion, cause and pair heads plus the four training losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Default constant added per layer transition in the sort loss.
pub const SORT_MARGIN: f64 = 0.05;

/// Head parameters recorded on a tape. Shared by every layer.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub emotion_w: Var,
    pub emotion_b: Var,
    pub cause_w: Var,
    pub cause_b: Var,
    /// `2d x 1`: the first `d` rows score the emotion side, the rest the cause side.
    pub pair_w: Var,
    pub pair_b: Var,
}

/// Per-clause emotion and cause probabilities, each `|D| x 1`.
pub fn predict_emotion_cause(tape: &mut Tape, h: Var, heads: &HeadVars) -> Result<(Var, Var)> {
    let mut head = |w, b| -> Result<Var> {
        let logits = tape.matmul(h, w)?;
        let logits = tape.add(logits, b)?;
        Ok(tape.sigmoid(logits))
    };
    let e = head(heads.emotion_w, heads.emotion_b)?;
    let c = head(heads.cause_w, heads.cause_b)?;
    Ok((e, c))
}

/// `p[i][j] = sigmoid(W_p . [h_i ; h_j] + b_p)`, computed as an outer sum of
/// the two halves of `W_p`.
pub fn predict_pairs(tape: &mut Tape, h: Var, heads: &HeadVars) -> Result<Var> {
    let d = tape.shape(h).1;
    let (wp_rows, _) = tape.shape(heads.pair_w);
    if wp_rows != 2 * d {
        return Err(Error::Shape {
            op: "predict_pairs",
            left: tape.shape(h),
            right: tape.shape(heads.pair_w),
        });
    }
    let w_emotion = tape.slice_rows(heads.pair_w, 0, d)?;
    let w_cause = tape.slice_rows(heads.pair_w, d, d)?;
    let row = tape.matmul(h, w_emotion)?;
    let col = tape.matmul(h, w_cause)?;
    let grid = tape.outer_sum(row, col)?;
    let logits = tape.add(grid, heads.pair_b)?;
    Ok(tape.sigmoid(logits))
}

/// Summed binary cross-entropy between `yhat` (any shape) and row-major
/// binary `labels`.
///
/// Standard form: `-sum[y ln p + (1 - y) ln(1 - p)]`. With `paper_literal`
/// the log arguments are swapped: `-sum[y ln(1 - p) + (1 - y) ln p]`.
pub fn bce_loss(tape: &mut Tape, yhat: Var, labels: &[f64], paper_literal: bool) -> Result<Var> {
    let (r, c) = tape.shape(yhat);
    if labels.len() != r * c {
        return Err(Error::contract(format!(
            "bce_loss: {} predictions but {} labels",
            r * c,
            labels.len()
        )));
    }
    let y = Tensor::new(r, c, labels.to_vec())?;
    let not_y = y.map(|v| 1.0 - v);
    let (w_log_p, w_log_q) = if paper_literal {
        (not_y, y)
    } else {
        (y, not_y)
    };

    let p = tape.clamp(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = tape.affine(p, -1.0, 1.0);
    let log_p = tape.ln(p);
    let log_q = tape.ln(q);
    let w_p = tape.constant(w_log_p);
    let w_q = tape.constant(w_log_q);
    let a = tape.mul(w_p, log_p)?;
    let b = tape.mul(w_q, log_q)?;
    let s = tape.add(a, b)?;
    let total = tape.sum(s);
    Ok(tape.affine(total, -1.0, 0.0))
}

/// Mean pair probability over the gold positions (0-based `(i, j)`), or
/// `None` for a document without gold pairs.
pub fn gold_pair_probability(
    tape: &mut Tape,
    pair_probs: Var,
    gold: &[(usize, usize)],
) -> Result<Option<Var>> {
    if gold.is_empty() {
        return Ok(None);
    }
    let picked = tape.gather_entries(pair_probs, gold.to_vec())?;
    Ok(Some(tape.mean(picked)))
}

/// One transition term: `max(0, sg(previous) - current) + margin`.
///
/// `previous` passes through `stop_gradient`, so the term never pushes the
/// shallower layer's probability down.
pub fn sort_transition(tape: &mut Tape, previous: Var, current: Var, margin: f64) -> Result<Var> {
    sort_transition_parts(tape, previous, current, margin).map(|(_, term)| term)
}

/// Like [`sort_transition`], also returning the hinge argument
/// `sg(previous) - current`.
pub fn sort_transition_parts(
    tape: &mut Tape,
    previous: Var,
    current: Var,
    margin: f64,
) -> Result<(Var, Var)> {
    let frozen = tape.stop_gradient(previous);
    let gap = tape.sub(frozen, current)?;
    let hinge = tape.max0(gap);
    Ok((gap, tape.affine(hinge, 1.0, margin)))
}

/// `sum_{l=2..L} [max(0, P^{l-1} - P^l) + margin]` over per-layer gold-pair
/// probabilities. Fewer than two layers gives a constant zero.
pub fn sort_loss(tape: &mut Tape, per_layer: &[Var], margin: f64) -> Result<Var> {
    if per_layer.len() < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let terms = per_layer
        .windows(2)
        .map(|w| sort_transition(tape, w[0], w[1], margin))
        .collect::<Result<Vec<_>>>()?;
    tape.add_all(&terms)
}

/// Loss term weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub e: f64,
    pub c: f64,
    pub pair: f64,
    pub sort: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            e: 1.0,
            c: 1.0,
            pair: 1.0,
            sort: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("e", self.e),
            ("c", self.c),
            ("pair", self.pair),
            ("sort", self.sort),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::config(format!(
                    "loss_weights.{name} must be a non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 4] {
        [self.e, self.c, self.pair, self.sort]
    }

    pub fn combine(&self, terms: [f64; 4]) -> f64 {
        self.as_array().iter().zip(terms).map(|(w, t)| w * t).sum()
    }
}

/// `w_e Loss_e + w_c Loss_c + w_p Loss_pair + w_s Loss_sort`, in the order
/// `[e, c, pair, sort]`.
pub fn total_loss(tape: &mut Tape, terms: [Var; 4], weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let scaled: Vec<Var> = terms
        .into_iter()
        .zip(weights.as_array())
        .map(|(t, w)| tape.affine(t, w, 0.0))
        .collect();
    tape.add_all(&scaled)
}

/// Loss values of one layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerLoss {
    pub layer: usize,
    pub loss_e: f64,
    pub loss_c: f64,
    pub loss_pair: f64,
    /// Transition term into this layer; absent for the first.
    pub loss_sort: Option<f64>,
}

/// The four loss terms, their weighted total and the per-layer breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_e: f64,
    pub loss_c: f64,
    pub loss_pair: f64,
    pub loss_sort: f64,
    pub total: f64,
    pub per_layer: Vec<LayerLoss>,
}

impl LossReport {
    pub fn terms(&self) -> [f64; 4] {
        [self.loss_e, self.loss_c, self.loss_pair, self.loss_sort]
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|t| t.is_finite()) && self.total.is_finite()
    }

    /// Add another report (e.g. another document of the batch) into this one.
    pub fn accumulate(&mut self, other: &LossReport) {
        self.loss_e += other.loss_e;
        self.loss_c += other.loss_c;
        self.loss_pair += other.loss_pair;
        self.loss_sort += other.loss_sort;
        self.total += other.total;
        if self.per_layer.is_empty() {
            self.per_layer = other.per_layer.clone();
            return;
        }
        for (mine, theirs) in self.per_layer.iter_mut().zip(&other.per_layer) {
            mine.loss_e += theirs.loss_e;
            mine.loss_c += theirs.loss_c;
            mine.loss_pair += theirs.loss_pair;
            mine.loss_sort = match (mine.loss_sort, theirs.loss_sort) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    fn heads(tape: &mut Tape, d: usize, fill: f64) -> HeadVars {
        HeadVars {
            emotion_w: tape.param(Tensor::filled(d, 1, fill)),
            emotion_b: tape.param(Tensor::scalar(0.0)),
            cause_w: tape.param(Tensor::filled(d, 1, fill)),
            cause_b: tape.param(Tensor::scalar(0.0)),
            pair_w: tape.param(Tensor::filled(2 * d, 1, fill)),
            pair_b: tape.param(Tensor::scalar(0.0)),
        }
    }

    #[test]
    fn zero_heads_predict_one_half() {
        let mut tape = Tape::new();
        let hv = heads(&mut tape, 3, 0.0);
        let h = tape.constant(Tensor::from_fn(4, 3, |i, j| (i * 3 + j) as f64));
        let (e, c) = predict_emotion_cause(&mut tape, h, &hv).unwrap();
        assert_eq!(tape.value(e), &Tensor::filled(4, 1, 0.5));
        assert_eq!(tape.value(c), &Tensor::filled(4, 1, 0.5));
        let p = predict_pairs(&mut tape, h, &hv).unwrap();
        assert_eq!(tape.value(p), &Tensor::filled(4, 4, 0.5));
    }

    #[test]
    fn logit_two() {
        let mut tape = Tape::new();
        let mut hv = heads(&mut tape, 1, 1.0);
        hv.emotion_b = tape.param(Tensor::scalar(1.0));
        let h = tape.constant(Tensor::column(&[1.0]));
        let (e, _) = predict_emotion_cause(&mut tape, h, &hv).unwrap();
        assert!((tape.value(e).item() - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn pair_entry_matches_concatenated_dot_product() {
        let mut tape = Tape::new();
        let w = [0.3, -0.2, 0.7, 0.1, 0.5, -0.4];
        let hv = HeadVars {
            pair_w: tape.param(Tensor::column(&w)),
            pair_b: tape.param(Tensor::scalar(0.25)),
            ..heads(&mut tape, 3, 0.0)
        };
        let rows = [[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let h = tape.constant(Tensor::from_rows(&rows));
        let p = predict_pairs(&mut tape, h, &hv).unwrap();
        let concat: Vec<f64> = rows[0].iter().chain(&rows[1]).copied().collect();
        let logit: f64 = concat.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + 0.25;
        assert!((tape.value(p)[(0, 1)] - sigmoid(logit)).abs() < 1e-15);
        // Unequal halves break symmetry.
        assert!((tape.value(p)[(0, 1)] - tape.value(p)[(1, 0)]).abs() > 1e-3);
    }

    #[test]
    fn bce_examples() {
        let mut tape = Tape::new();
        let near_one = tape.constant(Tensor::column(&[1.0 - 1e-7]));
        let l = bce_loss(&mut tape, near_one, &[1.0], false).unwrap();
        assert!(scalar(&tape, l).abs() < 1e-6);

        let half = tape.constant(Tensor::column(&[0.5]));
        let l = bce_loss(&mut tape, half, &[1.0], false).unwrap();
        assert!((scalar(&tape, l) - std::f64::consts::LN_2).abs() < 1e-12);

        let halves = tape.constant(Tensor::column(&[0.5, 0.5]));
        let l = bce_loss(&mut tape, halves, &[0.0, 1.0], false).unwrap();
        assert!((scalar(&tape, l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        assert!(bce_loss(&mut tape, halves, &[1.0], false).is_err());
    }

    #[test]
    fn literal_bce_swaps_arguments() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column(&[0.9]));
        let std = bce_loss(&mut tape, p, &[1.0], false).unwrap();
        let lit = bce_loss(&mut tape, p, &[1.0], true).unwrap();
        assert!((scalar(&tape, std) + 0.9f64.ln()).abs() < 1e-12);
        assert!((scalar(&tape, lit) + 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sort_loss_examples() {
        let mut tape = Tape::new();
        let mut check = |p1: f64, p2: f64, expected: f64| {
            let a = tape.constant(Tensor::scalar(p1));
            let b = tape.constant(Tensor::scalar(p2));
            let l = sort_loss(&mut tape, &[a, b], SORT_MARGIN).unwrap();
            assert!((scalar(&tape, l) - expected).abs() < 1e-12, "{p1} {p2}");
        };
        check(0.3, 0.5, 0.05);
        check(0.6, 0.4, 0.25);
        check(0.7, 0.7, 0.05);

        let one = tape.constant(Tensor::scalar(0.9));
        let l = sort_loss(&mut tape, &[one], SORT_MARGIN).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
    }

    #[test]
    fn sort_loss_never_pushes_previous_layer() {
        let mut tape = Tape::new();
        let prev = tape.param(Tensor::scalar(0.6));
        let cur = tape.param(Tensor::scalar(0.4));
        let l = sort_loss(&mut tape, &[prev, cur], SORT_MARGIN).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(prev).is_none());
        assert_eq!(tape.grad(cur).unwrap().item(), -1.0);
    }

    #[test]
    fn total_loss_weights() {
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::scalar(0.0));
        let sort = tape.constant(Tensor::scalar(0.05));
        let t = total_loss(&mut tape, [zero, zero, zero, sort], &LossWeights::default()).unwrap();
        assert!((scalar(&tape, t) - 0.05).abs() < 1e-15);

        let no_sort = LossWeights {
            sort: 0.0,
            ..LossWeights::default()
        };
        let t = total_loss(&mut tape, [zero, zero, zero, sort], &no_sort).unwrap();
        assert_eq!(scalar(&tape, t), 0.0);

        let bad = LossWeights {
            e: -1.0,
            ..LossWeights::default()
        };
        assert!(matches!(
            total_loss(&mut tape, [zero, zero, zero, sort], &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let mut tape = Tape::new();
        let vals = [0.7, 1.3, 2.1, 0.15];
        let terms = vals.map(|v| tape.constant(Tensor::scalar(v)));
        let w = LossWeights {
            e: 0.5,
            c: 2.0,
            pair: 1.5,
            sort: 0.25,
        };
        let w2 = LossWeights {
            e: 1.0,
            c: 4.0,
            pair: 3.0,
            sort: 0.5,
        };
        let t = total_loss(&mut tape, terms, &w).unwrap();
        let t2 = total_loss(&mut tape, terms, &w2).unwrap();
        assert!((2.0 * scalar(&tape, t) - scalar(&tape, t2)).abs() < 1e-12);
        assert!((w.combine(vals) - scalar(&tape, t)).abs() < 1e-12);
    }
}
