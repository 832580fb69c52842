//! Activation Sort: replace a prediction sequence by rank-derived integer
//! labels, then look those labels up in a learnable embedding table.
//!
//! The ranks are integers computed from detached prediction values, so no
//! gradient can flow from anything downstream back into the predictions.
//! Gradients do flow into the embedding table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which label sequence ranks are mapped onto.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// `[1, 2, ..., n]`.
    Linear,
    /// `2^(floor(log2 n) - floor(log2(n - i + 1)))` for `i = 1..=n`.
    #[default]
    Log2,
}

impl LabelScheme {
    pub fn values(self, n: usize) -> Result<Vec<u64>> {
        make_labels(n, self)
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScheme::Linear => "linear",
            LabelScheme::Log2 => "log2",
        })
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LabelScheme::Linear),
            "log2" => Ok(LabelScheme::Log2),
            other => Err(Error::config(format!(
                "label_scheme must be linear or log2, got {other:?}"
            ))),
        }
    }
}

/// Label sequence of length `n`. Non-decreasing and strictly positive.
pub fn make_labels(n: usize, scheme: LabelScheme) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::contract("label sequence needs n >= 1"));
    }
    Ok(match scheme {
        LabelScheme::Linear => (1..=n as u64).collect(),
        LabelScheme::Log2 => {
            // ilog2 is the exact integer floor(log2).
            let top = n.ilog2();
            (1..=n)
                .map(|i| 1u64 << (top - (n - i + 1).ilog2()))
                .collect()
        }
    })
}

/// Assign labels by ascending prediction: the clause with the k-th smallest
/// score receives `labels[k]`. Ties keep original clause order.
pub fn rank_map(yhat: &[f64], labels: &[u64]) -> Result<Vec<u64>> {
    if yhat.len() != labels.len() {
        return Err(Error::contract(format!(
            "rank_map: {} predictions but {} labels",
            yhat.len(),
            labels.len()
        )));
    }
    if let Some(k) = yhat.iter().position(|y| !y.is_finite()) {
        return Err(Error::contract(format!(
            "rank_map: prediction {k} is not finite"
        )));
    }
    let mut order: Vec<usize> = (0..yhat.len()).collect();
    // sort_by is stable, which gives the index tie-break.
    order.sort_by(|&a, &b| yhat[a].total_cmp(&yhat[b]));
    let mut out = vec![0; yhat.len()];
    for (k, &clause) in order.iter().enumerate() {
        out[clause] = labels[k];
    }
    Ok(out)
}

/// Rank sequences for one layer transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMap {
    pub emotion: Vec<u64>,
    pub cause: Vec<u64>,
    pub scheme: LabelScheme,
}

impl RankMap {
    pub fn compute(yhat_e: &[f64], yhat_c: &[f64], scheme: LabelScheme) -> Result<Self> {
        let labels = make_labels(yhat_e.len(), scheme)?;
        Ok(RankMap {
            emotion: rank_map(yhat_e, &labels)?,
            cause: rank_map(yhat_c, &labels)?,
            scheme,
        })
    }
}

/// Learnable vectors indexed by label value. Row `v - 1` holds value `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankEmbedding {
    pub table: Tensor,
}

impl RankEmbedding {
    pub fn new(table: Tensor) -> Self {
        RankEmbedding { table }
    }

    pub fn max_value(&self) -> u64 {
        self.table.rows() as u64
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    /// Lookup outside any tape.
    pub fn lookup(&self, ranks: &[u64]) -> Result<Tensor> {
        let rows = table_rows(ranks, self.max_value())?;
        Ok(Tensor::from_fn(ranks.len(), self.dim(), |i, j| {
            self.table[(rows[i], j)]
        }))
    }
}

fn table_rows(ranks: &[u64], max_value: u64) -> Result<Vec<usize>> {
    ranks
        .iter()
        .map(|&r| {
            if r == 0 || r > max_value {
                Err(Error::config(format!(
                    "rank embedding has no entry for label value {r} (table covers 1..={max_value})"
                )))
            } else {
                Ok(r as usize - 1)
            }
        })
        .collect()
}

/// Row `i` of the result is the table vector for `ranks[i]`. The table is a
/// tape value, so gradients reach it; the ranks are plain integers.
pub fn embed_ranks(tape: &mut Tape, table: Var, ranks: &[u64]) -> Result<Var> {
    let rows = table_rows(ranks, tape.shape(table).0 as u64)?;
    tape.gather_rows(table, rows.into_iter().map(|r| vec![r]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_labels_for_ten_clauses() {
        assert_eq!(
            make_labels(10, LabelScheme::Log2).unwrap(),
            [1, 1, 1, 2, 2, 2, 2, 4, 4, 8]
        );
    }

    #[test]
    fn small_label_sequences() {
        assert_eq!(make_labels(1, LabelScheme::Log2).unwrap(), [1]);
        assert_eq!(make_labels(1, LabelScheme::Linear).unwrap(), [1]);
        assert_eq!(make_labels(4, LabelScheme::Log2).unwrap(), [1, 2, 2, 4]);
        assert_eq!(make_labels(3, LabelScheme::Linear).unwrap(), [1, 2, 3]);
        assert!(make_labels(0, LabelScheme::Linear).is_err());
    }

    #[test]
    fn log2_matches_float_formula_for_small_n() {
        // Cross-check the bit-length floor against f64 log2 where it is exact.
        for n in 1..=200usize {
            let labels = make_labels(n, LabelScheme::Log2).unwrap();
            for (k, &v) in labels.iter().enumerate() {
                let i = k + 1;
                let e = (n as f64).log2().floor() - ((n - i + 1) as f64).log2().floor();
                assert_eq!(v, 2f64.powf(e) as u64, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn rank_map_examples() {
        let lin = make_labels(3, LabelScheme::Linear).unwrap();
        assert_eq!(rank_map(&[0.1, 0.9, 0.5], &lin).unwrap(), [1, 3, 2]);
        let lin2 = make_labels(2, LabelScheme::Linear).unwrap();
        assert_eq!(rank_map(&[0.5, 0.5], &lin2).unwrap(), [1, 2]);
        let log = make_labels(5, LabelScheme::Log2).unwrap();
        assert_eq!(rank_map(&[0.1, 0.2, 0.3, 0.4, 0.5], &log).unwrap(), log);
    }

    #[test]
    fn rank_map_errors() {
        assert!(rank_map(&[0.1, 0.2], &[1]).is_err());
        assert!(rank_map(&[f64::NAN], &[1]).is_err());
    }

    #[test]
    fn lookup_and_missing_entry() {
        let emb = RankEmbedding::new(Tensor::from_rows(&[[0.5, 0.5], [1.0, 2.0]]));
        assert_eq!(
            emb.lookup(&[1, 1]).unwrap(),
            Tensor::from_rows(&[[0.5, 0.5], [0.5, 0.5]])
        );
        assert_eq!(
            emb.lookup(&[2, 1]).unwrap(),
            Tensor::from_rows(&[[1.0, 2.0], [0.5, 0.5]])
        );
        let err = emb.lookup(&[4]).unwrap_err().to_string();
        assert!(err.contains("label value 4"), "{err}");
    }

    #[test]
    fn embedding_gradient_counts_occurrences() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::from_rows(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]));
        let out = embed_ranks(&mut tape, table, &[1, 1, 2]).unwrap();
        let s = tape.sum(out);
        tape.backward(s).unwrap();
        let g = tape.grad(table).unwrap();
        assert_eq!(g.row(0), [2.0, 2.0, 2.0]);
        assert_eq!(g.row(1), [1.0, 1.0, 1.0]);
    }
}
