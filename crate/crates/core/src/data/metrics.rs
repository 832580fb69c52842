use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Document;

/// Extracted sets for one document, 1-based like the corpus format.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    #[serde(default)]
    pub emotions: BTreeSet<usize>,
    #[serde(default)]
    pub causes: BTreeSet<usize>,
    #[serde(default)]
    pub pairs: BTreeSet<(usize, usize)>,
}

impl Prediction {
    pub fn new(
        doc_id: impl Into<String>,
        emotions: impl IntoIterator<Item = usize>,
        causes: impl IntoIterator<Item = usize>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            emotions: emotions.into_iter().collect(),
            causes: causes.into_iter().collect(),
            pairs: pairs.into_iter().collect(),
        }
    }

    /// The gold annotations of `doc`, as if predicted perfectly.
    pub fn gold(doc: &Document) -> Self {
        Self::new(
            doc.doc_id(),
            doc.emotions().iter().copied(),
            doc.causes().iter().copied(),
            doc.pairs().iter().copied(),
        )
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    parse_predictions(&std::fs::read_to_string(path)?)
}

/// Micro-averaged counts and scores of one binary task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl TaskScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TaskScores {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub documents: usize,
    pub emotion: TaskScores,
    pub cause: TaskScores,
    /// Positive pair class; `pair.f1` is pos-F1.
    pub pair: TaskScores,
    /// Negative pair class over the rest of each `|D| x |D|` grid.
    pub pair_negative: TaskScores,
    pub pos_f1: f64,
    pub neg_f1: f64,
    pub avg_f1: f64,
}

impl EvalResult {
    /// Flat metric names and values, for fold summaries.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("emotion_precision", self.emotion.precision),
            ("emotion_recall", self.emotion.recall),
            ("emotion_f1", self.emotion.f1),
            ("cause_precision", self.cause.precision),
            ("cause_recall", self.cause.recall),
            ("cause_f1", self.cause.f1),
            ("pair_precision", self.pair.precision),
            ("pair_recall", self.pair.recall),
            ("pair_f1", self.pair.f1),
            ("pos_f1", self.pos_f1),
            ("neg_f1", self.neg_f1),
            ("avg_f1", self.avg_f1),
        ]
    }
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add<T: Ord>(&mut self, pred: &BTreeSet<T>, gold: &BTreeSet<T>) {
        let hit = pred.intersection(gold).count();
        self.tp += hit;
        self.fp += pred.len() - hit;
        self.fn_ += gold.len() - hit;
    }

    fn scores(&self) -> TaskScores {
        TaskScores::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Score predictions against gold documents. Both sides must cover the same
/// doc ids; order does not matter.
pub fn evaluate(predictions: &[Prediction], gold: &[Document]) -> Result<EvalResult> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.doc_id.as_str(), p).is_some() {
            return Err(Error::contract(format!(
                "duplicate prediction for {}",
                p.doc_id
            )));
        }
    }
    if by_id.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold documents",
            by_id.len(),
            gold.len()
        )));
    }

    let (mut e, mut c, mut p) = (Counts::default(), Counts::default(), Counts::default());
    let mut neg_tp = 0;
    for doc in gold {
        let pred = by_id
            .get(doc.doc_id())
            .ok_or_else(|| Error::contract(format!("no prediction for {}", doc.doc_id())))?;
        let n = doc.len();
        let outside = |i: usize| i == 0 || i > n;
        if pred
            .emotions
            .iter()
            .chain(&pred.causes)
            .any(|&i| outside(i))
            || pred.pairs.iter().any(|&(i, j)| outside(i) || outside(j))
        {
            return Err(Error::contract(format!(
                "prediction for {} references a clause outside 1..={n}",
                doc.doc_id()
            )));
        }
        e.add(&pred.emotions, doc.emotions());
        c.add(&pred.causes, doc.causes());
        p.add(&pred.pairs, doc.pairs());
        neg_tp += n * n - pred.pairs.union(doc.pairs()).count();
    }

    let pair = p.scores();
    // A missed gold pair is a wrongly predicted negative, and vice versa.
    let pair_negative = TaskScores::from_counts(neg_tp, p.fn_, p.fp);
    Ok(EvalResult {
        documents: gold.len(),
        emotion: e.scores(),
        cause: c.scores(),
        pair,
        pair_negative,
        pos_f1: pair.f1,
        neg_f1: pair_negative.f1,
        avg_f1: (pair.f1 + pair_negative.f1) / 2.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); 0 for a single fold.
    pub std: f64,
}

/// Mean and spread of every metric across folds.
pub fn summarize_folds(results: &[EvalResult]) -> Result<BTreeMap<String, MeanStd>> {
    if results.is_empty() {
        return Err(Error::contract("no fold results to summarize"));
    }
    let n = results.len() as f64;
    let mut out = BTreeMap::new();
    for (k, (name, _)) in results[0].metrics().into_iter().enumerate() {
        let xs: Vec<f64> = results.iter().map(|r| r.metrics()[k].1).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let std = if results.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        out.insert(name.to_string(), MeanStd { mean, std });
    }
    Ok(out)
}
