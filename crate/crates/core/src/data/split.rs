use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};

/// Width of the id windows used for sampling-frequency counts.
const WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    /// Doc ids of each fold, in corpus order.
    pub folds: Vec<Vec<String>>,
}

/// Distribution of one fold's 1-based corpus positions.
///
/// Moments use population estimators: `std = sqrt(m2)`,
/// `skewness = m3 / m2^1.5`, `excess_kurtosis = m4 / m2^2 - 3`, where `mk` is
/// the k-th central moment. Both shape statistics are 0 when `m2 == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub fold: usize,
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Members in positions `1..=10`, `11..=20`, ... of the corpus.
    pub window_counts: Vec<usize>,
    pub window_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: FoldSplit,
    pub stats: Vec<FoldStats>,
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Statistics of 1-based `positions` drawn from a corpus of `corpus_len`.
pub fn position_stats(fold: usize, positions: &[usize], corpus_len: usize) -> FoldStats {
    let xs: Vec<f64> = positions.iter().map(|&p| p as f64).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let moment = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let (skewness, excess_kurtosis) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let mut window_counts = vec![0; corpus_len.div_ceil(WINDOW)];
    for &p in positions {
        window_counts[(p - 1) / WINDOW] += 1;
    }
    let counts: Vec<f64> = window_counts.iter().map(|&c| c as f64).collect();
    FoldStats {
        fold,
        size: positions.len(),
        mean,
        std: m2.sqrt(),
        skewness,
        excess_kurtosis,
        window_std: population_std(&counts),
        window_counts,
    }
}

/// Seeded uniform k-fold partition. Positions are shuffled and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<SplitReport> {
    let n = corpus.len();
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds corpus size {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut members = vec![Vec::new(); k];
    for (slot, pos) in order.into_iter().enumerate() {
        members[slot % k].push(pos);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    let folds = members
        .iter()
        .map(|m| {
            m.iter()
                .map(|&p| corpus.documents[p].doc_id().to_string())
                .collect()
        })
        .collect();
    let stats = members
        .iter()
        .enumerate()
        .map(|(f, m)| {
            let one_based: Vec<usize> = m.iter().map(|p| p + 1).collect();
            position_stats(f + 1, &one_based, n)
        })
        .collect();
    Ok(SplitReport {
        split: FoldSplit { k, seed, folds },
        stats,
    })
}
