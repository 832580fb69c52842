use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::segmentation::{Clause, Document};

const FILLER: &[&str] = &[
    "the", "a", "we", "they", "went", "saw", "town", "street", "morning", "evening", "table",
    "letter", "window", "river", "road", "train", "house", "garden", "old", "new", "small",
    "large", "then", "later", "there", "with", "from", "after", "before", "near",
];
const EMOTION: &[&str] = &["happy", "sad", "angry", "afraid", "proud"];
const CAUSE: &[&str] = &["award", "accident", "insult", "storm", "promotion"];

/// Shape of a synthetic corpus. Ranges are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clauses: (usize, usize),
    pub sentences: (usize, usize),
    pub pairs: (usize, usize),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clauses: (4, 8),
            sentences: (2, 3),
            pairs: (1, 2),
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("clauses", self.clauses),
            ("sentences", self.sentences),
            ("pairs", self.pairs),
        ] {
            if lo > hi {
                return Err(Error::config(format!("{name} range {lo}..={hi} is empty")));
            }
        }
        if self.clauses.0 == 0 || self.sentences.0 == 0 {
            return Err(Error::config(
                "documents need at least one clause and one sentence",
            ));
        }
        if self.sentences.0 > self.clauses.0 {
            return Err(Error::config(format!(
                "{} sentences cannot fit in {} clauses",
                self.sentences.0, self.clauses.0
            )));
        }
        // Each pair needs its own cause clause besides the shared emotion clause.
        if self.pairs.1 > 0 && self.pairs.1 + 1 > self.clauses.0 {
            return Err(Error::config(format!(
                "up to {} pairs need {} clauses, but documents may have only {}",
                self.pairs.1,
                self.pairs.1 + 1,
                self.clauses.0
            )));
        }
        Ok(())
    }
}

/// Seeded corpus with planted signal. Each document has one emotion clause
/// holding an emotion word and 1..n distinct cause clauses holding a cause
/// word; every (emotion, cause) combination is a gold pair. Other clauses are
/// filler only.
pub fn generate_synthetic(n_docs: usize, seed: u64, spec: SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    if n_docs == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (1..=n_docs)
        .map(|k| document(&mut rng, format!("syn-{k:04}"), &spec))
        .collect::<Result<_>>()?;
    Corpus::new(docs)
}

fn document(rng: &mut ChaCha8Rng, doc_id: String, spec: &SyntheticSpec) -> Result<Document> {
    let n = rng.gen_range(spec.clauses.0..=spec.clauses.1);
    let s = rng.gen_range(spec.sentences.0..=spec.sentences.1.min(n));
    let p = rng.gen_range(spec.pairs.0..=spec.pairs.1.min(n - 1));

    let mut cuts: Vec<usize> = (1..n).choose_multiple(rng, s - 1);
    cuts.sort_unstable();
    let sentence_of = |i: usize| 1 + cuts.iter().filter(|&&c| c <= i).count();

    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let (emotion, causes) = if p == 0 {
        (None, Vec::new())
    } else {
        (Some(order[0]), order[1..=p].to_vec())
    };

    let clauses = (1..=n)
        .map(|i| {
            let len = rng.gen_range(2..=4);
            let mut words: Vec<&str> = FILLER.choose_multiple(rng, len).copied().collect();
            if Some(i) == emotion {
                words.insert(
                    rng.gen_range(0..=words.len()),
                    EMOTION.choose(rng).expect("non-empty"),
                );
            }
            if causes.contains(&i) {
                words.insert(
                    rng.gen_range(0..=words.len()),
                    CAUSE.choose(rng).expect("non-empty"),
                );
            }
            Clause::new(words.join(" "), sentence_of(i - 1))
        })
        .collect();
    let pairs: Vec<(usize, usize)> = emotion
        .map(|e| causes.iter().map(|&c| (e, c)).collect())
        .unwrap_or_default();
    Document::new(doc_id, clauses, emotion, causes.iter().copied(), pairs)
}
