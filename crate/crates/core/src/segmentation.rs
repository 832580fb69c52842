//! Documents, sentence-aware clause segmentation and the multi-mask matrix.
//!
//! Clause indices are 1-based in every external format; [`Document`] stores
//! them that way too, and converts at the boundary to the 0-based positions
//! the numeric code uses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentence-ending marks. Each is normalised to one sentence boundary.
pub const SENTENCE_MARKS: [char; 3] = ['.', '?', '!'];
/// Clause separators inside a sentence.
pub const CLAUSE_MARKS: [char; 2] = [',', ';'];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub text: String,
    pub sentence_id: usize,
}

impl Clause {
    pub fn new(text: impl Into<String>, sentence_id: usize) -> Self {
        Clause {
            text: text.into(),
            sentence_id,
        }
    }

    /// Lowercased whitespace tokens.
    pub fn tokens(&self) -> Vec<String> {
        self.text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect()
    }
}

/// A document with optional gold annotations, all indices 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    clauses: Vec<Clause>,
    emotions: BTreeSet<usize>,
    causes: BTreeSet<usize>,
    pairs: BTreeSet<(usize, usize)>,
}

/// One line of the corpus JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub clauses: Vec<Clause>,
    #[serde(default)]
    pub emotions: Vec<usize>,
    #[serde(default)]
    pub causes: Vec<usize>,
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
}

impl Document {
    /// Validating constructor.
    pub fn new(
        doc_id: impl Into<String>,
        clauses: Vec<Clause>,
        emotions: impl IntoIterator<Item = usize>,
        causes: impl IntoIterator<Item = usize>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            clauses,
            emotions: emotions.into_iter().collect(),
            causes: causes.into_iter().collect(),
            pairs: pairs.into_iter().collect(),
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Document without gold annotations.
    pub fn unlabeled(doc_id: impl Into<String>, clauses: Vec<Clause>) -> Result<Self> {
        Self::new(doc_id, clauses, [], [], [])
    }

    fn invalid(&self, rule: impl Into<String>) -> Error {
        Error::Validation {
            doc_id: self.doc_id.clone(),
            rule: rule.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clauses.is_empty() {
            return Err(self.invalid("document has no clauses"));
        }
        let mut expected = 1;
        for (k, c) in self.clauses.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(self.invalid(format!("clause {} is empty", k + 1)));
            }
            if c.sentence_id == expected + 1 && k > 0 {
                expected += 1;
            }
            if c.sentence_id != expected {
                return Err(self.invalid(format!(
                    "clause {} has sentence_id {}; ids must start at 1 and increase without gaps",
                    k + 1,
                    c.sentence_id
                )));
            }
        }
        let n = self.clauses.len();
        for (name, set) in [("emotion", &self.emotions), ("cause", &self.causes)] {
            if let Some(&bad) = set.iter().find(|&&i| i == 0 || i > n) {
                return Err(self.invalid(format!("{name} index {bad} outside 1..={n}")));
            }
        }
        for &(e, c) in &self.pairs {
            if !self.emotions.contains(&e) {
                return Err(self.invalid(format!(
                    "pair ({e}, {c}) references clause {e}, which is not an emotion clause"
                )));
            }
            if !self.causes.contains(&c) {
                return Err(self.invalid(format!(
                    "pair ({e}, {c}) references clause {c}, which is not a cause clause"
                )));
            }
        }
        Ok(())
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// |D|.
    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn sentence_ids(&self) -> Vec<usize> {
        self.clauses.iter().map(|c| c.sentence_id).collect()
    }

    pub fn num_sentences(&self) -> usize {
        self.clauses.last().map_or(0, |c| c.sentence_id)
    }

    pub fn emotions(&self) -> &BTreeSet<usize> {
        &self.emotions
    }

    pub fn causes(&self) -> &BTreeSet<usize> {
        &self.causes
    }

    pub fn pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.pairs
    }

    /// Binary emotion labels in clause order.
    pub fn emotion_labels(&self) -> Vec<f64> {
        (1..=self.len())
            .map(|i| f64::from(u8::from(self.emotions.contains(&i))))
            .collect()
    }

    pub fn cause_labels(&self) -> Vec<f64> {
        (1..=self.len())
            .map(|i| f64::from(u8::from(self.causes.contains(&i))))
            .collect()
    }

    /// Row-major |D| x |D| pair labels; entry (i, j) is 1 for gold pair (i+1, j+1).
    pub fn pair_labels(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for &(e, c) in &self.pairs {
            out[(e - 1) * n + (c - 1)] = 1.0;
        }
        out
    }

    /// Same clauses, annotations replaced.
    pub fn with_annotations(
        &self,
        emotions: impl IntoIterator<Item = usize>,
        causes: impl IntoIterator<Item = usize>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::new(
            self.doc_id.clone(),
            self.clauses.clone(),
            emotions,
            causes,
            pairs,
        )
    }

    pub fn with_doc_id(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = doc_id.into();
        self
    }

    pub fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            doc_id: self.doc_id.clone(),
            clauses: self.clauses.clone(),
            emotions: self.emotions.iter().copied().collect(),
            causes: self.causes.iter().copied().collect(),
            pairs: self.pairs.iter().copied().collect(),
        }
    }
}

impl TryFrom<DocumentRecord> for Document {
    type Error = Error;

    fn try_from(r: DocumentRecord) -> Result<Self> {
        Document::new(r.doc_id, r.clauses, r.emotions, r.causes, r.pairs)
    }
}

/// Split raw text into sentence-attributed clauses.
///
/// `.`, `?` and `!` close a sentence; `,` and `;` close a clause. Runs of
/// marks collapse, and clauses that are empty after trimming are dropped
/// without consuming a sentence id.
pub fn segment(doc_id: impl Into<String>, raw_text: &str) -> Result<Document> {
    let mut clauses = Vec::new();
    let mut sentence = 1;
    let mut sentence_has_clause = false;
    let mut current = String::new();

    let flush = |current: &mut String, clauses: &mut Vec<Clause>, sentence: usize| -> bool {
        let text = current.trim();
        let kept = !text.is_empty();
        if kept {
            clauses.push(Clause::new(text, sentence));
        }
        current.clear();
        kept
    };

    for ch in raw_text.chars() {
        if SENTENCE_MARKS.contains(&ch) {
            sentence_has_clause |= flush(&mut current, &mut clauses, sentence);
            if sentence_has_clause {
                sentence += 1;
                sentence_has_clause = false;
            }
        } else if CLAUSE_MARKS.contains(&ch) {
            sentence_has_clause |= flush(&mut current, &mut clauses, sentence);
        } else {
            current.push(ch);
        }
    }
    flush(&mut current, &mut clauses, sentence);

    if clauses.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Document::unlabeled(doc_id, clauses)
}

/// Clause-to-clause relationship matrix with entries in {0, 1, 2}.
///
/// 0 on the diagonal, 1 between distinct clauses of one sentence, 2 between
/// clauses of different sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiMask {
    size: usize,
    entries: Vec<u8>,
}

/// The three relationship classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    /// A clause with itself.
    SameClause = 0,
    /// Distinct clauses of one sentence.
    SameSentence = 1,
    /// Clauses of different sentences.
    CrossSentence = 2,
}

impl Relation {
    pub const ALL: [Relation; 3] = [
        Relation::SameClause,
        Relation::SameSentence,
        Relation::CrossSentence,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Relation {
    type Error = Error;

    fn try_from(m: u8) -> Result<Self> {
        match m {
            0 => Ok(Relation::SameClause),
            1 => Ok(Relation::SameSentence),
            2 => Ok(Relation::CrossSentence),
            _ => Err(Error::contract(format!(
                "mask value {m} outside {{0, 1, 2}}"
            ))),
        }
    }
}

impl MultiMask {
    pub fn from_sentence_ids(ids: &[usize]) -> Self {
        let n = ids.len();
        let mut entries = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = if i == j {
                    0
                } else if ids[i] == ids[j] {
                    1
                } else {
                    2
                };
            }
        }
        MultiMask { size: n, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.size + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.entries.chunks(self.size).map(<[u8]>::to_vec).collect()
    }

    /// Indicator of the positions holding relation `m`, row-major.
    pub fn partition(&self, m: Relation) -> Vec<bool> {
        self.entries.iter().map(|&v| v == m.value()).collect()
    }
}

/// Multi-mask of a document.
pub fn build_multimask(doc: &Document) -> MultiMask {
    MultiMask::from_sentence_ids(&doc.sentence_ids())
}

/// Boolean indicator matrix for mask value `m` (must be 0, 1 or 2).
pub fn mask_partition(mask: &MultiMask, m: u8) -> Result<Vec<Vec<bool>>> {
    let rel = Relation::try_from(m)?;
    Ok(mask
        .partition(rel)
        .chunks(mask.size())
        .map(<[bool]>::to_vec)
        .collect())
}
