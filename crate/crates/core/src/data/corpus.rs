use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{Document, DocumentRecord};

/// Token spelling reserved for out-of-vocabulary tokens; always id 0.
pub const UNK: &str = "<unk>";

/// Token to id map. Ids follow first appearance, after [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(Vec::new())
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens: vec![UNK.to_string()],
            ids: HashMap::from([(UNK.to_string(), 0)]),
        };
        for t in tokens {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut v = Vocabulary::default();
        for doc in docs {
            for clause in doc.clauses() {
                for t in clause.tokens() {
                    v.insert(&t);
                }
            }
        }
        v
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or 0 for unknown tokens.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Number of entries including [`UNK`].
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Validated documents plus the vocabulary over their tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    /// Checks that doc ids are unique and builds the vocabulary.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id()) {
                return Err(Error::Validation {
                    doc_id: d.doc_id().to_string(),
                    rule: "duplicate doc_id".into(),
                });
            }
        }
        let vocabulary = Vocabulary::build(&documents);
        Ok(Corpus {
            documents,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id() == doc_id)
    }

    /// Documents whose ids appear in `ids`, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Document>> {
        let index: HashMap<&str, &Document> =
            self.documents.iter().map(|d| (d.doc_id(), d)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|d| (*d).clone())
                    .ok_or_else(|| Error::contract(format!("doc_id {id} is not in the corpus")))
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(&d.to_record()).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Parse JSONL text. Blank lines are skipped; errors carry 1-based line numbers.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        docs.push(Document::try_from(record)?);
    }
    Corpus::new(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"doc_id":"a","clauses":[{"text":"I was happy","sentence_id":1},{"text":"I won","sentence_id":1}],"emotions":[1],"causes":[2],"pairs":[[1,2]]}"#;

    #[test]
    fn empty_file() {
        assert!(matches!(parse_corpus(""), Err(Error::EmptyCorpus)));
        assert!(matches!(parse_corpus("\n  \n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn one_line() {
        let c = parse_corpus(LINE).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.documents[0].pairs().iter().next(), Some(&(1, 2)));
        assert_eq!(c.vocabulary.id("happy"), 3);
        assert_eq!(c.vocabulary.id("never-seen"), 0);
    }

    #[test]
    fn parse_error_has_line_number() {
        let text = format!("{LINE}\n{{not json\n");
        match parse_corpus(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pair_on_non_emotion_clause() {
        let bad = LINE.replace(r#""pairs":[[1,2]]"#, r#""pairs":[[2,2]]"#);
        let err = parse_corpus(&bad).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
        assert!(err.to_string().contains("(2, 2)"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{LINE}\n{LINE}\n");
        assert!(matches!(parse_corpus(&text), Err(Error::Validation { .. })));
    }

    #[test]
    fn vocabulary_serde() {
        let v = Vocabulary::build(&parse_corpus(LINE).unwrap().documents);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<unk>","i","was","happy","won"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
