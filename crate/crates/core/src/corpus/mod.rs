//! Source corpus: documents, questions, validated snapshots and their on-disk form.

mod ingest;
mod similarity;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::sha256_hex;

pub use ingest::{ingest_corpus, IngestFormat};
pub use similarity::{EmbeddingCosine, SimilarityScorer, TermOverlapCosine};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocOrigin {
    SourceCorpus,
    /// Copy of `source_doc_id` with every occurrence of `realistic` replaced by `counterfactual`.
    Substituted {
        source_doc_id: String,
        realistic: Vec<String>,
        counterfactual: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub origin: DocOrigin,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
            origin: DocOrigin::SourceCorpus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub title: String,
    pub question: String,
    pub realistic_answers: Vec<String>,
    pub evidence_doc_id: Option<String>,
    /// Human answerability annotations: doc_id -> can this document answer the question.
    #[serde(default)]
    pub annotations: BTreeMap<String, bool>,
}

impl QuestionRecord {
    /// Documents humans marked as unable to answer this question.
    pub fn annotated_unanswerable(&self) -> impl Iterator<Item = &str> {
        self.annotations.iter().filter(|(_, ok)| !**ok).map(|(id, _)| id.as_str())
    }

    pub fn is_annotated_answerable(&self, doc_id: &str) -> bool {
        self.annotations.get(doc_id).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCounts {
    pub documents: usize,
    pub questions: usize,
    pub answerable: usize,
    pub unanswerable: usize,
    pub rejects: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotManifest {
    snapshot_id: String,
    created_at: String,
    counts: SnapshotCounts,
}

/// An immutable, validated corpus. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct CorpusSnapshot {
    snapshot_id: String,
    created_at: String,
    documents: BTreeMap<String, Document>,
    questions: Vec<QuestionRecord>,
    rejects: Vec<RejectRecord>,
    question_index: HashMap<String, usize>,
}

impl CorpusSnapshot {
    /// Validates questions against the documents; failing questions are moved to the
    /// rejects list with a reason.
    pub fn build(documents: Vec<Document>, questions: Vec<QuestionRecord>, mut rejects: Vec<RejectRecord>) -> Result<Self> {
        let mut docs = BTreeMap::new();
        for doc in documents {
            if doc.text.trim().is_empty() {
                rejects.push(RejectRecord {
                    source: doc.doc_id.clone(),
                    reason: "document text is empty".into(),
                });
                continue;
            }
            if let Some(prev) = docs.get(&doc.doc_id) {
                if prev != &doc {
                    return Err(Error::Precondition(format!("duplicate doc_id `{}` with different content", doc.doc_id)));
                }
                continue;
            }
            docs.insert(doc.doc_id.clone(), doc);
        }

        let mut kept = Vec::with_capacity(questions.len());
        let mut question_index = HashMap::new();
        for q in questions {
            match validate_question(&q, &docs) {
                Ok(()) if !question_index.contains_key(&q.question_id) => {
                    question_index.insert(q.question_id.clone(), kept.len());
                    kept.push(q);
                }
                Ok(()) => rejects.push(RejectRecord {
                    source: q.question_id.clone(),
                    reason: "duplicate question_id".into(),
                }),
                Err(reason) => rejects.push(RejectRecord {
                    source: q.question_id.clone(),
                    reason,
                }),
            }
        }

        let snapshot_id = content_id(&docs, &kept)?;
        Ok(CorpusSnapshot {
            snapshot_id,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            documents: docs,
            questions: kept,
            rejects,
            question_index,
        })
    }

    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    /// Documents in ascending doc_id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    /// Questions in corpus order.
    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn question(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.question_index.get(question_id).map(|&i| &self.questions[i])
    }

    pub fn rejects(&self) -> &[RejectRecord] {
        &self.rejects
    }

    pub fn counts(&self) -> SnapshotCounts {
        let answerable = self.questions.iter().filter(|q| q.evidence_doc_id.is_some()).count();
        SnapshotCounts {
            documents: self.documents.len(),
            questions: self.questions.len(),
            answerable,
            unanswerable: self.questions.len() - answerable,
            rejects: self.rejects.len(),
        }
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        let docs: Vec<_> = self.documents.values().collect();
        jsonl::write_jsonl(&dir.join("documents.jsonl"), &docs)?;
        jsonl::write_jsonl(&dir.join("questions.jsonl"), &self.questions)?;
        jsonl::write_jsonl(&dir.join("rejects.jsonl"), &self.rejects)?;
        jsonl::write_json(
            &dir.join("manifest.json"),
            &SnapshotManifest {
                snapshot_id: self.snapshot_id.clone(),
                created_at: self.created_at.clone(),
                counts: self.counts(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SnapshotManifest = jsonl::read_json(&dir.join("manifest.json"))?;
        let documents = jsonl::read_jsonl(&dir.join("documents.jsonl"))?;
        let questions = jsonl::read_jsonl(&dir.join("questions.jsonl"))?;
        let rejects = jsonl::read_jsonl(&dir.join("rejects.jsonl"))?;
        let mut snapshot = Self::build(documents, questions, rejects)?;
        if snapshot.snapshot_id != manifest.snapshot_id {
            return Err(Error::Precondition(format!(
                "snapshot at {} has content id {} but manifest says {}",
                dir.display(),
                snapshot.snapshot_id,
                manifest.snapshot_id
            )));
        }
        snapshot.created_at = manifest.created_at;
        Ok(snapshot)
    }
}

fn validate_question(q: &QuestionRecord, docs: &BTreeMap<String, Document>) -> std::result::Result<(), String> {
    if q.question.trim().is_empty() {
        return Err("question text is empty".into());
    }
    if let Some(evidence) = &q.evidence_doc_id {
        let doc = docs.get(evidence).ok_or_else(|| format!("evidence document `{evidence}` does not exist"))?;
        if q.realistic_answers.is_empty() {
            return Err("evidence document given but no realistic answers".into());
        }
        if !q.realistic_answers.iter().any(|a| !a.is_empty() && doc.text.contains(a.as_str())) {
            return Err(format!("no realistic answer occurs verbatim in evidence document `{evidence}`"));
        }
    }
    Ok(())
}

fn content_id(docs: &BTreeMap<String, Document>, questions: &[QuestionRecord]) -> Result<String> {
    let mut buf = String::new();
    for d in docs.values() {
        buf.push_str(&serde_json::to_string(d)?);
        buf.push('\n');
    }
    buf.push('\u{1e}');
    for q in questions {
        buf.push_str(&serde_json::to_string(q)?);
        buf.push('\n');
    }
    Ok(sha256_hex(buf))
}
