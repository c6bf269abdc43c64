use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{CorpusSnapshot, Document, QuestionRecord, RejectRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestFormat {
    /// Official SQuAD 2.0 JSON: `data -> paragraphs -> qas`, with `is_impossible`.
    SquadV2,
    /// One JSON record per line: question_id, title, question, answers[], evidence_doc_id, documents[].
    GenericQa,
}

impl FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squad_v2" => Ok(IngestFormat::SquadV2),
            "generic_qa" => Ok(IngestFormat::GenericQa),
            other => Err(Error::Config(format!("unknown corpus format `{other}` (expected squad_v2 or generic_qa)"))),
        }
    }
}

impl fmt::Display for IngestFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IngestFormat::SquadV2 => "squad_v2",
            IngestFormat::GenericQa => "generic_qa",
        })
    }
}

pub fn ingest_corpus(path: &Path, format: IngestFormat) -> Result<CorpusSnapshot> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(raw).map_err(|e| Error::Ingest {
        path: path.to_owned(),
        offset: e.utf8_error().valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let parsed = match format {
        IngestFormat::SquadV2 => parse_squad(path, &text)?,
        IngestFormat::GenericQa => parse_generic(path, &text)?,
    };
    if parsed.records_seen == 0 {
        return Err(Error::EmptyCorpus(path.to_owned()));
    }
    CorpusSnapshot::build(parsed.documents, parsed.questions, parsed.rejects)
}

struct Parsed {
    documents: Vec<Document>,
    questions: Vec<QuestionRecord>,
    rejects: Vec<RejectRecord>,
    records_seen: usize,
}

#[derive(Deserialize)]
struct SquadFile {
    #[allow(dead_code)]
    #[serde(default)]
    version: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_squad(path: &Path, text: &str) -> Result<Parsed> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::Ingest {
        path: path.to_owned(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut parsed = Parsed {
        documents: Vec::new(),
        questions: Vec::new(),
        rejects: Vec::new(),
        records_seen: 0,
    };
    for article in file.data {
        for (p_idx, para) in article.paragraphs.into_iter().enumerate() {
            let doc_id = format!("{}#{p_idx}", article.title);
            parsed.documents.push(Document::new(&doc_id, &article.title, &para.context));
            for qa in para.qas {
                parsed.records_seen += 1;
                let answers = dedup(qa.answers.into_iter().map(|a| a.text));
                if !qa.is_impossible && answers.is_empty() {
                    parsed.rejects.push(RejectRecord {
                        source: qa.id,
                        reason: "answerable question without answers".into(),
                    });
                    continue;
                }
                let mut annotations = BTreeMap::new();
                annotations.insert(doc_id.clone(), !qa.is_impossible);
                parsed.questions.push(QuestionRecord {
                    question_id: qa.id,
                    title: article.title.clone(),
                    question: qa.question,
                    realistic_answers: answers,
                    evidence_doc_id: (!qa.is_impossible).then(|| doc_id.clone()),
                    annotations,
                });
            }
        }
    }
    Ok(parsed)
}

#[derive(Deserialize)]
struct GenericRecord {
    question_id: String,
    title: String,
    question: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    evidence_doc_id: Option<String>,
    #[serde(default)]
    documents: Vec<GenericDocument>,
}

#[derive(Deserialize)]
struct GenericDocument {
    doc_id: String,
    title: String,
    text: String,
    #[serde(default)]
    answerable: Option<bool>,
}

fn parse_generic(path: &Path, text: &str) -> Result<Parsed> {
    let mut parsed = Parsed {
        documents: Vec::new(),
        questions: Vec::new(),
        rejects: Vec::new(),
        records_seen: 0,
    };
    let mut seen_docs: HashMap<String, (String, String)> = HashMap::new();
    let mut offset = 0;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let line_start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let record: GenericRecord = serde_json::from_str(line).map_err(|e| Error::Ingest {
            path: path.to_owned(),
            offset: line_start + e.column().saturating_sub(1),
            message: format!("line {}: {e}", line_no + 1),
        })?;
        parsed.records_seen += 1;

        let conflict = record.documents.iter().find_map(|d| {
            if d.text.trim().is_empty() {
                return Some(format!("document `{}` has empty text", d.doc_id));
            }
            match seen_docs.get(&d.doc_id) {
                Some((title, body)) if title != &d.title || body != &d.text => {
                    Some(format!("document `{}` conflicts with an earlier definition", d.doc_id))
                }
                _ => None,
            }
        });
        if let Some(reason) = conflict {
            parsed.rejects.push(RejectRecord {
                source: record.question_id,
                reason,
            });
            continue;
        }

        let mut annotations = BTreeMap::new();
        for d in &record.documents {
            if let Some(ok) = d.answerable {
                annotations.insert(d.doc_id.clone(), ok);
            }
            if seen_docs.insert(d.doc_id.clone(), (d.title.clone(), d.text.clone())).is_none() {
                parsed.documents.push(Document::new(&d.doc_id, &d.title, &d.text));
            }
        }
        if let Some(evidence) = &record.evidence_doc_id {
            annotations.entry(evidence.clone()).or_insert(true);
        }
        parsed.questions.push(QuestionRecord {
            question_id: record.question_id,
            title: record.title,
            question: record.question,
            realistic_answers: dedup(record.answers.into_iter()),
            evidence_doc_id: record.evidence_doc_id,
            annotations,
        });
    }
    Ok(parsed)
}

fn dedup(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !item.is_empty() && !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const SQUAD: &str = r#"{"version": "v2.0", "data": [{"title": "Normans", "paragraphs": [
        {"context": "The Normans were the people who gave their name to Normandy, a region in France.",
         "qas": [
            {"id": "a1", "question": "In what country is Normandy located?", "answers": [{"text": "France", "answer_start": 75}], "is_impossible": false},
            {"id": "u1", "question": "Who gave their name to Normandy in the 1000s?", "answers": [], "plausible_answers": [{"text": "Normans", "answer_start": 4}], "is_impossible": true}
         ]}]}]}"#;

    #[test]
    fn squad_schema_ingests() {
        let f = write_tmp(SQUAD);
        let snap = ingest_corpus(f.path(), IngestFormat::SquadV2).unwrap();
        let counts = snap.counts();
        assert_eq!((counts.documents, counts.questions, counts.answerable, counts.unanswerable), (1, 2, 1, 1));
        let u = snap.question("u1").unwrap();
        assert_eq!(u.evidence_doc_id, None);
        assert_eq!(u.annotated_unanswerable().collect::<Vec<_>>(), vec!["Normans#0"]);
    }

    #[test]
    fn parse_error_names_byte_offset() {
        let f = write_tmp("{\"question_id\": \"q1\", \"title\": \"T\", \"question\": \"Q\"}\n{\"question_id\": oops}\n");
        match ingest_corpus(f.path(), IngestFormat::GenericQa) {
            Err(Error::Ingest { offset, .. }) => assert!(offset >= 57 && offset < 80, "offset {offset}"),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn no_records_is_empty_corpus() {
        let f = write_tmp("\n\n");
        assert!(matches!(ingest_corpus(f.path(), IngestFormat::GenericQa), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn generic_record_with_missing_answer_is_quarantined() {
        let line = r#"{"question_id":"q1","title":"T","question":"Who?","answers":["Alice"],"evidence_doc_id":"d1","documents":[{"doc_id":"d1","title":"T","text":"Bob was here."}]}"#;
        let f = write_tmp(line);
        let snap = ingest_corpus(f.path(), IngestFormat::GenericQa).unwrap();
        assert_eq!(snap.questions().len(), 0);
        assert_eq!(snap.rejects().len(), 1);
    }

    #[test]
    fn ingest_is_deterministic() {
        let f = write_tmp(SQUAD);
        let a = ingest_corpus(f.path(), IngestFormat::SquadV2).unwrap();
        let b = ingest_corpus(f.path(), IngestFormat::SquadV2).unwrap();
        assert_eq!(a.snapshot_id(), b.snapshot_id());
    }
}
