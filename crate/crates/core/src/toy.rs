//! A deterministic synthetic corpus with a matching scripted mock model, for demos
//! and end-to-end tests that must run offline.
//!
//! Question `i` belongs to topic `i / 5`; `i % 5` fixes the scripted model's
//! behaviour: 0 abstains, 1 already knows the realistic answer (so a counterfactual
//! is forged, sometimes after one rejected candidate), and the rest hold a wrong
//! belief. Every evidence document also names a rival, which the model offers as
//! its overinclusion answer.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::gateway::{MockRule, MockScoreRule, MockScript};
use crate::jsonl;
use crate::prompts;

const PLACES: [&str; 10] = [
    "Varnholt", "Quillmere", "Ostrava", "Dunmarsh", "Pellworth", "Caldris", "Yorvane", "Braskel", "Tamsford", "Elmridge",
];
const STRUCTURES: [&str; 5] = ["bridge", "library", "harbor", "observatory", "cathedral"];
const FIRST: [&str; 10] = ["Ada", "Bram", "Cleo", "Dorian", "Edda", "Felix", "Greta", "Hugo", "Ines", "Jonas"];
const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "ra", "ve", "to", "su", "ne", "di", "pa"];

/// A two-token person name, unique per index below 1000.
pub fn toy_name(n: usize) -> String {
    let surname: String = [n % 10, (n / 10) % 10, (n / 100) % 10].iter().map(|&i| SYLLABLES[i]).collect();
    let mut chars = surname.chars();
    let cap = chars.next().map(|c| c.to_ascii_uppercase()).into_iter().chain(chars).collect::<String>();
    format!("{} {cap}", FIRST[(n / 7) % 10])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuestion {
    pub question_id: String,
    pub title: String,
    pub question: String,
    pub answer: String,
    pub rival: String,
    /// What the scripted model believes; `None` when it abstains.
    pub alpha: Option<String>,
    /// Scripted counterfactual, present when the model already knows the answer.
    pub counterfactual: Option<String>,
}

#[derive(Serialize)]
struct Record<'a> {
    question_id: &'a str,
    title: &'a str,
    question: &'a str,
    answers: Vec<&'a str>,
    evidence_doc_id: String,
    documents: Vec<Doc>,
}

#[derive(Serialize)]
struct Doc {
    doc_id: String,
    title: String,
    text: String,
    answerable: bool,
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub questions: Vec<ToyQuestion>,
}

impl ToyCorpus {
    pub fn new(n_questions: usize) -> Self {
        let questions = (0..n_questions)
            .map(|i| {
                let place = PLACES[(i / 5) % PLACES.len()];
                let structure = STRUCTURES[i % 5];
                let answer = toy_name(3 * i);
                let (alpha, counterfactual) = match i % 5 {
                    0 => (None, None),
                    1 => (Some(answer.clone()), Some(toy_name(3 * i + 2))),
                    _ => (Some(toy_name(600 + i)), None),
                };
                ToyQuestion {
                    question_id: format!("toy-{i:03}"),
                    title: format!("{place} history"),
                    question: format!("Who designed the {place} {structure} (record {i})?"),
                    answer,
                    rival: toy_name(3 * i + 1),
                    alpha,
                    counterfactual,
                }
            })
            .collect();
        ToyCorpus { questions }
    }

    fn record(&self, i: usize) -> Record<'_> {
        let q = &self.questions[i];
        let place = PLACES[(i / 5) % PLACES.len()];
        let structure = STRUCTURES[i % 5];
        let id = |s: &str| format!("{}-{s}", q.question_id);
        let doc = |s: &str, text: String, answerable: bool| Doc {
            doc_id: id(s),
            title: q.title.clone(),
            text,
            answerable,
        };
        Record {
            question_id: &q.question_id,
            title: &q.title,
            question: &q.question,
            answers: vec![&q.answer],
            evidence_doc_id: id("ev"),
            documents: vec![
                doc(
                    "ev",
                    format!(
                        "Record {i}: the {place} {structure} was designed by {} in {}. A competing proposal came from {}.",
                        q.answer,
                        1800 + i,
                        q.rival
                    ),
                    true,
                ),
                doc(
                    "h1",
                    format!("Record {i}: the {place} {structure} hosted an exhibition curated by {} in {}.", q.rival, 1900 + i),
                    false,
                ),
                doc(
                    "h2",
                    format!("Record {i}: visitors to the {place} {structure} often attend lectures given by {}.", q.rival),
                    false,
                ),
            ],
        }
    }

    /// The corpus as `generic_qa` lines.
    pub fn to_generic_qa(&self) -> Result<String> {
        let records: Vec<Record<'_>> = (0..self.questions.len()).map(|i| self.record(i)).collect();
        jsonl::to_lines(&records)
    }

    /// Script for the model the dataset is built from.
    pub fn script(&self) -> MockScript {
        let mut script = MockScript {
            uniform_vocab: Some(32_000),
            ..MockScript::default()
        };
        for (i, q) in self.questions.iter().enumerate() {
            if let Some(cf) = &q.counterfactual {
                // Every other forged question first proposes the realistic answer, which is rejected.
                let responses = if i % 10 == 1 { vec![q.answer.clone(), format!("{cf}.")] } else { vec![format!("{cf}.")] };
                script.rules.push(MockRule {
                    contains: format!("Question: {} Answer: {} Fake answer:", q.question, q.answer),
                    responses,
                    ..MockRule::default()
                });
            }
            script.rules.push(MockRule {
                contains: format!("Question: {}\n\nPotential answer:", q.question),
                responses: vec![q.rival.clone()],
                ..MockRule::default()
            });
            script.rules.push(MockRule {
                contains: prompts::parameter_answer(&q.title, &q.question),
                responses: vec![q.alpha.clone().unwrap_or_else(|| "I don't know.".into())],
                ..MockRule::default()
            });
            if let Some(alpha) = &q.alpha {
                let lp = -0.2 - 0.3 * (i % 7) as f64;
                script.scores.push(MockScoreRule {
                    response_contains: alpha.clone(),
                    token_logprobs: vec![lp; 2],
                });
            }
        }
        script
    }

    /// A model that answers every context-free question with `pick(question)`, as a
    /// stand-in for a fine-tuned model in leakage checks.
    pub fn probe_script(&self, pick: impl Fn(&ToyQuestion) -> Option<String>) -> MockScript {
        let mut script = MockScript::default();
        for q in &self.questions {
            if let Some(text) = pick(q) {
                script = script.rule(&prompts::parameter_answer(&q.title, &q.question), &[&text]);
            }
        }
        script
    }

    /// Writes `corpus.jsonl` and `mock_script.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let corpus = dir.join("corpus.jsonl");
        let script = dir.join("mock_script.json");
        jsonl::write_atomic(&corpus, self.to_generic_qa()?.as_bytes())?;
        jsonl::write_json(&script, &self.script())?;
        Ok((corpus, script))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::answers_agree;

    #[test]
    fn names_are_unique_and_disjoint() {
        let names: Vec<String> = (0..700).map(toy_name).collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                assert!(!answers_agree(a, b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn corpus_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = ToyCorpus::new(50).write(dir.path()).unwrap();
        let snap = crate::corpus::ingest_corpus(&path, crate::corpus::IngestFormat::GenericQa).unwrap();
        let c = snap.counts();
        assert_eq!((c.questions, c.documents, c.rejects), (50, 150, 0));
    }
}
