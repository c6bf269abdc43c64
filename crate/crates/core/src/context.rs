//! K-document context construction.
//!
//! A conflicting context holds exactly one evidence document supporting the
//! conflicting answer plus distractors that cannot answer the question. An
//! irrelevant context holds only non-answering documents: hard ones (related,
//! annotated unanswerable) and easy ones (other topics).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSnapshot, DocOrigin, Document, QuestionRecord, SimilarityScorer};
use crate::error::{Error, Result};
use crate::forge::{ConflictAnswer, ConflictKind};
use crate::probe::ParameterAnswer;
use crate::text::{contains_answer, derive_seed, match_tokens, replace_occurrences_ci};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Conflicting,
    Irrelevant,
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextKind::Conflicting => "conflicting",
            ContextKind::Irrelevant => "irrelevant",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocRole {
    Evidence,
    SameTopic,
    DifferentTopic,
    Hard,
    /// Same-topic document standing in for a missing hard annotation.
    HardFallback,
    Easy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EasySelection {
    RandomSeeded,
    LeastSimilar,
}

impl FromStr for EasySelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_seeded" => Ok(EasySelection::RandomSeeded),
            "least_similar" => Ok(EasySelection::LeastSimilar),
            other => Err(Error::Config(format!("unknown easy selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAudit {
    /// Document ids in construction order, before shuffling.
    pub canonical_order: Vec<String>,
    /// Role of each document, aligned with `canonical_order`.
    pub roles: Vec<DocRole>,
}

/// Answers the evaluation harness judges against.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextGolds {
    pub conflict: Option<String>,
    pub conflict_kind: Option<ConflictKind>,
    pub alpha: Option<String>,
    pub alpha_prior_logprob: Option<f64>,
    pub realistic_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPackage {
    pub question_id: String,
    pub context_ref: String,
    pub kind: ContextKind,
    pub title: String,
    pub question: String,
    pub docs: Vec<Document>,
    pub evidence_position: Option<usize>,
    pub shuffle_seed: u64,
    pub audit: ContextAudit,
    pub golds: ContextGolds,
}

impl ContextPackage {
    pub fn serialized(&self) -> String {
        crate::prompts::serialize_context(&self.docs)
    }

    pub fn prompt(&self) -> String {
        crate::prompts::instruction_tuning(&self.serialized(), &self.question)
    }
}

pub fn context_ref(question_id: &str, kind: ContextKind) -> String {
    format!("{question_id}:{kind}")
}

/// Index permutation applied to the canonical order: `shuffled[i] = canonical[perm[i]]`.
pub fn shuffle_permutation(len: usize, shuffle_seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    perm
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextConfig {
    pub k: usize,
    pub easy_selection: EasySelection,
    pub hard_fallback: bool,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            k: 4,
            easy_selection: EasySelection::RandomSeeded,
            hard_fallback: false,
        }
    }
}

impl ContextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("context size K must be at least 2, got {}", self.k)));
        }
        Ok(())
    }

    /// (same-topic, different-topic) distractor counts for conflicting contexts.
    pub fn conflicting_split(&self) -> (usize, usize) {
        let same = 1.min(self.k - 1);
        (same, self.k - 1 - same)
    }

    /// (hard, easy) document counts for irrelevant contexts.
    pub fn irrelevant_split(&self) -> (usize, usize) {
        (self.k / 2, self.k - self.k / 2)
    }
}

/// Answers a distractor must not contain.
struct Forbidden {
    tokens: Vec<Vec<String>>,
}

impl Forbidden {
    fn new<'a>(answers: impl IntoIterator<Item = &'a str>) -> Self {
        Forbidden {
            tokens: answers.into_iter().map(match_tokens).filter(|t| !t.is_empty()).collect(),
        }
    }

    fn admits(&self, question: &QuestionRecord, doc: &Document) -> bool {
        if question.is_annotated_answerable(&doc.doc_id) {
            return false;
        }
        let hay = match_tokens(&doc.text);
        !self.tokens.iter().any(|t| crate::text::contains_tokens(&hay, t))
    }
}

pub struct ContextBuilder<'a> {
    snapshot: &'a CorpusSnapshot,
    scorer: &'a dyn SimilarityScorer,
    config: ContextConfig,
}

impl<'a> ContextBuilder<'a> {
    pub fn new(snapshot: &'a CorpusSnapshot, scorer: &'a dyn SimilarityScorer, config: ContextConfig) -> Result<Self> {
        config.validate()?;
        Ok(ContextBuilder { snapshot, scorer, config })
    }

    pub fn config(&self) -> &ContextConfig {
        &self.config
    }

    pub fn build_conflicting(
        &self,
        question: &QuestionRecord,
        conflict: &ConflictAnswer,
        alpha: Option<&ParameterAnswer>,
        seed: u64,
    ) -> Result<ContextPackage> {
        let evidence_id = question
            .evidence_doc_id
            .as_deref()
            .ok_or_else(|| Error::Precondition(format!("question `{}` has no evidence document", question.question_id)))?;
        let source = self
            .snapshot
            .document(evidence_id)
            .ok_or_else(|| Error::UnknownDocument(evidence_id.to_owned()))?;
        let evidence = match conflict.kind {
            ConflictKind::Realistic => {
                if !contains_answer(&source.text, &conflict.text) {
                    return Err(Error::Precondition(format!(
                        "realistic answer `{}` does not occur in evidence `{evidence_id}`",
                        conflict.text
                    )));
                }
                source.clone()
            }
            ConflictKind::Counterfactual => substitute(source, question, &conflict.text)?,
        };

        let alpha_text = alpha.filter(|a| !a.abstained).map(|a| a.alpha_text.as_str());
        let forbidden = Forbidden::new(
            question
                .realistic_answers
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(conflict.text.as_str()))
                .chain(alpha_text),
        );
        let (n_same, n_diff) = self.config.conflicting_split();
        let mut canonical = vec![evidence];
        let mut roles = vec![DocRole::Evidence];

        if n_same > 0 {
            let accept = |d: &Document| d.doc_id != evidence_id && forbidden.admits(question, d);
            for id in self.snapshot.rank_neighbors(source, true, n_same, &accept, self.scorer)? {
                canonical.push(self.doc(&id)?.clone());
                roles.push(DocRole::SameTopic);
            }
        }
        if n_diff > 0 {
            let taken: Vec<String> = canonical.iter().map(|d| d.doc_id.clone()).collect();
            let accept = |d: &Document| {
                d.doc_id != evidence_id && d.title != question.title && !taken.contains(&d.doc_id) && forbidden.admits(question, d)
            };
            for id in self.snapshot.rank_neighbors(source, false, n_diff, &accept, self.scorer)? {
                canonical.push(self.doc(&id)?.clone());
                roles.push(DocRole::DifferentTopic);
            }
        }

        let golds = ContextGolds {
            conflict: Some(conflict.text.clone()),
            conflict_kind: Some(conflict.kind),
            alpha: alpha_text.map(str::to_owned),
            alpha_prior_logprob: alpha.and_then(|a| a.prior_logprob),
            realistic_answers: question.realistic_answers.clone(),
        };
        Ok(self.assemble(question, ContextKind::Conflicting, canonical, roles, seed, golds))
    }

    pub fn build_irrelevant(&self, question: &QuestionRecord, alpha: &ParameterAnswer, seed: u64) -> Result<ContextPackage> {
        if alpha.abstained {
            return Err(Error::Precondition(format!(
                "question `{}` has an abstained parametric answer; irrelevant contexts need one",
                question.question_id
            )));
        }
        let forbidden = Forbidden::new(
            question
                .realistic_answers
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(alpha.alpha_text.as_str())),
        );
        let (n_hard, n_easy) = self.config.irrelevant_split();

        let mut hard: Vec<&Document> = question
            .annotated_unanswerable()
            .filter_map(|id| self.snapshot.document(id))
            .filter(|d| forbidden.admits(question, d))
            .collect();
        hard.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[&question.question_id, "hard"])));
        hard.truncate(n_hard);
        let mut canonical: Vec<Document> = hard.into_iter().cloned().collect();
        let mut roles = vec![DocRole::Hard; canonical.len()];

        let query = Document::new(format!("query:{}", question.question_id), &question.title, &question.question);
        if canonical.len() < n_hard {
            if !self.config.hard_fallback {
                return Err(Error::InsufficientCandidates {
                    needed: n_hard,
                    available: canonical.len(),
                });
            }
            let taken: Vec<String> = canonical.iter().map(|d| d.doc_id.clone()).collect();
            let accept = |d: &Document| d.title == question.title && !taken.contains(&d.doc_id) && forbidden.admits(question, d);
            for id in self.snapshot.rank_neighbors(&query, true, n_hard - taken.len(), &accept, self.scorer)? {
                canonical.push(self.doc(&id)?.clone());
                roles.push(DocRole::HardFallback);
            }
        }

        let taken: Vec<String> = canonical.iter().map(|d| d.doc_id.clone()).collect();
        let accept = |d: &Document| d.title != question.title && !taken.contains(&d.doc_id) && forbidden.admits(question, d);
        let easy = match self.config.easy_selection {
            EasySelection::LeastSimilar => self.snapshot.rank_neighbors(&query, false, n_easy, &accept, self.scorer)?,
            EasySelection::RandomSeeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[&question.question_id, "easy"]));
                let mut pool: Vec<&Document> = self.snapshot.documents().filter(|d| d.title != question.title).collect();
                let mut picked = Vec::with_capacity(n_easy);
                while picked.len() < n_easy && !pool.is_empty() {
                    let d = pool.swap_remove(rng.gen_range(0..pool.len()));
                    if accept(d) {
                        picked.push(d.doc_id.clone());
                    }
                }
                if picked.len() < n_easy {
                    return Err(Error::InsufficientCandidates {
                        needed: n_easy,
                        available: picked.len(),
                    });
                }
                picked
            }
        };
        for id in easy {
            canonical.push(self.doc(&id)?.clone());
            roles.push(DocRole::Easy);
        }

        let golds = ContextGolds {
            conflict: None,
            conflict_kind: None,
            alpha: Some(alpha.alpha_text.clone()),
            alpha_prior_logprob: alpha.prior_logprob,
            realistic_answers: question.realistic_answers.clone(),
        };
        Ok(self.assemble(question, ContextKind::Irrelevant, canonical, roles, seed, golds))
    }

    fn doc(&self, id: &str) -> Result<&Document> {
        self.snapshot.document(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }

    fn assemble(
        &self,
        question: &QuestionRecord,
        kind: ContextKind,
        canonical: Vec<Document>,
        roles: Vec<DocRole>,
        seed: u64,
        golds: ContextGolds,
    ) -> ContextPackage {
        let shuffle_seed = derive_seed(seed, &[&question.question_id, "shuffle"]);
        let perm = shuffle_permutation(canonical.len(), shuffle_seed);
        let docs: Vec<Document> = perm.iter().map(|&i| canonical[i].clone()).collect();
        let evidence_position = roles
            .iter()
            .position(|r| *r == DocRole::Evidence)
            .and_then(|canon_idx| perm.iter().position(|&i| i == canon_idx));
        ContextPackage {
            question_id: question.question_id.clone(),
            context_ref: context_ref(&question.question_id, kind),
            kind,
            title: question.title.clone(),
            question: question.question.clone(),
            docs,
            evidence_position,
            shuffle_seed,
            audit: ContextAudit {
                canonical_order: canonical.iter().map(|d| d.doc_id.clone()).collect(),
                roles,
            },
            golds,
        }
    }
}

/// Copy of `source` with every realistic answer variant replaced by `counterfactual`.
fn substitute(source: &Document, question: &QuestionRecord, counterfactual: &str) -> Result<Document> {
    let mut variants: Vec<&String> = question.realistic_answers.iter().filter(|a| !a.trim().is_empty()).collect();
    variants.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut text = source.text.clone();
    let mut replaced = 0;
    for v in &variants {
        let (next, n) = replace_occurrences_ci(&text, v, counterfactual);
        text = next;
        replaced += n;
    }
    if replaced == 0 {
        return Err(Error::SubstitutionImpossible(source.doc_id.clone()));
    }
    if let Some(residual) = variants.iter().find(|v| contains_answer(&text, v)) {
        return Err(Error::Precondition(format!(
            "realistic answer `{residual}` survives substitution in `{}`",
            source.doc_id
        )));
    }
    Ok(Document {
        doc_id: format!("{}~ctf~{}", source.doc_id, question.question_id),
        title: source.title.clone(),
        text,
        origin: DocOrigin::Substituted {
            source_doc_id: source.doc_id.clone(),
            realistic: variants.into_iter().cloned().collect(),
            counterfactual: counterfactual.to_owned(),
        },
    })
}
