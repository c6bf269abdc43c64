//! Conflicting-answer selection: the realistic answer when it already disagrees with
//! the model's parametric answer, otherwise a generated counterfactual.

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};
use crate::probe::ParameterAnswer;
use crate::prompts;
use crate::text::{answers_agree, clean_generated_answer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Realistic,
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub temperature: f64,
    pub raw: String,
    pub candidate: String,
    /// Why the candidate was discarded; `None` for the accepted one.
    pub rejection: Option<String>,
}

/// Prompt and every raw response behind a generated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationAudit {
    pub prompt: String,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictAnswer {
    pub question_id: String,
    pub text: String,
    pub kind: ConflictKind,
    /// The parametric answer this conflicts with; empty when the model abstained.
    pub alpha_ref: String,
    pub audit: Option<GenerationAudit>,
}

/// Candidate budget and temperature schedule for generated answers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub candidates: usize,
    pub max_temperature: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            candidates: 5,
            max_temperature: 0.7,
        }
    }
}

impl RetryPolicy {
    /// Evenly spaced from 0 to `max_temperature`, one per candidate.
    pub fn temperatures(&self) -> Vec<f64> {
        match self.candidates {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n).map(|i| self.max_temperature * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

/// Raised when every candidate in the budget was rejected.
#[derive(Debug, thiserror::Error)]
#[error("{what} for `{question_id}`: all {} candidates rejected", audit.attempts.len())]
pub struct RetriesExhausted {
    pub question_id: String,
    pub what: &'static str,
    pub audit: GenerationAudit,
}

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error(transparent)]
    Exhausted(#[from] RetriesExhausted),
    #[error(transparent)]
    Other(#[from] Error),
}

pub fn forge(
    question: &QuestionRecord,
    alpha: &ParameterAnswer,
    gateway: &Gateway,
    policy: &RetryPolicy,
) -> std::result::Result<ConflictAnswer, ForgeError> {
    let first_real = question.realistic_answers.first().ok_or_else(|| {
        Error::Precondition(format!("question `{}` has no realistic answer", question.question_id))
    })?;
    let realistic = |text: &str| ConflictAnswer {
        question_id: question.question_id.clone(),
        text: text.to_owned(),
        kind: ConflictKind::Realistic,
        alpha_ref: alpha.alpha_text.clone(),
        audit: None,
    };
    if alpha.abstained {
        return Ok(realistic(first_real));
    }
    if let Some(real) = question.realistic_answers.iter().find(|a| !answers_agree(a, &alpha.alpha_text)) {
        return Ok(realistic(real));
    }

    let prompt = prompts::counterfactual(&question.question, first_real);
    let mut attempts = Vec::new();
    for temperature in policy.temperatures() {
        let (raw, candidate) = generate_counterfactual(question, first_real, gateway, temperature)?;
        let rejection = counterfactual_rejection(&candidate, alpha, &question.realistic_answers);
        let accepted = rejection.is_none();
        attempts.push(Attempt {
            temperature,
            raw,
            candidate: candidate.clone(),
            rejection,
        });
        if accepted {
            return Ok(ConflictAnswer {
                question_id: question.question_id.clone(),
                text: candidate,
                kind: ConflictKind::Counterfactual,
                alpha_ref: alpha.alpha_text.clone(),
                audit: Some(GenerationAudit { prompt, attempts }),
            });
        }
    }
    Err(RetriesExhausted {
        question_id: question.question_id.clone(),
        what: "counterfactual generation",
        audit: GenerationAudit { prompt, attempts },
    }
    .into())
}

/// One counterfactual candidate, returned as (raw response, cleaned answer).
pub fn generate_counterfactual(
    question: &QuestionRecord,
    realistic_answer: &str,
    gateway: &Gateway,
    temperature: f64,
) -> Result<(String, String)> {
    if realistic_answer.trim().is_empty() {
        return Err(Error::Precondition("realistic answer is empty".into()));
    }
    let prompt = prompts::counterfactual(&question.question, realistic_answer);
    let request = GenerationRequest::new(prompt, format!("counterfactual:{}", question.question_id)).with_temperature(temperature);
    let response = gateway.generate(&request)?;
    let candidate = clean_generated_answer(&response.text, &["fake answer", "answer"]);
    Ok((response.text, candidate))
}

/// Why a counterfactual candidate cannot be used, if it cannot.
pub fn counterfactual_rejection(candidate: &str, alpha: &ParameterAnswer, realistic: &[String]) -> Option<String> {
    if crate::text::normalize_answer(candidate).is_empty() {
        return Some("empty candidate".into());
    }
    if crate::probe::ProbeConfig::default().is_refusal(candidate) {
        return Some("candidate is a refusal".into());
    }
    if !alpha.abstained && answers_agree(candidate, &alpha.alpha_text) {
        return Some("agrees with the parametric answer".into());
    }
    realistic
        .iter()
        .find(|r| answers_agree(candidate, r))
        .map(|r| format!("agrees with realistic answer `{r}`"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, MockScript};
    use std::collections::BTreeMap;

    fn question(text: &str, answers: &[&str]) -> QuestionRecord {
        QuestionRecord {
            question_id: "q1".into(),
            title: "T".into(),
            question: text.into(),
            realistic_answers: answers.iter().map(|s| s.to_string()).collect(),
            evidence_doc_id: None,
            annotations: BTreeMap::new(),
        }
    }

    fn alpha(text: &str) -> ParameterAnswer {
        ParameterAnswer {
            question_id: "q1".into(),
            alpha_text: text.into(),
            abstained: text.is_empty(),
            raw_response: text.into(),
            prior_logprob: None,
        }
    }

    fn gw(script: MockScript) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(script)), GatewayConfig::default()).unwrap()
    }

    #[test]
    fn refusal_is_not_a_counterfactual() {
        let why = counterfactual_rejection("I don't know.", &alpha("Paris"), &["Paris".into()]);
        assert_eq!(why.as_deref(), Some("candidate is a refusal"));
    }

    #[test]
    fn realistic_when_already_conflicting() {
        let c = forge(&question("Who?", &["Kamala Harris"]), &alpha("Joe Biden"), &gw(MockScript::default()), &RetryPolicy::default()).unwrap();
        assert_eq!(c.kind, ConflictKind::Realistic);
        assert_eq!(c.text, "Kamala Harris");
    }

    #[test]
    fn abstention_takes_realistic() {
        let c = forge(&question("Who?", &["Kamala Harris"]), &alpha(""), &gw(MockScript::default()), &RetryPolicy::default()).unwrap();
        assert_eq!(c.kind, ConflictKind::Realistic);
        assert_eq!(c.text, "Kamala Harris");
        assert_eq!(c.alpha_ref, "");
    }

    #[test]
    fn agreement_triggers_counterfactual() {
        let g = gw(MockScript::default().rule("Fake answer:", &["Lyon."]));
        let c = forge(&question("What is the capital of France?", &["Paris"]), &alpha("Paris"), &g, &RetryPolicy::default()).unwrap();
        assert_eq!(c.kind, ConflictKind::Counterfactual);
        assert_eq!(c.text, "Lyon");
        assert_eq!(c.audit.unwrap().attempts.len(), 1);
    }

    #[test]
    fn mountain_counterfactual() {
        let q = question("What is the highest mountain in the world?", &["Mount Everest"]);
        let g = gw(MockScript::default().rule("Answer: Mount Everest Fake answer:", &["Lhotse"]));
        let (_, cand) = generate_counterfactual(&q, "Mount Everest", &g, 0.0).unwrap();
        assert_eq!(cand, "Lhotse");
    }

    #[test]
    fn invalid_candidates_are_retried() {
        let g = gw(MockScript::default().rule("Fake answer:", &["Paris", "", "Lyon"]));
        let c = forge(&question("Capital?", &["Paris"]), &alpha("Paris."), &g, &RetryPolicy::default()).unwrap();
        let audit = c.audit.unwrap();
        assert_eq!(audit.attempts.len(), 3);
        assert!(audit.attempts[0].rejection.as_deref().unwrap().contains("agrees"));
        assert_eq!(audit.attempts[1].rejection.as_deref(), Some("empty candidate"));
        assert_eq!(c.text, "Lyon");
        let temps: Vec<f64> = audit.attempts.iter().map(|a| a.temperature).collect();
        assert_eq!(temps, vec![0.0, 0.175, 0.35]);
    }

    #[test]
    fn exhausted_budget_keeps_all_candidates() {
        let g = gw(MockScript::default().rule("Fake answer:", &["Paris"]));
        match forge(&question("Capital?", &["Paris"]), &alpha("Paris"), &g, &RetryPolicy::default()) {
            Err(ForgeError::Exhausted(e)) => assert_eq!(e.audit.attempts.len(), 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_conflicting_realistic_variant_wins() {
        let c = forge(&question("Who?", &["Denver Broncos", "Carolina Panthers"]), &alpha("The Broncos"), &gw(MockScript::default()), &RetryPolicy::default()).unwrap();
        assert_eq!(c.text, "Carolina Panthers");
    }
}
