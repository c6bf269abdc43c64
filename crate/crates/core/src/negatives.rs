//! Error-type negatives: contextual overinclusion (a wrong answer lifted from the
//! context) and contextual ignorance (the parametric answer, context ignored).

use serde::{Deserialize, Serialize};

use crate::context::{ContextKind, ContextPackage};
use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::forge::{Attempt, GenerationAudit, RetriesExhausted, RetryPolicy};
use crate::gateway::{Gateway, GenerationRequest};
use crate::probe::ParameterAnswer;
use crate::prompts;
use crate::text::{answers_agree, clean_generated_answer, contains_verbatim_ci, normalize_answer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Overinclusion,
    Ignorance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub question_id: String,
    pub context_ref: String,
    pub error_type: ErrorType,
    pub answer_text: String,
    /// The answer the negative must differ from (a_cf for conflicting contexts, α otherwise).
    pub potential_answer: String,
    pub audit: Option<GenerationAudit>,
}

#[derive(Debug, thiserror::Error)]
pub enum NegativeError {
    #[error(transparent)]
    Exhausted(#[from] RetriesExhausted),
    #[error(transparent)]
    Other(#[from] Error),
}

/// Why an overinclusion candidate fails validation, if it does.
pub fn overinclusion_rejection(candidate: &str, context_text: &str, potential_answer: &str) -> Option<String> {
    if normalize_answer(candidate).is_empty() {
        return Some("empty candidate".into());
    }
    if answers_agree(candidate, potential_answer) {
        return Some("same as the potential answer".into());
    }
    if !contains_verbatim_ci(context_text, candidate) {
        return Some("does not appear in the context".into());
    }
    None
}

pub fn sample_overinclusion(
    question: &QuestionRecord,
    context: &ContextPackage,
    potential_answer: &str,
    gateway: &Gateway,
    policy: &RetryPolicy,
) -> std::result::Result<NegativeSample, NegativeError> {
    if potential_answer.trim().is_empty() {
        return Err(Error::Precondition(format!("no potential answer for `{}`", context.context_ref)).into());
    }
    let context_text = context.serialized();
    let prompt = prompts::overinclusion(&question.question, potential_answer, &context_text);
    let mut attempts = Vec::new();
    for temperature in policy.temperatures() {
        let request = GenerationRequest::new(&prompt, format!("overinclusion:{}", context.context_ref)).with_temperature(temperature);
        let raw = gateway.generate(&request)?.text;
        let candidate = clean_generated_answer(&raw, &["alternative answer", "answer"]);
        let rejection = overinclusion_rejection(&candidate, &context_text, potential_answer);
        let accepted = rejection.is_none();
        attempts.push(Attempt {
            temperature,
            raw,
            candidate: candidate.clone(),
            rejection,
        });
        if accepted {
            return Ok(NegativeSample {
                question_id: question.question_id.clone(),
                context_ref: context.context_ref.clone(),
                error_type: ErrorType::Overinclusion,
                answer_text: candidate,
                potential_answer: potential_answer.to_owned(),
                audit: Some(GenerationAudit { prompt, attempts }),
            });
        }
    }
    Err(RetriesExhausted {
        question_id: question.question_id.clone(),
        what: "overinclusion generation",
        audit: GenerationAudit { prompt, attempts },
    }
    .into())
}

/// The parametric answer as an ignorance negative. `None` when the model abstained,
/// since there is nothing to ignore the context in favour of.
pub fn sample_ignorance(question: &QuestionRecord, context: &ContextPackage, alpha: &ParameterAnswer) -> Result<Option<NegativeSample>> {
    if context.kind != ContextKind::Conflicting {
        return Err(Error::Precondition(format!(
            "ignorance negatives exist only for conflicting contexts, got `{}`",
            context.context_ref
        )));
    }
    if alpha.abstained {
        return Ok(None);
    }
    Ok(Some(NegativeSample {
        question_id: question.question_id.clone(),
        context_ref: context.context_ref.clone(),
        error_type: ErrorType::Ignorance,
        answer_text: alpha.alpha_text.clone(),
        potential_answer: context.golds.conflict.clone().unwrap_or_default(),
        audit: None,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextAudit, ContextGolds};
    use crate::corpus::Document;
    use crate::gateway::{GatewayConfig, MockBackend, MockScript};
    use std::collections::BTreeMap;

    const Q: &str = "Who is the Democratic presidential candidate in the 2024 US presidential election?";

    fn question() -> QuestionRecord {
        QuestionRecord {
            question_id: "q".into(),
            title: "2024 US election".into(),
            question: Q.into(),
            realistic_answers: vec!["Kamala Harris".into()],
            evidence_doc_id: None,
            annotations: BTreeMap::new(),
        }
    }

    fn package(kind: ContextKind, text: &str) -> ContextPackage {
        ContextPackage {
            question_id: "q".into(),
            context_ref: format!("q:{kind}"),
            kind,
            title: "2024 US election".into(),
            question: Q.into(),
            docs: vec![Document::new("d", "2024 US election", text)],
            evidence_position: None,
            shuffle_seed: 0,
            audit: ContextAudit {
                canonical_order: vec!["d".into()],
                roles: vec![],
            },
            golds: ContextGolds {
                conflict: Some("Kamala Harris".into()),
                ..ContextGolds::default()
            },
        }
    }

    fn alpha(text: &str) -> ParameterAnswer {
        ParameterAnswer {
            question_id: "q".into(),
            alpha_text: text.into(),
            abstained: text.is_empty(),
            raw_response: text.into(),
            prior_logprob: None,
        }
    }

    fn gw(responses: &[&str]) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(MockScript::default().rule("Potential answer:", responses))), GatewayConfig::default()).unwrap()
    }

    const CF_CTX: &str = "Vice President Kamala Harris became the presumed Democratic nominee. Top contenders include Pete Buttigieg, Arizona Senator Mark Kelly, Illinois Governor J.B. Pritzker.";
    const IR_CTX: &str = "Back in 1968, President Lyndon B. Johnson opted out. Following Johnson's withdrawal, Hubert Humphrey took over as the Democratic nominee for president.";

    #[test]
    fn conflicting_overinclusion() {
        let ctx = package(ContextKind::Conflicting, CF_CTX);
        let s = sample_overinclusion(&question(), &ctx, "Kamala Harris", &gw(&["Mark Kelly"]), &RetryPolicy::default()).unwrap();
        assert_eq!(s.answer_text, "Mark Kelly");
        assert_eq!(s.error_type, ErrorType::Overinclusion);
    }

    #[test]
    fn irrelevant_overinclusion() {
        let ctx = package(ContextKind::Irrelevant, IR_CTX);
        let s = sample_overinclusion(&question(), &ctx, "The Democratic candidate is Joe Biden.", &gw(&["Hubert Humphrey"]), &RetryPolicy::default()).unwrap();
        assert_eq!(s.answer_text, "Hubert Humphrey");
    }

    #[test]
    fn potential_answer_is_rejected_then_retried() {
        let ctx = package(ContextKind::Conflicting, CF_CTX);
        let s = sample_overinclusion(&question(), &ctx, "Kamala Harris", &gw(&["Kamala Harris", "Barack Obama", "Mark Kelly"]), &RetryPolicy::default()).unwrap();
        let attempts = s.audit.unwrap().attempts;
        assert_eq!(attempts[0].rejection.as_deref(), Some("same as the potential answer"));
        assert_eq!(attempts[1].rejection.as_deref(), Some("does not appear in the context"));
        assert_eq!(s.answer_text, "Mark Kelly");
    }

    #[test]
    fn containment_is_case_insensitive() {
        assert_eq!(overinclusion_rejection("mark kelly", CF_CTX, "Kamala Harris"), None);
    }

    #[test]
    fn exhausted_retries() {
        let ctx = package(ContextKind::Conflicting, CF_CTX);
        let r = sample_overinclusion(&question(), &ctx, "Kamala Harris", &gw(&["Kamala Harris"]), &RetryPolicy::default());
        assert!(matches!(r, Err(NegativeError::Exhausted(e)) if e.audit.attempts.len() == 5));
    }

    #[test]
    fn ignorance_is_alpha() {
        let ctx = package(ContextKind::Conflicting, CF_CTX);
        let a = alpha("The Democratic candidate is Joe Biden.");
        let s = sample_ignorance(&question(), &ctx, &a).unwrap().unwrap();
        assert_eq!(s.answer_text, "The Democratic candidate is Joe Biden.");
        assert_eq!(normalize_answer(&s.answer_text), normalize_answer(&a.alpha_text));
    }

    #[test]
    fn abstained_alpha_skips_ignorance() {
        let ctx = package(ContextKind::Conflicting, CF_CTX);
        assert_eq!(sample_ignorance(&question(), &ctx, &alpha("")).unwrap(), None);
    }

    #[test]
    fn no_ignorance_for_irrelevant_contexts() {
        let ctx = package(ContextKind::Irrelevant, IR_CTX);
        assert!(sample_ignorance(&question(), &ctx, &alpha("x")).is_err());
    }
}
