//! Parametric-answer elicitation: asks the model without context and records what it
//! believes, or that it abstained.

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationRequest};
use crate::prompts;
pub use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterAnswer {
    pub question_id: String,
    pub alpha_text: String,
    pub abstained: bool,
    pub raw_response: String,
    pub prior_logprob: Option<f64>,
}

/// What the prior probability of α is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorConditioning {
    /// The same elicitation prompt that produced α.
    Prompt,
    /// The bare question text.
    Bare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub refusal_phrases: Vec<String>,
    pub prior_conditioning: PriorConditioning,
    pub max_new_tokens: u32,
}

pub const DEFAULT_REFUSALS: [&str; 4] = ["i don't know", "i do not know", "i'm not sure", "cannot answer"];

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            refusal_phrases: DEFAULT_REFUSALS.iter().map(|s| s.to_string()).collect(),
            prior_conditioning: PriorConditioning::Prompt,
            max_new_tokens: 128,
        }
    }
}

impl ProbeConfig {
    pub fn is_refusal(&self, response: &str) -> bool {
        let lowered = response.to_lowercase().replace(['\u{2018}', '\u{2019}'], "'");
        self.refusal_phrases.iter().any(|p| lowered.contains(&p.to_lowercase()))
    }
}

pub fn probe(question: &QuestionRecord, gateway: &Gateway, config: &ProbeConfig) -> Result<ParameterAnswer> {
    if question.question.trim().is_empty() {
        return Err(Error::Precondition(format!("question `{}` is empty", question.question_id)));
    }
    let prompt = prompts::parameter_answer(&question.title, &question.question);
    let mut request = GenerationRequest::new(&prompt, format!("probe:{}", question.question_id));
    request.max_new_tokens = config.max_new_tokens;
    let response = gateway.generate(&request)?;

    let alpha = response.text.split_whitespace().collect::<Vec<_>>().join(" ");
    let abstained = config.is_refusal(&alpha) || normalize_answer(&alpha).is_empty();
    if abstained {
        return Ok(ParameterAnswer {
            question_id: question.question_id.clone(),
            alpha_text: String::new(),
            abstained: true,
            raw_response: response.text,
            prior_logprob: None,
        });
    }

    let conditioning = match config.prior_conditioning {
        PriorConditioning::Prompt => prompt.as_str(),
        PriorConditioning::Bare => question.question.as_str(),
    };
    let prior_logprob = match gateway.score_response(conditioning, &alpha) {
        Ok(lp) => Some(lp),
        Err(Error::Capability(_)) if config.prior_conditioning == PriorConditioning::Prompt => response.mean_token_logprob,
        Err(Error::Capability(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ParameterAnswer {
        question_id: question.question_id.clone(),
        alpha_text: alpha,
        abstained: false,
        raw_response: response.text,
        prior_logprob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, MockScript};
    use std::collections::BTreeMap;

    fn q(text: &str) -> QuestionRecord {
        QuestionRecord {
            question_id: "q1".into(),
            title: "2024 US election".into(),
            question: text.into(),
            realistic_answers: vec!["Kamala Harris".into()],
            evidence_doc_id: None,
            annotations: BTreeMap::new(),
        }
    }

    fn gw(script: MockScript) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(script)), GatewayConfig::default()).unwrap()
    }

    #[test]
    fn full_sentence_answer_is_kept() {
        let question = "Who is the Democratic presidential candidate in the 2024 US presidential election?";
        let g = gw(MockScript::default().rule(question, &["The Democratic candidate is Joe Biden."]));
        let a = probe(&q(question), &g, &ProbeConfig::default()).unwrap();
        assert_eq!(a.alpha_text, "The Democratic candidate is Joe Biden.");
        assert!(!a.abstained);
    }

    #[test]
    fn refusal_is_abstention() {
        let g = gw(MockScript::default().rule("capital", &["I don't know."]));
        let a = probe(&q("What is the capital?"), &g, &ProbeConfig::default()).unwrap();
        assert!(a.abstained);
        assert_eq!(a.alpha_text, "");
        assert_eq!(a.raw_response, "I don't know.");
    }

    #[test]
    fn scripted_answer_with_prior() {
        let script = MockScript {
            uniform_vocab: Some(4),
            ..MockScript::default().rule("capital of France", &["Paris"])
        };
        let a = probe(&q("What is the capital of France?"), &gw(script), &ProbeConfig::default()).unwrap();
        assert_eq!(a.alpha_text, "Paris");
        assert!(!a.abstained);
        assert!((a.prior_logprob.unwrap() - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probing_is_deterministic() {
        let g = gw(MockScript::default().rule("capital", &["Paris"]));
        let a = probe(&q("capital?"), &g, &ProbeConfig::default()).unwrap();
        let b = probe(&q("capital?"), &g, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curly_apostrophe_refusal() {
        assert!(ProbeConfig::default().is_refusal("I don\u{2019}t know"));
    }
}
