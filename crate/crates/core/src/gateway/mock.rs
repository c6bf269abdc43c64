use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendOutput, GenerationRequest};
use crate::error::{Error, Result};
use crate::text::{derive_seed, sha256_hex};

/// A scripted reply: the first rule whose `contains` is a substring of the prompt wins.
/// Successive calls with the same prompt walk through `responses`, repeating the last.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Fail this many calls per prompt with a transport error before answering.
    #[serde(default)]
    pub transient_failures: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScoreRule {
    pub response_contains: String,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub scores: Vec<MockScoreRule>,
    /// Reply when no rule matches; `I don't know.` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_response: Option<String>,
    /// Score every token as `ln(1/V)`, and attach those logprobs to generations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_vocab: Option<usize>,
    /// Reply with the prompt itself when no rule matches.
    #[serde(default)]
    pub echo: bool,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

impl MockScript {
    pub fn rule(mut self, contains: &str, responses: &[&str]) -> Self {
        self.rules.push(MockRule {
            contains: contains.to_owned(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            ..MockRule::default()
        });
        self
    }
}

pub struct MockBackend {
    script: MockScript,
    id: String,
    calls: Mutex<HashMap<String, usize>>,
    failures: Mutex<HashMap<String, u32>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let id = format!("mock:{}", &sha256_hex(serde_json::to_string(&script).expect("script serializes"))[..16]);
        MockBackend {
            script,
            id,
            calls: Mutex::default(),
            failures: Mutex::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::jsonl::read_json(path)?))
    }

    fn uniform(&self, tokens: usize) -> Option<Vec<f64>> {
        self.script.uniform_vocab.map(|v| vec![-(v as f64).ln(); tokens])
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<BackendOutput> {
        if self.script.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.script.delay_ms));
        }
        let Some(rule) = self.script.rules.iter().find(|r| request.prompt.contains(&r.contains)) else {
            let text = if self.script.echo {
                request.prompt.clone()
            } else {
                self.script.default_response.clone().unwrap_or_else(|| "I don't know.".into())
            };
            let logprobs = self.uniform(text.split_whitespace().count());
            return Ok(BackendOutput {
                text,
                token_logprobs: logprobs,
            });
        };

        if rule.transient_failures > 0 {
            let mut failures = self.failures.lock().expect("mock lock poisoned");
            let seen = failures.entry(request.prompt.clone()).or_default();
            if *seen < rule.transient_failures {
                *seen += 1;
                return Err(Error::Gateway {
                    tag: request.request_tag.clone(),
                    message: "scripted transient failure".into(),
                });
            }
        }

        let idx = {
            let mut calls = self.calls.lock().expect("mock lock poisoned");
            let n = calls.entry(request.prompt.clone()).or_default();
            let idx = *n;
            *n += 1;
            idx
        };
        let text = rule
            .responses
            .get(idx.min(rule.responses.len().saturating_sub(1)))
            .cloned()
            .unwrap_or_default();
        let token_logprobs = rule.token_logprobs.clone().or_else(|| self.uniform(text.split_whitespace().count()));
        Ok(BackendOutput { text, token_logprobs })
    }

    fn score(&self, _prompt: &str, response: &str) -> Result<Vec<f64>> {
        if let Some(rule) = self.script.scores.iter().find(|r| response.contains(&r.response_contains)) {
            return Ok(rule.token_logprobs.clone());
        }
        self.uniform(response.split_whitespace().count())
            .ok_or_else(|| Error::Capability(format!("backend {} has no scoring script", self.id)))
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let dim = self.script.embed_dim.unwrap_or(64);
        let mut v = vec![0f32; dim];
        for tok in text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[(derive_seed(0, &[tok]) % dim as u64) as usize] += 1.0;
        }
        Ok(v)
    }
}

/// Wire format shared by the process backend and [`serve_mock`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub(crate) enum WireRequest {
    Generate {
        prompt: String,
        temperature: f64,
        max_new_tokens: u32,
        #[serde(default)]
        stop: Vec<String>,
        #[serde(default)]
        tag: String,
    },
    Score {
        prompt: String,
        response: String,
    },
    Embed {
        text: String,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub(crate) struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub unsupported: bool,
}

/// Serves a mock script over a line-oriented JSON protocol until `input` closes.
pub fn serve_mock(script: MockScript, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let backend = MockBackend::new(script);
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<WireRequest>(&line) {
            Err(e) => WireResponse {
                error: Some(format!("bad request: {e}")),
                ..WireResponse::default()
            },
            Ok(req) => respond(&backend, req),
        };
        writeln!(output, "{}", serde_json::to_string(&reply)?).map_err(|e| Error::io("<stdout>", e))?;
        output.flush().map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn respond(backend: &MockBackend, req: WireRequest) -> WireResponse {
    let failed = |e: Error| WireResponse {
        unsupported: matches!(e, Error::Capability(_)),
        error: Some(e.to_string()),
        ..WireResponse::default()
    };
    match req {
        WireRequest::Generate {
            prompt,
            temperature,
            max_new_tokens,
            stop,
            tag,
        } => {
            let r = GenerationRequest {
                prompt,
                temperature,
                max_new_tokens,
                stop_sequences: stop,
                request_tag: tag,
            };
            match backend.generate(&r) {
                Ok(out) => WireResponse {
                    text: Some(out.text),
                    token_logprobs: out.token_logprobs,
                    ..WireResponse::default()
                },
                Err(e) => failed(e),
            }
        }
        WireRequest::Score { prompt, response } => match backend.score(&prompt, &response) {
            Ok(lp) => WireResponse {
                token_logprobs: Some(lp),
                ..WireResponse::default()
            },
            Err(e) => failed(e),
        },
        WireRequest::Embed { text } => match backend.embed(&text) {
            Ok(v) => WireResponse {
                embedding: Some(v),
                ..WireResponse::default()
            },
            Err(e) => failed(e),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walks_scripted_responses() {
        let b = MockBackend::new(MockScript::default().rule("Fake answer:", &["Paris", "Lyon"]));
        let req = GenerationRequest::new("... Fake answer:", "t");
        assert_eq!(b.generate(&req).unwrap().text, "Paris");
        assert_eq!(b.generate(&req).unwrap().text, "Lyon");
        assert_eq!(b.generate(&req).unwrap().text, "Lyon");
    }

    #[test]
    fn serves_line_protocol() {
        let script = MockScript::default().rule("capital", &["Paris"]);
        let input = b"{\"op\":\"generate\",\"prompt\":\"capital?\",\"temperature\":0.0,\"max_new_tokens\":8}\n{\"op\":\"score\",\"prompt\":\"p\",\"response\":\"r\"}\n";
        let mut out = Vec::new();
        serve_mock(script, &input[..], &mut out).unwrap();
        let lines: Vec<WireResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0].text.as_deref(), Some("Paris"));
        assert!(lines[1].unsupported);
    }
}
