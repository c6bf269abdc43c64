use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendOutput, GenerationRequest};
use crate::error::{Error, Result};

/// Chat-completions style endpoint. The bearer token is read from the environment
/// variable named by `api_key_env` at request time.
pub struct HttpBackend {
    base_url: String,
    model: String,
    pub api_key_env: String,
    pub embedding_model: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_owned(),
            model: model.to_owned(),
            api_key_env: "KNOWCONFLICT_API_KEY".into(),
            embedding_model: None,
            agent,
        }
    }

    fn post(&self, path: &str, body: &Value, tag: &str) -> Result<Value> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = self.agent.post(&url);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| Error::Gateway {
            tag: tag.to_owned(),
            message: format!("{url}: {e}"),
        };
        let mut resp = req.send_json(body).map_err(transport)?;
        resp.body_mut().read_json::<Value>().map_err(transport)
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.base_url, self.model)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<BackendOutput> {
        let mut body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
            "logprobs": true,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        let v = self.post("chat/completions", &body, &request.request_tag)?;
        let choice = &v["choices"][0];
        let text = choice["message"]["content"].as_str().ok_or_else(|| Error::Gateway {
            tag: request.request_tag.clone(),
            message: format!("response without choices[0].message.content: {v}"),
        })?;
        let token_logprobs = choice["logprobs"]["content"]
            .as_array()
            .map(|toks| toks.iter().filter_map(|t| t["logprob"].as_f64()).collect::<Vec<_>>())
            .filter(|lp| !lp.is_empty());
        Ok(BackendOutput {
            text: text.to_owned(),
            token_logprobs,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let model = self
            .embedding_model
            .as_deref()
            .ok_or_else(|| Error::Capability("no embedding model configured for http backend".into()))?;
        let v = self.post("embeddings", &json!({ "model": model, "input": text }), "embed")?;
        v["data"][0]["embedding"]
            .as_array()
            .map(|xs| xs.iter().filter_map(|x| x.as_f64().map(|f| f as f32)).collect())
            .ok_or_else(|| Error::Gateway {
                tag: "embed".into(),
                message: "response without data[0].embedding".into(),
            })
    }
}
