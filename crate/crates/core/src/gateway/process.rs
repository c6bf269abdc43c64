use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::mock::{WireRequest, WireResponse};
use super::{Backend, BackendOutput, GenerationRequest};
use crate::error::{Error, Result};

/// A local model process speaking one JSON request and one JSON reply per line on
/// stdin/stdout. `knowconflict mock-serve` implements the protocol.
pub struct ProcessBackend {
    command: String,
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
    child: Mutex<Child>,
}

impl ProcessBackend {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(ProcessBackend {
            command: command.to_owned(),
            io: Mutex::new((stdin, stdout)),
            child: Mutex::new(child),
        })
    }

    fn call(&self, req: &WireRequest, tag: &str) -> Result<WireResponse> {
        let transport = |message: String| Error::Gateway {
            tag: tag.to_owned(),
            message,
        };
        let mut io = self.io.lock().expect("process lock poisoned");
        let line = serde_json::to_string(req)?;
        writeln!(io.0, "{line}").map_err(|e| transport(format!("write to `{}`: {e}", self.command)))?;
        io.0.flush().map_err(|e| transport(e.to_string()))?;
        let mut reply = String::new();
        let n = io.1.read_line(&mut reply).map_err(|e| transport(e.to_string()))?;
        if n == 0 {
            return Err(transport(format!("process `{}` closed its output", self.command)));
        }
        let resp: WireResponse = serde_json::from_str(&reply).map_err(|e| transport(format!("bad reply: {e}")))?;
        match (&resp.error, resp.unsupported) {
            (Some(msg), true) => Err(Error::Capability(msg.clone())),
            (Some(msg), false) => Err(transport(msg.clone())),
            (None, _) => Ok(resp),
        }
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Backend for ProcessBackend {
    fn id(&self) -> String {
        format!("process:{}", self.command)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<BackendOutput> {
        let resp = self.call(
            &WireRequest::Generate {
                prompt: request.prompt.clone(),
                temperature: request.temperature,
                max_new_tokens: request.max_new_tokens,
                stop: request.stop_sequences.clone(),
                tag: request.request_tag.clone(),
            },
            &request.request_tag,
        )?;
        Ok(BackendOutput {
            text: resp.text.unwrap_or_default(),
            token_logprobs: resp.token_logprobs,
        })
    }

    fn score(&self, prompt: &str, response: &str) -> Result<Vec<f64>> {
        let resp = self.call(
            &WireRequest::Score {
                prompt: prompt.to_owned(),
                response: response.to_owned(),
            },
            "score",
        )?;
        resp.token_logprobs.ok_or_else(|| Error::Capability("process returned no token_logprobs".into()))
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let resp = self.call(&WireRequest::Embed { text: text.to_owned() }, "embed")?;
        resp.embedding.ok_or_else(|| Error::Capability("process returned no embedding".into()))
    }
}
