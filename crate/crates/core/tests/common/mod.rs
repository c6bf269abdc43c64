#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knowconflict::config::RunConfig;
use knowconflict::context::{context_ref, ContextAudit, ContextGolds, ContextKind, ContextPackage};
use knowconflict::corpus::{Document, IngestFormat};
use knowconflict::toy::ToyCorpus;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_knowconflict"))
}

pub fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes the toy corpus and script into `root`, returning a config that builds into `root/dataset`.
pub fn toy_config(root: &Path, n: usize) -> RunConfig {
    let (corpus, script) = ToyCorpus::new(n).write(root).expect("toy corpus written");
    RunConfig {
        corpus: Some(corpus),
        corpus_format: IngestFormat::GenericQa,
        backend: format!("mock:{}", script.display()),
        out: root.join("dataset"),
        gateway_backoff_ms: 0,
        ..RunConfig::default()
    }
}

/// The same configuration as a `key = value` file for the binary.
pub fn write_config(cfg: &RunConfig, path: &Path) -> PathBuf {
    std::fs::write(path, cfg.to_kv()).expect("config written");
    path.to_owned()
}

/// Independent answer normalizer: lowercase, punctuation to spaces, articles dropped.
pub fn oracle_normalize(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn hand_context(qid: &str, kind: ContextKind, conflict: Option<&str>, alpha: Option<&str>, prior: Option<f64>) -> ContextPackage {
    let doc = Document::new(format!("{qid}-d"), "T", "filler text");
    ContextPackage {
        question_id: qid.into(),
        context_ref: context_ref(qid, kind),
        kind,
        title: "T".into(),
        question: format!("question {qid}?"),
        docs: vec![doc.clone()],
        evidence_position: None,
        shuffle_seed: 0,
        audit: ContextAudit {
            canonical_order: vec![doc.doc_id.clone()],
            roles: vec![],
        },
        golds: ContextGolds {
            conflict: conflict.map(String::from),
            alpha: alpha.map(String::from),
            alpha_prior_logprob: prior,
            ..ContextGolds::default()
        },
    }
}
