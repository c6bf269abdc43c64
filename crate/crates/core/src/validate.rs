//! Dataset-wide invariant checks over a built output directory. Each check looks at
//! one record in isolation, so a single corrupted record yields a single violation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{shuffle_permutation, ContextKind, ContextPackage};
use crate::corpus::DocOrigin;
use crate::error::{Error, Result};
use crate::forge::{ConflictAnswer, ConflictKind};
use crate::jsonl;
use crate::negatives::{ErrorType, NegativeSample};
use crate::pairs::{self, DpoRecord, PairType, RenderedResponse, SftRecord, Template};
use crate::prompts;
use crate::text::{answers_agree, contains_answer, contains_verbatim_ci, normalize_answer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub record: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.invariant, self.record, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    pub contexts_checked: usize,
    pub conflicts_checked: usize,
    pub negatives_checked: usize,
    pub pairs_checked: usize,
    pub sft_checked: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "checked: contexts={} conflicts={} negatives={} dpo_pairs={} sft={}\n",
            self.contexts_checked, self.conflicts_checked, self.negatives_checked, self.pairs_checked, self.sft_checked
        );
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        for v in &self.violations {
            s.push_str(&format!("violation: {v}\n"));
        }
        s.push_str(&format!("violations: {}\n", self.violations.len()));
        s
    }
}

struct Checker {
    report: ValidationReport,
}

impl Checker {
    fn fail(&mut self, invariant: &str, record: &str, detail: impl Into<String>) {
        self.report.violations.push(Violation {
            invariant: invariant.to_owned(),
            record: record.to_owned(),
            detail: detail.into(),
        });
    }
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>> {
    if path.exists() {
        jsonl::read_jsonl(path).map(Some)
    } else {
        Ok(None)
    }
}

fn configured_k(dir: &Path) -> Result<Option<usize>> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let v: serde_json::Value = jsonl::read_json(&path)?;
    Ok(v.pointer("/config/k").and_then(|k| k.as_u64()).map(|k| k as usize))
}

pub fn cmd_validate(dir: &Path) -> Result<ValidationReport> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let mut ck = Checker {
        report: ValidationReport::default(),
    };
    let contexts: Vec<ContextPackage> = read_optional(&dir.join("contexts.jsonl"))?.unwrap_or_default();
    if contexts.is_empty() {
        ck.report.warnings.push(format!("no contexts found in {}", dir.display()));
    }
    let k = match configured_k(dir)? {
        Some(k) => k,
        None => {
            ck.report.warnings.push("no run manifest; assuming K=4".into());
            4
        }
    };
    for c in &contexts {
        check_context(&mut ck, c, k);
    }
    ck.report.contexts_checked = contexts.len();

    if let Some(conflicts) = read_optional::<ConflictAnswer>(&dir.join("conflicts.jsonl"))? {
        for c in &conflicts {
            if !c.alpha_ref.is_empty() && (answers_agree(&c.text, &c.alpha_ref) || normalize_answer(&c.text) == normalize_answer(&c.alpha_ref)) {
                ck.fail("conflict condition", &c.question_id, format!("a_cf `{}` agrees with α `{}`", c.text, c.alpha_ref));
            }
        }
        ck.report.conflicts_checked = conflicts.len();
    }

    let by_ref: HashMap<&str, &ContextPackage> = contexts.iter().map(|c| (c.context_ref.as_str(), c)).collect();
    if let Some(negs) = read_optional::<NegativeSample>(&dir.join("negatives.jsonl"))? {
        for n in &negs {
            check_negative(&mut ck, n, by_ref.get(n.context_ref.as_str()).copied());
        }
        ck.report.negatives_checked = negs.len();
    }
    if let Some(records) = read_optional::<DpoRecord>(&dir.join("export").join(pairs::DPO_FILE))? {
        for r in &records {
            check_pair(&mut ck, r);
        }
        ck.report.pairs_checked = records.len();
    }
    if let Some(records) = read_optional::<SftRecord>(&dir.join("export").join(pairs::SFT_FILE))? {
        for r in &records {
            check_sft(&mut ck, r, by_ref.get(r.ids.context_ref.as_str()).map(|c| c.kind));
        }
        ck.report.sft_checked = records.len();
    }
    Ok(ck.report)
}

fn check_context(ck: &mut Checker, c: &ContextPackage, k: usize) {
    let id = c.context_ref.as_str();
    if c.docs.len() != k {
        ck.fail("context size", id, format!("{} documents, expected {k}", c.docs.len()));
    }

    let perm = shuffle_permutation(c.audit.canonical_order.len(), c.shuffle_seed);
    let shuffled_ok = c.audit.canonical_order.len() == c.docs.len()
        && c.audit.roles.len() == c.docs.len()
        && c.docs.iter().enumerate().all(|(i, d)| d.doc_id == c.audit.canonical_order[perm[i]]);
    if !shuffled_ok {
        ck.fail("shuffle permutation", id, "document order is not the recorded seeded permutation of the canonical order");
    }

    let alpha = c.golds.alpha.as_deref().filter(|a| !a.trim().is_empty());
    match c.kind {
        ContextKind::Conflicting => {
            let Some(cf) = c.golds.conflict.as_deref().filter(|s| !s.trim().is_empty()) else {
                ck.fail("conflict gold", id, "conflicting context without a_cf");
                return;
            };
            if let Some(a) = alpha {
                if answers_agree(cf, a) {
                    ck.fail("conflict condition", id, format!("a_cf `{cf}` agrees with α `{a}`"));
                }
            }
            let holders: Vec<usize> = (0..c.docs.len()).filter(|&i| contains_answer(&c.docs[i].text, cf)).collect();
            if holders.len() != 1 || Some(holders[0]) != c.evidence_position {
                ck.fail(
                    "single-evidence containment",
                    id,
                    format!("a_cf `{cf}` found in documents {holders:?}, evidence position {:?}", c.evidence_position),
                );
            }
            for (i, d) in c.docs.iter().enumerate() {
                let is_evidence = Some(i) == c.evidence_position;
                if is_evidence && c.golds.conflict_kind == Some(ConflictKind::Counterfactual) {
                    if let Some(r) = c.golds.realistic_answers.iter().find(|r| contains_answer(&d.text, r)) {
                        ck.fail("residual realistic answer", id, format!("`{r}` survives in substituted `{}`", d.doc_id));
                    }
                    if !matches!(d.origin, DocOrigin::Substituted { .. }) {
                        ck.fail("substitution provenance", id, format!("`{}` lacks substitution origin", d.doc_id));
                    }
                }
                if !is_evidence {
                    let leaked = c.golds.realistic_answers.iter().map(String::as_str).chain(alpha).find(|a| contains_answer(&d.text, a));
                    if let Some(a) = leaked {
                        ck.fail("distractor purity", id, format!("distractor `{}` contains `{a}`", d.doc_id));
                    }
                }
            }
        }
        ContextKind::Irrelevant => {
            if c.evidence_position.is_some() {
                ck.fail("irrelevant has no evidence", id, "evidence position set on an irrelevant context");
            }
            if alpha.is_none() {
                ck.fail("parametric gold", id, "irrelevant context without α");
            }
            for d in &c.docs {
                let leaked = c.golds.realistic_answers.iter().map(String::as_str).chain(alpha).find(|a| contains_answer(&d.text, a));
                if let Some(a) = leaked {
                    ck.fail("irrelevance", id, format!("`{}` contains `{a}`", d.doc_id));
                }
            }
        }
    }
}

fn check_negative(ck: &mut Checker, n: &NegativeSample, ctx: Option<&ContextPackage>) {
    let id = format!("{}:{:?}", n.context_ref, n.error_type).to_lowercase();
    let Some(c) = ctx else {
        ck.fail("negative reference", &id, "unknown context");
        return;
    };
    match n.error_type {
        ErrorType::Overinclusion => {
            if !contains_verbatim_ci(&c.serialized(), &n.answer_text) {
                ck.fail("overinclusion containment", &id, format!("`{}` does not appear in the context", n.answer_text));
            }
            if answers_agree(&n.answer_text, &n.potential_answer) {
                ck.fail("overinclusion differs", &id, format!("`{}` equals the potential answer", n.answer_text));
            }
        }
        ErrorType::Ignorance => {
            if c.kind != ContextKind::Conflicting {
                ck.fail("ignorance placement", &id, "ignorance negative on an irrelevant context");
            } else if c.golds.alpha.as_deref().map(normalize_answer) != Some(normalize_answer(&n.answer_text)) {
                ck.fail("ignorance equals α", &id, format!("`{}` is not the parametric answer", n.answer_text));
            }
        }
    }
}

fn well_formed_prompt(prompt: &str) -> bool {
    prompt.starts_with(&format!("[Instruction] {}\n\n[Supplemental Knowledge] ", prompts::INSTRUCTION))
        && prompt.contains("\n\n[User's Question] ")
        && prompt.ends_with("\n\n[Answer]")
}

fn check_pair(ck: &mut Checker, r: &DpoRecord) {
    let id = format!("{}:{}", r.ids.context_ref, r.pair_type);
    if !well_formed_prompt(&r.prompt) {
        ck.fail("prompt template", &id, "prompt does not follow the instruction-tuning template");
    }
    let expected = match r.pair_type {
        PairType::CfOverinclusion => (Template::Adherent, Template::Adherent),
        PairType::CfIgnorance => (Template::Adherent, Template::Robust),
        PairType::IrOverinclusion => (Template::Robust, Template::Adherent),
    };
    match (RenderedResponse::parse(&r.chosen), RenderedResponse::parse(&r.rejected)) {
        (Some(c), Some(j)) => {
            if (c.template, j.template) != expected {
                ck.fail("template conformance", &id, format!("templates {:?}/{:?}, expected {expected:?}", c.template, j.template));
            }
            if normalize_answer(&c.answer_core) == normalize_answer(&j.answer_core) {
                ck.fail("chosen differs from rejected", &id, "identical answer cores");
            }
        }
        _ => ck.fail("template conformance", &id, "response does not follow a known template"),
    }
}

fn check_sft(ck: &mut Checker, r: &SftRecord, kind: Option<ContextKind>) {
    let id = r.ids.context_ref.as_str();
    let roles: Vec<&str> = r.messages.iter().map(|m| m.role.as_str()).collect();
    if roles != ["system", "user", "assistant"] {
        ck.fail("chat structure", id, format!("roles {roles:?}"));
        return;
    }
    if !well_formed_prompt(&format!("{}\n\n{}", r.messages[0].content, r.messages[1].content)) {
        ck.fail("prompt template", id, "system and user messages do not form the instruction-tuning prompt");
    }
    let expected = match kind {
        Some(ContextKind::Conflicting) => Template::Adherent,
        Some(ContextKind::Irrelevant) => Template::Robust,
        None => {
            ck.fail("sft reference", id, "unknown context");
            return;
        }
    };
    if RenderedResponse::parse(&r.messages[2].content).map(|t| t.template) != Some(expected) {
        ck.fail("template conformance", id, format!("assistant turn is not a {expected:?} response"));
    }
}
