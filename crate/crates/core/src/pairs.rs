//! Response templating, preference-pair assembly with error-type balancing, and
//! training exports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextKind, ContextPackage};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::negatives::{ErrorType, NegativeSample};
use crate::prompts;
use crate::text::{derive_seed, normalize_answer, sha256_hex, whitespace_tokens};

pub const ADHERENT_PREFIX: &str = "Based on supplemental knowledge and my own understanding, the answer to this question is that ";
pub const ROBUST_PREFIX: &str =
    "Supplemental knowledge does not answer this question, but based on my knowledge, the answer to this question is that ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Answer taken from the supplied context.
    Adherent,
    /// Context judged irrelevant; answer from parametric knowledge.
    Robust,
}

impl Template {
    pub fn prefix(self) -> &'static str {
        match self {
            Template::Adherent => ADHERENT_PREFIX,
            Template::Robust => ROBUST_PREFIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedResponse {
    pub text: String,
    pub template: Template,
    pub answer_core: String,
    pub token_length: usize,
}

impl RenderedResponse {
    /// Recovers template and core from rendered text.
    pub fn parse(text: &str) -> Option<Self> {
        [Template::Adherent, Template::Robust]
            .into_iter()
            .find_map(|t| text.strip_prefix(t.prefix()).and_then(|core| render(core, t).ok()))
    }
}

pub fn render(answer_core: &str, template: Template) -> Result<RenderedResponse> {
    if answer_core.trim().is_empty() {
        return Err(Error::Precondition("cannot render an empty answer".into()));
    }
    let text = format!("{}{answer_core}", template.prefix());
    Ok(RenderedResponse {
        token_length: whitespace_tokens(&text),
        text,
        template,
        answer_core: answer_core.to_owned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairType {
    CfOverinclusion,
    CfIgnorance,
    IrOverinclusion,
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairType::CfOverinclusion => "cf_overinclusion",
            PairType::CfIgnorance => "cf_ignorance",
            PairType::IrOverinclusion => "ir_overinclusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub question_id: String,
    pub context_ref: String,
    pub prompt: String,
    pub chosen: RenderedResponse,
    pub rejected: RenderedResponse,
    pub pair_type: PairType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub question_id: String,
    pub context_ref: String,
    pub kind: ContextKind,
    pub prompt: String,
    pub target: RenderedResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub cf_overinclusion: usize,
    pub cf_ignorance: usize,
    pub ir_overinclusion: usize,
}

impl PairCounts {
    pub fn of(pairs: &[PreferencePair]) -> Self {
        let mut c = PairCounts::default();
        for p in pairs {
            match p.pair_type {
                PairType::CfOverinclusion => c.cf_overinclusion += 1,
                PairType::CfIgnorance => c.cf_ignorance += 1,
                PairType::IrOverinclusion => c.ir_overinclusion += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.cf_overinclusion + self.cf_ignorance + self.ir_overinclusion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthAlignment {
    pub mean_len_win: f64,
    pub mean_len_loss: f64,
    /// |win - loss| / win
    pub relative_gap: f64,
    pub tolerance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub target_ratio: f64,
    /// cf_ignorance / ir_overinclusion after subsampling; absent when the denominator is zero.
    pub realized_ratio: Option<f64>,
    pub available: PairCounts,
    pub counts: PairCounts,
    pub length: LengthAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyConfig {
    pub r_error: f64,
    pub seed: u64,
    pub length_tolerance: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            r_error: 1.0,
            seed: 42,
            length_tolerance: 0.05,
        }
    }
}

/// Kept counts `(ignorance, overinclusion)` whose ratio matches `target` up to integer
/// rounding, downsampling whichever class is in excess.
pub fn balance_counts(ignorance: usize, overinclusion: usize, target: f64) -> Result<(usize, usize)> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::Config(format!("R_error target must be positive and finite, got {target}")));
    }
    if ignorance == 0 && overinclusion == 0 {
        return Ok((0, 0));
    }
    let unreachable = || Error::UnreachableRatio {
        target,
        ignorance,
        overinclusion,
        min_ratio: if ignorance > 0 && overinclusion > 0 { 1.0 / overinclusion as f64 } else { 0.0 },
        max_ratio: if overinclusion > 0 { ignorance as f64 } else { 0.0 },
    };
    let (a, b) = if overinclusion == 0 || ignorance as f64 >= target * overinclusion as f64 {
        ((target * overinclusion as f64).round() as usize, overinclusion)
    } else {
        (ignorance, (ignorance as f64 / target).round() as usize)
    };
    if a == 0 || b == 0 {
        return Err(unreachable());
    }
    Ok((a, b))
}

pub fn assemble_pairs(
    contexts: &[ContextPackage],
    negatives: &[NegativeSample],
    config: &AssemblyConfig,
) -> Result<(Vec<PreferencePair>, BalanceReport)> {
    let by_ref: HashMap<&str, &ContextPackage> = contexts.iter().map(|c| (c.context_ref.as_str(), c)).collect();
    let mut groups: BTreeMap<PairType, Vec<PreferencePair>> = BTreeMap::new();

    for neg in negatives {
        let ctx = by_ref.get(neg.context_ref.as_str()).ok_or_else(|| {
            Error::Precondition(format!("negative references unknown context `{}`", neg.context_ref))
        })?;
        let gold = |g: &Option<String>, what: &str| {
            g.clone()
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| Error::Precondition(format!("context `{}` lacks a {what} gold", ctx.context_ref)))
        };
        let (pair_type, chosen, rejected) = match (ctx.kind, neg.error_type) {
            (ContextKind::Conflicting, ErrorType::Overinclusion) => (
                PairType::CfOverinclusion,
                render(&gold(&ctx.golds.conflict, "conflict")?, Template::Adherent)?,
                render(&neg.answer_text, Template::Adherent)?,
            ),
            (ContextKind::Conflicting, ErrorType::Ignorance) => (
                PairType::CfIgnorance,
                render(&gold(&ctx.golds.conflict, "conflict")?, Template::Adherent)?,
                render(&neg.answer_text, Template::Robust)?,
            ),
            (ContextKind::Irrelevant, ErrorType::Overinclusion) => (
                PairType::IrOverinclusion,
                render(&gold(&ctx.golds.alpha, "parametric")?, Template::Robust)?,
                render(&neg.answer_text, Template::Adherent)?,
            ),
            (ContextKind::Irrelevant, ErrorType::Ignorance) => {
                return Err(Error::Precondition(format!(
                    "ignorance negative attached to irrelevant context `{}`",
                    ctx.context_ref
                )))
            }
        };
        if normalize_answer(&chosen.answer_core) == normalize_answer(&rejected.answer_core) {
            return Err(Error::Precondition(format!("chosen and rejected coincide for `{}`", ctx.context_ref)));
        }
        groups.entry(pair_type).or_default().push(PreferencePair {
            question_id: ctx.question_id.clone(),
            context_ref: ctx.context_ref.clone(),
            prompt: ctx.prompt(),
            chosen,
            rejected,
            pair_type,
        });
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| (&a.question_id, &a.context_ref).cmp(&(&b.question_id, &b.context_ref)));
    }

    let all: Vec<PreferencePair> = groups.values().flatten().cloned().collect();
    let available = PairCounts::of(&all);
    let (keep_ign, keep_ovr) = balance_counts(available.cf_ignorance, available.ir_overinclusion, config.r_error)?;

    let mut pairs = groups.remove(&PairType::CfOverinclusion).unwrap_or_default();
    for (ty, keep) in [(PairType::CfIgnorance, keep_ign), (PairType::IrOverinclusion, keep_ovr)] {
        let mut group = groups.remove(&ty).unwrap_or_default();
        group.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["subsample", &ty.to_string()])));
        group.truncate(keep);
        pairs.extend(group);
    }
    pairs.sort_by(|a, b| (&a.question_id, a.pair_type, &a.context_ref).cmp(&(&b.question_id, b.pair_type, &b.context_ref)));

    let counts = PairCounts::of(&pairs);
    let report = BalanceReport {
        target_ratio: config.r_error,
        realized_ratio: (counts.ir_overinclusion > 0).then(|| counts.cf_ignorance as f64 / counts.ir_overinclusion as f64),
        available,
        counts,
        length: check_length_alignment(&pairs, config.length_tolerance),
    };
    Ok((pairs, report))
}

pub fn check_length_alignment(pairs: &[PreferencePair], tolerance: f64) -> LengthAlignment {
    let n = pairs.len() as f64;
    let (win, loss) = if pairs.is_empty() {
        (0.0, 0.0)
    } else {
        (
            pairs.iter().map(|p| p.chosen.token_length as f64).sum::<f64>() / n,
            pairs.iter().map(|p| p.rejected.token_length as f64).sum::<f64>() / n,
        )
    };
    let gap = if win > 0.0 { (win - loss).abs() / win } else { 0.0 };
    LengthAlignment {
        mean_len_win: win,
        mean_len_loss: loss,
        relative_gap: gap,
        tolerance,
        flagged: gap > tolerance,
    }
}

/// One supervised example per context: adherent(a_cf) for conflicting contexts,
/// robust(α) for irrelevant ones.
pub fn sft_examples(contexts: &[ContextPackage]) -> Result<Vec<SftExample>> {
    let mut out = contexts
        .iter()
        .map(|ctx| {
            let (gold, template) = match ctx.kind {
                ContextKind::Conflicting => (&ctx.golds.conflict, Template::Adherent),
                ContextKind::Irrelevant => (&ctx.golds.alpha, Template::Robust),
            };
            let gold = gold
                .as_deref()
                .ok_or_else(|| Error::Precondition(format!("context `{}` lacks a gold answer", ctx.context_ref)))?;
            Ok(SftExample {
                question_id: ctx.question_id.clone(),
                context_ref: ctx.context_ref.clone(),
                kind: ctx.kind,
                prompt: ctx.prompt(),
                target: render(gold, template)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| (&a.question_id, &a.context_ref).cmp(&(&b.question_id, &b.context_ref)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    DpoPairs,
    SftChat,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dpo_pairs" => Ok(ExportFormat::DpoPairs),
            "sft_chat" => Ok(ExportFormat::SftChat),
            other => Err(Error::Config(format!("unknown export format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIds {
    pub question_id: String,
    pub context_ref: String,
    pub snapshot_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub pair_type: PairType,
    pub ids: RecordIds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
    pub ids: RecordIds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerStage {
    pub learning_rate: f64,
    pub epochs: u32,
    pub adapter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerDefaults {
    pub sft: TrainerStage,
    pub dpo: TrainerStage,
}

impl Default for TrainerDefaults {
    fn default() -> Self {
        TrainerDefaults {
            sft: TrainerStage {
                learning_rate: 1e-5,
                epochs: 1,
                adapter: "lora".into(),
            },
            dpo: TrainerStage {
                learning_rate: 5e-6,
                epochs: 1,
                adapter: "lora".into(),
            },
        }
    }
}

impl TrainerDefaults {
    pub fn to_kv(&self) -> String {
        let mut out = String::from("# trainer defaults shipped with this export\n");
        for (name, s) in [("sft", &self.sft), ("dpo", &self.dpo)] {
            out.push_str(&format!("{name}.learning_rate = {:e}\n", s.learning_rate));
            out.push_str(&format!("{name}.epochs = {}\n", s.epochs));
            out.push_str(&format!("{name}.adapter = {}\n", s.adapter));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftCounts {
    pub conflicting: usize,
    pub irrelevant: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub snapshot_id: String,
    pub seed: u64,
    pub formats: Vec<ExportFormat>,
    pub sft: SftCounts,
    pub dpo_pairs: PairCounts,
    pub balance: BalanceReport,
    pub trainer: TrainerDefaults,
    /// File name -> sha256 of its bytes.
    pub files: BTreeMap<String, String>,
}

pub fn dpo_record(pair: &PreferencePair, snapshot_id: &str) -> DpoRecord {
    DpoRecord {
        prompt: pair.prompt.clone(),
        chosen: pair.chosen.text.clone(),
        rejected: pair.rejected.text.clone(),
        pair_type: pair.pair_type,
        ids: RecordIds {
            question_id: pair.question_id.clone(),
            context_ref: pair.context_ref.clone(),
            snapshot_id: snapshot_id.to_owned(),
        },
    }
}

/// System message carries the instruction paragraph; the user message carries the rest
/// of the prompt. Joined with a blank line they reproduce the full prompt.
pub fn sft_record(example: &SftExample, snapshot_id: &str) -> SftRecord {
    let body = example
        .prompt
        .strip_prefix(&format!("[Instruction] {}\n\n", prompts::INSTRUCTION))
        .unwrap_or(&example.prompt);
    SftRecord {
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: format!("[Instruction] {}", prompts::INSTRUCTION),
            },
            ChatMessage {
                role: "user".into(),
                content: body.to_owned(),
            },
            ChatMessage {
                role: "assistant".into(),
                content: example.target.text.clone(),
            },
        ],
        ids: RecordIds {
            question_id: example.question_id.clone(),
            context_ref: example.context_ref.clone(),
            snapshot_id: snapshot_id.to_owned(),
        },
    }
}

pub const DPO_FILE: &str = "dpo_pairs.jsonl";
pub const SFT_FILE: &str = "sft_chat.jsonl";
pub const TRAINER_FILE: &str = "trainer_config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub struct ExportRequest<'a> {
    pub pairs: &'a [PreferencePair],
    pub sft: &'a [SftExample],
    pub balance: &'a BalanceReport,
    pub formats: &'a [ExportFormat],
    pub snapshot_id: &'a str,
    pub seed: u64,
}

/// Writes the chosen formats, trainer defaults and a manifest into `dir`. On failure
/// every file written by this call is removed.
pub fn export_training(req: &ExportRequest<'_>, dir: &Path) -> Result<ExportManifest> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_export(req, dir, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}

fn write_export(req: &ExportRequest<'_>, dir: &Path, written: &mut Vec<PathBuf>) -> Result<ExportManifest> {
    let mut files = BTreeMap::new();
    let mut put = |name: &str, bytes: Vec<u8>, written: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join(name);
        jsonl::write_atomic(&path, &bytes)?;
        written.push(path);
        files.insert(name.to_owned(), sha256_hex(&bytes));
        Ok(())
    };
    if req.formats.contains(&ExportFormat::DpoPairs) {
        let records: Vec<DpoRecord> = req.pairs.iter().map(|p| dpo_record(p, req.snapshot_id)).collect();
        put(DPO_FILE, jsonl::to_lines(&records)?.into_bytes(), written)?;
    }
    if req.formats.contains(&ExportFormat::SftChat) {
        let records: Vec<SftRecord> = req.sft.iter().map(|s| sft_record(s, req.snapshot_id)).collect();
        put(SFT_FILE, jsonl::to_lines(&records)?.into_bytes(), written)?;
    }
    let trainer = TrainerDefaults::default();
    put(TRAINER_FILE, trainer.to_kv().into_bytes(), written)?;

    let conflicting = req.sft.iter().filter(|s| s.kind == ContextKind::Conflicting).count();
    let manifest = ExportManifest {
        snapshot_id: req.snapshot_id.to_owned(),
        seed: req.seed,
        formats: req.formats.to_vec(),
        sft: SftCounts {
            conflicting,
            irrelevant: req.sft.len() - conflicting,
            total: req.sft.len(),
        },
        dpo_pairs: PairCounts::of(req.pairs),
        balance: req.balance.clone(),
        trainer,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    jsonl::write_json(&path, &manifest)?;
    written.push(path);
    Ok(manifest)
}

/// Reads a `dpo_pairs` export back into preference pairs.
pub fn import_dpo_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let records: Vec<DpoRecord> = jsonl::read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let parse = |text: &str| {
                RenderedResponse::parse(text).ok_or_else(|| Error::Schema {
                    path: path.to_owned(),
                    line: i + 1,
                    message: "response does not follow a known template".into(),
                })
            };
            Ok(PreferencePair {
                question_id: r.ids.question_id,
                context_ref: r.ids.context_ref,
                prompt: r.prompt,
                chosen: parse(&r.chosen)?,
                rejected: parse(&r.rejected)?,
                pair_type: r.pair_type,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextAudit, ContextGolds};

    #[test]
    fn adherent_template_matches_gold_row() {
        let r = render("the Democratic candidate is Kamala Harris.", Template::Adherent).unwrap();
        assert_eq!(
            r.text,
            "Based on supplemental knowledge and my own understanding, the answer to this question is that the Democratic candidate is Kamala Harris."
        );
        assert_eq!(r.token_length, 21);
    }

    #[test]
    fn robust_template_matches_gold_row() {
        let r = render("the Democratic candidate is Joe Biden.", Template::Robust).unwrap();
        assert_eq!(
            r.text,
            "Supplemental knowledge does not answer this question, but based on my knowledge, the answer to this question is that the Democratic candidate is Joe Biden."
        );
    }

    #[test]
    fn empty_core_rejected() {
        assert!(render(" ", Template::Adherent).is_err());
    }

    #[test]
    fn parse_inverts_render() {
        let r = render("Lyon", Template::Robust).unwrap();
        assert_eq!(RenderedResponse::parse(&r.text), Some(r));
        assert_eq!(RenderedResponse::parse("free text"), None);
    }

    #[test]
    fn balance_downsamples_larger_class() {
        assert_eq!(balance_counts(1000, 800, 1.0).unwrap(), (800, 800));
        assert_eq!(balance_counts(29, 21, 5.0).unwrap(), (29, 6));
        assert_eq!(balance_counts(29, 21, 0.2).unwrap(), (4, 21));
        assert_eq!(balance_counts(0, 0, 1.0).unwrap(), (0, 0));
    }

    #[test]
    fn unreachable_ratio_names_bounds() {
        match balance_counts(20, 15, 1000.0) {
            Err(Error::UnreachableRatio { max_ratio, min_ratio, .. }) => {
                assert_eq!(max_ratio, 20.0);
                assert!((min_ratio - 1.0 / 15.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(balance_counts(5, 0, 1.0).is_err());
    }

    fn pair(win_core: &str, loss_core: &str) -> PreferencePair {
        PreferencePair {
            question_id: "q".into(),
            context_ref: "q:conflicting".into(),
            prompt: "p".into(),
            chosen: render(win_core, Template::Adherent).unwrap(),
            rejected: render(loss_core, Template::Adherent).unwrap(),
            pair_type: PairType::CfOverinclusion,
        }
    }

    #[test]
    fn length_alignment_flags_hand_computed_gap() {
        // win: 15 prefix + 10 core = 25 tokens; loss: 15 + 3 = 18; gap = 7/25 = 0.28.
        let p = pair("a b c d e f g h i j", "x y z");
        let la = check_length_alignment(&[p], 0.05);
        assert_eq!(la.mean_len_win, 25.0);
        assert_eq!(la.mean_len_loss, 18.0);
        assert!((la.relative_gap - 0.28).abs() < 1e-12);
        assert!(la.flagged);
    }

    #[test]
    fn symmetric_lengths_are_not_flagged() {
        let la = check_length_alignment(&[pair("Alice", "Bob")], 0.05);
        assert_eq!(la.relative_gap, 0.0);
        assert!(!la.flagged);
        assert!(check_length_alignment(&[pair("Alice Smith", "Bob")], 0.0).flagged);
        assert!(!check_length_alignment(&[], 0.0).flagged);
    }

    fn ctx(qid: &str, kind: ContextKind) -> ContextPackage {
        ContextPackage {
            question_id: qid.into(),
            context_ref: crate::context::context_ref(qid, kind),
            kind,
            title: "T".into(),
            question: format!("question {qid}?"),
            docs: vec![],
            evidence_position: None,
            shuffle_seed: 0,
            audit: ContextAudit {
                canonical_order: vec![],
                roles: vec![],
            },
            golds: ContextGolds {
                conflict: (kind == ContextKind::Conflicting).then(|| format!("cf-{qid}")),
                alpha: Some(format!("alpha-{qid}")),
                ..ContextGolds::default()
            },
        }
    }

    fn neg(qid: &str, kind: ContextKind, ty: ErrorType) -> NegativeSample {
        NegativeSample {
            question_id: qid.into(),
            context_ref: crate::context::context_ref(qid, kind),
            error_type: ty,
            answer_text: match ty {
                ErrorType::Ignorance => format!("alpha-{qid}"),
                ErrorType::Overinclusion => format!("wrong-{qid}"),
            },
            potential_answer: String::new(),
            audit: None,
        }
    }

    fn corpus(n_ign: usize, n_ovr: usize) -> (Vec<ContextPackage>, Vec<NegativeSample>) {
        let mut contexts = Vec::new();
        let mut negatives = Vec::new();
        for i in 0..n_ign {
            let q = format!("c{i:05}");
            contexts.push(ctx(&q, ContextKind::Conflicting));
            negatives.push(neg(&q, ContextKind::Conflicting, ErrorType::Ignorance));
            negatives.push(neg(&q, ContextKind::Conflicting, ErrorType::Overinclusion));
        }
        for i in 0..n_ovr {
            let q = format!("i{i:05}");
            contexts.push(ctx(&q, ContextKind::Irrelevant));
            negatives.push(neg(&q, ContextKind::Irrelevant, ErrorType::Overinclusion));
        }
        (contexts, negatives)
    }

    #[test]
    fn counting_oracle_thousand_vs_eight_hundred() {
        let (contexts, negatives) = corpus(1000, 800);
        let (pairs, report) = assemble_pairs(&contexts, &negatives, &AssemblyConfig::default()).unwrap();
        assert_eq!(report.counts.cf_ignorance, 800);
        assert_eq!(report.counts.ir_overinclusion, 800);
        assert_eq!(report.counts.cf_overinclusion, 1000);
        assert_eq!(report.realized_ratio, Some(1.0));
        assert_eq!(pairs.len(), 2600);
    }

    #[test]
    fn empty_input_gives_empty_report() {
        let (pairs, report) = assemble_pairs(&[], &[], &AssemblyConfig::default()).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(report.counts, PairCounts::default());
        assert_eq!(report.realized_ratio, None);
    }

    #[test]
    fn pair_invariants_hold() {
        let (contexts, negatives) = corpus(10, 10);
        let (pairs, _) = assemble_pairs(&contexts, &negatives, &AssemblyConfig::default()).unwrap();
        for p in &pairs {
            assert_ne!(normalize_answer(&p.chosen.answer_core), normalize_answer(&p.rejected.answer_core));
            assert!(p.prompt.contains("utilizing any supplemental knowledge provided"));
            let (c, r) = match p.pair_type {
                PairType::CfOverinclusion => (Template::Adherent, Template::Adherent),
                PairType::CfIgnorance => (Template::Adherent, Template::Robust),
                PairType::IrOverinclusion => (Template::Robust, Template::Adherent),
            };
            assert_eq!((p.chosen.template, p.rejected.template), (c, r));
        }
    }

    #[test]
    fn subsampling_is_seeded() {
        let (contexts, negatives) = corpus(30, 10);
        let cfg = AssemblyConfig::default();
        let a = assemble_pairs(&contexts, &negatives, &cfg).unwrap().0;
        let b = assemble_pairs(&contexts, &negatives, &cfg).unwrap().0;
        assert_eq!(a, b);
        let c = assemble_pairs(&contexts, &negatives, &AssemblyConfig { seed: 7, ..cfg }).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn export_round_trip_and_determinism() {
        let (contexts, negatives) = corpus(6, 4);
        let (pairs, report) = assemble_pairs(&contexts, &negatives, &AssemblyConfig::default()).unwrap();
        let sft = sft_examples(&contexts).unwrap();
        let req = ExportRequest {
            pairs: &pairs,
            sft: &sft,
            balance: &report,
            formats: &[ExportFormat::DpoPairs, ExportFormat::SftChat],
            snapshot_id: "snap",
            seed: 42,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = export_training(&req, d1.path()).unwrap();
        let m2 = export_training(&req, d2.path()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.sft.total, 10);
        for f in [DPO_FILE, SFT_FILE, TRAINER_FILE, MANIFEST_FILE] {
            assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap());
        }
        let mut back = import_dpo_pairs(&d1.path().join(DPO_FILE)).unwrap();
        let mut orig = pairs.clone();
        back.sort_by(|a, b| a.context_ref.cmp(&b.context_ref).then(a.pair_type.cmp(&b.pair_type)));
        orig.sort_by(|a, b| a.context_ref.cmp(&b.context_ref).then(a.pair_type.cmp(&b.pair_type)));
        assert_eq!(back, orig);
        let trainer = std::fs::read_to_string(d1.path().join(TRAINER_FILE)).unwrap();
        assert!(trainer.contains("dpo.learning_rate = 5e-6"));
        assert!(trainer.contains("sft.learning_rate = 1e-5"));
    }

    #[test]
    fn sft_chat_messages_reassemble_prompt() {
        let contexts = vec![ctx("q", ContextKind::Irrelevant)];
        let sft = sft_examples(&contexts).unwrap();
        let rec = sft_record(&sft[0], "s");
        assert_eq!(format!("{}\n\n{}", rec.messages[0].content, rec.messages[1].content), sft[0].prompt);
        assert_eq!(rec.messages[2].content, sft[0].target.text);
        assert_eq!(sft[0].target.template, Template::Robust);
    }

    #[test]
    fn failed_export_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        // A directory squatting on the manifest path makes the final write fail.
        std::fs::create_dir(dir.path().join(MANIFEST_FILE)).unwrap();
        std::fs::write(dir.path().join(format!("{MANIFEST_FILE}.partial")), b"").ok();
        let report = assemble_pairs(&[], &[], &AssemblyConfig::default()).unwrap().1;
        let req = ExportRequest {
            pairs: &[],
            sft: &[],
            balance: &report,
            formats: &[ExportFormat::DpoPairs],
            snapshot_id: "s",
            seed: 1,
        };
        assert!(export_training(&req, dir.path()).is_err());
        assert!(!dir.path().join(DPO_FILE).exists());
        assert!(!dir.path().join(TRAINER_FILE).exists());
    }

    proptest::proptest! {
        #[test]
        fn realized_ratio_is_rounding_of_target(ign in 1usize..400, ovr in 1usize..400, t_idx in 0usize..7) {
            let target = [0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0][t_idx];
            if let Ok((a, b)) = balance_counts(ign, ovr, target) {
                proptest::prop_assert!(a <= ign && b <= ovr);
                proptest::prop_assert!(a == (target * b as f64).round() as usize || b == (a as f64 / target).round() as usize);
                proptest::prop_assert!(a == ign || b == ovr);
            }
        }
    }
}
