//! Command implementations: build, sweep-ratio, evaluate, leakage and stats. Each
//! LLM-backed stage writes its output under `out/stages/<stage>/<key>.jsonl`, where the
//! key hashes the stage's configuration and upstream outputs, and is skipped when
//! that file already exists.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SimilarityKind, Stage};
use crate::context::{ContextAudit, ContextBuilder, ContextKind, ContextPackage};
use crate::corpus::{ingest_corpus, CorpusSnapshot, EmbeddingCosine, QuestionRecord, SimilarityScorer, TermOverlapCosine};
use crate::error::{Error, Result};
use crate::eval::{self, LeakageReport, MetricsReport, ModelOutput, Quarantined};
use crate::forge::{self, ConflictAnswer, ForgeError, GenerationAudit};
use crate::gateway::{backend_from_spec, Gateway};
use crate::jsonl;
use crate::negatives::{self, ErrorType, NegativeError, NegativeSample};
use crate::pairs::{self, BalanceReport, ExportManifest, ExportRequest};
use crate::probe::{self, ParameterAnswer};
use crate::text::{derive_seed, sha256_hex};

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock(PathBuf);

impl RunLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(out.to_owned())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// One gateway per distinct backend spec, each with its own on-disk response cache.
pub struct Gateways {
    config: RunConfig,
    cache_dir: Option<PathBuf>,
    open: Mutex<HashMap<String, Arc<Gateway>>>,
}

impl Gateways {
    pub fn new(config: &RunConfig, cache_dir: Option<PathBuf>) -> Self {
        Gateways {
            config: config.clone(),
            cache_dir,
            open: Mutex::default(),
        }
    }

    pub fn for_stage(&self, stage: Stage) -> Result<Arc<Gateway>> {
        let spec = self.config.backend_for(stage).to_owned();
        let mut open = self.open.lock().expect("gateway registry poisoned");
        if let Some(g) = open.get(&spec) {
            return Ok(g.clone());
        }
        let cache = self
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("llm_cache-{}.jsonl", &sha256_hex(&spec)[..12])));
        let g = Arc::new(Gateway::new(backend_from_spec(&spec)?, self.config.gateway_config(cache))?);
        open.insert(spec, g.clone());
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub output_sha256: String,
    pub records: usize,
    pub quarantined: usize,
}

struct StageOutput<T> {
    records: Vec<T>,
    quarantine: Vec<Quarantined>,
    record: StageRecord,
    cached: bool,
}

fn stage_key(parts: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_vec(parts).expect("stage key serializes"))[..32].to_owned()
}

fn run_stage<T, F>(out: &Path, stage: &str, key: &str, compute: F) -> Result<StageOutput<T>>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<(Vec<T>, Vec<Quarantined>)>,
{
    let dir = out.join("stages").join(stage);
    let main = dir.join(format!("{key}.jsonl"));
    let qpath = dir.join(format!("{key}.quarantine.jsonl"));
    let cached = main.exists() && qpath.exists();
    if !cached {
        let (records, quarantine) = compute()?;
        jsonl::write_jsonl(&qpath, &quarantine)?;
        jsonl::write_jsonl(&main, &records)?;
    } else {
        log::info!("stage {stage}: reusing {}", main.display());
    }
    let bytes = fs::read(&main).map_err(|e| Error::io(&main, e))?;
    let records: Vec<T> = jsonl::read_jsonl(&main)?;
    let quarantine: Vec<Quarantined> = jsonl::read_jsonl(&qpath)?;
    Ok(StageOutput {
        record: StageRecord {
            stage: stage.to_owned(),
            key: key.to_owned(),
            output_sha256: sha256_hex(&bytes),
            records: records.len(),
            quarantined: quarantine.len(),
        },
        records,
        quarantine,
        cached,
    })
}

fn check_quarantine(stage: &str, quarantined: usize, total: usize, threshold: f64) -> Result<()> {
    if total > 0 && quarantined as f64 / total as f64 > threshold {
        return Err(Error::QuarantineExceeded {
            stage: stage.to_owned(),
            quarantined,
            total,
            threshold,
        });
    }
    Ok(())
}

fn quarantine(id: &str, stage: &str, message: impl ToString) -> Quarantined {
    Quarantined {
        id: id.to_owned(),
        stage: stage.to_owned(),
        message: message.to_string(),
    }
}

/// Loads a persisted snapshot directory or ingests a corpus file.
pub fn load_corpus(config: &RunConfig) -> Result<CorpusSnapshot> {
    let path = config
        .corpus
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus configured (set `corpus` or pass --corpus)".into()))?;
    if path.is_dir() {
        CorpusSnapshot::load(path)
    } else {
        ingest_corpus(path, config.corpus_format)
    }
}

/// Routes a question to a regime. Questions eligible for both are split by a seeded
/// per-question draw against `conflicting_fraction`.
pub fn assign_regime(question_id: &str, seed: u64, conflicting_fraction: f64, conflicting_ok: bool, irrelevant_ok: bool) -> Option<ContextKind> {
    match (conflicting_ok, irrelevant_ok) {
        (true, true) => {
            let u = (derive_seed(seed, &[question_id, "regime"]) >> 11) as f64 / (1u64 << 53) as f64;
            Some(if u < conflicting_fraction { ContextKind::Conflicting } else { ContextKind::Irrelevant })
        }
        (true, false) => Some(ContextKind::Conflicting),
        (false, true) => Some(ContextKind::Irrelevant),
        (false, false) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub context_ref: String,
    pub kind: ContextKind,
    pub context: ContextAudit,
    pub conflict: Option<GenerationAudit>,
    pub negatives: Vec<(ErrorType, Option<GenerationAudit>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub name: String,
    pub conflicting: usize,
    pub irrelevant: usize,
}

impl StatsRow {
    pub fn total(&self) -> usize {
        self.conflicting + self.irrelevant
    }
}

pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn render_stats(rows: &[StatsRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Dataset".len());
    let mut s = format!("{:<width$}  {:>11}  {:>10}  {:>8}\n", "Dataset", "Conflicting", "Irrelevant", "Total");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>11}  {:>10}  {:>8}",
            r.name,
            thousands(r.conflicting),
            thousands(r.irrelevant),
            thousands(r.total())
        );
    }
    s
}

#[derive(Deserialize)]
struct KindOnly {
    kind: ContextKind,
}

/// Counts conflicting and irrelevant contexts in a dataset directory or contexts file.
pub fn dataset_stats(path: &Path) -> Result<StatsRow> {
    let file = if path.is_dir() { path.join("contexts.jsonl") } else { path.to_owned() };
    let kinds: Vec<KindOnly> = jsonl::read_jsonl(&file)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().trim_end_matches(".jsonl").to_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(StatsRow {
        name,
        conflicting: kinds.iter().filter(|k| k.kind == ContextKind::Conflicting).count(),
        irrelevant: kinds.iter().filter(|k| k.kind == ContextKind::Irrelevant).count(),
    })
}

pub fn cmd_stats(paths: &[PathBuf]) -> Result<Vec<StatsRow>> {
    paths.iter().map(|p| dataset_stats(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub snapshot_id: String,
    pub backends: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub files: BTreeMap<String, String>,
}

/// Everything up to (not including) pair assembly.
pub struct Prepared {
    pub snapshot: CorpusSnapshot,
    pub answers: Vec<ParameterAnswer>,
    pub conflicts: Vec<ConflictAnswer>,
    pub contexts: Vec<ContextPackage>,
    pub negatives: Vec<NegativeSample>,
    pub quarantine: Vec<Quarantined>,
    pub stages: Vec<StageRecord>,
    /// Stage names whose output was reused from an earlier run.
    pub reused: Vec<String>,
    pub backends: BTreeMap<String, String>,
}

fn make_scorer(config: &RunConfig, gateways: &Gateways) -> Result<Box<dyn SimilarityScorer>> {
    Ok(match config.similarity {
        SimilarityKind::TermOverlap => Box::new(TermOverlapCosine::new()),
        SimilarityKind::Embedding => Box::new(EmbeddingCosine::new(gateways.for_stage(Stage::Negatives)?)),
    })
}

/// Runs ingest, probe, forge, contexts and negatives, reusing stage outputs in `out`.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let out = &config.out;
    let snapshot = load_corpus(config)?;
    let snap_dir = out.join("snapshot");
    if !snap_dir.join("manifest.json").exists() || CorpusSnapshot::load(&snap_dir).map(|s| s.snapshot_id() != snapshot.snapshot_id()).unwrap_or(true) {
        snapshot.persist(&snap_dir)?;
    }
    let gateways = Gateways::new(config, Some(out.join("cache")));
    let threshold = config.quarantine_threshold;
    let par = config.max_in_flight;
    let mut backends = BTreeMap::new();
    let mut stages = Vec::new();
    let mut reused = Vec::new();
    let mut all_quarantine = Vec::new();

    // probe
    let gw = gateways.for_stage(Stage::Probe)?;
    backends.insert("probe".to_owned(), gw.backend_id().to_owned());
    let probe_cfg = config.probe_config();
    let key = stage_key(&serde_json::json!({
        "stage": "probe", "snapshot": snapshot.snapshot_id(), "backend": gw.backend_id(),
        "conditioning": config.prior_conditioning, "refusals": probe_cfg.refusal_phrases,
    }));
    let questions = snapshot.questions();
    let probed = run_stage(out, "probe", &key, || {
        let results = crate::fan_out(questions, par, |q| probe::probe(q, &gw, &probe_cfg));
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        for (q, r) in questions.iter().zip(results) {
            match r {
                Ok(a) => ok.push(a),
                Err(e) => bad.push(quarantine(&q.question_id, "probe", e)),
            }
        }
        Ok((ok, bad))
    })?;
    check_quarantine("probe", probed.quarantine.len(), questions.len(), threshold)?;
    let answers: Vec<ParameterAnswer> = probed.records;
    finish(&mut stages, &mut reused, &mut all_quarantine, probed.record, probed.cached, probed.quarantine);

    // forge
    let gw = gateways.for_stage(Stage::Forge)?;
    backends.insert("forge".to_owned(), gw.backend_id().to_owned());
    let policy = config.retry_policy();
    let key = stage_key(&serde_json::json!({
        "stage": "forge", "upstream": stages[0].output_sha256, "backend": gw.backend_id(),
        "candidates": policy.candidates, "max_temperature": policy.max_temperature,
    }));
    let forged = run_stage(out, "forge", &key, || {
        let results = crate::fan_out(&answers, par, |a| {
            let q = snapshot.question(&a.question_id).expect("probed question exists");
            forge::forge(q, a, &gw, &policy)
        });
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        for (a, r) in answers.iter().zip(results) {
            match r {
                Ok(c) => ok.push(c),
                Err(ForgeError::Exhausted(e)) => bad.push(quarantine(&a.question_id, "forge", e)),
                Err(ForgeError::Other(e)) => bad.push(quarantine(&a.question_id, "forge", e)),
            }
        }
        Ok((ok, bad))
    })?;
    check_quarantine("forge", forged.quarantine.len(), answers.len(), threshold)?;
    let conflicts: Vec<ConflictAnswer> = forged.records;
    finish(&mut stages, &mut reused, &mut all_quarantine, forged.record, forged.cached, forged.quarantine);

    // contexts
    let scorer = make_scorer(config, &gateways)?;
    let ctx_cfg = config.context_config();
    let key = stage_key(&serde_json::json!({
        "stage": "contexts", "probe": stages[0].output_sha256, "forge": stages[1].output_sha256,
        "k": ctx_cfg.k, "easy": ctx_cfg.easy_selection, "hard_fallback": ctx_cfg.hard_fallback,
        "similarity": config.similarity, "seed": config.seed, "fraction": config.conflicting_fraction,
    }));
    let alpha_by_q: HashMap<&str, &ParameterAnswer> = answers.iter().map(|a| (a.question_id.as_str(), a)).collect();
    let conflict_by_q: HashMap<&str, &ConflictAnswer> = conflicts.iter().map(|c| (c.question_id.as_str(), c)).collect();
    let builder = ContextBuilder::new(&snapshot, scorer.as_ref(), ctx_cfg.clone())?;
    let routed: Vec<(&QuestionRecord, ContextKind)> = answers
        .iter()
        .filter_map(|a| {
            let q = snapshot.question(&a.question_id)?;
            let conflicting_ok = conflict_by_q.contains_key(q.question_id.as_str()) && q.evidence_doc_id.is_some();
            let hard = q.annotated_unanswerable().filter(|d| snapshot.document(d).is_some()).count();
            let irrelevant_ok = !a.abstained && (hard >= ctx_cfg.irrelevant_split().0 || ctx_cfg.hard_fallback);
            assign_regime(&q.question_id, config.seed, config.conflicting_fraction, conflicting_ok, irrelevant_ok).map(|k| (q, k))
        })
        .collect();
    let built = run_stage(out, "contexts", &key, || {
        let results = crate::fan_out(&routed, par, |(q, kind)| {
            let alpha = alpha_by_q[q.question_id.as_str()];
            match kind {
                ContextKind::Conflicting => builder.build_conflicting(q, conflict_by_q[q.question_id.as_str()], Some(alpha), config.seed),
                ContextKind::Irrelevant => builder.build_irrelevant(q, alpha, config.seed),
            }
        });
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        for ((q, kind), r) in routed.iter().zip(results) {
            match r {
                Ok(c) => ok.push(c),
                Err(e) => bad.push(quarantine(&crate::context::context_ref(&q.question_id, *kind), "contexts", e)),
            }
        }
        ok.sort_by(|a: &ContextPackage, b| a.context_ref.cmp(&b.context_ref));
        Ok((ok, bad))
    })?;
    check_quarantine("contexts", built.quarantine.len(), routed.len(), threshold)?;
    let contexts: Vec<ContextPackage> = built.records;
    finish(&mut stages, &mut reused, &mut all_quarantine, built.record, built.cached, built.quarantine);

    // negatives
    let gw = gateways.for_stage(Stage::Negatives)?;
    backends.insert("negatives".to_owned(), gw.backend_id().to_owned());
    let key = stage_key(&serde_json::json!({
        "stage": "negatives", "contexts": stages[2].output_sha256, "probe": stages[0].output_sha256,
        "backend": gw.backend_id(), "candidates": policy.candidates, "max_temperature": policy.max_temperature,
    }));
    let mut tasks: Vec<(&ContextPackage, ErrorType)> = Vec::new();
    for c in &contexts {
        tasks.push((c, ErrorType::Overinclusion));
        if c.kind == ContextKind::Conflicting {
            tasks.push((c, ErrorType::Ignorance));
        }
    }
    let sampled = run_stage(out, "negatives", &key, || {
        let results = crate::fan_out(&tasks, par, |(c, ty)| -> std::result::Result<Option<NegativeSample>, NegativeError> {
            let q = snapshot.question(&c.question_id).expect("context question exists");
            let alpha = alpha_by_q[c.question_id.as_str()];
            match (ty, c.kind) {
                (ErrorType::Ignorance, _) => Ok(negatives::sample_ignorance(q, c, alpha)?),
                (ErrorType::Overinclusion, ContextKind::Conflicting) => {
                    let potential = c.golds.conflict.as_deref().unwrap_or_default();
                    negatives::sample_overinclusion(q, c, potential, &gw, &policy).map(Some)
                }
                (ErrorType::Overinclusion, ContextKind::Irrelevant) => {
                    negatives::sample_overinclusion(q, c, &alpha.alpha_text, &gw, &policy).map(Some)
                }
            }
        });
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        for ((c, ty), r) in tasks.iter().zip(results) {
            let id = format!("{}:{}", c.context_ref, if *ty == ErrorType::Ignorance { "ignorance" } else { "overinclusion" });
            match r {
                Ok(Some(n)) => ok.push(n),
                Ok(None) => {}
                Err(NegativeError::Exhausted(e)) => bad.push(quarantine(&id, "negatives", e)),
                Err(NegativeError::Other(e)) => bad.push(quarantine(&id, "negatives", e)),
            }
        }
        Ok((ok, bad))
    })?;
    check_quarantine("negatives", sampled.quarantine.len(), tasks.len(), threshold)?;
    let negatives: Vec<NegativeSample> = sampled.records;
    finish(&mut stages, &mut reused, &mut all_quarantine, sampled.record, sampled.cached, sampled.quarantine);

    Ok(Prepared {
        snapshot,
        answers,
        conflicts,
        contexts,
        negatives,
        quarantine: all_quarantine,
        stages,
        reused,
        backends,
    })
}

fn finish(
    stages: &mut Vec<StageRecord>,
    reused: &mut Vec<String>,
    all: &mut Vec<Quarantined>,
    record: StageRecord,
    cached: bool,
    quarantine: Vec<Quarantined>,
) {
    if cached {
        reused.push(record.stage.clone());
    }
    stages.push(record);
    all.extend(quarantine);
}

fn audit_sample(prepared: &Prepared, n: usize, seed: u64) -> Vec<AuditRecord> {
    let mut idx: Vec<usize> = (0..prepared.contexts.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["audit"])));
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| {
            let c = &prepared.contexts[i];
            AuditRecord {
                context_ref: c.context_ref.clone(),
                kind: c.kind,
                context: c.audit.clone(),
                conflict: prepared
                    .conflicts
                    .iter()
                    .find(|x| x.question_id == c.question_id && c.kind == ContextKind::Conflicting)
                    .and_then(|x| x.audit.clone()),
                negatives: prepared
                    .negatives
                    .iter()
                    .filter(|n| n.context_ref == c.context_ref)
                    .map(|n| (n.error_type, n.audit.clone()))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub manifest: RunManifest,
    pub export: ExportManifest,
    pub balance: BalanceReport,
    pub stats: StatsRow,
    pub reused: Vec<String>,
}

impl BuildOutcome {
    pub fn summary(&self) -> String {
        let b = &self.balance;
        let mut s = render_stats(std::slice::from_ref(&self.stats));
        let _ = writeln!(s, "\npairs: cf_overinclusion={} cf_ignorance={} ir_overinclusion={}", b.counts.cf_overinclusion, b.counts.cf_ignorance, b.counts.ir_overinclusion);
        let _ = writeln!(
            s,
            "available: cf_overinclusion={} cf_ignorance={} ir_overinclusion={}",
            b.available.cf_overinclusion, b.available.cf_ignorance, b.available.ir_overinclusion
        );
        let _ = writeln!(
            s,
            "R_error target={} realized={}",
            b.target_ratio,
            b.realized_ratio.map_or_else(|| "absent".into(), |r| format!("{r:.4}"))
        );
        let _ = writeln!(
            s,
            "length: mean_win={:.3} mean_loss={:.3} relative_gap={:.4} tolerance={} {}",
            b.length.mean_len_win,
            b.length.mean_len_loss,
            b.length.relative_gap,
            b.length.tolerance,
            if b.length.flagged { "FLAGGED" } else { "ok" }
        );
        s
    }
}

fn copy_file(from: &Path, to: &Path) -> Result<String> {
    let bytes = fs::read(from).map_err(|e| Error::io(from, e))?;
    jsonl::write_atomic(to, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn cmd_build(config: &RunConfig) -> Result<BuildOutcome> {
    let _lock = RunLock::acquire(&config.out)?;
    let out = &config.out;
    let prepared = prepare(config)?;

    let (pairs_v, balance) = pairs::assemble_pairs(&prepared.contexts, &prepared.negatives, &config.assembly_config())?;
    let sft = pairs::sft_examples(&prepared.contexts)?;
    let export = pairs::export_training(
        &ExportRequest {
            pairs: &pairs_v,
            sft: &sft,
            balance: &balance,
            formats: &config.export_formats,
            snapshot_id: prepared.snapshot.snapshot_id(),
            seed: config.seed,
        },
        &out.join("export"),
    )?;

    let mut files = BTreeMap::new();
    for (stage, name) in ["probe", "forge", "contexts", "negatives"]
        .iter()
        .zip(["parameter_answers.jsonl", "conflicts.jsonl", "contexts.jsonl", "negatives.jsonl"])
    {
        let rec = prepared.stages.iter().find(|s| s.stage == *stage).expect("stage ran");
        let src = out.join("stages").join(stage).join(format!("{}.jsonl", rec.key));
        files.insert(name.to_owned(), copy_file(&src, &out.join(name))?);
    }
    let qbytes = jsonl::to_lines(&prepared.quarantine)?;
    jsonl::write_atomic(&out.join("quarantine.jsonl"), qbytes.as_bytes())?;
    files.insert("quarantine.jsonl".into(), sha256_hex(&qbytes));
    let audits = jsonl::to_lines(&audit_sample(&prepared, config.audit_sample, config.seed))?;
    jsonl::write_atomic(&out.join("audit_sample.jsonl"), audits.as_bytes())?;
    files.insert("audit_sample.jsonl".into(), sha256_hex(&audits));
    for (name, sha) in &export.files {
        files.insert(format!("export/{name}"), sha.clone());
    }

    let stats = StatsRow {
        name: "dataset".into(),
        conflicting: prepared.contexts.iter().filter(|c| c.kind == ContextKind::Conflicting).count(),
        irrelevant: prepared.contexts.iter().filter(|c| c.kind == ContextKind::Irrelevant).count(),
    };
    let manifest = RunManifest {
        command: "build".into(),
        config: config.clone(),
        seed: config.seed,
        snapshot_id: prepared.snapshot.snapshot_id().to_owned(),
        backends: prepared.backends.clone(),
        stages: prepared.stages.clone(),
        files,
    };
    let outcome = BuildOutcome {
        manifest,
        export,
        balance,
        stats,
        reused: prepared.reused,
    };
    jsonl::write_atomic(&out.join("stats.txt"), outcome.summary().as_bytes())?;
    jsonl::write_json(&out.join("manifest.json"), &outcome.manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub target: f64,
    pub realized: Option<f64>,
    pub cf_ignorance: usize,
    pub ir_overinclusion: usize,
    pub export_dir: Option<PathBuf>,
    pub error: Option<String>,
}

/// One balanced export per target ratio, reusing every cached stage.
pub fn cmd_sweep_ratio(config: &RunConfig, targets: &[f64]) -> Result<Vec<SweepEntry>> {
    let _lock = RunLock::acquire(&config.out)?;
    let prepared = prepare(config)?;
    let sft = pairs::sft_examples(&prepared.contexts)?;
    let mut entries = Vec::new();
    for &target in targets {
        let cfg = pairs::AssemblyConfig {
            r_error: target,
            ..config.assembly_config()
        };
        let dir = config.out.join("sweep").join(format!("r_error_{target}"));
        let result = pairs::assemble_pairs(&prepared.contexts, &prepared.negatives, &cfg).and_then(|(p, report)| {
            pairs::export_training(
                &ExportRequest {
                    pairs: &p,
                    sft: &sft,
                    balance: &report,
                    formats: &config.export_formats,
                    snapshot_id: prepared.snapshot.snapshot_id(),
                    seed: config.seed,
                },
                &dir,
            )
            .map(|_| report)
        });
        entries.push(match result {
            Ok(report) => SweepEntry {
                target,
                realized: report.realized_ratio,
                cf_ignorance: report.counts.cf_ignorance,
                ir_overinclusion: report.counts.ir_overinclusion,
                export_dir: Some(dir),
                error: None,
            },
            Err(e) => SweepEntry {
                target,
                realized: None,
                cf_ignorance: 0,
                ir_overinclusion: 0,
                export_dir: None,
                error: Some(e.to_string()),
            },
        });
    }
    jsonl::write_json(
        &config.out.join("sweep").join("manifest.json"),
        &serde_json::json!({
            "command": "sweep-ratio",
            "config": config,
            "snapshot_id": prepared.snapshot.snapshot_id(),
            "stages": prepared.stages,
            "entries": entries,
        }),
    )?;
    Ok(entries)
}

pub fn render_sweep(entries: &[SweepEntry]) -> String {
    let mut s = String::from("target  realized  cf_ignorance  ir_overinclusion  status\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{:<6}  {:>8}  {:>12}  {:>16}  {}",
            e.target,
            e.realized.map_or_else(|| "-".into(), |r| format!("{r:.4}")),
            e.cf_ignorance,
            e.ir_overinclusion,
            e.error.as_deref().unwrap_or("ok")
        );
    }
    s
}

/// Scores a model on a contexts file, from saved outputs or by generating live.
pub fn cmd_evaluate(config: &RunConfig, contexts_path: &Path, outputs_path: Option<&Path>) -> Result<MetricsReport> {
    let contexts: Vec<ContextPackage> = jsonl::read_jsonl(contexts_path)?;
    let (outputs, quarantined): (Vec<ModelOutput>, Vec<Quarantined>) = match outputs_path {
        Some(p) => {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "outputs file not found")));
            }
            (jsonl::read_jsonl(p)?, Vec::new())
        }
        None => {
            let gateways = Gateways::new(config, None);
            let gw = gateways.for_stage(Stage::Eval)?;
            eval::generate_outputs(&gw, &contexts)
        }
    };
    let judged = eval::judge_all(&contexts, &outputs);
    let agg = eval::aggregate(&judged.judgments, config.bootstrap_repeats, config.seed)?;
    let prior = match eval::prior_analysis(&judged.judgments, &eval::priors_from_contexts(&contexts), config.prior_bins) {
        Ok(p) => Some(p),
        Err(e @ (Error::Capability(_) | Error::Precondition(_))) => {
            log::warn!("prior analysis skipped: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let report = MetricsReport {
        r_ad: agg.r_ad,
        r_ro: agg.r_ro,
        n_conflicting: agg.n_conflicting,
        n_irrelevant: agg.n_irrelevant,
        skipped_missing_gold: judged.skipped_missing_gold,
        skipped_unknown_context: judged.skipped_unknown_context,
        quarantined: quarantined.len(),
        prior,
        leakage_rate: None,
        repeats: config.bootstrap_repeats,
        seed: config.seed,
    };
    let dir = config.out.join("eval");
    jsonl::write_atomic(&dir.join("metrics.txt"), report.to_kv().as_bytes())?;
    jsonl::write_atomic(&dir.join("metrics_table.txt"), report.to_table().as_bytes())?;
    jsonl::write_atomic(&dir.join("prior_bins.tsv"), report.prior_bins_tsv().as_bytes())?;
    jsonl::write_jsonl(&dir.join("judgments.jsonl"), &judged.judgments)?;
    if outputs_path.is_none() {
        jsonl::write_jsonl(&dir.join("outputs.jsonl"), &outputs)?;
        jsonl::write_jsonl(&dir.join("quarantine.jsonl"), &quarantined)?;
    }
    jsonl::write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({
            "command": "evaluate",
            "config": config,
            "contexts_sha256": sha256_hex(fs::read(contexts_path).map_err(|e| Error::io(contexts_path, e))?),
            "report": report,
        }),
    )?;
    Ok(report)
}

/// Re-probes the questions behind a built dataset's conflicting contexts without
/// context and reports how often the trained model now answers with a_cf.
pub fn cmd_leakage(config: &RunConfig, dataset: &Path) -> Result<LeakageReport> {
    let snapshot = CorpusSnapshot::load(&dataset.join("snapshot"))?;
    let contexts: Vec<ContextPackage> = jsonl::read_jsonl(&dataset.join("contexts.jsonl"))?;
    let trained: std::collections::HashSet<&str> = contexts
        .iter()
        .filter(|c| c.kind == ContextKind::Conflicting)
        .map(|c| c.question_id.as_str())
        .collect();
    let conflicts: Vec<ConflictAnswer> = jsonl::read_jsonl::<ConflictAnswer>(&dataset.join("conflicts.jsonl"))?
        .into_iter()
        .filter(|c| trained.contains(c.question_id.as_str()))
        .collect();
    let gateways = Gateways::new(config, None);
    let gw = gateways.for_stage(Stage::Leakage)?;
    let report = eval::leakage_check(&gw, snapshot.questions(), &conflicts)?;
    let dir = config.out.join("leakage");
    jsonl::write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({
            "command": "leakage",
            "config": config,
            "snapshot_id": snapshot.snapshot_id(),
            "backend": gw.backend_id(),
            "report": report,
        }),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(400), "400");
        assert_eq!(thousands(4000), "4,000");
        assert_eq!(thousands(18700), "18,700");
        assert_eq!(thousands(1234567), "1,234,567");
    }

    #[test]
    fn regime_assignment_respects_eligibility() {
        assert_eq!(assign_regime("q", 1, 0.5, true, false), Some(ContextKind::Conflicting));
        assert_eq!(assign_regime("q", 1, 0.5, false, true), Some(ContextKind::Irrelevant));
        assert_eq!(assign_regime("q", 1, 0.5, false, false), None);
        assert_eq!(assign_regime("q", 1, 1.0, true, true), Some(ContextKind::Conflicting));
        assert_eq!(assign_regime("q", 1, 0.0, true, true), Some(ContextKind::Irrelevant));
    }

    #[test]
    fn regime_split_tracks_fraction() {
        let n = (0..10_000).filter(|i| assign_regime(&format!("q{i}"), 3, 0.588, true, true) == Some(ContextKind::Conflicting)).count();
        assert!((5600..6200).contains(&n), "{n}");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }
}
