//! Adherence and robustness scoring, prior-probability stratification and the
//! knowledge-leakage check.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextGolds, ContextKind, ContextPackage};
use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::forge::ConflictAnswer;
use crate::gateway::{Gateway, GenerationRequest};
use crate::prompts;
use crate::text::{contains_answer, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub question_id: String,
    pub context_ref: String,
    pub response_text: String,
    #[serde(default)]
    pub mean_token_logprob: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Adherent,
    Robust,
    Wrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub question_id: String,
    pub context_ref: String,
    pub kind: ContextKind,
    pub verdict: Verdict,
    /// The gold the response matched; empty for `wrong`.
    pub matched_target: String,
}

/// Judges one response. `None` when the gold the context kind needs is missing.
///
/// Adherence is checked before robustness, so a response containing both a_cf and α
/// counts as adherent.
pub fn judge(output: &ModelOutput, golds: &ContextGolds, kind: ContextKind) -> Option<Judgment> {
    fn non_empty(g: &Option<String>) -> Option<&str> {
        g.as_deref().filter(|s| !s.trim().is_empty())
    }
    let conflict = non_empty(&golds.conflict);
    let alpha = non_empty(&golds.alpha);
    match kind {
        ContextKind::Conflicting if conflict.is_none() => return None,
        ContextKind::Irrelevant if alpha.is_none() => return None,
        _ => {}
    }
    let (verdict, matched) = if let Some(cf) = conflict.filter(|cf| contains_answer(&output.response_text, cf)) {
        (Verdict::Adherent, cf)
    } else if let Some(a) = alpha.filter(|a| contains_answer(&output.response_text, a)) {
        (Verdict::Robust, a)
    } else {
        (Verdict::Wrong, "")
    };
    Some(Judgment {
        question_id: output.question_id.clone(),
        context_ref: output.context_ref.clone(),
        kind,
        verdict,
        matched_target: matched.to_owned(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Judged {
    pub judgments: Vec<Judgment>,
    pub skipped_missing_gold: usize,
    pub skipped_unknown_context: usize,
}

/// Judges every output against the golds stored in its context. Judgments come back
/// sorted by context reference.
pub fn judge_all(contexts: &[ContextPackage], outputs: &[ModelOutput]) -> Judged {
    let by_ref: HashMap<&str, &ContextPackage> = contexts.iter().map(|c| (c.context_ref.as_str(), c)).collect();
    let mut judged = Judged::default();
    for output in outputs {
        match by_ref.get(output.context_ref.as_str()) {
            None => judged.skipped_unknown_context += 1,
            Some(ctx) => match judge(output, &ctx.golds, ctx.kind) {
                Some(j) => judged.judgments.push(j),
                None => judged.skipped_missing_gold += 1,
            },
        }
    }
    judged.judgments.sort_by(|a, b| a.context_ref.cmp(&b.context_ref));
    judged
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// Absent when fewer than two resamples or runs were requested.
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub r_ad: Option<MetricValue>,
    pub r_ro: Option<MetricValue>,
    pub n_conflicting: usize,
    pub n_irrelevant: usize,
}

fn hits(judgments: &[Judgment], kind: ContextKind, verdict: Verdict) -> Vec<bool> {
    judgments.iter().filter(|j| j.kind == kind).map(|j| j.verdict == verdict).collect()
}

/// Sample standard deviation (n - 1 denominator); `None` below two values.
fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Standard deviation of the hit rate over `repeats` seeded bootstrap resamples.
pub fn bootstrap_std(hits: &[bool], repeats: usize, seed: u64) -> Option<f64> {
    if hits.is_empty() || repeats < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = hits.len();
    let rates: Vec<f64> = (0..repeats)
        .map(|_| (0..n).filter(|_| hits[rng.gen_range(0..n)]).count() as f64 / n as f64)
        .collect();
    sample_std(&rates)
}

fn metric(hits: &[bool], repeats: usize, seed: u64) -> Option<MetricValue> {
    (!hits.is_empty()).then(|| MetricValue {
        value: hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64,
        std: bootstrap_std(hits, repeats, seed),
        n: hits.len(),
    })
}

pub fn aggregate(judgments: &[Judgment], repeats: usize, seed: u64) -> Result<Aggregate> {
    if judgments.is_empty() {
        return Err(Error::AbsentMetric("r_ad and r_ro"));
    }
    let ad = hits(judgments, ContextKind::Conflicting, Verdict::Adherent);
    let ro = hits(judgments, ContextKind::Irrelevant, Verdict::Robust);
    Ok(Aggregate {
        r_ad: metric(&ad, repeats, derive_seed(seed, &["bootstrap", "r_ad"])),
        r_ro: metric(&ro, repeats, derive_seed(seed, &["bootstrap", "r_ro"])),
        n_conflicting: ad.len(),
        n_irrelevant: ro.len(),
    })
}

/// Mean and spread across independent generation runs (e.g. sampled at a nonzero
/// temperature), as an alternative to bootstrapping a single run.
pub fn aggregate_runs(runs: &[Vec<Judgment>]) -> Result<Aggregate> {
    let per_run = runs
        .iter()
        .map(|r| aggregate(r, 0, 0))
        .collect::<Result<Vec<_>>>()?;
    let combine = |pick: fn(&Aggregate) -> Option<MetricValue>| {
        let values: Vec<f64> = per_run.iter().filter_map(|a| pick(a).map(|m| m.value)).collect();
        (!values.is_empty()).then(|| MetricValue {
            value: values.iter().sum::<f64>() / values.len() as f64,
            std: sample_std(&values),
            n: per_run.iter().filter_map(|a| pick(a).map(|m| m.n)).sum(),
        })
    };
    Ok(Aggregate {
        r_ad: combine(|a| a.r_ad),
        r_ro: combine(|a| a.r_ro),
        n_conflicting: per_run.iter().map(|a| a.n_conflicting).sum(),
        n_irrelevant: per_run.iter().map(|a| a.n_irrelevant).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub adherent: usize,
    /// Absent for empty bins.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAnalysis {
    pub bins: Vec<PriorBin>,
    /// Conflicting items whose prior was unavailable.
    pub missing: usize,
}

/// Adherence rate per equal-width bin of α's mean-token log probability, over the
/// observed range of conflicting-context items. The top edge belongs to the last bin.
pub fn prior_analysis(judgments: &[Judgment], priors: &BTreeMap<String, f64>, bins: usize) -> Result<PriorAnalysis> {
    if bins == 0 {
        return Err(Error::Precondition("at least one prior bin is required".into()));
    }
    let mut missing = 0;
    let mut points = Vec::new();
    for j in judgments.iter().filter(|j| j.kind == ContextKind::Conflicting) {
        match priors.get(&j.question_id) {
            Some(p) if p.is_finite() => points.push((*p, j.verdict == Verdict::Adherent)),
            _ => missing += 1,
        }
    }
    if points.is_empty() {
        return Err(Error::Capability(
            "no prior log probabilities available; use a backend that supports response scoring when probing".into(),
        ));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<PriorBin> = (0..bins)
        .map(|i| PriorBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
            adherent: 0,
            rate: None,
        })
        .collect();
    for (p, adherent) in points {
        let idx = if width > 0.0 { (((p - lo) / width) as usize).min(bins - 1) } else { 0 };
        out[idx].count += 1;
        out[idx].adherent += usize::from(adherent);
    }
    for b in &mut out {
        b.rate = (b.count > 0).then(|| b.adherent as f64 / b.count as f64);
    }
    Ok(PriorAnalysis { bins: out, missing })
}

/// Prior log probabilities keyed by question, taken from context golds.
pub fn priors_from_contexts(contexts: &[ContextPackage]) -> BTreeMap<String, f64> {
    contexts
        .iter()
        .filter_map(|c| c.golds.alpha_prior_logprob.map(|p| (c.question_id.clone(), p)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub id: String,
    pub stage: String,
    pub message: String,
}

/// Generates a response for every context through the gateway.
pub fn generate_outputs(gateway: &Gateway, contexts: &[ContextPackage]) -> (Vec<ModelOutput>, Vec<Quarantined>) {
    let requests: Vec<GenerationRequest> = contexts
        .iter()
        .map(|c| GenerationRequest::new(c.prompt(), format!("evaluate:{}", c.context_ref)))
        .collect();
    let mut outputs = Vec::new();
    let mut quarantined = Vec::new();
    for (ctx, res) in contexts.iter().zip(gateway.generate_many(&requests)) {
        match res {
            Ok(r) => outputs.push(ModelOutput {
                question_id: ctx.question_id.clone(),
                context_ref: ctx.context_ref.clone(),
                response_text: r.text,
                mean_token_logprob: r.mean_token_logprob,
            }),
            Err(e) => quarantined.push(Quarantined {
                id: ctx.context_ref.clone(),
                stage: "evaluate".into(),
                message: e.to_string(),
            }),
        }
    }
    (outputs, quarantined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Fraction of completed probes whose response contains a_cf; absent when none completed.
    pub rate: Option<f64>,
    pub matched: usize,
    pub completed: usize,
    pub quarantined: Vec<Quarantined>,
}

/// Re-asks each question without context and counts responses that contain the
/// conflicting answer the model was trained on.
pub fn leakage_check(gateway: &Gateway, questions: &[QuestionRecord], conflicts: &[ConflictAnswer]) -> Result<LeakageReport> {
    let by_id: HashMap<&str, &QuestionRecord> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let mut items = Vec::new();
    for c in conflicts {
        let q = by_id
            .get(c.question_id.as_str())
            .ok_or_else(|| Error::Precondition(format!("conflict answer for unknown question `{}`", c.question_id)))?;
        items.push((*q, c));
    }
    items.sort_by(|a, b| a.0.question_id.cmp(&b.0.question_id));
    let requests: Vec<GenerationRequest> = items
        .iter()
        .map(|(q, _)| GenerationRequest::new(prompts::parameter_answer(&q.title, &q.question), format!("leakage:{}", q.question_id)))
        .collect();
    let mut report = LeakageReport {
        rate: None,
        matched: 0,
        completed: 0,
        quarantined: Vec::new(),
    };
    for ((q, c), res) in items.iter().zip(gateway.generate_many(&requests)) {
        match res {
            Ok(r) => {
                report.completed += 1;
                report.matched += usize::from(contains_answer(&r.text, &c.text));
            }
            Err(e) => report.quarantined.push(Quarantined {
                id: q.question_id.clone(),
                stage: "leakage".into(),
                message: e.to_string(),
            }),
        }
    }
    report.rate = (report.completed > 0).then(|| report.matched as f64 / report.completed as f64);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_ad: Option<MetricValue>,
    pub r_ro: Option<MetricValue>,
    pub n_conflicting: usize,
    pub n_irrelevant: usize,
    pub skipped_missing_gold: usize,
    pub skipped_unknown_context: usize,
    pub quarantined: usize,
    pub prior: Option<PriorAnalysis>,
    pub leakage_rate: Option<f64>,
    pub repeats: usize,
    pub seed: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_owned(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (name, m) in [("r_ad", &self.r_ad), ("r_ro", &self.r_ro)] {
            let _ = writeln!(s, "{name}={}", opt(m.map(|m| m.value)));
            let _ = writeln!(s, "{name}_std={}", opt(m.and_then(|m| m.std)));
        }
        let _ = writeln!(s, "n_conflicting={}", self.n_conflicting);
        let _ = writeln!(s, "n_irrelevant={}", self.n_irrelevant);
        let _ = writeln!(s, "skipped_missing_gold={}", self.skipped_missing_gold);
        let _ = writeln!(s, "skipped_unknown_context={}", self.skipped_unknown_context);
        let _ = writeln!(s, "quarantined={}", self.quarantined);
        let _ = writeln!(s, "prior_missing={}", self.prior.as_ref().map_or(0, |p| p.missing));
        let _ = writeln!(s, "leakage_rate={}", opt(self.leakage_rate));
        let _ = writeln!(s, "bootstrap_repeats={}", self.repeats);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn to_table(&self) -> String {
        let cell = |m: &Option<MetricValue>| match m {
            None => "absent".to_owned(),
            Some(MetricValue { value, std: Some(sd), n }) => format!("{:.2} ± {:.2}  (n={n})", value * 100.0, sd * 100.0),
            Some(MetricValue { value, std: None, n }) => format!("{:.2}  (n={n})", value * 100.0),
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {}", "metric", "value (%)");
        let _ = writeln!(s, "{:<10} {}", "R_Ad", cell(&self.r_ad));
        let _ = writeln!(s, "{:<10} {}", "R_Ro", cell(&self.r_ro));
        if let Some(rate) = self.leakage_rate {
            let _ = writeln!(s, "{:<10} {:.2}", "leakage", rate * 100.0);
        }
        if let Some(prior) = &self.prior {
            let _ = writeln!(s, "\nprior interval              count  adherence");
            for b in &prior.bins {
                let _ = writeln!(s, "[{:>9.4}, {:>9.4}]  {:>6}  {}", b.lo, b.hi, b.count, opt(b.rate));
            }
        }
        s
    }

    /// Two columns, bin midpoint and adherence rate, ready for plotting.
    pub fn prior_bins_tsv(&self) -> String {
        let mut s = String::from("prior_logprob\tadherence_rate\n");
        for b in self.prior.iter().flat_map(|p| &p.bins) {
            if let Some(rate) = b.rate {
                let _ = writeln!(s, "{:.6}\t{:.6}", (b.lo + b.hi) / 2.0, rate);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golds(cf: Option<&str>, alpha: Option<&str>) -> ContextGolds {
        ContextGolds {
            conflict: cf.map(String::from),
            alpha: alpha.map(String::from),
            ..ContextGolds::default()
        }
    }

    fn out(text: &str) -> ModelOutput {
        ModelOutput {
            question_id: "q".into(),
            context_ref: "q:conflicting".into(),
            response_text: text.into(),
            mean_token_logprob: None,
        }
    }

    #[test]
    fn adherent_gold_row() {
        let j = judge(
            &out("Based on supplemental knowledge and my own understanding, the answer to this question is that the Democratic candidate is Kamala Harris."),
            &golds(Some("Kamala Harris"), Some("Joe Biden")),
            ContextKind::Conflicting,
        )
        .unwrap();
        assert_eq!(j.verdict, Verdict::Adherent);
        assert_eq!(j.matched_target, "Kamala Harris");
    }

    #[test]
    fn unrelated_answer_is_wrong() {
        let j = judge(&out("Mark Kelly"), &golds(Some("Kamala Harris"), Some("Joe Biden")), ContextKind::Conflicting).unwrap();
        assert_eq!(j.verdict, Verdict::Wrong);
    }

    #[test]
    fn exact_gold_and_precedence() {
        let g = golds(Some("Kamala Harris"), Some("Joe Biden"));
        assert_eq!(judge(&out("Joe Biden"), &g, ContextKind::Irrelevant).unwrap().verdict, Verdict::Robust);
        assert_eq!(judge(&out("Joe Biden or Kamala Harris"), &g, ContextKind::Conflicting).unwrap().verdict, Verdict::Adherent);
    }

    #[test]
    fn missing_gold_skips() {
        assert!(judge(&out("x"), &golds(None, Some("a")), ContextKind::Conflicting).is_none());
        assert!(judge(&out("x"), &golds(Some("a"), None), ContextKind::Irrelevant).is_none());
    }

    fn judgments(kind: ContextKind, verdicts: &[Verdict]) -> Vec<Judgment> {
        verdicts
            .iter()
            .enumerate()
            .map(|(i, v)| Judgment {
                question_id: format!("q{i:03}"),
                context_ref: format!("q{i:03}:{kind}"),
                kind,
                verdict: *v,
                matched_target: String::new(),
            })
            .collect()
    }

    fn n_of(n: usize, v: Verdict, rest: Verdict, total: usize) -> Vec<Verdict> {
        (0..total).map(|i| if i < n { v } else { rest }).collect()
    }

    #[test]
    fn hand_count_rates() {
        let mut js = judgments(ContextKind::Conflicting, &n_of(7, Verdict::Adherent, Verdict::Wrong, 10));
        let mut ir = judgments(ContextKind::Irrelevant, &n_of(3, Verdict::Robust, Verdict::Adherent, 10));
        for j in &mut ir {
            j.question_id.insert(0, 'i');
        }
        js.extend(ir);
        let a = aggregate(&js, 1000, 42).unwrap();
        assert_eq!(a.r_ad.unwrap().value, 0.7);
        assert_eq!(a.r_ro.unwrap().value, 0.3);
        assert_eq!((a.n_conflicting, a.n_irrelevant), (10, 10));
        assert_eq!(a, aggregate(&js, 1000, 42).unwrap());
    }

    #[test]
    fn degenerate_distribution_has_zero_std() {
        let js = judgments(ContextKind::Conflicting, &[Verdict::Adherent; 5]);
        let a = aggregate(&js, 200, 1).unwrap();
        assert_eq!(a.r_ad.unwrap().value, 1.0);
        assert_eq!(a.r_ad.unwrap().std, Some(0.0));
        assert_eq!(a.r_ro, None);
    }

    #[test]
    fn absent_std_and_metrics() {
        let js = judgments(ContextKind::Conflicting, &[Verdict::Adherent, Verdict::Wrong]);
        assert_eq!(aggregate(&js, 0, 1).unwrap().r_ad.unwrap().std, None);
        assert!(matches!(aggregate(&[], 10, 1), Err(Error::AbsentMetric(_))));
    }

    #[test]
    fn bootstrap_matches_independent_recomputation() {
        let hits_v = [true, true, false, true, false];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rates = Vec::new();
        for _ in 0..50 {
            let mut k = 0;
            for _ in 0..5 {
                if hits_v[rng.gen_range(0..5)] {
                    k += 1;
                }
            }
            rates.push(k as f64 / 5.0);
        }
        let mean = rates.iter().sum::<f64>() / 50.0;
        let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 49.0;
        assert_eq!(bootstrap_std(&hits_v, 50, 9), Some(var.sqrt()));
    }

    #[test]
    fn two_bin_prior_oracle() {
        let mut verdicts = n_of(9, Verdict::Adherent, Verdict::Wrong, 10);
        verdicts.extend(n_of(4, Verdict::Adherent, Verdict::Wrong, 10));
        let js = judgments(ContextKind::Conflicting, &verdicts);
        let priors: BTreeMap<String, f64> = js
            .iter()
            .enumerate()
            .map(|(i, j)| (j.question_id.clone(), if i < 10 { -3.0 + 0.1 * i as f64 } else { -1.0 + 0.1 * (i - 10) as f64 }))
            .collect();
        let p = prior_analysis(&js, &priors, 2).unwrap();
        assert_eq!(p.bins[0].rate, Some(0.9));
        assert_eq!(p.bins[1].rate, Some(0.4));
        assert_eq!(p.bins.iter().map(|b| b.count).sum::<usize>(), 20);
        let one = prior_analysis(&js, &priors, 1).unwrap();
        assert_eq!(one.bins[0].rate, aggregate(&js, 0, 0).unwrap().r_ad.map(|m| m.value));
    }

    #[test]
    fn missing_priors_are_a_capability_error() {
        let js = judgments(ContextKind::Conflicting, &[Verdict::Adherent]);
        assert!(matches!(prior_analysis(&js, &BTreeMap::new(), 5), Err(Error::Capability(_))));
    }

    #[test]
    fn run_mode_averages() {
        let r1 = judgments(ContextKind::Conflicting, &[Verdict::Adherent, Verdict::Wrong]);
        let r2 = judgments(ContextKind::Conflicting, &[Verdict::Adherent, Verdict::Adherent]);
        let a = aggregate_runs(&[r1, r2]).unwrap();
        let m = a.r_ad.unwrap();
        assert_eq!(m.value, 0.75);
        assert!((m.std.unwrap() - (0.125f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_renders_absent() {
        let r = MetricsReport {
            r_ad: Some(MetricValue { value: 0.7, std: None, n: 10 }),
            r_ro: None,
            n_conflicting: 10,
            n_irrelevant: 0,
            skipped_missing_gold: 0,
            skipped_unknown_context: 0,
            quarantined: 0,
            prior: None,
            leakage_rate: None,
            repeats: 0,
            seed: 1,
        };
        let kv = r.to_kv();
        assert!(kv.contains("r_ad=0.700000\n"));
        assert!(kv.contains("r_ro=absent\n"));
        assert!(kv.contains("r_ad_std=absent\n"));
    }

    #[test]
    fn leakage_extremes() {
        use crate::forge::ConflictKind;
        use crate::gateway::{GatewayConfig, MockBackend, MockScript};
        let questions: Vec<QuestionRecord> = (0..4)
            .map(|i| QuestionRecord {
                question_id: format!("q{i}"),
                title: "T".into(),
                question: format!("Who founded city {i}?"),
                realistic_answers: vec![format!("Real {i}")],
                evidence_doc_id: None,
                annotations: BTreeMap::new(),
            })
            .collect();
        let conflicts: Vec<ConflictAnswer> = (0..4)
            .map(|i| ConflictAnswer {
                question_id: format!("q{i}"),
                text: format!("Forged {i}"),
                kind: ConflictKind::Counterfactual,
                alpha_ref: format!("Alpha {i}"),
                audit: None,
            })
            .collect();
        let run = |prefix: &str| {
            let mut script = MockScript::default();
            for i in 0..4 {
                script = script.rule(&format!("city {i}?"), &[&format!("{prefix} {i}")]);
            }
            let gw = Gateway::new(Box::new(MockBackend::new(script)), GatewayConfig::default()).unwrap();
            leakage_check(&gw, &questions, &conflicts).unwrap()
        };
        assert_eq!(run("Alpha").rate, Some(0.0));
        let leaked = run("Forged");
        assert_eq!(leaked.rate, Some(1.0));
        assert_eq!(leaked.completed, 4);
    }
}
