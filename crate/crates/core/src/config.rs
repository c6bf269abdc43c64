//! Run configuration: a plain `key = value` file with `#` comments. Every key has a
//! default, so an empty file is a valid configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{ContextConfig, EasySelection};
use crate::corpus::IngestFormat;
use crate::error::{Error, Result};
use crate::forge::RetryPolicy;
use crate::gateway::GatewayConfig;
use crate::pairs::{AssemblyConfig, ExportFormat};
use crate::probe::{PriorConditioning, ProbeConfig};

pub const DEFAULT_SWEEP: [f64; 7] = [0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    TermOverlap,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Probe,
    Forge,
    Negatives,
    Eval,
    Leakage,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Probe, Stage::Forge, Stage::Negatives, Stage::Eval, Stage::Leakage];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Probe => "probe",
            Stage::Forge => "forge",
            Stage::Negatives => "negatives",
            Stage::Eval => "eval",
            Stage::Leakage => "leakage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Corpus file to ingest, or a persisted snapshot directory.
    pub corpus: Option<PathBuf>,
    pub corpus_format: IngestFormat,
    pub out: PathBuf,
    /// Backend used by every stage without its own override.
    pub backend: String,
    pub backend_probe: Option<String>,
    pub backend_forge: Option<String>,
    pub backend_negatives: Option<String>,
    pub backend_eval: Option<String>,
    pub backend_leakage: Option<String>,
    pub seed: u64,
    pub k: usize,
    pub easy_selection: EasySelection,
    pub hard_fallback: bool,
    pub similarity: SimilarityKind,
    /// Share of eligible questions routed to the conflicting regime.
    pub conflicting_fraction: f64,
    pub r_error: f64,
    pub candidates: usize,
    pub max_temperature: f64,
    pub prior_conditioning: PriorConditioning,
    pub gateway_attempts: u32,
    pub gateway_backoff_ms: u64,
    pub max_in_flight: usize,
    pub length_tolerance: f64,
    pub quarantine_threshold: f64,
    pub export_formats: Vec<ExportFormat>,
    pub sweep_targets: Vec<f64>,
    pub bootstrap_repeats: usize,
    pub prior_bins: usize,
    pub audit_sample: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            corpus_format: IngestFormat::SquadV2,
            out: PathBuf::from("out"),
            backend: "mock".into(),
            backend_probe: None,
            backend_forge: None,
            backend_negatives: None,
            backend_eval: None,
            backend_leakage: None,
            seed: 42,
            k: 4,
            easy_selection: EasySelection::RandomSeeded,
            hard_fallback: false,
            similarity: SimilarityKind::TermOverlap,
            conflicting_fraction: 0.588,
            r_error: 1.0,
            candidates: 5,
            max_temperature: 0.7,
            prior_conditioning: PriorConditioning::Prompt,
            gateway_attempts: 3,
            gateway_backoff_ms: 200,
            max_in_flight: 4,
            length_tolerance: 0.05,
            quarantine_threshold: 0.2,
            export_formats: vec![ExportFormat::DpoPairs, ExportFormat::SftChat],
            sweep_targets: DEFAULT_SWEEP.to_vec(),
            bootstrap_repeats: 1000,
            prior_bins: 5,
            audit_sample: 20,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_owned())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key; accepts both `backend.probe` and `backend_probe` spellings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('.', "_");
        match key.as_str() {
            "corpus" => self.corpus = optional(value).map(PathBuf::from),
            "corpus_format" => self.corpus_format = value.parse()?,
            "out" => self.out = PathBuf::from(value),
            "backend" => self.backend = value.to_owned(),
            "backend_probe" => self.backend_probe = optional(value),
            "backend_forge" => self.backend_forge = optional(value),
            "backend_negatives" => self.backend_negatives = optional(value),
            "backend_eval" => self.backend_eval = optional(value),
            "backend_leakage" => self.backend_leakage = optional(value),
            "seed" => self.seed = parse_num(&key, value)?,
            "k" => self.k = parse_num(&key, value)?,
            "easy_selection" => self.easy_selection = value.parse()?,
            "hard_fallback" => self.hard_fallback = parse_bool(&key, value)?,
            "similarity" => {
                self.similarity = match value {
                    "term_overlap" => SimilarityKind::TermOverlap,
                    "embedding" => SimilarityKind::Embedding,
                    _ => return Err(Error::Config(format!("unknown similarity `{value}`"))),
                }
            }
            "conflicting_fraction" => self.conflicting_fraction = parse_num(&key, value)?,
            "r_error" => self.r_error = parse_num(&key, value)?,
            "candidates" => self.candidates = parse_num(&key, value)?,
            "max_temperature" => self.max_temperature = parse_num(&key, value)?,
            "prior_conditioning" => {
                self.prior_conditioning = match value {
                    "prompt" => PriorConditioning::Prompt,
                    "bare" => PriorConditioning::Bare,
                    _ => return Err(Error::Config(format!("unknown prior conditioning `{value}`"))),
                }
            }
            "gateway_attempts" => self.gateway_attempts = parse_num(&key, value)?,
            "gateway_backoff_ms" => self.gateway_backoff_ms = parse_num(&key, value)?,
            "max_in_flight" => self.max_in_flight = parse_num(&key, value)?,
            "length_tolerance" => self.length_tolerance = parse_num(&key, value)?,
            "quarantine_threshold" => self.quarantine_threshold = parse_num(&key, value)?,
            "export_formats" => {
                self.export_formats = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "sweep_targets" => {
                self.sweep_targets = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(&key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "bootstrap_repeats" => self.bootstrap_repeats = parse_num(&key, value)?,
            "prior_bins" => self.prior_bins = parse_num(&key, value)?,
            "audit_sample" => self.audit_sample = parse_num(&key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.context_config().validate()?;
        if !(0.0..=1.0).contains(&self.conflicting_fraction) {
            return Err(Error::Config("conflicting_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.quarantine_threshold) {
            return Err(Error::Config("quarantine_threshold must lie in [0, 1]".into()));
        }
        if !(self.r_error.is_finite() && self.r_error > 0.0) {
            return Err(Error::Config("r_error must be positive".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        if self.length_tolerance < 0.0 {
            return Err(Error::Config("length_tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn backend_for(&self, stage: Stage) -> &str {
        let o = match stage {
            Stage::Probe => &self.backend_probe,
            Stage::Forge => &self.backend_forge,
            Stage::Negatives => &self.backend_negatives,
            Stage::Eval => &self.backend_eval,
            Stage::Leakage => &self.backend_leakage,
        };
        o.as_deref().unwrap_or(&self.backend)
    }

    pub fn context_config(&self) -> ContextConfig {
        ContextConfig {
            k: self.k,
            easy_selection: self.easy_selection,
            hard_fallback: self.hard_fallback,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            candidates: self.candidates,
            max_temperature: self.max_temperature,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            prior_conditioning: self.prior_conditioning,
            ..ProbeConfig::default()
        }
    }

    pub fn gateway_config(&self, cache_path: Option<PathBuf>) -> GatewayConfig {
        GatewayConfig {
            attempts: self.gateway_attempts,
            backoff: std::time::Duration::from_millis(self.gateway_backoff_ms),
            max_in_flight: self.max_in_flight,
            cache_path,
        }
    }

    pub fn assembly_config(&self) -> AssemblyConfig {
        AssemblyConfig {
            r_error: self.r_error,
            seed: self.seed,
            length_tolerance: self.length_tolerance,
        }
    }

    /// The configuration in the same `key = value` form it is read from.
    pub fn to_kv(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut s = String::new();
        for (k, v) in json.as_object().expect("config is an object") {
            let rendered = match v {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(x) => x.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_owned))
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            let _ = writeln!(s, "{k} = {rendered}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default_and_valid() {
        let mut c = RunConfig::default();
        c.apply_text("# nothing here\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn keys_and_per_stage_backends() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 7\nbackend.eval = mock:trained.json  # trained model\nexport_formats = dpo_pairs\nsweep_targets = 1, 2").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.backend_for(Stage::Eval), "mock:trained.json");
        assert_eq!(c.backend_for(Stage::Probe), "mock");
        assert_eq!(c.export_formats, vec![ExportFormat::DpoPairs]);
        assert_eq!(c.sweep_targets, vec![1.0, 2.0]);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::default().apply_text("colour = red").is_err());
        assert!(RunConfig::default().apply_text("just words").is_err());
    }

    #[test]
    fn kv_round_trips() {
        let mut c = RunConfig::default();
        c.set("backend_probe", "mock:a.json").unwrap();
        c.set("corpus", "data/train.json").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }
}
