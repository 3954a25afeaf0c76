//! Run configuration: one JSON file, every key optional, unknown keys
//! rejected. Errors name the offending key and, when it came from the file,
//! its line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use scenebias::datasets::SandboxConfig;
use scenebias::models::{BackboneConfig, ModelVariant, TrainConfig};
use scenebias::prompt::ChatEndpointConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for per-video and per-item work.
    pub jobs: usize,
    pub data: DataPaths,
    pub sandbox: SandboxSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub prompt: PromptSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            jobs: 1,
            data: DataPaths::default(),
            sandbox: SandboxSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            metrics: MetricsSection::default(),
            prompt: PromptSection::default(),
        }
    }
}

/// Input files; subcommand flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Directory holding a trained `model.json` and `model.blab`.
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    /// MCQ items (JSONL) used to tune prompts.
    pub items: Option<PathBuf>,
    /// MCQ items (JSONL) for held-out prompt evaluation.
    pub eval_items: Option<PathBuf>,
    /// Recorded chat transcript (JSONL) to replay instead of calling endpoints.
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxSection {
    pub classes: usize,
    pub frames: usize,
    pub size: usize,
    pub sprite: usize,
    pub rho: f64,
    pub per_class: usize,
}

impl Default for SandboxSection {
    fn default() -> Self {
        let c = SandboxConfig::default();
        Self {
            classes: c.classes,
            frames: c.frames,
            size: c.size,
            sprite: c.sprite,
            rho: c.rho,
            per_class: 40,
        }
    }
}

impl SandboxSection {
    pub fn config(&self) -> SandboxConfig {
        SandboxConfig {
            classes: self.classes,
            frames: self.frames,
            size: self.size,
            sprite: self.sprite,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: ModelVariant,
    /// `classes` is replaced by the training vocabulary size.
    pub backbone: BackboneConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Baseline,
            backbone: BackboneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub train_fraction: f64,
    pub tune_fraction: f64,
    /// Rows in each of the highest/lowest SBErr tables.
    pub top_k: usize,
    /// Size of the generated swap set; one swap per masked human when absent.
    pub swap_target: Option<usize>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            tune_fraction: 0.25,
            top_k: 5,
            swap_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    pub engineer: ChatEndpointConfig,
    pub solver: ChatEndpointConfig,
    pub iterations: usize,
    pub choice_prefix: Option<String>,
}

impl Default for PromptSection {
    fn default() -> Self {
        let endpoint = |model: &str| ChatEndpointConfig {
            api_key_env: Some("OPENAI_API_KEY".to_owned()),
            ..ChatEndpointConfig::new("https://api.openai.com/v1", model)
        };
        Self {
            engineer: endpoint(scenebias::prompt::published::ENGINEER_MODEL),
            solver: endpoint(scenebias::prompt::published::SOLVER_MODEL),
            iterations: 20,
            choice_prefix: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub source: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if self.key.is_empty() {
            write!(f, ": {}", self.message)
        } else {
            write!(f, ": key `{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Line of the first `"key":` occurrence for the last segment of a dotted key.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next()?;
    let needle = format!("\"{leaf}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn path_string(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        String::new()
    } else {
        s
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_owned())
}

/// Value of a `--set key=value` override: JSON when it parses, else a string.
pub fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Parses config text (empty means all defaults), applies overrides keyed by
/// dotted path, then validates.
pub fn parse_config(text: &str, source: &str, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let text_or_empty = if text.trim().is_empty() { "{}" } else { text };
    let mut de = serde_json::Deserializer::from_str(text_or_empty);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let mut key = path_string(e.path());
        let inner = e.inner();
        let message = inner.to_string();
        if let Some(field) = unknown_field(&message) {
            if key.is_empty() {
                key = field;
            } else if key.rsplit('.').next() != Some(field.as_str()) {
                key = format!("{key}.{field}");
            }
        }
        ConfigError {
            key,
            line: (inner.line() > 0).then_some(inner.line()),
            source: source.to_owned(),
            message: message.split(" at line ").next().unwrap_or(&message).to_owned(),
        }
    })?;
    de.end().map_err(|e| ConfigError {
        key: String::new(),
        line: Some(e.line()),
        source: source.to_owned(),
        message: "trailing characters".to_owned(),
    })?;
    if !overrides.is_empty() {
        let mut value = serde_json::to_value(&cfg).expect("config serializes");
        for (key, v) in overrides {
            set_dotted(&mut value, key, v.clone()).map_err(|message| ConfigError {
                key: key.clone(),
                line: None,
                source: "command line".to_owned(),
                message,
            })?;
        }
        cfg = serde_path_to_error::deserialize(value).map_err(|e| {
            let key = path_string(e.path());
            ConfigError {
                key,
                line: None,
                source: "command line".to_owned(),
                message: e.inner().to_string(),
            }
        })?;
    }
    cfg.validate().map_err(|(key, message)| ConfigError {
        line: line_of(text, &key),
        key,
        source: source.to_owned(),
        message,
    })?;
    Ok(cfg)
}

fn set_dotted(root: &mut Value, key: &str, v: Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(format!("`{}` is not a section", parts[..i].join(".")));
        };
        if !map.contains_key(*part) {
            return Err("unknown key".to_owned());
        }
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), v);
            return Ok(());
        }
        node = map.get_mut(*part).expect("checked above");
    }
    Err("empty key".to_owned())
}

pub fn load_config(path: &Path, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        key: String::new(),
        line: None,
        source: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string(), overrides)
}

type Invalid = (String, String);

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<(), Invalid> {
    if ok {
        Ok(())
    } else {
        Err((key.to_owned(), message.into()))
    }
}

fn fraction(v: f64, key: &str) -> Result<(), Invalid> {
    check(v > 0.0 && v < 1.0, key, format!("must lie in (0, 1), got {v}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Invalid> {
        check(self.jobs >= 1, "jobs", "must be at least 1")?;
        check(
            !self.output_dir.as_os_str().is_empty(),
            "output_dir",
            "must not be empty",
        )?;
        self.sandbox
            .config()
            .validate()
            .map_err(|e| ("sandbox".to_owned(), e.to_string()))?;
        check(self.sandbox.per_class >= 1, "sandbox.per_class", "must be at least 1")?;
        self.model
            .backbone
            .validate()
            .map_err(|e| ("model.backbone".to_owned(), e.to_string()))?;
        check(self.train.epochs >= 1, "train.epochs", "must be at least 1")?;
        check(self.train.batch_size >= 1, "train.batch_size", "must be at least 1")?;
        let a = &self.train.adam;
        check(
            a.lr > 0.0 && a.lr.is_finite(),
            "train.adam.lr",
            format!("must be positive, got {}", a.lr),
        )?;
        check((0.0..1.0).contains(&a.beta1), "train.adam.beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&a.beta2), "train.adam.beta2", "must lie in [0, 1)")?;
        check(a.eps > 0.0, "train.adam.eps", "must be positive")?;
        let p = &self.train.plateau;
        check(
            p.factor > 0.0 && p.factor < 1.0,
            "train.plateau.factor",
            format!("must lie in (0, 1), got {}", p.factor),
        )?;
        check(p.threshold >= 0.0, "train.plateau.threshold", "must be non-negative")?;
        check(p.min_lr >= 0.0, "train.plateau.min_lr", "must be non-negative")?;
        fraction(self.metrics.train_fraction, "metrics.train_fraction")?;
        fraction(self.metrics.tune_fraction, "metrics.tune_fraction")?;
        check(self.metrics.top_k >= 1, "metrics.top_k", "must be at least 1")?;
        check(
            self.metrics.swap_target != Some(0),
            "metrics.swap_target",
            "must be positive",
        )?;
        self.prompt
            .engineer
            .validate()
            .map_err(|e| ("prompt.engineer".to_owned(), e.to_string()))?;
        self.prompt
            .solver
            .validate()
            .map_err(|e| ("prompt.solver".to_owned(), e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
