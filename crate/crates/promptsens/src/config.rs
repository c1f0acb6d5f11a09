//! Run configuration: one TOML file describing the dataset, envelope,
//! backends, and sweep parameters. Command-line flags override file values;
//! the effective configuration is echoed into `run.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::Method;
use crate::backend::{
    Backend, BackendError, ConstantMock, CorruptorMock, HttpBackend, RecordBackend, ReplayBackend,
};
use crate::corpus::{Dataset, PromptEnvelope, DEFAULT_POSTFIX, DEFAULT_PREFIX};
use crate::pipeline::PipelineConfig;

/// Top-level run configuration, as parsed from the TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSON Lines dataset path.
    pub dataset: PathBuf,
    /// Where the run directory goes.
    pub output_dir: PathBuf,
    /// Name of the backend entry to use.
    pub backend: String,
    /// Augmentation methods to sweep (typos, synonyms).
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_rate_step")]
    pub rate_step: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    /// Thesaurus path; required when methods include synonyms.
    #[serde(default)]
    pub thesaurus: Option<PathBuf>,
    /// Paraphrase JSONL path; required for paraphrase-eval.
    #[serde(default)]
    pub paraphrases: Option<PathBuf>,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    pub backends: BTreeMap<String, BackendSpec>,
}

fn default_methods() -> Vec<String> {
    vec!["typos".to_string(), "synonyms".to_string()]
}

fn default_n_samples() -> usize {
    5
}

fn default_rate_step() -> f64 {
    0.1
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub prefix: String,
    pub postfix: String,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            prefix: DEFAULT_PREFIX.to_string(),
            postfix: DEFAULT_POSTFIX.to_string(),
        }
    }
}

/// One backend table entry, dispatched on `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Always returns `payload`.
    Constant { payload: String },
    /// Emits `template` (or the contents of `template_file`) with
    /// identifiers renamed in proportion to prompt corruption.
    Corruptor {
        #[serde(default)]
        template: Option<String>,
        #[serde(default)]
        template_file: Option<PathBuf>,
    },
    /// OpenAI-compatible chat-completions endpoint.
    Http {
        url: String,
        model: String,
        /// Environment variable holding the API key. Keys never sit in
        /// config files.
        #[serde(default)]
        key_env: Option<String>,
        /// Cassette file for record/replay modes.
        #[serde(default)]
        cassette: Option<PathBuf>,
        /// live (default), record, or replay.
        #[serde(default)]
        mode: Option<String>,
    },
    /// Replay-only backend over an existing cassette.
    Replay { cassette: PathBuf, model: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("backend construction failed: {0}")]
    Backend(#[from] BackendError),
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    /// Check everything that can be checked before any network call.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.dataset.exists() {
            return Err(ConfigError::Invalid(format!(
                "dataset {} does not exist",
                self.dataset.display()
            )));
        }
        let methods = self.parsed_methods()?;
        if methods.contains(&Method::Synonyms) && self.thesaurus.is_none() {
            return Err(ConfigError::Invalid(
                "methods include synonyms but no thesaurus is configured".to_string(),
            ));
        }
        if let Some(thesaurus) = &self.thesaurus {
            if !thesaurus.exists() {
                return Err(ConfigError::Invalid(format!(
                    "thesaurus {} does not exist",
                    thesaurus.display()
                )));
            }
        }
        if !self.backends.contains_key(&self.backend) {
            return Err(ConfigError::Invalid(format!(
                "backend {:?} is not defined in [backends]",
                self.backend
            )));
        }
        self.pipeline_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>, ConfigError> {
        self.methods
            .iter()
            .map(|m| Method::parse(m).map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            n_samples: self.n_samples,
            rate_step: self.rate_step,
            parallelism: self.parallelism,
            seed: self.seed,
        }
    }

    pub fn envelope(&self) -> PromptEnvelope {
        PromptEnvelope::new(self.envelope.prefix.clone(), self.envelope.postfix.clone())
    }

    /// Build the selected backend. The corruptor mock registers every
    /// task's wrapped unperturbed prompt as its originals.
    pub fn build_backend(&self, dataset: &Dataset) -> Result<Box<dyn Backend>, ConfigError> {
        let spec = self.backends.get(&self.backend).ok_or_else(|| {
            ConfigError::Invalid(format!("backend {:?} not defined", self.backend))
        })?;
        build_backend(spec, dataset, &self.envelope())
    }

    /// Cassette path of the active backend, when it has one.
    pub fn cassette_path(&self) -> Option<&Path> {
        match self.backends.get(&self.backend) {
            Some(BackendSpec::Http { cassette, .. }) => cassette.as_deref(),
            Some(BackendSpec::Replay { cassette, .. }) => Some(cassette.as_path()),
            _ => None,
        }
    }

    /// Effective config as a JSON value for the run manifest. The output
    /// directory is dropped: it says where results land, not how they were
    /// computed, and two runs of the same inputs must produce identical
    /// manifests.
    pub fn echo(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        value
    }
}

pub fn build_backend(
    spec: &BackendSpec,
    dataset: &Dataset,
    envelope: &PromptEnvelope,
) -> Result<Box<dyn Backend>, ConfigError> {
    match spec {
        BackendSpec::Constant { payload } => Ok(Box::new(ConstantMock::new(payload.clone()))),
        BackendSpec::Corruptor {
            template,
            template_file,
        } => {
            let template = match (template, template_file) {
                (Some(t), _) => t.clone(),
                (None, Some(path)) => {
                    fs::read_to_string(path).map_err(|source| ConfigError::Io {
                        path: path.display().to_string(),
                        source,
                    })?
                }
                (None, None) => {
                    return Err(ConfigError::Invalid(
                        "corruptor backend needs template or template_file".to_string(),
                    ))
                }
            };
            let originals = dataset
                .tasks
                .iter()
                .map(|t| envelope.wrap(&t.prompt))
                .collect();
            Ok(Box::new(CorruptorMock::new(template, originals)))
        }
        BackendSpec::Http {
            url,
            model,
            key_env,
            cassette,
            mode,
        } => {
            let mode = mode.as_deref().unwrap_or("live");
            match mode {
                "live" => Ok(Box::new(HttpBackend::new(
                    "http",
                    url.clone(),
                    model.clone(),
                    key_env.as_deref(),
                )?)),
                "record" => {
                    let cassette = cassette.as_ref().ok_or_else(|| {
                        ConfigError::Invalid("record mode needs a cassette path".to_string())
                    })?;
                    let inner =
                        HttpBackend::new("http", url.clone(), model.clone(), key_env.as_deref())?;
                    Ok(Box::new(RecordBackend::new(inner, cassette)?))
                }
                "replay" => {
                    let cassette = cassette.as_ref().ok_or_else(|| {
                        ConfigError::Invalid("replay mode needs a cassette path".to_string())
                    })?;
                    Ok(Box::new(ReplayBackend::from_file(model.clone(), cassette)?))
                }
                other => Err(ConfigError::Invalid(format!(
                    "unknown http backend mode {other:?} (expected live, record, or replay)"
                ))),
            }
        }
        BackendSpec::Replay { cassette, model } => {
            Ok(Box::new(ReplayBackend::from_file(model.clone(), cassette)?))
        }
    }
}
