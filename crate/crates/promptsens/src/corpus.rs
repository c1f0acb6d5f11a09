//! Task datasets and the fixed generation envelope.
//!
//! A dataset is a JSON Lines file, one task object per line, with fields
//! `id`, `title`, `prompt`, `tags`. Unknown fields are ignored with a
//! warning. Task order in the file is preserved.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default prefix prepended to every prompt sent to a backend.
///
/// The envelope wording is this harness's own choice: it pins down that the
/// request is a coding task and asks for a single fenced code block so the
/// extractor has something to find. Override it per run via the config file.
pub const DEFAULT_PREFIX: &str = "The following request is a coding task. \
Reply with a single fenced code block containing the complete program and \
nothing else.\n\n";

/// Default postfix appended to every prompt. Empty by default.
pub const DEFAULT_POSTFIX: &str = "";

/// One coding task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaskRecord {
    pub id: String,
    pub title: String,
    pub prompt: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Fixed text around the (possibly augmented) prompt body. The envelope is
/// applied verbatim and is never augmented.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PromptEnvelope {
    pub prefix: String,
    pub postfix: String,
}

impl Default for PromptEnvelope {
    fn default() -> Self {
        PromptEnvelope {
            prefix: DEFAULT_PREFIX.to_string(),
            postfix: DEFAULT_POSTFIX.to_string(),
        }
    }
}

impl PromptEnvelope {
    pub fn new(prefix: impl Into<String>, postfix: impl Into<String>) -> Self {
        PromptEnvelope {
            prefix: prefix.into(),
            postfix: postfix.into(),
        }
    }

    /// An empty envelope, useful for tests and mock backends.
    pub fn none() -> Self {
        PromptEnvelope::new("", "")
    }

    /// prefix + body + postfix, byte-exact.
    pub fn wrap(&self, body: &str) -> String {
        let mut out = String::with_capacity(self.prefix.len() + body.len() + self.postfix.len());
        out.push_str(&self.prefix);
        out.push_str(body);
        out.push_str(&self.postfix);
        out
    }
}

/// An ordered collection of tasks with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub tasks: Vec<TaskRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate task id {id:?} at {path}:{line}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("no tasks in {path}")]
    Empty { path: String },
}

// Raw record used to detect unknown fields before converting to TaskRecord.
#[derive(Deserialize)]
struct RawTask {
    id: String,
    title: String,
    prompt: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(flatten)]
    unknown: serde_json::Map<String, serde_json::Value>,
}

/// Wrap a task's (possibly augmented) prompt body in the envelope.
/// Augmentation never touches the envelope text.
pub fn wrap_prompt(_task: &TaskRecord, env: &PromptEnvelope, body: &str) -> String {
    env.wrap(body)
}

/// Load a JSON Lines dataset, preserving file order. The dataset name is the
/// file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    parse_dataset(&content, &display, name)
}

fn parse_dataset(content: &str, path: &str, name: String) -> Result<Dataset, CorpusError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTask = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !raw.unknown.is_empty() {
            let keys: Vec<&str> = raw.unknown.keys().map(String::as_str).collect();
            log::warn!("{path}:{line_no}: ignoring unknown fields {keys:?}");
        }
        if raw.id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_string(),
                line: line_no,
                message: "empty task id".to_string(),
            });
        }
        if raw.prompt.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_string(),
                line: line_no,
                message: "empty prompt".to_string(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_string(),
                line: line_no,
                id: raw.id,
            });
        }
        tasks.push(TaskRecord {
            id: raw.id,
            title: raw.title,
            prompt: raw.prompt,
            tags: raw.tags,
        });
    }
    if tasks.is_empty() {
        return Err(CorpusError::Empty {
            path: path.to_string(),
        });
    }
    Ok(Dataset { name, tasks })
}

/// Serialize a dataset back to JSON Lines. `load_dataset` of the output is
/// identity on valid datasets.
pub fn serialize_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    for task in &ds.tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    out
}
