//! Deterministic scripted backend for desk-scale verification.
//!
//! Completions are keyed by `(task_id, iteration, prompt_id)`, with
//! per-(task, iteration) wildcard entries that match any prompt. Lookup
//! precedence: exact, then wildcard, then [`BackendError::ScriptMiss`].

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use super::{Backend, BackendError, GenRequest, GenResult};

type Key = (String, u32, Option<String>);

pub struct ScriptedBackend {
    entries: HashMap<Key, String>,
    id: String,
}

/// One line of a script file.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptEntry {
    pub task: String,
    pub iteration: u32,
    /// Absent means wildcard: matches every prompt at (task, iteration).
    #[serde(default)]
    pub prompt: Option<String>,
    pub text: String,
}

#[derive(Default)]
pub struct ScriptedBackendBuilder {
    entries: HashMap<Key, String>,
}

impl ScriptedBackendBuilder {
    pub fn exact(mut self, task: &str, iteration: u32, prompt: &str, text: &str) -> Self {
        self.entries.insert(
            (task.to_string(), iteration, Some(prompt.to_string())),
            text.to_string(),
        );
        self
    }

    pub fn wildcard(mut self, task: &str, iteration: u32, text: &str) -> Self {
        self.entries
            .insert((task.to_string(), iteration, None), text.to_string());
        self
    }

    pub fn build(self) -> Result<ScriptedBackend, BackendError> {
        if self.entries.is_empty() {
            return Err(BackendError::Script("script is empty".to_string()));
        }
        Ok(ScriptedBackend {
            entries: self.entries,
            id: "scripted".to_string(),
        })
    }
}

impl ScriptedBackend {
    pub fn builder() -> ScriptedBackendBuilder {
        ScriptedBackendBuilder::default()
    }

    /// Loads a script from a JSONL file of [`ScriptEntry`] records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let mut builder = Self::builder();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                BackendError::Script(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
            builder = match entry.prompt {
                Some(p) => builder.exact(&entry.task, entry.iteration, &p, &entry.text),
                None => builder.wildcard(&entry.task, entry.iteration, &entry.text),
            };
        }
        builder.build()
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError> {
        request.validate()?;
        let tags = &request.tags;
        let exact = (
            tags.task_id.clone(),
            tags.iteration,
            Some(tags.prompt_id.clone()),
        );
        let wildcard = (tags.task_id.clone(), tags.iteration, None);
        let text = self
            .entries
            .get(&exact)
            .or_else(|| self.entries.get(&wildcard))
            .ok_or_else(|| BackendError::ScriptMiss {
                task_id: tags.task_id.clone(),
                iteration: tags.iteration,
                prompt_id: tags.prompt_id.clone(),
            })?;
        Ok(GenResult {
            text: text.clone(),
            backend_id: self.id.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}
