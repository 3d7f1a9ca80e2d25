//! Benchmark task ingestion, image filtering, and the validation/test split.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::AnswerType;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record error at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Simpleqa,
    Hle,
    OlympiadMath,
    OlympiadPhysics,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Simpleqa,
        Benchmark::Hle,
        Benchmark::OlympiadMath,
        Benchmark::OlympiadPhysics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Simpleqa => "simpleqa",
            Benchmark::Hle => "hle",
            Benchmark::OlympiadMath => "olympiad_math",
            Benchmark::OlympiadPhysics => "olympiad_physics",
        }
    }
}

impl FromStr for Benchmark {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "simpleqa" => Ok(Benchmark::Simpleqa),
            "hle" => Ok(Benchmark::Hle),
            "olympiad_math" | "olympiadbench_math" => Ok(Benchmark::OlympiadMath),
            "olympiad_physics" | "olympiadbench_physics" => Ok(Benchmark::OlympiadPhysics),
            other => Err(DatasetError::Config(format!("unknown benchmark '{other}'"))),
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One benchmark question with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub answer_type: AnswerType,
    pub benchmark: Benchmark,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

/// Validation fraction and shuffle seed for [`split`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Counts emitted alongside a load, covering the image filter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_records: usize,
    pub kept: usize,
    pub filtered_images: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    answer_type: Option<String>,
    #[serde(default)]
    subject: Option<String>,
    #[serde(default)]
    has_image: Option<bool>,
}

/// Loads tasks from a JSONL file in file order. Records flagged
/// `has_image: true` are dropped silently and counted in the report; the
/// study covers text-only problems.
pub fn load_tasks(
    path: impl AsRef<Path>,
    benchmark: Benchmark,
) -> Result<(Vec<Task>, FilterReport), DatasetError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut tasks = Vec::new();
    let mut report = FilterReport::default();
    for (lineno, line) in raw.lines().enumerate() {
        let line_trim = line.trim();
        if line_trim.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let record: RawRecord = serde_json::from_str(line_trim).map_err(|e| {
            DatasetError::Record {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        report.total_records += 1;
        if record.has_image.unwrap_or(false) {
            report.filtered_images += 1;
            continue;
        }
        let missing = |field: &str| DatasetError::Record {
            line: line_no,
            message: format!("missing required field '{field}'"),
        };
        let id = record.id.filter(|s| !s.is_empty()).ok_or_else(|| missing("id"))?;
        let question = record
            .question
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| missing("question"))?;
        let gold = record
            .answer
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| missing("answer"))?;
        let answer_type = record
            .answer_type
            .ok_or_else(|| missing("answer_type"))?
            .parse::<AnswerType>()
            .map_err(|e| DatasetError::Record {
                line: line_no,
                message: e,
            })?;
        tasks.push(Task {
            id,
            question,
            gold,
            answer_type,
            benchmark,
            subject: record.subject,
        });
        report.kept += 1;
    }
    Ok((tasks, report))
}

/// Deterministic validation/test split: shuffle by seed, then the first
/// `floor(fraction * n)` tasks form the validation set. The floor rule
/// reproduces the published split sizes exactly.
pub fn split(tasks: &[Task], spec: &SplitSpec) -> Result<(Vec<Task>, Vec<Task>), DatasetError> {
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(DatasetError::Config(format!(
            "validation_fraction {} outside (0, 1)",
            spec.validation_fraction
        )));
    }
    if tasks.len() < 2 {
        return Err(DatasetError::Config(format!(
            "need at least 2 tasks to split, got {}",
            tasks.len()
        )));
    }
    let n_validation = validation_size(tasks.len(), spec.validation_fraction);
    let mut indices: Vec<usize> = (0..tasks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);
    let validation = indices[..n_validation]
        .iter()
        .map(|&i| tasks[i].clone())
        .collect();
    let test = indices[n_validation..]
        .iter()
        .map(|&i| tasks[i].clone())
        .collect();
    Ok((validation, test))
}

pub fn validation_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).floor() as usize
}
