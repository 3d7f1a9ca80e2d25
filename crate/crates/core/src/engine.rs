//! Comparison-run orchestration: shared baselines, bounded parallelism,
//! resumable run records, grids, and provenance manifests.
//!
//! Jobs execute in a worker pool but records are written in canonical
//! (task, strategy) order through a reorder buffer, so an output file is
//! always a deterministic prefix of the full run. Rerunning skips
//! (task, strategy) pairs already on disk; a completed rerun reproduces a
//! byte-identical file. The iteration-0 answer is generated once per task,
//! persisted in `y0_cache.jsonl`, and shared by every strategy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BudgetedBackend, RequestBudget};
use crate::bank::{BaselinePrompts, CueBank, Emotion, SchedulePattern};
use crate::datasets::Task;
use crate::protocol::{
    prompts, Baseline, Resolution, RunOptions, RunRecord, Strategy, StrategyKind, TaskRunner,
};
use crate::report::AblationCell;
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record decode error in {path} line {line}: {message}")]
    Decode {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}

/// Engine-level knobs beyond the per-task [`RunOptions`].
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub run: RunOptions,
    /// Worker threads across (task, strategy) jobs.
    pub parallelism: usize,
    pub out_dir: PathBuf,
    /// Total generation-call cap; `None` derives the default from the job
    /// count.
    pub budget_limit: Option<u64>,
    pub seed: u64,
    /// Hash of the canonicalized operator config, recorded in the manifest.
    pub config_hash: String,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            run: RunOptions::default(),
            parallelism: 1,
            out_dir: PathBuf::from("heart-out"),
            budget_limit: None,
            seed: 0,
            config_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedBaseline {
    task_id: String,
    system_hash: String,
    backend_id: String,
    text: String,
    correct: bool,
}

/// Provenance for one run directory; fully determines a scripted or
/// simulated rerun (`started_at_epoch_s` excluded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub bank_hash: String,
    pub baselines_hash: String,
    pub prompt_template_version: String,
    pub backend_id: String,
    pub ensembler_id: Option<String>,
    pub seed: u64,
    pub max_iterations: usize,
    pub strategies: Vec<String>,
    pub resolution: Resolution,
    pub n_tasks: usize,
    pub budget_limit: u64,
    pub requests_used: u64,
    pub started_at_epoch_s: u64,
}

#[derive(Debug)]
pub struct ComparisonOutcome {
    /// Records for the requested (task, strategy) selection, canonical order.
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub skipped: usize,
    pub interrupted: bool,
    pub requests_used: u64,
}

pub struct Engine {
    pub bank: Arc<CueBank>,
    pub baselines: Arc<BaselinePrompts>,
    backend: Arc<dyn Backend>,
    ensembler: Option<Arc<dyn Backend>>,
    pub options: EngineOptions,
    interrupt: Arc<AtomicBool>,
}

impl Engine {
    pub fn new(
        bank: Arc<CueBank>,
        baselines: Arc<BaselinePrompts>,
        backend: Arc<dyn Backend>,
        ensembler: Option<Arc<dyn Backend>>,
        options: EngineOptions,
    ) -> Self {
        Engine {
            bank,
            baselines,
            backend,
            ensembler,
            options,
            interrupt: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Set from a signal handler: workers finish in-flight jobs, the writer
    /// flushes, and the run exits early.
    pub fn interrupt_flag(&self) -> Arc<AtomicBool> {
        self.interrupt.clone()
    }

    pub fn records_path(&self) -> PathBuf {
        self.options.out_dir.join("runs.jsonl")
    }

    fn y0_cache_path(&self) -> PathBuf {
        self.options.out_dir.join("y0_cache.jsonl")
    }

    fn system_hash(&self, task: &Task) -> String {
        let effective = match &self.options.run.system_instruction {
            Some(s) => s.as_str(),
            None => prompts::default_system_instruction(task.benchmark).unwrap_or(""),
        };
        sha256_hex(effective.as_bytes())
    }

    /// Runs every (task, strategy) pair, skipping pairs already recorded.
    pub fn run_comparison(
        &self,
        tasks: &[Task],
        strategies: &[Strategy],
    ) -> Result<ComparisonOutcome, EngineError> {
        std::fs::create_dir_all(&self.options.out_dir).map_err(|source| EngineError::Io {
            path: self.options.out_dir.display().to_string(),
            source,
        })?;
        let records_path = self.records_path();
        let existing = if records_path.exists() {
            load_records(&records_path)?
        } else {
            Vec::new()
        };
        let done: HashSet<(String, String, Resolution)> = existing
            .iter()
            .map(|r| (r.task_id.clone(), r.strategy.clone(), r.resolution))
            .collect();

        let n_jobs_total = tasks.len() * strategies.len();
        let budget_limit = self.options.budget_limit.unwrap_or_else(|| {
            RequestBudget::default_limit(
                tasks.len(),
                strategies.len(),
                self.options.run.max_iterations,
            )
        });
        let budget = Arc::new(RequestBudget::new(budget_limit));
        let budgeted = BudgetedBackend::new(self.backend.clone(), budget.clone());
        let budgeted_ensembler = self
            .ensembler
            .clone()
            .map(|e| BudgetedBackend::new(e, budget.clone()));

        // Jobs in canonical order; pairs already on disk are skipped.
        struct Job<'t> {
            seq: usize,
            task: &'t Task,
            strategy: Strategy,
        }
        let mut jobs = Vec::new();
        for task in tasks {
            for strategy in strategies {
                if done.contains(&(task.id.clone(), strategy.label(), strategy.resolution)) {
                    continue;
                }
                jobs.push(Job {
                    seq: jobs.len(),
                    task,
                    strategy: strategy.clone(),
                });
            }
        }
        let skipped = n_jobs_total - jobs.len();

        // Shared iteration-0 answers, persisted across runs.
        let y0 = self.ensure_baselines(tasks, &jobs.iter().map(|j| j.task).collect::<Vec<_>>(), &budgeted)?;

        let runner = TaskRunner {
            bank: &self.bank,
            baselines: &self.baselines,
            backend: &budgeted,
            ensembler: budgeted_ensembler.as_ref().map(|e| e as &dyn Backend),
            options: &self.options.run,
        };

        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(|source| EngineError::Io {
                path: records_path.display().to_string(),
                source,
            })?;

        let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
        let next_job = AtomicUsize::new(0);
        let executed = AtomicUsize::new(0);
        let interrupted = AtomicBool::new(false);
        let write_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
        let mut new_records: Vec<Option<RunRecord>> = vec![None; jobs.len()];

        std::thread::scope(|scope| {
            let workers = self.options.parallelism.max(1).min(jobs.len().max(1));
            for _ in 0..workers {
                let tx = tx.clone();
                let jobs = &jobs;
                let y0 = &y0;
                let runner = &runner;
                let next_job = &next_job;
                let executed = &executed;
                let interrupted = &interrupted;
                let interrupt = &self.interrupt;
                scope.spawn(move || loop {
                    if interrupt.load(Ordering::SeqCst) {
                        interrupted.store(true, Ordering::SeqCst);
                        break;
                    }
                    let i = next_job.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let shared = y0.get(&job.task.id);
                    let record = runner.run_task(job.task, &job.strategy, shared);
                    executed.fetch_add(1, Ordering::SeqCst);
                    if tx.send((job.seq, record)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // Reorder buffer: flush records in canonical sequence as they
            // arrive, so the file is always an ordered prefix.
            let mut buffer: BTreeMap<usize, RunRecord> = BTreeMap::new();
            let mut next_write = 0usize;
            let mut out = std::io::BufWriter::new(&file);
            for (seq, record) in rx {
                buffer.insert(seq, record);
                while let Some(record) = buffer.remove(&next_write) {
                    let line = serde_json::to_string(&record).expect("record serializes");
                    if let Err(e) = writeln!(out, "{line}") {
                        *write_error.lock().unwrap() = Some(e);
                    }
                    new_records[next_write] = Some(record);
                    next_write += 1;
                }
            }
            // Anything still buffered lost its predecessor to an
            // interrupt; keep the file a canonical prefix and drop it.
            let _ = out.flush();
        });

        if let Some(source) = write_error.into_inner().unwrap() {
            return Err(EngineError::Io {
                path: records_path.display().to_string(),
                source,
            });
        }

        self.write_manifest(tasks, strategies, budget_limit, budget.used())?;

        // Assemble the canonical record set for this selection.
        let mut by_key: HashMap<(String, String, Resolution), RunRecord> = existing
            .into_iter()
            .map(|r| ((r.task_id.clone(), r.strategy.clone(), r.resolution), r))
            .collect();
        for record in new_records.into_iter().flatten() {
            by_key.insert(
                (record.task_id.clone(), record.strategy.clone(), record.resolution),
                record,
            );
        }
        let mut records = Vec::new();
        for task in tasks {
            for strategy in strategies {
                if let Some(r) =
                    by_key.remove(&(task.id.clone(), strategy.label(), strategy.resolution))
                {
                    records.push(r);
                }
            }
        }

        Ok(ComparisonOutcome {
            records,
            executed: executed.load(Ordering::SeqCst),
            skipped,
            interrupted: interrupted.load(Ordering::SeqCst),
            requests_used: budget.used(),
        })
    }

    /// Loads cached iteration-0 answers and generates the missing ones, in
    /// task order, bounded by the worker pool.
    fn ensure_baselines(
        &self,
        all_tasks: &[Task],
        pending_tasks: &[&Task],
        backend: &dyn Backend,
    ) -> Result<HashMap<String, Baseline>, EngineError> {
        let cache_path = self.y0_cache_path();
        let mut cache: HashMap<(String, String, String), Baseline> = HashMap::new();
        if cache_path.exists() {
            let raw = std::fs::read_to_string(&cache_path).map_err(|source| EngineError::Io {
                path: cache_path.display().to_string(),
                source,
            })?;
            for (lineno, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CachedBaseline =
                    serde_json::from_str(line).map_err(|e| EngineError::Decode {
                        path: cache_path.display().to_string(),
                        line: lineno + 1,
                        message: e.to_string(),
                    })?;
                cache.insert(
                    (entry.task_id.clone(), entry.system_hash.clone(), entry.backend_id.clone()),
                    Baseline {
                        text: entry.text,
                        correct: entry.correct,
                    },
                );
            }
        }

        let backend_id = self.backend.id().to_string();
        let pending_ids: HashSet<&str> = pending_tasks.iter().map(|t| t.id.as_str()).collect();
        let mut results: HashMap<String, Baseline> = HashMap::new();
        let mut to_generate: Vec<&Task> = Vec::new();
        for task in all_tasks {
            let key = (task.id.clone(), self.system_hash(task), backend_id.clone());
            if let Some(hit) = cache.get(&key) {
                results.insert(task.id.clone(), hit.clone());
            } else if pending_ids.contains(task.id.as_str()) {
                to_generate.push(task);
            }
        }

        if to_generate.is_empty() {
            return Ok(results);
        }
        let runner = TaskRunner {
            bank: &self.bank,
            baselines: &self.baselines,
            backend,
            ensembler: None,
            options: &self.options.run,
        };
        let generated = crate::util::parallel_map_ordered(
            &to_generate,
            self.options.parallelism.max(1),
            |_, task| runner.init_baseline(task).ok(),
        );
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cache_path)
            .map_err(|source| EngineError::Io {
                path: cache_path.display().to_string(),
                source,
            })?;
        for (task, baseline) in to_generate.iter().zip(generated) {
            // Failures stay uncached; the per-run path retries and records
            // the error on the run itself.
            let Some(baseline) = baseline else { continue };
            let entry = CachedBaseline {
                task_id: task.id.clone(),
                system_hash: self.system_hash(task),
                backend_id: backend_id.clone(),
                text: baseline.text.clone(),
                correct: baseline.correct,
            };
            writeln!(file, "{}", serde_json::to_string(&entry).expect("entry serializes"))
                .map_err(|source| EngineError::Io {
                    path: cache_path.display().to_string(),
                    source,
                })?;
            results.insert(task.id.clone(), baseline);
        }
        Ok(results)
    }

    fn write_manifest(
        &self,
        tasks: &[Task],
        strategies: &[Strategy],
        budget_limit: u64,
        requests_used: u64,
    ) -> Result<(), EngineError> {
        let manifest = RunManifest {
            config_hash: self.options.config_hash.clone(),
            bank_hash: self.bank.source_hash().to_string(),
            baselines_hash: self.baselines.source_hash().to_string(),
            prompt_template_version: prompts::PROMPT_TEMPLATE_VERSION.to_string(),
            backend_id: self.backend.id().to_string(),
            ensembler_id: self.ensembler.as_ref().map(|e| e.id().to_string()),
            seed: self.options.seed,
            max_iterations: self.options.run.max_iterations,
            strategies: strategies.iter().map(Strategy::label).collect(),
            resolution: strategies
                .first()
                .map_or(Resolution::S1Oracle, |s| s.resolution),
            n_tasks: tasks.len(),
            budget_limit,
            requests_used,
            started_at_epoch_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let path = self.options.out_dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Executes a pattern grid: one cell per spec, all sharing the y0 cache.
    /// Invalid specs become error cells; duplicates collapse with a warning.
    /// Cells come back sorted descending by final accuracy.
    pub fn run_grid(
        &self,
        tasks: &[Task],
        specs: &[String],
        resolution: Resolution,
    ) -> Result<(Vec<AblationCell>, Vec<String>), EngineError> {
        let mut warnings = Vec::new();
        let mut seen = HashSet::new();
        let mut cells = Vec::new();
        for spec in specs {
            let spec = spec.trim();
            if spec.is_empty() {
                continue;
            }
            if !seen.insert(spec.to_string()) {
                warnings.push(format!("duplicate grid entry '{spec}' skipped"));
                continue;
            }
            let strategy = match parse_grid_entry(spec, self.options.run.max_iterations, resolution)
            {
                Ok(s) => s,
                Err(message) => {
                    cells.push(AblationCell {
                        pattern_spec: spec.to_string(),
                        final_accuracy: 0.0,
                        n_tasks: 0,
                        error: Some(message),
                    });
                    continue;
                }
            };
            let outcome = self.run_comparison(tasks, std::slice::from_ref(&strategy))?;
            let refs: Vec<&RunRecord> = outcome.records.iter().collect();
            let final_accuracy = crate::report::final_accuracy(&refs).unwrap_or(0.0);
            cells.push(AblationCell {
                pattern_spec: spec.to_string(),
                final_accuracy,
                n_tasks: refs.len(),
                error: None,
            });
            if self.interrupt.load(Ordering::SeqCst) {
                warnings.push("grid interrupted; remaining cells skipped".to_string());
                break;
            }
        }
        crate::report::sort_cells(&mut cells);
        Ok((cells, warnings))
    }
}

/// Grid entries accept strategy specs (`wait`, `heart:...`), bare pattern
/// notation (`hsur->hsur->sd->sd`), or an emotion name (`Sadness`) meaning
/// that emotion statically at every iteration.
pub fn parse_grid_entry(
    spec: &str,
    max_iterations: usize,
    resolution: Resolution,
) -> Result<Strategy, String> {
    if let Some(emotion) = Emotion::parse_name(spec) {
        let pattern = SchedulePattern::static_emotion(emotion, max_iterations.max(1))
            .map_err(|e| e.to_string())?;
        return Ok(Strategy::new(StrategyKind::Heart { pattern }, resolution));
    }
    if let Ok(kind) = Strategy::parse_kind(spec) {
        let strategy = Strategy::new(kind, resolution);
        strategy.validate(max_iterations).map_err(|e| e.to_string())?;
        return Ok(strategy);
    }
    match SchedulePattern::parse(spec) {
        Ok(pattern) => {
            let strategy = Strategy::new(StrategyKind::Heart { pattern }, resolution);
            strategy.validate(max_iterations).map_err(|e| e.to_string())?;
            Ok(strategy)
        }
        Err(e) => Err(e.to_string()),
    }
}

/// Reads a run-records JSONL file.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, EngineError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| EngineError::Decode {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
