//! The iterative self-correction state machine.
//!
//! A run starts from a shared CoT baseline (iteration 0). While the answer
//! is wrong, each iteration generates one candidate per prompt in the
//! active pool - the scheduled emotion group's cues, or a matched number of
//! baseline samples - and resolves them to a single answer, either by
//! oracle selection with halt-on-success (S1) or by a generative ensembler
//! with no ground-truth access (S2).

pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenParams, RequestTags};
use crate::bank::{BaselinePrompts, CueBank, SchedulePattern};
use crate::datasets::{Benchmark, Task};
use crate::util::parallel_map_ordered;
use crate::verifier::{self, VerifierOptions, VerifierResult};

pub const DEFAULT_MAX_ITERATIONS: usize = 4;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid strategy spec '{spec}': {message}")]
    StrategySpec { spec: String, message: String },
    #[error("all candidates failed at iteration {t}")]
    AllCandidatesFailed { t: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// How candidate sets collapse to one answer per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    S1Oracle,
    S2Synthesis,
}

impl Resolution {
    pub fn parse(s: &str) -> Result<Self, ProtocolError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s1" | "s1_oracle" | "oracle" => Ok(Resolution::S1Oracle),
            "s2" | "s2_synthesis" | "synthesis" => Ok(Resolution::S2Synthesis),
            other => Err(ProtocolError::StrategySpec {
                spec: other.to_string(),
                message: "expected 's1' or 's2'".to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    Heart { pattern: SchedulePattern },
    Wait,
    Cot,
    SelfReflection { ids: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub resolution: Resolution,
}

impl Strategy {
    pub fn new(kind: StrategyKind, resolution: Resolution) -> Self {
        Strategy { kind, resolution }
    }

    /// Parses a strategy spec: `heart`, `heart:<pattern>`, `wait`, `cot`,
    /// `self_reflection`, `self_reflection:all`, or `self_reflection:3,7`.
    pub fn parse_kind(spec: &str) -> Result<StrategyKind, ProtocolError> {
        let spec_trim = spec.trim();
        // Accept "self-reflection" for "self_reflection"; pattern arrows
        // must stay intact, so only the head is normalized.
        let lower = spec_trim
            .to_ascii_lowercase()
            .replacen("self-reflection", "self_reflection", 1);
        let err = |message: String| ProtocolError::StrategySpec {
            spec: spec_trim.to_string(),
            message,
        };
        if lower == "heart" {
            return Ok(StrategyKind::Heart {
                pattern: SchedulePattern::default_heart(),
            });
        }
        if let Some(pattern_spec) = lower.strip_prefix("heart:") {
            let pattern =
                SchedulePattern::parse(pattern_spec).map_err(|e| err(e.to_string()))?;
            return Ok(StrategyKind::Heart { pattern });
        }
        match lower.as_str() {
            "wait" => return Ok(StrategyKind::Wait),
            "cot" => return Ok(StrategyKind::Cot),
            "self_reflection" | "self_reflection:all" => {
                return Ok(StrategyKind::SelfReflection {
                    ids: (1..=10).collect(),
                })
            }
            _ => {}
        }
        if let Some(id_spec) = lower.strip_prefix("self_reflection:") {
            let mut ids = Vec::new();
            for part in id_spec.split(',') {
                let id: u8 = part
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad self-reflection id '{part}'")))?;
                if !(1..=10).contains(&id) {
                    return Err(err(format!("self-reflection id {id} outside 1..=10")));
                }
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            if ids.is_empty() {
                return Err(err("self-reflection needs at least one id".to_string()));
            }
            return Ok(StrategyKind::SelfReflection { ids });
        }
        Err(err(
            "expected heart[:pattern], wait, cot, or self_reflection[:ids]".to_string(),
        ))
    }

    /// Stable label used in run records, reports, and provenance tags.
    pub fn label(&self) -> String {
        match &self.kind {
            StrategyKind::Heart { pattern } => format!("heart:{}", pattern.render()),
            StrategyKind::Wait => "wait".to_string(),
            StrategyKind::Cot => "cot".to_string(),
            StrategyKind::SelfReflection { ids } => {
                if ids.len() == 10 {
                    "self_reflection:all".to_string()
                } else {
                    let joined: Vec<String> = ids.iter().map(u8::to_string).collect();
                    format!("self_reflection:{}", joined.join(","))
                }
            }
        }
    }

    /// A heart strategy must schedule exactly one group per iteration.
    pub fn validate(&self, max_iterations: usize) -> Result<(), ProtocolError> {
        if let StrategyKind::Heart { pattern } = &self.kind {
            if max_iterations > 0 && pattern.len() != max_iterations {
                return Err(ProtocolError::StrategySpec {
                    spec: self.label(),
                    message: format!(
                        "pattern length {} != max_iterations {max_iterations}",
                        pattern.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Pattern encoded in a strategy label, when the label is a heart strategy.
pub fn strategy_pattern(label: &str) -> Option<SchedulePattern> {
    label
        .strip_prefix("heart:")
        .and_then(|spec| SchedulePattern::parse(spec).ok())
}

/// One generated completion within an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub prompt_id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    /// Populated under S1 resolution only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerifierResult>,
    /// Sentinel for a candidate-level backend failure; counts as incorrect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u32,
    /// Active pool descriptor: the rendered emotion group for heart runs,
    /// or the baseline name.
    pub pool: String,
    pub candidates: Vec<Candidate>,
    pub resolved_text: String,
    /// S1: whether the selected candidate verified correct. S2: post-hoc
    /// verdict on the synthesized answer, recorded for metrics only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_correct: Option<bool>,
}

/// One task x strategy trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub benchmark: Benchmark,
    pub strategy: String,
    pub resolution: Resolution,
    pub baseline_answer: String,
    pub baseline_correct: bool,
    pub iterations: Vec<IterationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_correct_iteration: Option<u32>,
    pub final_correct: bool,
    pub request_count: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The shared iteration-0 answer reused across strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// N: the iteration cap.
    pub max_iterations: usize,
    pub params: GenParams,
    pub verifier: VerifierOptions,
    /// When every candidate fails verification under S1, keep y_{t-1}
    /// instead of carrying candidate 0 forward. Off by default: y_t is
    /// defined over the new candidate set.
    pub carry_previous_on_all_fail: bool,
    /// Heart pattern that defines the matched candidate budget for
    /// baselines run in the same comparison.
    pub comparison_pattern: SchedulePattern,
    /// `None`: per-benchmark default. `Some("")`: no system instruction.
    pub system_instruction: Option<String>,
    /// In-flight generation cap within one iteration.
    pub candidate_parallelism: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            params: GenParams::default(),
            verifier: VerifierOptions::default(),
            carry_previous_on_all_fail: false,
            comparison_pattern: SchedulePattern::default_heart(),
            system_instruction: None,
            candidate_parallelism: 1,
        }
    }
}

/// Executes task x strategy runs against a backend. Cheap to construct;
/// holds only borrowed, read-only state, so one task maps to one logical
/// worker and iterations stay strictly sequential within it.
pub struct TaskRunner<'a> {
    pub bank: &'a CueBank,
    pub baselines: &'a BaselinePrompts,
    pub backend: &'a dyn Backend,
    /// Backend for S2 synthesis calls; defaults to `backend`.
    pub ensembler: Option<&'a dyn Backend>,
    pub options: &'a RunOptions,
}

impl TaskRunner<'_> {
    fn system_instruction_for(&self, benchmark: Benchmark) -> Option<&str> {
        match &self.options.system_instruction {
            Some(s) if s.is_empty() => None,
            Some(s) => Some(s.as_str()),
            None => prompts::default_system_instruction(benchmark),
        }
    }

    /// Matched candidate budget at iteration `t`: the size of the
    /// comparison pattern's active pool.
    pub fn candidate_budget(&self, t: u32) -> usize {
        self.options
            .comparison_pattern
            .group_at(t as usize)
            .map_or(10, |g| g.len() * crate::bank::CUES_PER_EMOTION)
    }

    /// Generates and verifies the shared iteration-0 answer.
    pub fn init_baseline(&self, task: &Task) -> Result<Baseline, BackendError> {
        let request = prompts::initial_request(
            task,
            self.system_instruction_for(task.benchmark),
            &self.baselines.cot_preamble,
            self.options.params.clone(),
            "init",
        );
        let out = self.backend.generate(&request)?;
        let correct =
            verifier::verify_completion(&out.text, &task.gold, task.answer_type, &self.options.verifier)
                .correct;
        Ok(Baseline {
            text: out.text,
            correct,
        })
    }

    /// (pool label, ordered (prompt_id, prompt_text) jobs) for iteration `t`.
    fn candidate_plan(
        &self,
        kind: &StrategyKind,
        t: u32,
    ) -> Result<(String, Vec<(String, String)>), ProtocolError> {
        match kind {
            StrategyKind::Heart { pattern } => {
                let group = pattern.group_at(t as usize).ok_or_else(|| {
                    ProtocolError::StrategySpec {
                        spec: format!("heart:{}", pattern.render()),
                        message: format!("no group scheduled for iteration {t}"),
                    }
                })?;
                let cues = self
                    .bank
                    .cues_for_group(group)
                    .map_err(|e| ProtocolError::StrategySpec {
                        spec: group.render(),
                        message: e.to_string(),
                    })?;
                Ok((
                    group.render(),
                    cues.iter()
                        .map(|c| (c.id.clone(), c.text.clone()))
                        .collect(),
                ))
            }
            StrategyKind::Wait => {
                let k = self.candidate_budget(t);
                Ok((
                    "wait".to_string(),
                    (1..=k)
                        .map(|i| (format!("wait#{i}"), self.baselines.wait_text.clone()))
                        .collect(),
                ))
            }
            StrategyKind::Cot => {
                let k = self.candidate_budget(t);
                Ok((
                    "cot".to_string(),
                    (1..=k)
                        .map(|i| (format!("cot#{i}"), self.baselines.cot_preamble.clone()))
                        .collect(),
                ))
            }
            StrategyKind::SelfReflection { ids } => {
                let k = self.candidate_budget(t);
                let prompts: Vec<(String, String)> = (1..=k)
                    .map(|i| {
                        let sr_id = ids[(i - 1) % ids.len()];
                        let prompt = self
                            .baselines
                            .self_reflection_by_id(sr_id)
                            .expect("sr ids validated at parse time");
                        (format!("sr{sr_id}#{i}"), prompt.text.clone())
                    })
                    .collect();
                Ok(("self_reflection".to_string(), prompts))
            }
        }
    }

    /// Generates the candidate set for iteration `t`. A candidate-level
    /// backend failure becomes a sentinel candidate rather than aborting
    /// the iteration. Candidates keep prompt order regardless of completion
    /// order.
    pub fn run_iteration(
        &self,
        task: &Task,
        t: u32,
        kind: &StrategyKind,
        prev_best: &str,
        strategy_label: &str,
    ) -> Result<IterationRecord, ProtocolError> {
        let (pool, jobs) = self.candidate_plan(kind, t)?;
        let system_instruction = self.system_instruction_for(task.benchmark);
        let candidates = parallel_map_ordered(
            &jobs,
            self.options.candidate_parallelism,
            |_, (prompt_id, prompt_text)| {
                let request = prompts::feedback_request(
                    task,
                    prev_best,
                    prompt_text,
                    system_instruction,
                    self.options.params.clone(),
                    RequestTags {
                        task_id: task.id.clone(),
                        iteration: t,
                        prompt_id: prompt_id.clone(),
                        strategy: strategy_label.to_string(),
                    },
                );
                match self.backend.generate(&request) {
                    Ok(out) => Candidate {
                        prompt_id: prompt_id.clone(),
                        extracted: verifier::extract_answer(&out.text),
                        text: out.text,
                        verdict: None,
                        failed: false,
                        error: None,
                    },
                    Err(e) => Candidate {
                        prompt_id: prompt_id.clone(),
                        text: String::new(),
                        extracted: None,
                        verdict: None,
                        failed: true,
                        error: Some(e.to_string()),
                    },
                }
            },
        );
        Ok(IterationRecord {
            t,
            pool,
            candidates,
            resolved_text: String::new(),
            resolved_correct: None,
        })
    }

    /// S1 resolution: verify every candidate, select the lowest-index
    /// correct one and halt, else carry candidate 0 (or the previous best
    /// when configured). Returns whether the run halts.
    pub fn resolve_s1(
        &self,
        record: &mut IterationRecord,
        prev_best: &str,
        gold: &str,
        answer_type: crate::verifier::AnswerType,
    ) -> Result<bool, ProtocolError> {
        let texts: Vec<String> = record.candidates.iter().map(|c| c.text.clone()).collect();
        let selection = verifier::oracle_select(&texts, gold, answer_type, &self.options.verifier)
            .map_err(|_| ProtocolError::AllCandidatesFailed { t: record.t })?;
        for (candidate, verdict) in record.candidates.iter_mut().zip(selection.verdicts) {
            candidate.verdict = Some(verdict);
        }
        if selection.halt {
            record.resolved_text = record.candidates[selection.selected].text.clone();
        } else if self.options.carry_previous_on_all_fail {
            record.resolved_text = prev_best.to_string();
        } else {
            record.resolved_text = record.candidates[selection.selected].text.clone();
        }
        record.resolved_correct = Some(selection.halt);
        Ok(selection.halt)
    }

    /// S2 resolution: one ensembler call over the non-failed candidates.
    /// Ground truth is not an input. On ensembler failure the iteration
    /// falls back to the first non-failed candidate's text.
    pub fn resolve_s2(
        &self,
        record: &mut IterationRecord,
        task_id: &str,
        question: &str,
        system_instruction: Option<&str>,
        strategy_label: &str,
    ) -> Result<(), ProtocolError> {
        let texts: Vec<&str> = record
            .candidates
            .iter()
            .filter(|c| !c.failed)
            .map(|c| c.text.as_str())
            .collect();
        if texts.is_empty() {
            return Err(ProtocolError::AllCandidatesFailed { t: record.t });
        }
        let request = prompts::ensembler_request(
            question,
            &texts,
            system_instruction,
            self.options.params.clone(),
            RequestTags {
                task_id: task_id.to_string(),
                iteration: record.t,
                prompt_id: "ensembler".to_string(),
                strategy: strategy_label.to_string(),
            },
        );
        let ensembler = self.ensembler.unwrap_or(self.backend);
        record.resolved_text = match ensembler.generate(&request) {
            Ok(out) => out.text,
            Err(_) => texts[0].to_string(),
        };
        Ok(())
    }

    /// Runs one task under one strategy. Task-level errors are recorded in
    /// the run record, not thrown.
    pub fn run_task(
        &self,
        task: &Task,
        strategy: &Strategy,
        shared_baseline: Option<&Baseline>,
    ) -> RunRecord {
        let label = strategy.label();
        let mut record = RunRecord {
            task_id: task.id.clone(),
            benchmark: task.benchmark,
            strategy: label.clone(),
            resolution: strategy.resolution,
            baseline_answer: String::new(),
            baseline_correct: false,
            iterations: Vec::new(),
            first_correct_iteration: None,
            final_correct: false,
            request_count: 0,
            error: None,
        };
        let baseline = match shared_baseline {
            Some(b) => b.clone(),
            None => match self.init_baseline(task) {
                Ok(b) => b,
                Err(e) => {
                    record.request_count = 1;
                    record.error = Some(format!("baseline generation failed: {e}"));
                    return record;
                }
            },
        };
        record.request_count = 1;
        record.baseline_answer = baseline.text.clone();
        record.baseline_correct = baseline.correct;

        let n = match &strategy.kind {
            StrategyKind::Heart { pattern } => self.options.max_iterations.min(pattern.len()),
            _ => self.options.max_iterations,
        };

        match strategy.resolution {
            Resolution::S1Oracle => {
                if baseline.correct {
                    record.first_correct_iteration = Some(0);
                    record.final_correct = true;
                    return record;
                }
                let mut prev = baseline.text;
                for t in 1..=n as u32 {
                    let mut iteration =
                        match self.run_iteration(task, t, &strategy.kind, &prev, &label) {
                            Ok(it) => it,
                            Err(e) => {
                                record.error = Some(e.to_string());
                                return record;
                            }
                        };
                    record.request_count += iteration.candidates.len() as u32;
                    let halt = match self.resolve_s1(
                        &mut iteration,
                        &prev,
                        &task.gold,
                        task.answer_type,
                    ) {
                        Ok(h) => h,
                        Err(e) => {
                            record.iterations.push(iteration);
                            record.error = Some(e.to_string());
                            return record;
                        }
                    };
                    prev = iteration.resolved_text.clone();
                    record.iterations.push(iteration);
                    if halt {
                        record.first_correct_iteration = Some(t);
                        record.final_correct = true;
                        return record;
                    }
                }
                record.final_correct = false;
            }
            Resolution::S2Synthesis => {
                // No verifier is available to halt on: all N iterations run,
                // and correctness is judged post-hoc on the final answer.
                if baseline.correct {
                    record.first_correct_iteration = Some(0);
                }
                let system_instruction = self.system_instruction_for(task.benchmark);
                let mut prev = baseline.text;
                let mut last_correct = baseline.correct;
                for t in 1..=n as u32 {
                    let mut iteration =
                        match self.run_iteration(task, t, &strategy.kind, &prev, &label) {
                            Ok(it) => it,
                            Err(e) => {
                                record.error = Some(e.to_string());
                                return record;
                            }
                        };
                    record.request_count += iteration.candidates.len() as u32;
                    let resolve = self.resolve_s2(
                        &mut iteration,
                        &task.id,
                        &task.question,
                        system_instruction,
                        &label,
                    );
                    // The ensembler call counts whether or not it succeeded.
                    record.request_count += 1;
                    if let Err(e) = resolve {
                        record.iterations.push(iteration);
                        record.error = Some(e.to_string());
                        return record;
                    }
                    // Post-hoc scoring, recorded for metrics; never fed back.
                    let verdict = verifier::verify_completion(
                        &iteration.resolved_text,
                        &task.gold,
                        task.answer_type,
                        &self.options.verifier,
                    );
                    iteration.resolved_correct = Some(verdict.correct);
                    if verdict.correct && record.first_correct_iteration.is_none() {
                        record.first_correct_iteration = Some(t);
                    }
                    last_correct = verdict.correct;
                    prev = iteration.resolved_text.clone();
                    record.iterations.push(iteration);
                }
                record.final_correct = last_correct;
            }
        }
        record
    }
}
