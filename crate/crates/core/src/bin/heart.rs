//! Command-line entry point: `run`, `ablate`, `report`, `validate`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use heart_core::backend::{
    Backend, HttpBackend, RespondentModel, ScriptedBackend, StochasticBackend,
};
use heart_core::bank::{BaselinePrompts, CueBank, SchedulePattern};
use heart_core::config::RunConfig;
use heart_core::datasets::{self, Benchmark, Task};
use heart_core::engine::{self, Engine, EngineOptions};
use heart_core::protocol::{Resolution, RunOptions, Strategy, StrategyKind};
use heart_core::report::{self, ReportFormat};
use heart_core::verifier::VerifierOptions;

const EXIT_INTERRUPTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_ERROR_RATE: u8 = 4;

#[derive(Parser)]
#[command(name = "heart", version, about = "Affective iterative self-correction harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy comparison over a benchmark.
    Run(RunArgs),
    /// Run an emotion-pattern grid from a grid file.
    Ablate(AblateArgs),
    /// Recompute metric reports from existing run records.
    Report(ReportArgs),
    /// Check cue banks, datasets, patterns, and grid files.
    Validate(ValidateArgs),
}

/// Flags mirror config-file keys one-to-one; flags override file values.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backend kind: http, scripted, or stochastic.
    #[arg(long)]
    backend: Option<String>,
    /// Resolution mode: s1 (oracle) or s2 (generative synthesis).
    #[arg(long)]
    resolution: Option<String>,
    /// Iteration cap N.
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Total generation-call budget.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset JSONL path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Benchmark: simpleqa, hle, olympiad_math, olympiad_physics.
    #[arg(long)]
    benchmark: Option<String>,
    /// Cue bank JSONL; defaults to the bundled 30-cue bank.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Baseline prompts JSONL; defaults to the bundled set.
    #[arg(long)]
    baselines: Option<PathBuf>,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Heart schedule pattern, e.g. "hsur->sa->hsur->sa".
    #[arg(long)]
    pattern: Option<String>,
    /// Comma-separated strategy specs.
    #[arg(long)]
    strategies: Option<String>,
    /// Run only the first n tasks.
    #[arg(long)]
    limit: Option<usize>,
    /// Which split side to run: validation, test, or all.
    #[arg(long)]
    use_split: Option<String>,
    /// Respondent model overrides, e.g.
    /// "baseline_rate=0.2,candidate_rate=0.05,polarity_switch_bonus=0.1".
    #[arg(long)]
    respondent: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid file: one pattern spec or strategy name per line.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run records file (runs.jsonl).
    #[arg(long)]
    records: PathBuf,
    /// Output formats, comma-separated: csv, jsonl, markdown.
    #[arg(long, default_value = "csv,markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_iterations: u32,
    /// Exclude errored runs from denominators.
    #[arg(long)]
    skip_errored: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    baselines: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    /// Pattern specs to check; repeatable.
    #[arg(long)]
    pattern: Vec<String>,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Iteration cap grid entries are validated against.
    #[arg(long, default_value_t = 4)]
    max_iterations: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn assemble_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.backend {
        config.backend = v.clone();
    }
    if let Some(v) = &common.resolution {
        config.resolution = v.clone();
    }
    if let Some(v) = common.max_iterations {
        config.max_iterations = v;
    }
    if let Some(v) = common.parallelism {
        config.parallelism = v;
    }
    if let Some(v) = common.budget {
        config.budget = Some(v);
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = &common.out {
        config.out = v.clone();
    }
    if let Some(v) = &common.dataset {
        config.dataset = Some(v.clone());
    }
    if let Some(v) = &common.benchmark {
        config.benchmark = Some(v.clone());
    }
    if let Some(v) = &common.bank {
        config.bank = Some(v.clone());
    }
    if let Some(v) = &common.baselines {
        config.baselines = Some(v.clone());
    }
    if let Some(v) = &common.script {
        config.script = Some(v.clone());
    }
    if let Some(v) = &common.endpoint {
        config.endpoint = v.clone();
    }
    if let Some(v) = &common.model {
        config.model = v.clone();
    }
    if let Some(v) = &common.pattern {
        config.pattern = Some(v.clone());
    }
    if let Some(v) = &common.strategies {
        config.strategies = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(v) = common.limit {
        config.limit = Some(v);
    }
    if let Some(v) = &common.use_split {
        config.use_split = v.clone();
    }
    if let Some(v) = &common.respondent {
        config.respondent = parse_respondent(v, config.respondent)?;
    }
    Ok(config)
}

fn parse_respondent(spec: &str, mut model: RespondentModel) -> Result<RespondentModel> {
    for pair in spec.split(',') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("respondent override '{pair}' is not key=value"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("respondent value in '{pair}'"))?;
        match key.trim() {
            "baseline_rate" => model.baseline_rate = value,
            "candidate_rate" => model.candidate_rate = value,
            "polarity_switch_bonus" => model.polarity_switch_bonus = value,
            "prev_correct_bonus" => model.prev_correct_bonus = value,
            other => bail!("unknown respondent field '{other}'"),
        }
    }
    Ok(model)
}

struct Prepared {
    config: RunConfig,
    tasks: Vec<Task>,
    strategies: Vec<Strategy>,
    resolution: Resolution,
    engine: Engine,
}

/// Validates config, loads data, and wires the engine. No generation
/// request is issued before everything here has passed.
fn prepare(common: &CommonArgs, need_strategies: bool) -> Result<Prepared> {
    let config = assemble_config(common)?;
    config.validate()?;
    let resolution = Resolution::parse(&config.resolution)?;

    let bank = match &config.bank {
        Some(path) => CueBank::load(path)?,
        None => CueBank::bundled(),
    };
    let baselines = match &config.baselines {
        Some(path) => BaselinePrompts::load(path)?,
        None => BaselinePrompts::bundled(),
    };

    let dataset = config
        .dataset
        .clone()
        .ok_or_else(|| anyhow!("no dataset configured (--dataset)"))?;
    let benchmark: Benchmark = config
        .benchmark
        .clone()
        .ok_or_else(|| anyhow!("no benchmark configured (--benchmark)"))?
        .parse()?;
    let (all_tasks, filter_report) = datasets::load_tasks(&dataset, benchmark)?;
    if all_tasks.is_empty() {
        bail!("dataset {} has no usable tasks", dataset.display());
    }
    let mut tasks = match config.use_split.as_str() {
        "all" => all_tasks,
        side => {
            let spec = datasets::SplitSpec {
                validation_fraction: config.validation_fraction,
                seed: config.split_seed,
            };
            let (validation, test) = datasets::split(&all_tasks, &spec)?;
            if side == "validation" {
                validation
            } else {
                test
            }
        }
    };
    if let Some(limit) = config.limit {
        tasks.truncate(limit);
    }

    // Default heart pattern for bare "heart" specs and baseline budgets.
    let heart_pattern = match &config.pattern {
        Some(spec) => SchedulePattern::parse(spec)?,
        None => SchedulePattern::default_heart(),
    };
    let mut strategies = Vec::new();
    for spec in &config.strategies {
        let kind = if spec.trim().eq_ignore_ascii_case("heart") {
            StrategyKind::Heart {
                pattern: heart_pattern.clone(),
            }
        } else {
            Strategy::parse_kind(spec)?
        };
        let strategy = Strategy::new(kind, resolution);
        strategy.validate(config.max_iterations)?;
        strategies.push(strategy);
    }
    let comparison_pattern = strategies
        .iter()
        .find_map(|s| match &s.kind {
            StrategyKind::Heart { pattern } => Some(pattern.clone()),
            _ => None,
        })
        .unwrap_or(heart_pattern);

    let backend: Arc<dyn Backend> = match config.backend.as_str() {
        "http" => Arc::new(HttpBackend::new(config.http_config())),
        "scripted" => {
            let script = config.script.clone().expect("validated");
            Arc::new(ScriptedBackend::load(&script)?)
        }
        "stochastic" => {
            let golds = tasks
                .iter()
                .map(|t| (t.id.clone(), t.gold.clone(), t.answer_type));
            Arc::new(StochasticBackend::new(
                config.respondent,
                config.seed,
                golds,
                &bank,
            )?)
        }
        other => bail!("unknown backend '{other}'"),
    };

    let options = EngineOptions {
        run: RunOptions {
            max_iterations: config.max_iterations,
            params: heart_core::backend::GenParams {
                temperature: config.temperature,
                top_p: config.top_p,
                max_tokens: config.max_tokens,
                thinking_enabled: config.thinking_enabled,
            },
            verifier: VerifierOptions {
                numeric_rel_tol: config.numeric_rel_tol,
            },
            carry_previous_on_all_fail: config.carry_previous_on_all_fail,
            comparison_pattern,
            system_instruction: config.system_instruction.clone(),
            candidate_parallelism: config.parallelism,
        },
        parallelism: config.parallelism,
        out_dir: config.out.clone(),
        budget_limit: config.budget,
        seed: config.seed,
        config_hash: config.canonical_hash(),
    };
    let engine = Engine::new(Arc::new(bank), Arc::new(baselines), backend, None, options);

    std::fs::create_dir_all(&config.out)?;
    report::write_report(
        config.out.join("filter_report.json"),
        &serde_json::to_string_pretty(&filter_report)?,
    )?;

    if need_strategies && strategies.is_empty() {
        bail!("no strategies configured");
    }
    Ok(Prepared {
        config,
        tasks,
        strategies,
        resolution,
        engine,
    })
}

fn install_interrupt(engine: &Engine) {
    let flag = engine.interrupt_flag();
    let result = ctrlc::set_handler(move || {
        eprintln!("interrupt received; draining in-flight requests...");
        flag.store(true, std::sync::atomic::Ordering::SeqCst);
    });
    if result.is_err() {
        // Handler already installed (e.g. repeated invocation in-process).
    }
}

fn budget_hit(records: &[heart_core::RunRecord]) -> bool {
    let mentions_budget = |e: &Option<String>| {
        e.as_deref()
            .is_some_and(|m| m.contains("budget exceeded"))
    };
    records.iter().any(|r| {
        mentions_budget(&r.error)
            || r.iterations
                .iter()
                .any(|it| it.candidates.iter().any(|c| mentions_budget(&c.error)))
    })
}

fn gate_exit(
    records: &[heart_core::RunRecord],
    interrupted: bool,
    max_error_rate: f64,
) -> Option<u8> {
    if interrupted {
        return Some(EXIT_INTERRUPTED);
    }
    if budget_hit(records) {
        eprintln!("request budget exhausted during the run");
        return Some(EXIT_BUDGET);
    }
    if !records.is_empty() {
        let errored = records.iter().filter(|r| r.error.is_some()).count();
        let rate = errored as f64 / records.len() as f64;
        if rate > max_error_rate {
            eprintln!(
                "task error rate {:.2}% exceeds the configured maximum {:.2}%",
                rate * 100.0,
                max_error_rate * 100.0
            );
            return Some(EXIT_ERROR_RATE);
        }
    }
    None
}

fn metric_records(records: &[heart_core::RunRecord], skip_errored: bool) -> Vec<heart_core::RunRecord> {
    if skip_errored {
        records.iter().filter(|r| r.error.is_none()).cloned().collect()
    } else {
        records.to_vec()
    }
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let prepared = prepare(&args.common, true)?;
    install_interrupt(&prepared.engine);
    let outcome = prepared
        .engine
        .run_comparison(&prepared.tasks, &prepared.strategies)?;

    let for_metrics = metric_records(&outcome.records, prepared.config.skip_errored);
    if !for_metrics.is_empty() {
        let series = report::build_series(&for_metrics, prepared.config.max_iterations as u32)?;
        let reports_dir = prepared.config.out.join("reports");
        report::write_report(
            reports_dir.join("cumulative_accuracy.csv"),
            &report::render_series(&series, ReportFormat::Csv)?,
        )?;
        report::write_report(
            reports_dir.join("series.jsonl"),
            &report::render_series(&series, ReportFormat::Jsonl)?,
        )?;
        let markdown = report::render_series(&series, ReportFormat::Markdown)?;
        report::write_report(reports_dir.join("summary.md"), &markdown)?;
        for (name, body) in report::plot_series_files(&series)? {
            report::write_report(reports_dir.join("plot").join(name), &body)?;
        }
        println!("{markdown}");
    }
    println!(
        "executed {} run(s), skipped {} already-complete, {} generation call(s)",
        outcome.executed, outcome.skipped, outcome.requests_used
    );

    Ok(gate_exit(
        &outcome.records,
        outcome.interrupted,
        prepared.config.max_error_rate,
    )
    .unwrap_or(0))
}

fn cmd_ablate(args: AblateArgs) -> Result<u8> {
    let prepared = prepare(&args.common, false)?;
    // --grid can also come from the config file.
    let grid_path = args
        .grid
        .or_else(|| prepared.config.grid.clone())
        .ok_or_else(|| anyhow!("no grid file configured (--grid)"))?;
    let raw = std::fs::read_to_string(&grid_path)
        .with_context(|| format!("reading grid {}", grid_path.display()))?;
    let specs: Vec<String> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if specs.is_empty() {
        bail!("grid file {} has no entries", grid_path.display());
    }

    install_interrupt(&prepared.engine);
    let (cells, warnings) =
        prepared
            .engine
            .run_grid(&prepared.tasks, &specs, prepared.resolution)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let reports_dir = prepared.config.out.join("reports");
    report::write_report(
        reports_dir.join("ablation.csv"),
        &report::render_cells(&cells, ReportFormat::Csv)?,
    )?;
    report::write_report(
        reports_dir.join("ablation.jsonl"),
        &report::render_cells(&cells, ReportFormat::Jsonl)?,
    )?;
    let markdown = report::render_cells(&cells, ReportFormat::Markdown)?;
    report::write_report(reports_dir.join("ablation.md"), &markdown)?;
    println!("{markdown}");

    let records = engine::load_records(prepared.engine.records_path())?;
    Ok(gate_exit(&records, false, prepared.config.max_error_rate).unwrap_or(0))
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let records = engine::load_records(&args.records)?;
    let records = metric_records(&records, args.skip_errored);
    if records.is_empty() {
        bail!("no records in {}", args.records.display());
    }
    let series = report::build_series(&records, args.max_iterations)?;
    let out_dir = args.out.unwrap_or_else(|| {
        args.records
            .parent()
            .unwrap_or(Path::new("."))
            .join("reports")
    });
    for format_name in args.format.split(',') {
        let format: ReportFormat = format_name.parse().map_err(|e: String| anyhow!(e))?;
        let (name, body) = match format {
            ReportFormat::Csv => (
                "cumulative_accuracy.csv",
                report::render_series(&series, format)?,
            ),
            ReportFormat::Jsonl => ("series.jsonl", report::render_series(&series, format)?),
            ReportFormat::Markdown => ("summary.md", report::render_series(&series, format)?),
        };
        report::write_report(out_dir.join(name), &body)?;
        println!("wrote {}", out_dir.join(name).display());
    }
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> Result<u8> {
    let mut failures = 0usize;
    let mut check = |label: String, result: Result<String>| match result {
        Ok(detail) => println!("ok: {label}: {detail}"),
        Err(e) => {
            failures += 1;
            println!("FAIL: {label}: {e:#}");
        }
    };

    match &args.bank {
        Some(path) => check(
            format!("cue bank {}", path.display()),
            CueBank::load(path).map(|b| format!("{} cues", b.len())).map_err(Into::into),
        ),
        None => check(
            "bundled cue bank".to_string(),
            Ok(format!("{} cues", CueBank::bundled().len())),
        ),
    }
    match &args.baselines {
        Some(path) => check(
            format!("baseline prompts {}", path.display()),
            BaselinePrompts::load(path)
                .map(|b| format!("{} self-reflection prompts", b.self_reflection().len()))
                .map_err(Into::into),
        ),
        None => check(
            "bundled baseline prompts".to_string(),
            Ok("10 self-reflection prompts".to_string()),
        ),
    }
    if let Some(dataset) = &args.dataset {
        let result = (|| -> Result<String> {
            let benchmark: Benchmark = args
                .benchmark
                .clone()
                .ok_or_else(|| anyhow!("--benchmark required with --dataset"))?
                .parse()?;
            let (tasks, report) = datasets::load_tasks(dataset, benchmark)?;
            Ok(format!(
                "{} tasks ({} image records filtered)",
                tasks.len(),
                report.filtered_images
            ))
        })();
        check(format!("dataset {}", dataset.display()), result);
    }
    for pattern in &args.pattern {
        check(
            format!("pattern '{pattern}'"),
            SchedulePattern::parse(pattern)
                .map(|p| format!("{} iteration(s), renders '{}'", p.len(), p.render()))
                .map_err(Into::into),
        );
    }
    if let Some(grid) = &args.grid {
        let result = (|| -> Result<String> {
            let raw = std::fs::read_to_string(grid)?;
            let mut entries = 0usize;
            for (lineno, line) in raw.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                engine::parse_grid_entry(line, args.max_iterations, Resolution::S1Oracle)
                    .map_err(|e| anyhow!("line {}: '{line}': {e}", lineno + 1))?;
                entries += 1;
            }
            if entries == 0 {
                bail!("grid file has no entries");
            }
            Ok(format!("{entries} entries"))
        })();
        check(format!("grid {}", grid.display()), result);
    }

    if failures == 0 {
        println!("validation passed");
        Ok(0)
    } else {
        println!("validation failed: {failures} item(s)");
        Ok(EXIT_INTERRUPTED)
    }
}
