//! Acceptance gates. Each test checks one verification criterion end to end
//! and prints a PASS line; expected values come from independent oracles
//! (hand traces, brute-force counts, exact i128 fraction arithmetic, and a
//! closed-form success model for the respondent simulator) computed in this
//! file, not from the implementation under test.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use heart_core::backend::{Backend, RespondentModel, ScriptedBackend, StochasticBackend};
use heart_core::bank::{BaselinePrompts, CueBank, Polarity, SchedulePattern};
use heart_core::datasets::{self, SplitSpec};
use heart_core::protocol::{
    Baseline, Resolution, RunOptions, RunRecord, Strategy, StrategyKind, TaskRunner,
};
use heart_core::verifier::{self, AnswerType, VerifierOptions};
use heart_core::{Benchmark, Task};

const N: usize = 4;

fn boxed(answer: &str) -> String {
    format!("So the final answer is \\boxed{{{answer}}}.")
}

fn math_task(id: &str, gold: &str) -> Task {
    Task {
        id: id.to_string(),
        question: format!("Synthetic question {id}?"),
        gold: gold.to_string(),
        answer_type: AnswerType::Numerical,
        benchmark: Benchmark::OlympiadMath,
        subject: None,
    }
}

fn heart_strategy(pattern: &str, resolution: Resolution) -> Strategy {
    Strategy::new(
        StrategyKind::Heart {
            pattern: SchedulePattern::parse(pattern).unwrap(),
        },
        resolution,
    )
}

fn runner<'a>(
    bank: &'a CueBank,
    baselines: &'a BaselinePrompts,
    backend: &'a dyn Backend,
    options: &'a RunOptions,
) -> TaskRunner<'a> {
    TaskRunner {
        bank,
        baselines,
        backend,
        ensembler: None,
        options,
    }
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Criterion 1: with a backend scripted to stay wrong until one candidate
/// answers correctly at t=3, an oracle-guided run records exactly three
/// iterations, halts there, and matches the frozen golden record. Runs in
/// under a second.
#[test]
fn criterion_01_protocol_state_machine() {
    let started = Instant::now();
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let mut script = ScriptedBackend::builder();
    for t in 0..=4 {
        script = script.wildcard("T1", t, &boxed("7"));
    }
    let backend = script.exact("T1", 3, "happy-2", &boxed("4")).build().unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);
    let record = r.run_task(
        &math_task("T1", "4"),
        &heart_strategy("hsur->sa->hsur->sa", Resolution::S1Oracle),
        None,
    );

    assert_eq!(record.iterations.len(), 3, "halting leaves no t=4 record");
    assert_eq!(record.first_correct_iteration, Some(3));
    assert!(record.final_correct);
    assert!(record.iterations.iter().all(|it| it.t <= 3));

    let rendered = serde_json::to_string_pretty(&record).unwrap();
    let golden = golden_path("criterion1_run.json");
    if std::env::var("HEART_UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &rendered).unwrap();
    }
    let expected = std::fs::read_to_string(&golden)
        .expect("golden file missing; regenerate with HEART_UPDATE_GOLDEN=1");
    assert_eq!(rendered, expected, "run record matches golden file exactly");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("ACCEPTANCE 01 protocol-state-machine: PASS ({elapsed:?})");
}

/// Criterion 2: every baseline produces exactly as many candidates per
/// iteration as the heart pattern's active pool, across 100 scripted tasks
/// and two pool shapes (10 for two-emotion groups, 5 for singletons).
#[test]
fn criterion_02_budget_parity() {
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let mut script = ScriptedBackend::builder();
    let tasks: Vec<Task> = (0..100).map(|i| math_task(&format!("b{i:03}"), "4")).collect();
    for task in &tasks {
        for t in 0..=4 {
            script = script.wildcard(&task.id, t, &boxed("7"));
        }
    }
    let backend = script.build().unwrap();

    let mut violations = 0usize;
    for pattern in ["hsur->sa->hsur->sa", "h->sa->f->da"] {
        let comparison = SchedulePattern::parse(pattern).unwrap();
        let options = RunOptions {
            comparison_pattern: comparison.clone(),
            ..RunOptions::default()
        };
        let r = runner(&bank, &baselines, &backend, &options);
        let strategies = [heart_strategy(pattern, Resolution::S1Oracle),
            Strategy::new(StrategyKind::Wait, Resolution::S1Oracle),
            Strategy::new(StrategyKind::Cot, Resolution::S1Oracle),
            Strategy::new(
                StrategyKind::SelfReflection {
                    ids: (1..=10).collect(),
                },
                Resolution::S1Oracle,
            )];
        for task in &tasks {
            let records: Vec<RunRecord> = strategies
                .iter()
                .map(|s| r.run_task(task, s, None))
                .collect();
            for t in 1..=N as u32 {
                let expected = comparison.group_at(t as usize).unwrap().len() * 5;
                for record in &records {
                    let got = record.iterations[t as usize - 1].candidates.len();
                    if got != expected {
                        violations += 1;
                    }
                }
            }
        }
    }
    assert_eq!(violations, 0, "budget parity must hold everywhere");
    println!("ACCEPTANCE 02 budget-parity: PASS (0 violations over 100 tasks x 2 pools)");
}

/// Criterion 3: every strategy-table pattern spec round-trips through
/// parse/render verbatim, and the default schedule alternates polarity
/// strictly.
#[test]
fn criterion_03_schedule_correctness() {
    let specs = [
        "hsur->hsur->sd->sd",
        "hsur->hsur->fd->fd",
        "sd->hsur->sd->hsur",
        "fa->fa->fa->fa",
        "hsur->hsur->hsur->hsur",
        "fa->hsur->fa->hsur",
        "sd->sd->hsur->hsur",
        "hsur->hsur->da->da",
        "da->da->da->da",
        "hsur->fs->hsur->fs",
        "hsur->sa->hsur->sa",
        "fd->fd->hsur->hsur",
        "da->da->hsur->hsur",
        "fs->fs->fs->fs",
        "da->hsur->da->hsur",
        "fd->fd->fd->fd",
        "hsur->fa->hsur->fa",
        "fd->hsur->fd->hsur",
        "fa->fa->hsur->hsur",
        "fs->fs->hsur->hsur",
        "hsur->sd->hsur->sd",
        "hsur->hsur->fs->fs",
        "fs->hsur->fs->hsur",
        "hsur->da->hsur->da",
        "hsur->fd->hsur->fd",
        "sd->sd->sd->sd",
        "sa->hsur->sa->hsur",
        "h->h->h->h",
        "sur->sur->sur->sur",
        "s->s->s->s",
        "d->d->d->d",
        "a->a->a->a",
        "f->f->f->f",
        // Slash notation variants of the same schedules.
        "h/sur->h/sur->s/d->s/d",
        "f/a->f/a->f/a->f/a",
        "h/sur->s/a->h/sur->s/a",
        "f/s->f/s->f/s->f/s",
        "d/a->h/sur->d/a->h/sur",
        "f/d->f/d->h/sur->h/sur",
        "h/sur->f/d->h/sur->f/d",
    ];
    let mut failures = 0usize;
    for spec in specs {
        let Ok(parsed) = SchedulePattern::parse(spec) else {
            failures += 1;
            continue;
        };
        let canonical = spec.replace('/', "");
        if parsed.render() != canonical {
            failures += 1;
        }
        if SchedulePattern::parse(&parsed.render()).unwrap() != parsed {
            failures += 1;
        }
        if parsed.len() != 4 {
            failures += 1;
        }
    }
    assert_eq!(failures, 0, "all {} specs round-trip", specs.len());

    let default = SchedulePattern::default_heart();
    let polarity: Vec<Polarity> = default.groups().iter().map(|g| g.polarity()).collect();
    for pair in polarity.windows(2) {
        assert_ne!(pair[0], pair[1], "strict polarity alternation");
    }
    assert_eq!(polarity[0], Polarity::Positive);
    println!(
        "ACCEPTANCE 03 schedule-correctness: PASS ({} specs, strict alternation)",
        specs.len()
    );
}

/// Criterion 4: over 10 000 randomly generated candidate sets, the oracle
/// halts exactly when a correct candidate exists and always selects the
/// lowest correct index (index 0 when none is correct).
#[test]
fn criterion_04_oracle_semantics() {
    const GOLD: &str = "42";
    let correct_forms = [
        boxed("42"),
        "after rework, the final answer is 42".to_string(),
        boxed(" 42 "),
        "therefore $\\boxed{42}$".to_string(),
    ];
    let wrong_forms = [
        boxed("41"),
        boxed("-42"),
        boxed("forty-two"),
        "I cannot solve this one.".to_string(),
        "the final answer is 43.".to_string(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let options = VerifierOptions::default();
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=12usize);
        let mut texts = Vec::with_capacity(len);
        let mut truth = Vec::with_capacity(len);
        for _ in 0..len {
            // The generator knows correctness by construction.
            let correct = rng.random::<f64>() < 0.25;
            let pool = if correct { &correct_forms[..] } else { &wrong_forms[..] };
            texts.push(pool[rng.random_range(0..pool.len())].clone());
            truth.push(correct);
        }
        let expected_halt = truth.iter().any(|&c| c);
        let expected_index = truth.iter().position(|&c| c).unwrap_or(0);
        let selection =
            verifier::oracle_select(&texts, GOLD, AnswerType::Numerical, &options).unwrap();
        if selection.halt != expected_halt
            || selection.selected != expected_index
            || selection.verdicts[selection.selected].correct != selection.halt
        {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    println!("ACCEPTANCE 04 oracle-semantics: PASS (10000 cases, 0 violations)");
}

/// Criterion 5: the floor-rule split reproduces all four published
/// validation/test size rows exactly.
#[test]
fn criterion_05_split_reproduction() {
    let rows = [
        (4326usize, 865usize, 3461usize),
        (2160, 432, 1728),
        (236, 47, 189),
        (674, 134, 540),
    ];
    for (n, expected_validation, expected_test) in rows {
        let tasks: Vec<Task> = (0..n).map(|i| math_task(&format!("s{i}"), "4")).collect();
        let (validation, test) = datasets::split(&tasks, &SplitSpec::default()).unwrap();
        assert_eq!(validation.len(), expected_validation, "n = {n}");
        assert_eq!(test.len(), expected_test, "n = {n}");
        assert_eq!(datasets::validation_size(n, 0.2), expected_validation);
    }
    println!("ACCEPTANCE 05 split-reproduction: PASS (4 rows exact)");
}

/// Independent exact-arithmetic oracle for criterion 6: i128 fractions,
/// reduced with gcd, compared by cross-multiplication. Written against the
/// verifier, not with it.
mod exact_fraction {
    pub fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 { a.abs() } else { gcd(b, a % b) }
    }

    pub fn reduce((n, d): (i128, i128)) -> (i128, i128) {
        let g = gcd(n, d).max(1);
        let sign = if d < 0 { -1 } else { 1 };
        (sign * n / g, sign * d / g)
    }

    /// Parses "a/b", "141.75", or "42" into an exact fraction.
    pub fn parse(s: &str) -> (i128, i128) {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            return reduce((n.trim().parse().unwrap(), d.trim().parse().unwrap()));
        }
        match s.split_once('.') {
            Some((int, frac)) => {
                let negative = int.starts_with('-');
                let scale = 10i128.pow(frac.len() as u32);
                let int_part: i128 = int.trim_start_matches(['-', '+']).parse().unwrap_or(0);
                let frac_part: i128 = frac.parse().unwrap();
                let magnitude = int_part * scale + frac_part;
                reduce((if negative { -magnitude } else { magnitude }, scale))
            }
            None => (s.parse().unwrap(), 1),
        }
    }

    pub fn eq(a: (i128, i128), b: (i128, i128)) -> bool {
        a.0 * b.1 == b.0 * a.1
    }
}

/// Criterion 6: `\frac{567}{4}`, `567/4`, and `141.75` normalize to the
/// same numerical answer, `\sqrt{15}` matches `sqrt(15)` as an expression,
/// and last-boxed extraction on a worked digit-sum solution returns "4".
#[test]
fn criterion_06_verifier_normalization() {
    // Exact-arithmetic oracle first: 141.75 really is 567/4.
    let decimal = exact_fraction::parse("141.75");
    let ratio = exact_fraction::parse("567/4");
    assert!(exact_fraction::eq(decimal, ratio), "oracle: 141.75 == 567/4");
    assert_eq!(exact_fraction::reduce(decimal), (567, 4));

    assert_eq!(verifier::normalize("\\frac{567}{4}", AnswerType::Numerical), "567/4");
    assert_eq!(verifier::normalize("567/4", AnswerType::Numerical), "567/4");
    assert_eq!(verifier::normalize("141.75", AnswerType::Numerical), "567/4");
    assert!(verifier::exact_match("\\frac{567}{4}", "141.75", AnswerType::Numerical).correct);
    assert!(verifier::exact_match("141.75", "567/4", AnswerType::Numerical).correct);
    assert!(verifier::exact_match("\\sqrt{15}", "sqrt(15)", AnswerType::Expression).correct);

    let worked_example = "Let N = (10^3 + 1)^2. Since 10^3 + 1 = 1001, \
        N = 1001^2 = 1000^2 + 2*1000 + 1 = 1002001. Its digits are 1, 0, 0, 2, 0, 0, 1, \
        which add to 1 + 2 + 1 = 4. The final answer is $\\boxed{4}$.";
    assert_eq!(verifier::extract_answer(worked_example).as_deref(), Some("4"));
    println!("ACCEPTANCE 06 verifier-normalization: PASS");
}

/// Criterion 7: oracle-guided cumulative accuracy is non-decreasing in t
/// over 1 000 scripted runs, and the four-task fixture reproduces
/// [0.25, 0.25, 0.75, 0.75, 0.75] exactly.
#[test]
fn criterion_07_cumulative_accuracy() {
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();

    // 1 000 tasks with random first-correct iterations (or never).
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut script = ScriptedBackend::builder();
    let mut tasks = Vec::new();
    let mut expected_first: HashMap<String, Option<u32>> = HashMap::new();
    for i in 0..1000 {
        let id = format!("c{i:04}");
        let first: Option<u32> = match rng.random_range(0..6u32) {
            5 => None,
            t => Some(t),
        };
        for t in 0..=4u32 {
            let correct = first.is_some_and(|f| t >= f);
            let answer = if correct { "4" } else { "7" };
            script = script.wildcard(&id, t, &boxed(answer));
        }
        expected_first.insert(id.clone(), first);
        tasks.push(math_task(&id, "4"));
    }
    let backend = script.build().unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);
    let strategy = heart_strategy("hsur->sa->hsur->sa", Resolution::S1Oracle);
    let records: Vec<RunRecord> = tasks.iter().map(|t| r.run_task(t, &strategy, None)).collect();

    let refs: Vec<&RunRecord> = records.iter().collect();
    let mut prev = 0.0;
    for t in 0..=4u32 {
        let acc = heart_core::report::cumulative_accuracy(&refs, t).unwrap();
        assert!(acc >= prev, "monotone at t = {t}");
        // Brute-force oracle: count tasks whose scripted first-correct <= t.
        let expected = expected_first.values().filter(|f| f.is_some_and(|v| v <= t)).count()
            as f64
            / tasks.len() as f64;
        assert!((acc - expected).abs() < 1e-12, "t = {t}");
        prev = acc;
    }

    // Hand-constructed fixture: first-correct at {0, 2, 2, never}.
    let mut script = ScriptedBackend::builder();
    let firsts: [(&str, Option<u32>); 4] =
        [("f1", Some(0)), ("f2", Some(2)), ("f3", Some(2)), ("f4", None)];
    for (id, first) in firsts {
        for t in 0..=4u32 {
            let correct = first.is_some_and(|f| t >= f);
            script = script.wildcard(id, t, &boxed(if correct { "4" } else { "7" }));
        }
    }
    let backend = script.build().unwrap();
    let r = runner(&bank, &baselines, &backend, &options);
    let records: Vec<RunRecord> = firsts
        .iter()
        .map(|(id, _)| r.run_task(&math_task(id, "4"), &strategy, None))
        .collect();
    let refs: Vec<&RunRecord> = records.iter().collect();
    let series: Vec<f64> = (0..=4)
        .map(|t| heart_core::report::cumulative_accuracy(&refs, t).unwrap())
        .collect();
    assert_eq!(series, vec![0.25, 0.25, 0.75, 0.75, 0.75]);
    println!("ACCEPTANCE 07 cumulative-accuracy: PASS (monotone x1000, fixture exact)");
}

/// Criterion 8: running S2 with a poisoned gold answer leaves every
/// generated and synthesized text byte-identical - ground truth is
/// unreachable on the S2 generation path.
#[test]
fn criterion_08_s2_isolation() {
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let mut script = ScriptedBackend::builder();
    let ids = ["i1", "i2", "i3", "i4", "i5"];
    for (i, id) in ids.iter().enumerate() {
        for t in 0..=4u32 {
            // Distinct deterministic text per (task, t).
            script = script.wildcard(id, t, &boxed(&format!("answer-{i}-{t}")));
        }
    }
    let backend = script.build().unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);
    let strategy = heart_strategy("hsur->sa->hsur->sa", Resolution::S2Synthesis);

    let run = |gold: &str| -> Vec<Vec<String>> {
        ids.iter()
            .map(|id| {
                let record = r.run_task(&math_task(id, gold), &strategy, None);
                assert_eq!(record.iterations.len(), 4);
                let mut texts: Vec<String> = record
                    .iterations
                    .iter()
                    .map(|it| it.resolved_text.clone())
                    .collect();
                texts.push(record.baseline_answer);
                texts
            })
            .collect()
    };

    let clean = run("answer-0-0");
    let poisoned = run("POISONED-GOLD-VALUE");
    assert_eq!(clean, poisoned, "resolved texts are byte-identical");
    println!("ACCEPTANCE 08 s2-isolation: PASS (poisoned gold changes nothing)");
}

fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_heart"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Criterion 9: two executions of `run` with the scripted backend and a
/// fixed seed produce byte-identical run records and reports; series values
/// match the hand-derived trajectory of the demo script; a ten-pattern grid
/// over the sample corpus completes inside the time budget.
#[test]
fn criterion_09_replay_determinism() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dataset = data_path("samples/olympiad_math.jsonl");
    let script = data_path("samples/olympiad_math.script.jsonl");

    let run_once = |out: &Path| {
        let output = run_cli(&[
            "run",
            "--backend",
            "scripted",
            "--script",
            script.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--benchmark",
            "olympiad_math",
            "--strategies",
            "heart,wait,cot,self-reflection",
            "--resolution",
            "s1",
            "--seed",
            "7",
            "--parallelism",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };

    let out1 = tmp.path().join("out1");
    let out2 = tmp.path().join("out2");
    run_once(&out1);
    run_once(&out2);

    for file in [
        "runs.jsonl",
        "reports/cumulative_accuracy.csv",
        "reports/series.jsonl",
        "reports/summary.md",
    ] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} is byte-identical across executions");
    }

    // Hand-derived golden: the demo script solves 3 tasks at t=0 and one
    // more at each of t=1..4 except two never solved, so cumulative
    // accuracy is 0.3, 0.4, 0.6, 0.7, 0.8. Wildcard scripting makes every
    // strategy identical.
    let csv = std::fs::read_to_string(out1.join("reports/cumulative_accuracy.csv")).unwrap();
    for strategy in ["heart:hsur->sa->hsur->sa", "wait", "cot", "self_reflection:all"] {
        for (t, expected) in ["0.300000", "0.400000", "0.600000", "0.700000", "0.800000"]
            .iter()
            .enumerate()
        {
            let line = format!("{strategy},olympiad_math,{t},{expected}");
            assert!(csv.contains(&line), "missing series row: {line}");
        }
    }

    // Grid over the sample corpus, ten patterns.
    let grid_path = tmp.path().join("grid.txt");
    std::fs::write(
        &grid_path,
        "hsur->hsur->sd->sd\nhsur->hsur->fd->fd\nsd->hsur->sd->hsur\nfa->fa->fa->fa\n\
         hsur->hsur->hsur->hsur\nhsur->sa->hsur->sa\nSadness\nwait\ncot\nself_reflection:7\n",
    )
    .unwrap();
    let ablate_out = tmp.path().join("ablate");
    let output = run_cli(&[
        "ablate",
        "--backend",
        "scripted",
        "--script",
        script.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--benchmark",
        "olympiad_math",
        "--grid",
        grid_path.to_str().unwrap(),
        "--resolution",
        "s1",
        "--seed",
        "7",
        "--out",
        ablate_out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let cells = std::fs::read_to_string(ablate_out.join("reports/ablation.csv")).unwrap();
    // Every cell sees the same scripted trajectories: final accuracy 0.8.
    assert_eq!(cells.lines().count(), 11, "header + 10 cells");
    assert!(cells.contains("hsur->hsur->sd->sd,0.800000,10,"));
    assert!(cells.contains("Sadness,0.800000,10,"));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("ACCEPTANCE 09 replay-determinism: PASS ({elapsed:?})");
}

/// Criterion 10: with a respondent that gains +0.1 success probability on a
/// valence switch, the alternating schedule beats the static one over
/// 10 000 seeded simulated tasks by the closed-form margin within +/-1%.
/// This validates the simulator against its own model, not any external
/// accuracy claim.
#[test]
fn criterion_10_stochastic_respondent_sanity() {
    const TASKS: usize = 10_000;
    let model = RespondentModel {
        baseline_rate: 0.1,
        candidate_rate: 0.02,
        polarity_switch_bonus: 0.1,
        prev_correct_bonus: 0.0,
    };

    // Closed-form expectation, derived from the model before the run:
    // p_t is the candidate rate, plus the bonus when the active group's
    // valence differs from the previous group's (t >= 2). An iteration
    // with k candidates succeeds with 1 - (1 - p_t)^k, and a task is
    // solved if the baseline or any iteration succeeds.
    let closed_form = |switched_at: [bool; 4]| -> f64 {
        let mut unsolved = 1.0 - model.baseline_rate;
        for switched in switched_at {
            let p = model.candidate_rate + if switched { model.polarity_switch_bonus } else { 0.0 };
            let q = 1.0 - (1.0 - p).powi(10);
            unsolved *= 1.0 - q;
        }
        1.0 - unsolved
    };
    // hsur->sa->hsur->sa switches valence at t=2,3,4; a static schedule
    // never does.
    let expected_alternating = closed_form([false, true, true, true]);
    let expected_static = closed_form([false, false, false, false]);
    let expected_margin = expected_alternating - expected_static;
    assert!(expected_margin > 0.3, "model is configured to favor alternation");

    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let tasks: Vec<Task> = (0..TASKS).map(|i| math_task(&format!("sim{i:05}"), "42")).collect();
    let golds = tasks.iter().map(|t| (t.id.clone(), t.gold.clone(), t.answer_type));
    let backend = StochasticBackend::new(model, 42, golds, &bank).unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);

    let simulate = |pattern: &str| -> f64 {
        let strategy = heart_strategy(pattern, Resolution::S1Oracle);
        let solved = tasks
            .iter()
            .filter(|task| r.run_task(task, &strategy, None).final_correct)
            .count();
        solved as f64 / TASKS as f64
    };
    let sim_alternating = simulate("hsur->sa->hsur->sa");
    let sim_static = simulate("hsur->hsur->hsur->hsur");

    assert!(
        sim_alternating > sim_static,
        "alternation must win: {sim_alternating} vs {sim_static}"
    );
    assert!(
        (sim_alternating - expected_alternating).abs() <= 0.01,
        "alternating: simulated {sim_alternating:.4} vs closed-form {expected_alternating:.4}"
    );
    assert!(
        (sim_static - expected_static).abs() <= 0.01,
        "static: simulated {sim_static:.4} vs closed-form {expected_static:.4}"
    );
    let sim_margin = sim_alternating - sim_static;
    assert!(
        (sim_margin - expected_margin).abs() <= 0.01,
        "margin: simulated {sim_margin:.4} vs closed-form {expected_margin:.4}"
    );
    println!(
        "ACCEPTANCE 10 stochastic-respondent: PASS (margin {sim_margin:.4} vs {expected_margin:.4})"
    );
}

/// Shared-baseline invariant rides along with the acceptance suite: one y0
/// per task feeds every strategy, so t=0 accuracy is identical across them.
#[test]
fn shared_baseline_equalizes_t0_accuracy() {
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let mut script = ScriptedBackend::builder();
    let tasks: Vec<Task> = (0..10).map(|i| math_task(&format!("sb{i}"), "4")).collect();
    for (i, task) in tasks.iter().enumerate() {
        for t in 0..=4u32 {
            let correct = i % 3 == 0;
            script = script.wildcard(&task.id, t, &boxed(if correct { "4" } else { "7" }));
        }
    }
    let backend = script.build().unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);
    let strategies = [
        heart_strategy("hsur->sa->hsur->sa", Resolution::S1Oracle),
        Strategy::new(StrategyKind::Wait, Resolution::S1Oracle),
        Strategy::new(StrategyKind::Cot, Resolution::S1Oracle),
    ];
    let mut t0_accuracies = Vec::new();
    for strategy in &strategies {
        let records: Vec<RunRecord> = tasks
            .iter()
            .map(|task| {
                let baseline: Baseline = r.init_baseline(task).unwrap();
                r.run_task(task, strategy, Some(&baseline))
            })
            .collect();
        let refs: Vec<&RunRecord> = records.iter().collect();
        t0_accuracies.push(heart_core::report::cumulative_accuracy(&refs, 0).unwrap());
    }
    assert!(t0_accuracies.windows(2).all(|w| w[0] == w[1]));
}

/// Request accounting rides along: request_count = 1 + sum over iterations
/// of candidates, plus one ensembler call per iteration under S2.
#[test]
fn request_accounting_invariant() {
    let bank = CueBank::bundled();
    let baselines = BaselinePrompts::bundled();
    let mut script = ScriptedBackend::builder();
    for t in 0..=4u32 {
        script = script.wildcard("ra", t, &boxed("7"));
    }
    let backend = script.build().unwrap();
    let options = RunOptions::default();
    let r = runner(&bank, &baselines, &backend, &options);
    for resolution in [Resolution::S1Oracle, Resolution::S2Synthesis] {
        let record = r.run_task(
            &math_task("ra", "4"),
            &heart_strategy("hsur->sa->hsur->sa", resolution),
            None,
        );
        let candidate_total: u32 = record
            .iterations
            .iter()
            .map(|it| it.candidates.len() as u32)
            .sum();
        let ensembler_calls = match resolution {
            Resolution::S1Oracle => 0,
            Resolution::S2Synthesis => record.iterations.len() as u32,
        };
        assert_eq!(record.request_count, 1 + candidate_total + ensembler_calls);
    }
}
