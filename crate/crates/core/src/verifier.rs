//! Answer extraction, normalization, and the oracle `V`.
//!
//! Completions are expected to end with `So the final answer is
//! \boxed{answer}`; extraction takes the last balanced `\boxed{...}` and
//! falls back to the text after the last "final answer is". Normalization
//! reduces both sides to a canonical form before exact matching, so
//! `\frac{567}{4}`, `567/4`, and `141.75` all grade as the same numerical
//! answer.

use num::{BigInt, BigRational, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("empty candidate set")]
    EmptyCandidates,
}

/// Declared answer shape of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Numerical,
    Expression,
    FreeText,
    MultipleChoice,
}

impl AnswerType {
    /// Wording used in the prompt's answer-type sentence.
    pub fn prompt_label(self) -> &'static str {
        match self {
            AnswerType::Numerical => "Numerical",
            AnswerType::Expression => "Expression",
            AnswerType::FreeText => "Free text",
            AnswerType::MultipleChoice => "Multiple choice",
        }
    }
}

impl FromStr for AnswerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numerical" | "numeric" | "number" => Ok(AnswerType::Numerical),
            "expression" => Ok(AnswerType::Expression),
            "free_text" | "freetext" | "text" => Ok(AnswerType::FreeText),
            "multiple_choice" | "multiplechoice" | "choice" => Ok(AnswerType::MultipleChoice),
            other => Err(format!("unknown answer type '{other}'")),
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AnswerType::Numerical => "numerical",
            AnswerType::Expression => "expression",
            AnswerType::FreeText => "free_text",
            AnswerType::MultipleChoice => "multiple_choice",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchReason {
    Match,
    Mismatch,
    ExtractionFailed,
}

/// Outcome of checking one predicted answer against gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierResult {
    pub correct: bool,
    pub extracted: Option<String>,
    pub normalized_pred: Option<String>,
    pub normalized_gold: String,
    pub reason: MatchReason,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifierOptions {
    /// Relative tolerance bridging decimal and rational renderings of the
    /// same numerical answer.
    pub numeric_rel_tol: f64,
}

impl Default for VerifierOptions {
    fn default() -> Self {
        VerifierOptions {
            numeric_rel_tol: 1e-9,
        }
    }
}

/// Extracts the final answer from a completion.
///
/// Returns the content of the last balanced `\boxed{...}`, else the
/// punctuation-trimmed text after the last occurrence of "final answer is"
/// (case-insensitive), else `None`.
pub fn extract_answer(text: &str) -> Option<String> {
    if let Some(boxed) = last_boxed_content(text) {
        return Some(boxed.trim().to_string());
    }
    let marker = "final answer is";
    let lower = text.to_ascii_lowercase();
    if let Some(pos) = lower.rfind(marker) {
        let tail = &text[pos + marker.len()..];
        let trimmed = tail
            .trim()
            .trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
            .trim();
        if !trimmed.is_empty() {
            return Some(trimmed.to_string());
        }
    }
    None
}

/// Content of the last `\boxed{...}` whose braces balance; nested `\boxed`
/// resolves to the innermost occurrence because it starts later in the text.
fn last_boxed_content(text: &str) -> Option<&str> {
    const OPEN: &str = "\\boxed{";
    let mut best = None;
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(OPEN) {
        let start = search_from + rel + OPEN.len();
        if let Some(end) = matching_brace(&text[start..]) {
            best = Some(&text[start..start + end]);
        }
        search_from = search_from + rel + OPEN.len();
    }
    best
}

/// Byte offset of the brace closing an already-open group, treating
/// backslash-escaped characters as opaque.
fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Canonicalizes an answer string for comparison.
///
/// Common pipeline: trim whitespace and surrounding `$`, unwrap `\text{}`,
/// drop `\left`/`\right`/`\,`, rewrite `\frac{a}{b}` to `a/b` and
/// `\sqrt{x}` to `sqrt(x)`. Numerical answers additionally parse to an
/// exact rational and render canonically (integers bare, otherwise a
/// reduced fraction); unparseable content degrades to the cleaned string.
pub fn normalize(answer: &str, answer_type: AnswerType) -> String {
    let cleaned = clean_markup(answer);
    match answer_type {
        AnswerType::Numerical => match parse_rational(&cleaned) {
            Some(r) => render_rational(&r),
            None => cleaned,
        },
        AnswerType::FreeText | AnswerType::MultipleChoice => {
            cleaned.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
        }
        AnswerType::Expression => cleaned,
    }
}

fn clean_markup(answer: &str) -> String {
    let mut s = answer.trim().to_string();
    loop {
        let before = s.len();
        s = s
            .trim()
            .trim_start_matches('$')
            .trim_end_matches('$')
            .trim()
            .to_string();
        if s.len() == before {
            break;
        }
    }
    s = s.replace("\\left", "").replace("\\right", "").replace("\\,", "");
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac");
    s = unwrap_command(&s, "\\text{", |inner| inner.to_string());
    s = unwrap_command(&s, "\\frac{", |inner| inner.to_string());
    s = unwrap_command(&s, "\\sqrt{", |inner| format!("sqrt({inner})"));
    s.trim().to_string()
}

/// Rewrites every `<command>a}` (and for `\frac`, the following `{b}`)
/// using `render`, processing nested occurrences inside-out.
fn unwrap_command(s: &str, command: &str, render: impl Fn(&str) -> String) -> String {
    let mut out = s.to_string();
    // Bounded in case of pathological input.
    for _ in 0..64 {
        let Some(pos) = out.find(command) else {
            return out;
        };
        let start = pos + command.len();
        let Some(end) = matching_brace(&out[start..]) else {
            return out;
        };
        let inner = out[start..start + end].to_string();
        let mut rest = &out[start + end + 1..];
        let replacement = if command == "\\frac{" {
            // Second argument: {b} immediately after, else a single token.
            if let Some(stripped) = rest.strip_prefix('{') {
                if let Some(end2) = matching_brace(stripped) {
                    let denom = &stripped[..end2];
                    let r = format!("{inner}/{denom}");
                    rest = &stripped[end2 + 1..];
                    r
                } else {
                    render(&inner)
                }
            } else if let Some(c) = rest.chars().next() {
                let r = format!("{inner}/{c}");
                rest = &rest[c.len_utf8()..];
                r
            } else {
                render(&inner)
            }
        } else {
            render(&inner)
        };
        out = format!("{}{}{}", &out[..pos], replacement, rest);
    }
    out
}

/// Parses an exact rational from an integer, decimal, scientific, or `a/b`
/// literal. Thousands separators are stripped when they follow the standard
/// grouping.
fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let s = strip_thousands_separators(s);
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_decimal(num.trim())?;
        let den = parse_decimal(den.trim())?;
        if den.is_zero() {
            return None;
        }
        return Some(num / den);
    }
    parse_decimal(&s)
}

fn strip_thousands_separators(s: &str) -> String {
    static GROUPED: once_cell::sync::Lazy<regex::Regex> = once_cell::sync::Lazy::new(|| {
        regex::Regex::new(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$").unwrap()
    });
    if GROUPED.is_match(s) {
        s.replace(',', "")
    } else {
        s.to_string()
    }
}

/// Decimal or scientific literal to an exact rational.
fn parse_decimal(s: &str) -> Option<BigRational> {
    if s.is_empty() {
        return None;
    }
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let joined = format!("{int_part}{frac_part}");
    let numerator = BigInt::from_str(if joined.is_empty() { "0" } else { &joined }).ok()?;
    let mut value = BigRational::new(numerator * sign, BigInt::from(1));
    let scale = frac_part.len() as i32 - exp;
    let ten = BigRational::new(BigInt::from(10), BigInt::from(1));
    match scale.cmp(&0) {
        std::cmp::Ordering::Greater => {
            for _ in 0..scale {
                value /= ten.clone();
            }
        }
        std::cmp::Ordering::Less => {
            for _ in 0..(-scale) {
                value *= ten.clone();
            }
        }
        std::cmp::Ordering::Equal => {}
    }
    Some(value)
}

fn render_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Exact match after normalization; numerical answers additionally compare
/// as exact rationals under the configured relative tolerance.
pub fn exact_match(pred: &str, gold: &str, answer_type: AnswerType) -> VerifierResult {
    exact_match_with(pred, gold, answer_type, &VerifierOptions::default())
}

pub fn exact_match_with(
    pred: &str,
    gold: &str,
    answer_type: AnswerType,
    options: &VerifierOptions,
) -> VerifierResult {
    let normalized_pred = normalize(pred, answer_type);
    let normalized_gold = normalize(gold, answer_type);
    let mut correct = normalized_pred == normalized_gold;
    if !correct && answer_type == AnswerType::Numerical {
        if let (Some(a), Some(b)) = (
            parse_rational(&normalized_pred),
            parse_rational(&normalized_gold),
        ) {
            correct = within_rel_tol(&a, &b, options.numeric_rel_tol);
        }
    }
    VerifierResult {
        correct,
        extracted: Some(pred.to_string()),
        normalized_pred: Some(normalized_pred),
        normalized_gold,
        reason: if correct {
            MatchReason::Match
        } else {
            MatchReason::Mismatch
        },
    }
}

fn within_rel_tol(a: &BigRational, b: &BigRational, rel_tol: f64) -> bool {
    if a == b {
        return true;
    }
    let tol = parse_decimal(&format!("{rel_tol:e}"))
        .unwrap_or_else(|| BigRational::new(BigInt::from(1), BigInt::from(1_000_000_000)));
    let diff = (a - b).abs();
    let scale = a.abs().max(b.abs());
    diff <= tol * scale
}

/// Verifies a completion end to end: extract, normalize, compare.
/// A completion with no extractable answer grades incorrect with
/// `reason = ExtractionFailed`.
pub fn verify_completion(
    text: &str,
    gold: &str,
    answer_type: AnswerType,
    options: &VerifierOptions,
) -> VerifierResult {
    match extract_answer(text) {
        Some(extracted) => exact_match_with(&extracted, gold, answer_type, options),
        None => VerifierResult {
            correct: false,
            extracted: None,
            normalized_pred: None,
            normalized_gold: normalize(gold, answer_type),
            reason: MatchReason::ExtractionFailed,
        },
    }
}

/// Result of applying the oracle to a candidate set.
#[derive(Debug, Clone)]
pub struct OracleSelection {
    /// Verdict per candidate, in input order.
    pub verdicts: Vec<VerifierResult>,
    /// Selected candidate: lowest-index correct one, else index 0.
    pub selected: usize,
    /// True iff any candidate verified correct; the run halts here.
    pub halt: bool,
}

/// Verifies every candidate completion and applies the halting selection
/// rule: the lowest-index correct candidate wins; when none is correct the
/// tie over all-zero scores breaks to index 0.
pub fn oracle_select(
    candidates: &[String],
    gold: &str,
    answer_type: AnswerType,
    options: &VerifierOptions,
) -> Result<OracleSelection, VerifierError> {
    if candidates.is_empty() {
        return Err(VerifierError::EmptyCandidates);
    }
    let verdicts: Vec<VerifierResult> = candidates
        .iter()
        .map(|text| verify_completion(text, gold, answer_type, options))
        .collect();
    let selected = verdicts.iter().position(|v| v.correct);
    Ok(OracleSelection {
        halt: selected.is_some(),
        selected: selected.unwrap_or(0),
        verdicts,
    })
}
