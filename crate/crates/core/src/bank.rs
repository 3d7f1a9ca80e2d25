//! Affective cue bank, baseline prompt set, and emotion-group schedules.
//!
//! Cue texts ship as data files (`data/cues.jsonl`, `data/baselines.jsonl`)
//! rather than code constants so a bank can be swapped without rebuilding.
//! The bundled defaults are also embedded in the binary for zero-setup runs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Substrings a cue text must not contain: cues are generic feedback and
/// must stay task-agnostic.
const TASK_SPECIFIC_DENYLIST: &[&str] = &[
    "simpleqa",
    "olympiad",
    "humanity's last exam",
    "\\boxed",
    "<question>",
    "answer type is",
];

#[derive(Debug, Error)]
pub enum BankError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bank invariant violated: {0}")]
    Invariant(String),
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("empty emotion group")]
    EmptyGroup,
    #[error("unknown emotion code '{code}' in segment {segment}")]
    InvalidEmotionCode { segment: usize, code: String },
    #[error("empty pattern segment at position {0}")]
    EmptySegment(usize),
}

/// The six basic emotions the cue taxonomy is built on.
///
/// Declaration order is the canonical notation order: it decides how group
/// members are listed when a pattern is rendered (`hsur`, `fs`, `sd`, ...)
/// and how per-emotion cue lists are concatenated by [`CueBank::cues_for_group`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Surprise,
    Fear,
    Sadness,
    Disgust,
    Anger,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Happy,
        Emotion::Surprise,
        Emotion::Fear,
        Emotion::Sadness,
        Emotion::Disgust,
        Emotion::Anger,
    ];

    /// Short code used in pattern notation.
    pub fn short_code(self) -> &'static str {
        match self {
            Emotion::Happy => "h",
            Emotion::Surprise => "sur",
            Emotion::Fear => "f",
            Emotion::Sadness => "s",
            Emotion::Disgust => "d",
            Emotion::Anger => "a",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Surprise => "surprise",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
            Emotion::Disgust => "disgust",
            Emotion::Anger => "anger",
        }
    }

    /// Parses a full emotion name, tolerating the common short forms
    /// ("sad" for sadness, "happiness" for happy).
    pub fn parse_name(s: &str) -> Option<Emotion> {
        match s.trim().to_ascii_lowercase().as_str() {
            "happy" | "happiness" => Some(Emotion::Happy),
            "surprise" | "surprised" => Some(Emotion::Surprise),
            "fear" => Some(Emotion::Fear),
            "sadness" | "sad" => Some(Emotion::Sadness),
            "disgust" => Some(Emotion::Disgust),
            "anger" | "angry" => Some(Emotion::Anger),
            _ => None,
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Valence of an emotion group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Mixed,
}

impl Emotion {
    pub fn polarity(self) -> Polarity {
        match self {
            Emotion::Happy | Emotion::Surprise => Polarity::Positive,
            _ => Polarity::Negative,
        }
    }
}

/// A non-empty set of emotions active at one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionGroup {
    members: BTreeSet<Emotion>,
}

impl EmotionGroup {
    pub fn new(members: impl IntoIterator<Item = Emotion>) -> Result<Self, BankError> {
        let members: BTreeSet<Emotion> = members.into_iter().collect();
        if members.is_empty() {
            return Err(BankError::EmptyGroup);
        }
        Ok(EmotionGroup { members })
    }

    pub fn singleton(emotion: Emotion) -> Self {
        EmotionGroup {
            members: BTreeSet::from([emotion]),
        }
    }

    /// Members in canonical notation order.
    pub fn members(&self) -> impl Iterator<Item = Emotion> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, emotion: Emotion) -> bool {
        self.members.contains(&emotion)
    }

    /// Positive iff every member is positive, negative iff every member is
    /// negative, mixed otherwise.
    pub fn polarity(&self) -> Polarity {
        let mut iter = self.members().map(Emotion::polarity);
        let first = iter.next().expect("group is non-empty");
        if iter.all(|p| p == first) {
            first
        } else {
            Polarity::Mixed
        }
    }

    /// Concatenated short codes, e.g. `hsur`.
    pub fn render(&self) -> String {
        self.members().map(Emotion::short_code).collect()
    }
}

impl fmt::Display for EmotionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Per-iteration emotion groups: the `G_t` sequence one HEART run follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePattern {
    groups: Vec<EmotionGroup>,
}

impl SchedulePattern {
    pub fn new(groups: Vec<EmotionGroup>) -> Result<Self, BankError> {
        if groups.is_empty() {
            return Err(BankError::Invariant(
                "pattern must have at least one group".to_string(),
            ));
        }
        Ok(SchedulePattern { groups })
    }

    /// Parses pattern notation: iterations separated by `->` (or `→`),
    /// emotions within an iteration written as concatenated short codes
    /// (`hsur`) or slash-separated (`h/sur`), case-insensitive.
    ///
    /// Concatenated codes are tokenized longest-match first ("sur" before
    /// "s"), scanning left to right.
    pub fn parse(spec: &str) -> Result<Self, BankError> {
        let spec = spec.trim();
        if spec.is_empty() {
            return Err(BankError::EmptySegment(1));
        }
        let mut groups = Vec::new();
        // Segment positions are 1-based in diagnostics.
        for (idx, segment) in spec.replace('→', "->").split("->").enumerate() {
            let position = idx + 1;
            let segment = segment.trim().to_ascii_lowercase();
            if segment.is_empty() {
                return Err(BankError::EmptySegment(position));
            }
            let mut members = BTreeSet::new();
            for token in segment.split('/') {
                let token = token.trim();
                if token.is_empty() {
                    continue;
                }
                let mut rest = token;
                while !rest.is_empty() {
                    let code = Self::next_code(rest).ok_or_else(|| {
                        BankError::InvalidEmotionCode {
                            segment: position,
                            code: rest.chars().next().unwrap().to_string(),
                        }
                    })?;
                    members.insert(code);
                    rest = &rest[code.short_code().len()..];
                }
            }
            if members.is_empty() {
                return Err(BankError::EmptySegment(position));
            }
            groups.push(EmotionGroup { members });
        }
        SchedulePattern::new(groups)
    }

    fn next_code(s: &str) -> Option<Emotion> {
        // Longest match first: "sur" shadows "s".
        if s.starts_with("sur") {
            return Some(Emotion::Surprise);
        }
        match s.as_bytes()[0] {
            b'h' => Some(Emotion::Happy),
            b'f' => Some(Emotion::Fear),
            b's' => Some(Emotion::Sadness),
            b'd' => Some(Emotion::Disgust),
            b'a' => Some(Emotion::Anger),
            _ => None,
        }
    }

    /// Canonical string form; `parse(render(p)) == p` and rendering a parsed
    /// canonical spec reproduces it verbatim.
    pub fn render(&self) -> String {
        self.groups
            .iter()
            .map(EmotionGroup::render)
            .collect::<Vec<_>>()
            .join("->")
    }

    /// The exemplar schedule: G+ = {Happy, Surprise} and G- = {Sadness, Anger}
    /// alternating over four iterations.
    pub fn default_heart() -> Self {
        SchedulePattern::parse("hsur->sa->hsur->sa").expect("default pattern is valid")
    }

    /// A static single-emotion pattern repeated for `n` iterations.
    pub fn static_emotion(emotion: Emotion, n: usize) -> Result<Self, BankError> {
        SchedulePattern::new(vec![EmotionGroup::singleton(emotion); n.max(1)])
    }

    pub fn groups(&self) -> &[EmotionGroup] {
        &self.groups
    }

    /// Group active at iteration `t` (1-based).
    pub fn group_at(&self, t: usize) -> Option<&EmotionGroup> {
        if t == 0 {
            return None;
        }
        self.groups.get(t - 1)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

impl fmt::Display for SchedulePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// One emotion-tagged feedback phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectiveCue {
    pub id: String,
    pub emotion: Emotion,
    pub text: String,
}

/// The validated cue bank: exactly 30 cues, 5 per emotion, task-agnostic
/// texts. Immutable after load; safe to share across threads.
#[derive(Debug, Clone)]
pub struct CueBank {
    by_emotion: HashMap<Emotion, Vec<AffectiveCue>>,
    by_id: HashMap<String, AffectiveCue>,
    source_hash: String,
}

pub const CUES_PER_EMOTION: usize = 5;
pub const TOTAL_CUES: usize = 30;

const BUNDLED_CUES: &str = include_str!("../data/cues.jsonl");
const BUNDLED_BASELINES: &str = include_str!("../data/baselines.jsonl");

impl CueBank {
    /// Loads and validates a cue bank from a JSONL file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| BankError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_jsonl(&raw)
    }

    /// The bank bundled with the binary (the full 30-cue selection).
    pub fn bundled() -> Self {
        Self::parse_jsonl(BUNDLED_CUES).expect("bundled cue bank is valid")
    }

    pub fn parse_jsonl(raw: &str) -> Result<Self, BankError> {
        let mut by_emotion: HashMap<Emotion, Vec<AffectiveCue>> = HashMap::new();
        let mut by_id: HashMap<String, AffectiveCue> = HashMap::new();
        let mut total = 0usize;
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cue: AffectiveCue =
                serde_json::from_str(line).map_err(|e| BankError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if cue.text.trim().is_empty() {
                return Err(BankError::Invariant(format!(
                    "cue '{}' has empty text",
                    cue.id
                )));
            }
            let lower = cue.text.to_lowercase();
            if let Some(term) = TASK_SPECIFIC_DENYLIST.iter().find(|t| lower.contains(*t)) {
                return Err(BankError::Invariant(format!(
                    "cue '{}' contains task-specific token '{}'",
                    cue.id, term
                )));
            }
            if by_id.insert(cue.id.clone(), cue.clone()).is_some() {
                return Err(BankError::DuplicateId(cue.id));
            }
            by_emotion.entry(cue.emotion).or_default().push(cue);
            total += 1;
        }
        if total == 0 {
            return Err(BankError::Parse {
                line: 0,
                message: "no cue records found".to_string(),
            });
        }
        if total != TOTAL_CUES {
            return Err(BankError::Invariant(format!(
                "expected {TOTAL_CUES} cues, found {total}"
            )));
        }
        for emotion in Emotion::ALL {
            let n = by_emotion.get(&emotion).map_or(0, Vec::len);
            if n != CUES_PER_EMOTION {
                return Err(BankError::Invariant(format!(
                    "expected {CUES_PER_EMOTION} cues for {emotion}, found {n}"
                )));
            }
        }
        let source_hash = crate::util::sha256_hex(raw.as_bytes());
        Ok(CueBank {
            by_emotion,
            by_id,
            source_hash,
        })
    }

    /// Cues for every emotion in `group`, ordered by (canonical emotion
    /// order, in-file order). Length is always `5 * group.len()`.
    pub fn cues_for_group(&self, group: &EmotionGroup) -> Result<Vec<&AffectiveCue>, BankError> {
        if group.is_empty() {
            return Err(BankError::EmptyGroup);
        }
        let mut out = Vec::with_capacity(group.len() * CUES_PER_EMOTION);
        for emotion in group.members() {
            out.extend(self.by_emotion[&emotion].iter());
        }
        Ok(out)
    }

    pub fn cues_for_emotion(&self, emotion: Emotion) -> &[AffectiveCue] {
        &self.by_emotion[&emotion]
    }

    pub fn cue(&self, id: &str) -> Option<&AffectiveCue> {
        self.by_id.get(id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// SHA-256 of the source file, recorded in run manifests.
    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }
}

/// One of the ten self-reflection prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfReflectionPrompt {
    pub id: String,
    pub sr_id: u8,
    pub text: String,
}

/// The baseline prompt texts: "Wait.", the CoT preamble, and the ten
/// self-reflection prompts.
#[derive(Debug, Clone)]
pub struct BaselinePrompts {
    pub wait_text: String,
    pub cot_preamble: String,
    self_reflection: Vec<SelfReflectionPrompt>,
    source_hash: String,
}

#[derive(Deserialize)]
struct BaselineRecord {
    id: String,
    kind: String,
    text: String,
    sr_id: Option<u8>,
}

pub const SELF_REFLECTION_COUNT: usize = 10;

impl BaselinePrompts {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| BankError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_jsonl(&raw)
    }

    pub fn bundled() -> Self {
        Self::parse_jsonl(BUNDLED_BASELINES).expect("bundled baseline prompts are valid")
    }

    pub fn parse_jsonl(raw: &str) -> Result<Self, BankError> {
        let mut wait_text = None;
        let mut cot_preamble = None;
        let mut self_reflection: Vec<SelfReflectionPrompt> = Vec::new();
        let mut seen_ids = BTreeSet::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: BaselineRecord =
                serde_json::from_str(line).map_err(|e| BankError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if !seen_ids.insert(rec.id.clone()) {
                return Err(BankError::DuplicateId(rec.id));
            }
            match rec.kind.as_str() {
                "wait" => wait_text = Some(rec.text),
                "cot" => cot_preamble = Some(rec.text),
                "self_reflection" => {
                    let sr_id = rec.sr_id.ok_or_else(|| BankError::Parse {
                        line: lineno + 1,
                        message: "self_reflection record missing sr_id".to_string(),
                    })?;
                    if !(1..=SELF_REFLECTION_COUNT as u8).contains(&sr_id) {
                        return Err(BankError::Invariant(format!(
                            "sr_id {sr_id} outside 1..=10"
                        )));
                    }
                    self_reflection.push(SelfReflectionPrompt {
                        id: rec.id,
                        sr_id,
                        text: rec.text,
                    });
                }
                other => {
                    return Err(BankError::Parse {
                        line: lineno + 1,
                        message: format!("unknown baseline kind '{other}'"),
                    })
                }
            }
        }
        if self_reflection.len() != SELF_REFLECTION_COUNT {
            return Err(BankError::Invariant(format!(
                "expected {SELF_REFLECTION_COUNT} self-reflection prompts, found {}",
                self_reflection.len()
            )));
        }
        self_reflection.sort_by_key(|p| p.sr_id);
        if self_reflection
            .iter()
            .enumerate()
            .any(|(i, p)| p.sr_id as usize != i + 1)
        {
            return Err(BankError::Invariant(
                "self-reflection sr_ids must be exactly 1..=10".to_string(),
            ));
        }
        let source_hash = crate::util::sha256_hex(raw.as_bytes());
        Ok(BaselinePrompts {
            wait_text: wait_text
                .ok_or_else(|| BankError::Invariant("missing wait prompt".to_string()))?,
            cot_preamble: cot_preamble
                .ok_or_else(|| BankError::Invariant("missing cot prompt".to_string()))?,
            self_reflection,
            source_hash,
        })
    }

    /// Prompts in table order (sr_id 1..=10).
    pub fn self_reflection(&self) -> &[SelfReflectionPrompt] {
        &self.self_reflection
    }

    pub fn self_reflection_by_id(&self, sr_id: u8) -> Option<&SelfReflectionPrompt> {
        self.self_reflection.iter().find(|p| p.sr_id == sr_id)
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }
}
