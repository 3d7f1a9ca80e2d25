//! Prompt assembly for the initial CoT call, feedback iterations, and the
//! generative ensembler.
//!
//! Layout of a feedback message, in order: the wrapped question, the
//! answer-type sentence, the boxed-answer instruction, the previous full
//! response verbatim, one blank line, and the cue text verbatim at the end.
//! Cue and response text are never templated - braces and backslashes pass
//! through untouched.

use crate::backend::{ChatMessage, GenParams, GenRequest, RequestTags};
use crate::datasets::{Benchmark, Task};

/// Recorded in run manifests so prompt-shape changes are auditable.
pub const PROMPT_TEMPLATE_VERSION: &str = "heart-prompts-v1";

pub const BOXED_INSTRUCTION: &str =
    "Please end your solution with 'So the final answer is \\boxed{answer}'.";

/// System instruction used for the math and physics benchmarks, with its
/// three worked exemplars. The knowledge benchmarks run without one.
pub const MATH_PHYSICS_SYSTEM_INSTRUCTION: &str = "Answer the following question. Let's think step by step.\n\nQuestion: Let $r=1$ and $R=5$. A circle with radius $r$ is centered at $A$, and a circle with radius $R$ is centered at $B$. The two circles are internally tangent. Point $P$ lies on the smaller circle so that $\\overline{BP}$ is tangent to the smaller circle. Compute $BP$.\n\nAnswer: [$\\sqrt{15}$]\n\n==\n\nQuestion: Let $T=12$. Equilateral triangle $ABC$ is given with side length $T$. Points $D$ and $E$ are the midpoints of $\\overline{AB}$ and $\\overline{AC}$, respectively. Point $F$ lies in space such that $\\triangle DEF$ is equilateral and $\\triangle DEF$ lies in a plane perpendicular to the plane containing $\\triangle ABC$. Compute the volume of tetrahedron $ABCF$.\n\nAnswer: [108]\n\n==\n\nQuestion: For real numbers $\\alpha$, $B$, and $C$, the zeros of $T(x)=x^{3}+x^{2}+Bx+C$ are $\\sin^{2}\\alpha$, $\\cos^{2}\\alpha$, and $-\\csc^{2}\\alpha$. Compute $T(5)$.\n\nAnswer: [$\\frac{567}{4}$]";

/// Default per-benchmark system instruction.
pub fn default_system_instruction(benchmark: Benchmark) -> Option<&'static str> {
    match benchmark {
        Benchmark::OlympiadMath | Benchmark::OlympiadPhysics => {
            Some(MATH_PHYSICS_SYSTEM_INSTRUCTION)
        }
        Benchmark::Simpleqa | Benchmark::Hle => None,
    }
}

/// `<question>...</question>` plus the answer-type sentence and the boxed
/// instruction; the head of every user message.
pub fn question_block(task: &Task) -> String {
    format!(
        "<question>{}</question> The answer type is: {}. {}",
        task.question,
        task.answer_type.prompt_label(),
        BOXED_INSTRUCTION
    )
}

fn messages_with_system(system_instruction: Option<&str>, user: String) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = system_instruction {
        if !system.is_empty() {
            messages.push(ChatMessage::system(system));
        }
    }
    messages.push(ChatMessage::user(user));
    messages
}

/// The shared iteration-0 request: a plain CoT ask with no feedback. When no
/// system instruction is configured the CoT preamble leads the user message.
pub fn initial_request(
    task: &Task,
    system_instruction: Option<&str>,
    cot_preamble: &str,
    params: GenParams,
    strategy: &str,
) -> GenRequest {
    let has_system = system_instruction.is_some_and(|s| !s.is_empty());
    let user = if has_system {
        question_block(task)
    } else {
        format!("{cot_preamble}\n\n{}", question_block(task))
    };
    GenRequest {
        messages: messages_with_system(system_instruction, user),
        params,
        tags: RequestTags {
            task_id: task.id.clone(),
            iteration: 0,
            prompt_id: "init".to_string(),
            strategy: strategy.to_string(),
        },
    }
}

/// A correction request: question block, previous response verbatim, blank
/// line, cue text last.
pub fn feedback_request(
    task: &Task,
    prev_response: &str,
    cue_text: &str,
    system_instruction: Option<&str>,
    params: GenParams,
    tags: RequestTags,
) -> GenRequest {
    let user = format!(
        "{} {prev_response}\n\n{cue_text}",
        question_block(task)
    );
    GenRequest {
        messages: messages_with_system(system_instruction, user),
        params,
        tags,
    }
}

/// The synthesis request: the original question plus all candidates labeled
/// `Candidate 1..k`, asking for analysis and one final boxed answer. Ground
/// truth is not an input here by construction.
pub fn ensembler_request(
    question: &str,
    candidate_texts: &[&str],
    system_instruction: Option<&str>,
    params: GenParams,
    tags: RequestTags,
) -> GenRequest {
    let mut user = format!(
        "<question>{question}</question>\n\nYou are given {} candidate solutions to this \
         question. Analyze their strengths and weaknesses, correct any errors, and generate \
         a final, improved answer that integrates the best information.\n",
        candidate_texts.len()
    );
    for (i, text) in candidate_texts.iter().enumerate() {
        user.push_str(&format!("\nCandidate {}:\n{text}\n", i + 1));
    }
    user.push_str(&format!("\n{BOXED_INSTRUCTION}"));
    GenRequest {
        messages: messages_with_system(system_instruction, user),
        params,
        tags,
    }
}
