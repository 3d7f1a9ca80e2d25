//! Seeded in-silico respondent for schedule studies.
//!
//! The backend simulates a model whose chance of answering correctly
//! depends on the iteration, the valence of the cue it was shown, and
//! whether the previous answer embedded in the prompt was already correct.
//! With a fixed seed it is fully deterministic: the generator is
//! partitioned per (task, iteration, prompt) by hashing, so concurrency
//! and call order cannot perturb results.

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenRequest, GenResult};
use crate::bank::{CueBank, Polarity, SchedulePattern};
use crate::protocol::strategy_pattern;
use crate::util::fnv1a64;
use crate::verifier::{self, AnswerType};

/// Success probabilities of the simulated respondent.
///
/// `p_correct` is evaluated per generation call: the baseline rate applies
/// at iteration 0, and from iteration 1 on the candidate rate applies with
/// an additive bonus when the active cue's valence differs from the
/// previous iteration's, and another when the previous answer was correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RespondentModel {
    pub baseline_rate: f64,
    pub candidate_rate: f64,
    pub polarity_switch_bonus: f64,
    pub prev_correct_bonus: f64,
}

impl Default for RespondentModel {
    fn default() -> Self {
        RespondentModel {
            baseline_rate: 0.2,
            candidate_rate: 0.05,
            polarity_switch_bonus: 0.1,
            prev_correct_bonus: 0.0,
        }
    }
}

/// Per-call inputs to [`RespondentModel::p_correct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RespondentContext {
    pub iteration: u32,
    /// Valence of the cue shown in this request; `None` for affect-free
    /// prompts (baselines, the initial CoT call, the ensembler).
    pub polarity: Option<Polarity>,
    /// Valence of the group active at the previous iteration.
    pub prev_polarity: Option<Polarity>,
    pub was_prev_correct: bool,
}

impl RespondentModel {
    pub fn validate(&self) -> Result<(), BackendError> {
        let reachable = [
            self.baseline_rate,
            self.candidate_rate,
            self.candidate_rate + self.polarity_switch_bonus,
            self.candidate_rate + self.prev_correct_bonus,
            self.candidate_rate + self.polarity_switch_bonus + self.prev_correct_bonus,
        ];
        for p in reachable {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(BackendError::ModelConfig(format!(
                    "reachable probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn p_correct(&self, ctx: &RespondentContext) -> f64 {
        if ctx.iteration == 0 {
            return self.baseline_rate;
        }
        let switched = match (ctx.polarity, ctx.prev_polarity) {
            (Some(now), Some(prev)) => now != prev,
            _ => false,
        };
        let mut p = self.candidate_rate;
        if switched {
            p += self.polarity_switch_bonus;
        }
        if ctx.was_prev_correct {
            p += self.prev_correct_bonus;
        }
        p
    }
}

pub struct StochasticBackend {
    model: RespondentModel,
    seed: u64,
    /// task_id -> (gold answer, answer type); the simulator owns its world's
    /// ground truth. This never flows back into the protocol.
    golds: HashMap<String, (String, AnswerType)>,
    cue_polarity: HashMap<String, Polarity>,
    pattern_cache: RwLock<HashMap<String, Option<SchedulePattern>>>,
    id: String,
}

impl StochasticBackend {
    pub fn new(
        model: RespondentModel,
        seed: u64,
        golds: impl IntoIterator<Item = (String, String, AnswerType)>,
        bank: &CueBank,
    ) -> Result<Self, BackendError> {
        model.validate()?;
        let golds = golds
            .into_iter()
            .map(|(id, gold, ty)| (id, (gold, ty)))
            .collect();
        let mut cue_polarity = HashMap::new();
        for emotion in crate::bank::Emotion::ALL {
            for cue in bank.cues_for_emotion(emotion) {
                cue_polarity.insert(cue.id.clone(), emotion.polarity());
            }
        }
        Ok(StochasticBackend {
            model,
            seed,
            golds,
            cue_polarity,
            pattern_cache: RwLock::new(HashMap::new()),
            id: format!("stochastic-{seed}"),
        })
    }

    pub fn model(&self) -> &RespondentModel {
        &self.model
    }

    fn schedule_for(&self, strategy: &str) -> Option<SchedulePattern> {
        if let Some(hit) = self.pattern_cache.read().unwrap().get(strategy) {
            return hit.clone();
        }
        let parsed = strategy_pattern(strategy);
        self.pattern_cache
            .write()
            .unwrap()
            .insert(strategy.to_string(), parsed.clone());
        parsed
    }

    fn context_for(&self, request: &GenRequest, gold: &str, ty: AnswerType) -> RespondentContext {
        let t = request.tags.iteration;
        let polarity = self.cue_polarity.get(&request.tags.prompt_id).copied();
        let prev_polarity = if t >= 2 {
            self.schedule_for(&request.tags.strategy)
                .and_then(|p| p.group_at(t as usize - 1).map(|g| g.polarity()))
        } else {
            None
        };
        // The previous resolved answer arrives embedded in the prompt; judge
        // it the way the protocol would.
        let was_prev_correct = t >= 1
            && request
                .last_user_content()
                .and_then(verifier::extract_answer)
                .map(|ans| verifier::exact_match(&ans, gold, ty).correct)
                .unwrap_or(false);
        RespondentContext {
            iteration: t,
            polarity,
            prev_polarity,
            was_prev_correct,
        }
    }
}

impl Backend for StochasticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError> {
        request.validate()?;
        let tags = &request.tags;
        let (gold, ty) = self.golds.get(&tags.task_id).ok_or_else(|| {
            BackendError::InvalidRequest(format!("no simulated task '{}'", tags.task_id))
        })?;
        let ctx = self.context_for(request, gold, *ty);
        let p = self.model.p_correct(&ctx);
        let stream = fnv1a64(&[
            &self.seed.to_le_bytes(),
            tags.task_id.as_bytes(),
            &tags.iteration.to_le_bytes(),
            tags.prompt_id.as_bytes(),
            tags.strategy.as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let correct = rng.random::<f64>() < p;
        let text = if correct {
            format!("So the final answer is \\boxed{{{gold}}}.")
        } else {
            format!("So the final answer is \\boxed{{not-{gold}}}.")
        };
        Ok(GenResult {
            text,
            backend_id: self.id.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, GenParams, RequestTags};

    fn backend(model: RespondentModel, seed: u64) -> StochasticBackend {
        StochasticBackend::new(
            model,
            seed,
            vec![("t1".to_string(), "4".to_string(), AnswerType::Numerical)],
            &CueBank::bundled(),
        )
        .unwrap()
    }

    fn request(t: u32, prompt: &str, body: &str) -> GenRequest {
        GenRequest {
            messages: vec![ChatMessage::user(body)],
            params: GenParams::default(),
            tags: RequestTags {
                task_id: "t1".to_string(),
                iteration: t,
                prompt_id: prompt.to_string(),
                strategy: "heart:hsur->sa->hsur->sa".to_string(),
            },
        }
    }

    #[test]
    fn forced_success_and_failure() {
        let always = backend(
            RespondentModel {
                baseline_rate: 1.0,
                candidate_rate: 1.0,
                polarity_switch_bonus: 0.0,
                prev_correct_bonus: 0.0,
            },
            7,
        );
        let out = always.generate(&request(1, "happy-1", "q")).unwrap();
        assert!(out.text.contains("\\boxed{4}"));

        let never = backend(
            RespondentModel {
                baseline_rate: 0.0,
                candidate_rate: 0.0,
                polarity_switch_bonus: 0.0,
                prev_correct_bonus: 0.0,
            },
            7,
        );
        let out = never.generate(&request(1, "happy-1", "q")).unwrap();
        assert!(out.text.contains("\\boxed{not-4}"));
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let model = RespondentModel {
            baseline_rate: 0.5,
            candidate_rate: 0.95,
            polarity_switch_bonus: 0.1,
            prev_correct_bonus: 0.0,
        };
        assert!(matches!(
            model.validate(),
            Err(BackendError::ModelConfig(_))
        ));
    }

    #[test]
    fn seeded_draws_match_probability() {
        // Law-of-large-numbers check on the seeded generator: 10 000 draws
        // at p = 0.5 land within +/-0.02 of the rate.
        let model = RespondentModel {
            baseline_rate: 0.5,
            candidate_rate: 0.5,
            polarity_switch_bonus: 0.0,
            prev_correct_bonus: 0.0,
        };
        let b = backend(model, 42);
        let mut hits = 0;
        for i in 0..10_000 {
            let req = request(1, &format!("wait#{i}"), "q");
            if b.generate(&req).unwrap().text.contains("\\boxed{4}") {
                hits += 1;
            }
        }
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.5).abs() < 0.02, "empirical rate {rate}");
    }

    #[test]
    fn determinism_across_instances() {
        let model = RespondentModel::default();
        let a = backend(model, 9);
        let b = backend(model, 9);
        for t in 0..3 {
            let req = request(t, "happy-2", "q");
            assert_eq!(
                a.generate(&req).unwrap().text,
                b.generate(&req).unwrap().text
            );
        }
    }

    #[test]
    fn polarity_context_from_cue_and_schedule() {
        let b = backend(RespondentModel::default(), 1);
        // Iteration 2 of hsur->sa->...: current cue sadness-1 (negative),
        // previous group hsur (positive) -> switched.
        let req = request(2, "sadness-1", "q \\boxed{answer} prev \\boxed{not-4}.");
        let ctx = b.context_for(&req, "4", AnswerType::Numerical);
        assert_eq!(ctx.polarity, Some(Polarity::Negative));
        assert_eq!(ctx.prev_polarity, Some(Polarity::Positive));
        assert!(!ctx.was_prev_correct);

        let req = request(2, "sadness-1", "q \\boxed{answer} prev \\boxed{4}.");
        let ctx = b.context_for(&req, "4", AnswerType::Numerical);
        assert!(ctx.was_prev_correct);
    }
}
