//! Iterative generate -> verify -> refine loop and preference-pair mining.
//!
//! One record's loop is strictly sequential: attempt n+1 embeds attempt n's
//! reasoning and the verifier feedback. Failure history is retained so the
//! last failed path can serve as the DPO negative.

use serde::{Deserialize, Serialize};

use crate::backend::{Client, GenerationRequest};
use crate::corpus::{CoTRecord, QAInstance, ReasoningAttempt, RecordMeta, RecordStatus};
use crate::judge::{extract_final_answer, Outcome, Verdict, Verifier, VerdictTier};
use crate::prompts;

pub const DEFAULT_MAX_ITERS: usize = 3;
/// CoT generation decodes with moderate diversity; verification stays at 0.
pub const DEFAULT_GENERATION_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub instance_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Decode defaults applied to every generation attempt.
#[derive(Debug, Clone)]
pub struct DecodeDefaults {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeDefaults {
    fn default() -> Self {
        Self { temperature: DEFAULT_GENERATION_TEMPERATURE, max_tokens: 1024 }
    }
}

/// Run the refinement loop for one instance.
///
/// Stops at the first verified attempt or after `max_iters` attempts.
/// Generator transport failures consume an iteration and are recorded as
/// error attempts so wall-clock stays bounded.
pub fn run_generation_loop(
    instance: &QAInstance,
    generator: &Client,
    verifier: &Verifier,
    max_iters: usize,
    decode: &DecodeDefaults,
    seed: i64,
) -> CoTRecord {
    assert!(max_iters >= 1, "max_iters must be at least 1");
    let initial_prompt = prompts::generation_prompt(instance);
    let mut attempts: Vec<ReasoningAttempt> = Vec::new();
    for index in 0..max_iters {
        let prompt = match attempts.last() {
            Some(prev) if prev.verdict.outcome != Outcome::Error => {
                prompts::refinement_prompt(instance, &prev.reasoning, &prev.feedback)
            }
            Some(_) => initial_prompt.clone(),
            None => initial_prompt.clone(),
        };
        let request = GenerationRequest::new(prompt)
            .with_temperature(decode.temperature)
            .with_max_tokens(decode.max_tokens);
        let attempt = match generator.complete(&request) {
            Ok(resp) => {
                let verdict =
                    verifier.verify(&resp.text, &instance.gold_answer, &instance.question);
                make_attempt(index, resp.text, verdict)
            }
            Err(err) => make_attempt(
                index,
                String::new(),
                Verdict::error(VerdictTier::Rule, format!("generator: {err}")),
            ),
        };
        let passed = attempt.verdict.outcome == Outcome::Pass;
        attempts.push(attempt);
        if passed {
            break;
        }
    }
    let status = if attempts.last().is_some_and(|a| a.verdict.outcome == Outcome::Pass) {
        RecordStatus::Verified
    } else {
        RecordStatus::Exhausted
    };
    CoTRecord {
        instance_id: instance.id.clone(),
        status,
        attempts,
        meta: RecordMeta {
            generator: generator.backend_id(),
            judge: verifier.judge_id(),
            seed,
            max_iters,
            prompt: initial_prompt,
        },
    }
}

fn make_attempt(index: usize, reasoning: String, verdict: Verdict) -> ReasoningAttempt {
    let feedback = verdict.feedback.clone();
    let extracted_answer = extract_final_answer(&reasoning).map(|a| a.to_string());
    ReasoningAttempt {
        index,
        reasoning,
        extracted_answer,
        // Feedback lives on the attempt; the verdict carries outcome + tier.
        verdict: Verdict { feedback: String::new(), ..verdict },
        feedback,
    }
}

/// Mine a DPO pair: chosen = verified final path, rejected = the last failed
/// path immediately preceding it. None when the record offers no such pair.
pub fn extract_preference_pair(record: &CoTRecord) -> Option<PreferencePair> {
    if record.status != RecordStatus::Verified || record.attempts.len() < 2 {
        return None;
    }
    let chosen = record.attempts.last()?;
    let rejected = &record.attempts[record.attempts.len() - 2];
    if chosen.verdict.outcome != Outcome::Pass || rejected.verdict.outcome != Outcome::Fail {
        return None;
    }
    if chosen.reasoning == rejected.reasoning {
        return None;
    }
    Some(PreferencePair {
        instance_id: record.instance_id.clone(),
        prompt: record.meta.prompt.clone(),
        chosen: chosen.reasoning.clone(),
        rejected: rejected.reasoning.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{make_scripted_backend, ScriptStep, ScriptedBackend};
    use crate::corpus::Source;
    use crate::judge::TolerancePolicy;

    fn instance(gold: &str) -> QAInstance {
        QAInstance {
            id: "i1".into(),
            source: Source::Synthetic,
            context_text: "ctx".into(),
            question: "What is the total?".into(),
            gold_answer: gold.into(),
            guidance: Vec::new(),
            context_token_count: 10,
            combined_question: None,
        }
    }

    fn rule_verifier() -> Verifier {
        Verifier::rule_only(TolerancePolicy::default())
    }

    /// Generator scripted to answer wrong `k` times, then right.
    fn scripted_generator(fails: usize, total: usize) -> std::sync::Arc<ScriptedBackend> {
        let mut script = Vec::new();
        for i in 0..total {
            if i < fails {
                script.push(format!("Attempt {i}. Therefore, the answer is 999."));
            } else {
                script.push(format!("Attempt {i}. Therefore, the answer is 42."));
            }
        }
        make_scripted_backend(script.iter().map(|s| s.as_str()).collect())
    }

    #[test]
    fn immediate_pass_single_attempt() {
        let generator = Client::new(scripted_generator(0, 1));
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            7,
        );
        assert_eq!(record.status, RecordStatus::Verified);
        assert_eq!(record.attempts.len(), 1);
        assert!(record.attempts[0].verdict.is_pass());
        assert!(record.attempts[0].feedback.is_empty());
    }

    #[test]
    fn fails_then_passes_on_third() {
        let backend = scripted_generator(2, 3);
        let generator = Client::new(backend.clone());
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            7,
        );
        assert_eq!(record.status, RecordStatus::Verified);
        assert_eq!(record.attempts.len(), 3);
        assert_eq!(record.attempts[1].verdict.outcome, Outcome::Fail);
        // Refinement prompts embed the marker and prior feedback.
        let reqs = backend.recorded_requests();
        assert!(!reqs[0].user_prompt.contains(prompts::REFINEMENT_MARKER));
        assert!(reqs[1].user_prompt.contains(prompts::REFINEMENT_MARKER));
        assert!(reqs[2].user_prompt.contains("Attempt 1."));
    }

    #[test]
    fn exhausts_budget_on_persistent_failure() {
        let generator = Client::new(scripted_generator(3, 3));
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            7,
        );
        assert_eq!(record.status, RecordStatus::Exhausted);
        assert_eq!(record.attempts.len(), 3);
        assert!(record.attempts.iter().all(|a| !a.verdict.is_pass()));
    }

    #[test]
    fn attempt_count_is_fails_plus_one() {
        for fails in 0..3 {
            let generator = Client::new(scripted_generator(fails, fails + 1));
            let record = run_generation_loop(
                &instance("42"),
                &generator,
                &rule_verifier(),
                3,
                &DecodeDefaults::default(),
                0,
            );
            assert_eq!(record.attempts.len(), fails + 1, "fails={fails}");
            assert_eq!(record.status, RecordStatus::Verified);
        }
    }

    #[test]
    fn generator_error_consumes_iteration() {
        let backend = ScriptedBackend::new(vec![
            ScriptStep::HttpError(400),
            ScriptStep::Text("Therefore, the answer is 42.".into()),
        ]);
        let generator = Client::new(backend);
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            0,
        );
        assert_eq!(record.status, RecordStatus::Verified);
        assert_eq!(record.attempts.len(), 2);
        assert_eq!(record.attempts[0].verdict.outcome, Outcome::Error);
        assert!(!record.attempts[0].feedback.is_empty());
    }

    #[test]
    fn all_errors_exhaust() {
        let backend = ScriptedBackend::new(vec![
            ScriptStep::HttpError(400),
            ScriptStep::HttpError(400),
            ScriptStep::HttpError(400),
        ]);
        let generator = Client::new(backend);
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            0,
        );
        assert_eq!(record.status, RecordStatus::Exhausted);
        assert_eq!(record.attempts.len(), 3);
    }

    #[test]
    fn preference_pair_from_fail_then_pass() {
        let generator = Client::new(scripted_generator(1, 2));
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            0,
        );
        let pair = extract_preference_pair(&record).unwrap();
        assert_eq!(pair.chosen, record.attempts[1].reasoning);
        assert_eq!(pair.rejected, record.attempts[0].reasoning);
        assert_ne!(pair.chosen, pair.rejected);
        assert_eq!(pair.prompt, record.meta.prompt);
    }

    #[test]
    fn no_pair_from_single_attempt_success() {
        let generator = Client::new(scripted_generator(0, 1));
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            0,
        );
        assert!(extract_preference_pair(&record).is_none());
    }

    #[test]
    fn no_pair_from_exhausted_record() {
        let generator = Client::new(scripted_generator(3, 3));
        let record = run_generation_loop(
            &instance("42"),
            &generator,
            &rule_verifier(),
            3,
            &DecodeDefaults::default(),
            0,
        );
        assert!(extract_preference_pair(&record).is_none());
    }

    #[test]
    fn record_is_deterministic_with_scripted_backends() {
        let run = || {
            let generator = Client::new(scripted_generator(1, 2));
            run_generation_loop(
                &instance("42"),
                &generator,
                &rule_verifier(),
                3,
                &DecodeDefaults::default(),
                0,
            )
        };
        let a = serde_json::to_string(&run()).unwrap();
        let b = serde_json::to_string(&run()).unwrap();
        assert_eq!(a, b);
    }
}
