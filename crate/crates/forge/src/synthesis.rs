//! Stage 1: merge expert sub-question chains into one combined question.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::corpus::{GuidanceKind, GuidanceStep, QAInstance};
use crate::prompts;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("instance {0} has no sub-question guidance")]
    NoSubQuestions(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("generator returned an empty combined question")]
    EmptyResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedQuestion {
    pub text: String,
    /// Ordered indices of the source sub-questions, each covered exactly once.
    pub component_ids: Vec<usize>,
    pub generator_id: String,
}

/// Synthesize one combined holistic question from the instance's sub-question
/// guidance. A single sub-question passes through unchanged without a
/// backend call.
pub fn synthesize_combined_question(
    instance: &QAInstance,
    generator: &Client,
) -> Result<CombinedQuestion, SynthesisError> {
    let sub_questions: Vec<&str> = instance
        .guidance
        .iter()
        .filter(|g| g.kind == GuidanceKind::SubQuestion)
        .map(|g| g.text.as_str())
        .collect();
    if sub_questions.is_empty() {
        return Err(SynthesisError::NoSubQuestions(instance.id.clone()));
    }
    let component_ids: Vec<usize> = (0..sub_questions.len()).collect();
    if sub_questions.len() == 1 {
        return Ok(CombinedQuestion {
            text: sub_questions[0].to_string(),
            component_ids,
            generator_id: "passthrough".into(),
        });
    }
    let request = GenerationRequest::new(prompts::synthesis_prompt(&sub_questions))
        .with_temperature(0.0);
    let response = generator.complete(&request)?;
    let text = response.text.trim().to_string();
    if text.is_empty() {
        return Err(SynthesisError::EmptyResult);
    }
    Ok(CombinedQuestion { text, component_ids, generator_id: generator.backend_id() })
}

/// Return a copy of the instance with its guidance replaced.
pub fn attach_guidance(instance: &QAInstance, steps: Vec<GuidanceStep>) -> QAInstance {
    QAInstance { guidance: steps, ..instance.clone() }
}
