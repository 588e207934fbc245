//! Request-keyed deterministic mock backend for offline pipeline runs.
//!
//! Unlike the scripted mock, responses here are a pure function of the
//! request, so interrupted-and-resumed runs replay identically regardless of
//! call order.

use std::sync::LazyLock;

use regex::Regex;

use crate::backend::{BackendError, GenerationRequest, ModelBackend};
use crate::prompts;

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Always the same text.
    Fixed(String),
    /// Solves "What is A plus B?" questions embedded in the prompt. With
    /// `wrong_first`, the initial attempt is off by one and only refinement
    /// prompts get the correct sum.
    Arithmetic { wrong_first: bool },
}

pub struct MockBackend {
    mode: MockMode,
    name: String,
}

static PLUS_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"What is (-?\d+(?:\.\d+)?) plus (-?\d+(?:\.\d+)?)\?").expect("plus regex")
});

impl MockBackend {
    pub fn new(mode: MockMode, name: impl Into<String>) -> Self {
        Self { mode, name: name.into() }
    }
}

impl ModelBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        match &self.mode {
            MockMode::Fixed(text) => Ok(text.clone()),
            MockMode::Arithmetic { wrong_first } => {
                let prompt = &request.user_prompt;
                if prompt.contains("Merge them into a single combined question") {
                    return Ok("What is the combined result of the listed computations?".into());
                }
                let caps = PLUS_RE.captures(prompt).ok_or_else(|| {
                    BackendError::InvalidResponse(
                        "arithmetic mock found no solvable question in prompt".into(),
                    )
                })?;
                let a: f64 = caps[1].parse().unwrap();
                let b: f64 = caps[2].parse().unwrap();
                let mut sum = a + b;
                if *wrong_first && !prompt.contains(prompts::REFINEMENT_MARKER) {
                    sum += 1.0;
                }
                Ok(format!(
                    "We add {a} and {b} step by step. Therefore, the answer is {sum}."
                ))
            }
        }
    }

    fn id(&self) -> String {
        format!("mock:{}", self.name)
    }
}
