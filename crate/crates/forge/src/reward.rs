//! Reward functions: verifier accuracy reward, KL-penalized reward, and the
//! four-component multi-faceted reward with accuracy gating of the length
//! term. Scores are computed for external trainers; no parameters are
//! updated here.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Client, GenerationRequest};
use crate::judge::{Outcome, Verdict};
use crate::prompts;

/// Context-length threshold (tokens) above which the length reward applies,
/// strictly.
pub const LENGTH_THRESHOLD: u64 = 8192;
/// Value of the format component when earned.
pub const FORMAT_REWARD_VALUE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha_acc: f64,
    pub alpha_logic: f64,
    pub alpha_format: f64,
    pub alpha_length: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { alpha_acc: 1.0, alpha_logic: 1.0, alpha_format: 1.0, alpha_length: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, v) in [
            ("alpha_acc", self.alpha_acc),
            ("alpha_logic", self.alpha_logic),
            ("alpha_format", self.alpha_format),
            ("alpha_length", self.alpha_length),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(RewardError::Argument(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_logic: f64,
    pub r_format: f64,
    pub r_length: f64,
    /// True when the length reward was suppressed by a zero accuracy reward.
    pub gated_length: bool,
    pub total: f64,
}

/// Accuracy reward: 1 iff the verifier passed. Error verdicts score 0 so
/// training loops always receive a total.
pub fn accuracy_reward(verdict: &Verdict) -> u8 {
    match verdict.outcome {
        Outcome::Pass => 1,
        Outcome::Fail | Outcome::Error => 0,
    }
}

/// KL-penalized reward: r - beta * kl. The KL value is trainer-supplied.
pub fn kl_adjusted_reward(r: f64, beta: f64, kl: f64) -> Result<f64, RewardError> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(RewardError::Argument("beta must be nonnegative".into()));
    }
    if kl < 0.0 || !kl.is_finite() {
        return Err(RewardError::Argument("kl must be nonnegative".into()));
    }
    Ok(r - beta * kl)
}

/// Judge the reasoning path's validity, independent of the final answer.
/// Returns (reward, flagged); judge failures score 0 with the flag set.
pub fn logic_reward(
    reasoning: &str,
    question: &str,
    gold: &str,
    judge: &Client,
) -> (u8, bool) {
    let request = GenerationRequest::new(prompts::judge_logic_prompt(question, gold, reasoning));
    match judge.complete(&request) {
        Ok(resp) => {
            let upper = resp.text.trim().to_ascii_uppercase();
            if upper.starts_with("INVALID") {
                (0, false)
            } else if upper.starts_with("VALID") {
                (1, false)
            } else {
                (0, true)
            }
        }
        Err(_) => (0, true),
    }
}

static FORMAT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)therefore,\s+the\s+answer\s+is\s*\S").expect("format regex"));

/// Format reward: 0.1 iff non-empty reasoning precedes a final-answer
/// sentence matching the required template.
pub fn format_reward(response: &str) -> f64 {
    let Some(m) = FORMAT_RE.find_iter(response).last() else {
        return 0.0;
    };
    if response[..m.start()].trim().is_empty() {
        return 0.0;
    }
    FORMAT_REWARD_VALUE
}

/// Length reward: 1 iff the context strictly exceeds the threshold and the
/// answer was correct. A zero accuracy reward zeroes the length reward.
pub fn length_reward_with_threshold(context_tokens: u64, r_acc: u8, threshold: u64) -> u8 {
    if context_tokens > threshold && r_acc == 1 {
        1
    } else {
        0
    }
}

pub fn length_reward(context_tokens: u64, r_acc: u8) -> u8 {
    length_reward_with_threshold(context_tokens, r_acc, LENGTH_THRESHOLD)
}

/// Compose the four components into the weighted total
/// `a1*r_acc + a2*r_logic + a3*r_format + a4*r_length*r_acc`.
pub fn grpo_reward_with_threshold(
    verdict: &Verdict,
    logic: u8,
    response: &str,
    context_tokens: u64,
    weights: &RewardWeights,
    threshold: u64,
) -> RewardBreakdown {
    let r_acc = accuracy_reward(verdict) as f64;
    let r_logic = logic as f64;
    let r_format = format_reward(response);
    let r_length =
        length_reward_with_threshold(context_tokens, accuracy_reward(verdict), threshold) as f64;
    let total = weights.alpha_acc * r_acc
        + weights.alpha_logic * r_logic
        + weights.alpha_format * r_format
        + weights.alpha_length * r_length * r_acc;
    RewardBreakdown {
        r_acc,
        r_logic,
        r_format,
        r_length,
        gated_length: context_tokens > threshold && r_acc == 0.0,
        total,
    }
}

pub fn grpo_reward(
    verdict: &Verdict,
    logic: u8,
    response: &str,
    context_tokens: u64,
    weights: &RewardWeights,
) -> RewardBreakdown {
    grpo_reward_with_threshold(verdict, logic, response, context_tokens, weights, LENGTH_THRESHOLD)
}

/// Batch-scoring row shapes for the external-trainer file interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreInput {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub response: String,
    pub context_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub id: String,
    pub r_acc: f64,
    pub r_logic: f64,
    pub r_format: f64,
    pub r_length: f64,
    pub total: f64,
}

impl ScoreOutput {
    pub fn from_breakdown(id: String, b: &RewardBreakdown) -> Self {
        Self {
            id,
            r_acc: b.r_acc,
            r_logic: b.r_logic,
            r_format: b.r_format,
            r_length: b.r_length,
            total: b.total,
        }
    }
}
