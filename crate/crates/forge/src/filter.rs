//! Stage 3: difficulty-aware filtering. Instances the weaker filter model
//! already solves are dropped; verification failures keep the instance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Client, GenerationRequest};
use crate::corpus::QAInstance;
use crate::judge::{Outcome, Verifier};
use crate::pool::parallel_map;
use crate::prompts;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    /// Kept instances whose attempt failed on infrastructure, flagged for audit.
    pub errored: Vec<String>,
    pub attempts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDecision {
    Kept,
    Dropped,
    Errored,
}

/// Evaluate one instance: one zero-shot attempt by the filter model at
/// temperature 0, verified against gold. Solved => dropped; failed => kept;
/// any error => kept and flagged.
pub fn filter_one(
    instance: &QAInstance,
    filter_model: &Client,
    verifier: &Verifier,
) -> (FilterDecision, String) {
    let request = GenerationRequest::new(prompts::zero_shot_prompt(instance));
    match filter_model.complete(&request) {
        Ok(resp) => {
            let verdict = verifier.verify(&resp.text, &instance.gold_answer, &instance.question);
            let decision = match verdict.outcome {
                Outcome::Pass => FilterDecision::Dropped,
                Outcome::Fail => FilterDecision::Kept,
                Outcome::Error => FilterDecision::Errored,
            };
            (decision, resp.text)
        }
        Err(err) => (FilterDecision::Errored, format!("<error: {err}>")),
    }
}

/// Filter a batch under bounded fan-out, assembling the report in input order.
pub fn filter_by_difficulty(
    instances: &[QAInstance],
    filter_model: &Client,
    verifier: &Verifier,
    parallelism: usize,
) -> FilterReport {
    let outcomes = parallel_map(instances, parallelism, |inst| {
        filter_one(inst, filter_model, verifier)
    });
    let mut report = FilterReport::default();
    for (instance, (decision, answer)) in instances.iter().zip(outcomes) {
        report.attempts.insert(instance.id.clone(), answer);
        match decision {
            FilterDecision::Dropped => report.dropped.push(instance.id.clone()),
            FilterDecision::Kept => report.kept.push(instance.id.clone()),
            FilterDecision::Errored => {
                report.kept.push(instance.id.clone());
                report.errored.push(instance.id.clone());
            }
        }
    }
    report
}
