//! Versioned prompt templates used by the pipeline stages.
//!
//! Benchmark task templates live in [`crate::eval`]; everything here is
//! pipeline-internal wording and may evolve, hence the version tag recorded
//! in output metadata.

use crate::corpus::{GuidanceKind, QAInstance};

pub const PROMPT_VERSION: &str = "v1";

/// The final-answer sentence the generator and the format reward key on.
pub const ANSWER_TEMPLATE: &str = "Therefore, the answer is";

/// Marker present only in refinement prompts; attempt 0 never contains it.
pub const REFINEMENT_MARKER: &str = "Your previous attempt was judged incorrect.";

/// Instructs the generator to merge expert sub-questions into one holistic
/// question that still requires every intermediate computation.
pub fn synthesis_prompt(sub_questions: &[&str]) -> String {
    let mut out = String::from(
        "You are a financial expert. The following sub-questions decompose one \
         financial analysis into ordered steps. Merge them into a single combined \
         question that requires all of the same computations, phrased as one \
         holistic question. Reply with the combined question only.\n\nSub-questions:\n",
    );
    for (i, q) in sub_questions.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, q));
    }
    out
}

/// First-attempt generation prompt: context, question, and any expert
/// guidance, ending with the required answer template.
pub fn generation_prompt(instance: &QAInstance) -> String {
    let mut out = String::from(
        "You are a financial expert, you are supposed to answer the given question \
         based on the provided financial document context. Think through the problem \
         step by step, documenting each necessary step.",
    );
    out.push_str(&format!(
        " Conclude your response with the final answer in your last sentence as \
         '{ANSWER_TEMPLATE} {{final answer}}'.\n\n",
    ));
    out.push_str(&format!("Context:\n{}\n\n", instance.context_text));
    if !instance.guidance.is_empty() {
        out.push_str("Expert guidance:\n");
        for step in &instance.guidance {
            let label = match step.kind {
                GuidanceKind::SubQuestion => "sub-question",
                GuidanceKind::ProgramStep => "program step",
            };
            out.push_str(&format!("- ({label}) {}\n", step.text));
        }
        out.push('\n');
    }
    out.push_str(&format!("Question: {}\nAnswer:", instance.question));
    out
}

/// Zero-shot prompt used by the difficulty filter: same task framing, no
/// guidance (the filter model must solve the question unaided).
pub fn zero_shot_prompt(instance: &QAInstance) -> String {
    let stripped = QAInstance { guidance: Vec::new(), ..instance.clone() };
    generation_prompt(&stripped)
}

/// Refinement prompt embedding the prior reasoning path and the verifier
/// feedback, asking the model to revisit earlier steps.
pub fn refinement_prompt(instance: &QAInstance, prior_reasoning: &str, feedback: &str) -> String {
    format!(
        "{}\n\n{REFINEMENT_MARKER} Revisit your earlier steps, refine your \
         assumptions, and adjust your reasoning based on the verifier feedback \
         below, then answer again.\n\nPrevious reasoning:\n{}\n\nVerifier \
         feedback:\n{}\n\nAnswer:",
        generation_prompt(instance),
        prior_reasoning,
        feedback,
    )
}

/// Answer-correctness judging prompt. The judge must lead with CORRECT or
/// INCORRECT so the verdict is machine-readable.
pub fn judge_answer_prompt(question: &str, gold: &str, response: &str) -> String {
    format!(
        "You are grading an answer to a financial question.\n\
         Question: {question}\n\
         Gold answer: {gold}\n\
         Model response: {response}\n\n\
         Does the model response's final answer match the gold answer, allowing \
         for differences in percentages, rounding, or numeric formatting? Reply \
         with exactly CORRECT, or INCORRECT: <brief reason>."
    )
}

/// Reasoning-validity judging prompt, independent of the final answer match.
pub fn judge_logic_prompt(question: &str, gold: &str, reasoning: &str) -> String {
    format!(
        "You are auditing the reasoning behind an answer to a financial question.\n\
         Question: {question}\n\
         Gold answer: {gold}\n\
         Reasoning path: {reasoning}\n\n\
         Is the step-by-step reasoning logically sound and consistent with the \
         question? Reply with exactly VALID, or INVALID: <brief reason>."
    )
}
