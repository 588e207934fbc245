//! Verification core: final-answer extraction, financial numeric
//! normalization, and two-tier equivalence (rules first, LLM judge fallback).

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictTier {
    Rule,
    LlmJudge,
}

/// Outcome of answer verification plus which tier decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub tier: VerdictTier,
    #[serde(default, skip_serializing)]
    pub feedback: String,
}

impl Verdict {
    pub fn pass(tier: VerdictTier) -> Self {
        Self { outcome: Outcome::Pass, tier, feedback: String::new() }
    }

    pub fn fail(tier: VerdictTier, feedback: impl Into<String>) -> Self {
        Self { outcome: Outcome::Fail, tier, feedback: feedback.into() }
    }

    pub fn error(tier: VerdictTier, feedback: impl Into<String>) -> Self {
        let feedback = feedback.into();
        debug_assert!(!feedback.is_empty(), "error verdicts carry feedback");
        Self { outcome: Outcome::Error, tier, feedback }
    }

    pub fn is_pass(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Unit,
    Thousand,
    Million,
    Billion,
}

impl Scale {
    pub fn multiplier(&self) -> f64 {
        match self {
            Scale::Unit => 1.0,
            Scale::Thousand => 1e3,
            Scale::Million => 1e6,
            Scale::Billion => 1e9,
        }
    }

    fn word(&self) -> Option<&'static str> {
        match self {
            Scale::Unit => None,
            Scale::Thousand => Some("thousand"),
            Scale::Million => Some("million"),
            Scale::Billion => Some("billion"),
        }
    }
}

/// A normalized numeric answer pulled out of free text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedAnswer {
    pub value: f64,
    pub is_percent: bool,
    pub scale: Scale,
    pub raw_span: String,
}

impl ExtractedAnswer {
    pub fn plain(value: f64) -> Self {
        Self { value, is_percent: false, scale: Scale::Unit, raw_span: value.to_string() }
    }
}

impl fmt::Display for ExtractedAnswer {
    /// Canonical rendering; re-extraction recovers equal value and flags.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)?;
        if self.is_percent {
            write!(f, "%")?;
        }
        if let Some(word) = self.scale.word() {
            write!(f, " {word}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub allow_percent_decimal: bool,
    pub allow_scale_units: bool,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            rel_tol: 0.005,
            abs_tol: 1e-4,
            allow_percent_decimal: true,
            allow_scale_units: true,
        }
    }
}

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
        (?P<open>\()?\s*
        (?P<neg>-)?\s*
        (?P<cur>[$€£])?\s*
        (?P<neg2>-)?\s*
        (?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)
        (?P<pct>\s?(?:%|percent\b))?\s*
        (?P<close>\))?
        (?:\s*(?P<scale>thousand|million|billion)s?\b)?
        ",
    )
    .expect("number regex")
});

static TEMPLATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the\s+answer\s+is").expect("template regex"));

fn parse_match(caps: &regex::Captures<'_>) -> Option<ExtractedAnswer> {
    let num = caps.name("num")?.as_str().replace(',', "");
    let mut value: f64 = num.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    let parenthesized = caps.name("open").is_some() && caps.name("close").is_some();
    if caps.name("neg").is_some() || caps.name("neg2").is_some() || parenthesized {
        value = -value;
    }
    let scale = match caps.name("scale").map(|m| m.as_str().to_ascii_lowercase()) {
        Some(s) if s == "thousand" => Scale::Thousand,
        Some(s) if s == "million" => Scale::Million,
        Some(s) if s == "billion" => Scale::Billion,
        _ => Scale::Unit,
    };
    Some(ExtractedAnswer {
        value,
        is_percent: caps.name("pct").is_some(),
        scale,
        raw_span: caps.get(0)?.as_str().trim().to_string(),
    })
}

/// Pull the final answer out of a model response.
///
/// The "the answer is" template sentence wins when present; otherwise the
/// last number in the text (i.e. the final number-bearing sentence) is used.
/// Handles signs, thousands separators, currency symbols, parenthesized
/// accounting negatives, percent marks, and thousand/million/billion words.
pub fn extract_final_answer(text: &str) -> Option<ExtractedAnswer> {
    if let Some(m) = TEMPLATE_RE.find_iter(text).last() {
        let tail = &text[m.end()..];
        if let Some(caps) = NUMBER_RE.captures(tail) {
            if let Some(ans) = parse_match(&caps) {
                return Some(ans);
            }
        }
    }
    NUMBER_RE
        .captures_iter(text)
        .filter_map(|caps| parse_match(&caps))
        .last()
}

fn close_enough(a: f64, b: f64, policy: &TolerancePolicy) -> bool {
    let tol = policy.abs_tol.max(policy.rel_tol * a.abs().max(b.abs()));
    (a - b).abs() <= tol
}

/// Decide numeric equivalence under the admissible-transform rules.
///
/// Percent and scale transforms require an explicit marker on exactly one
/// side; there is no blind rescaling. Symmetric by construction.
pub fn numeric_equivalent(
    candidate: &ExtractedAnswer,
    gold: &ExtractedAnswer,
    policy: &TolerancePolicy,
) -> bool {
    let c = candidate.value;
    let mut variants = vec![c];
    if policy.allow_percent_decimal && (candidate.is_percent != gold.is_percent) {
        variants.push(c * 100.0);
        variants.push(c / 100.0);
    }
    if policy.allow_scale_units {
        let marked = |a: &ExtractedAnswer| a.scale != Scale::Unit;
        if marked(candidate) != marked(gold) {
            let m = if marked(candidate) {
                candidate.scale.multiplier()
            } else {
                gold.scale.multiplier()
            };
            variants.push(c * m);
            variants.push(c / m);
        }
    }
    variants.into_iter().any(|v| close_enough(v, gold.value, policy))
}

/// Ask the LLM judge whether a free-text response matches gold.
pub fn judge_with_llm(response: &str, gold: &str, question: &str, judge: &Client) -> Verdict {
    let prompt = prompts::judge_answer_prompt(question, gold, response);
    let request = GenerationRequest::new(prompt);
    match judge.complete(&request) {
        Ok(resp) => parse_judge_output(&resp.text),
        Err(err) => Verdict::error(VerdictTier::LlmJudge, format!("judge backend: {err}")),
    }
}

fn parse_judge_output(text: &str) -> Verdict {
    let trimmed = text.trim();
    let upper = trimmed.to_ascii_uppercase();
    if upper.starts_with("INCORRECT") {
        let feedback = trimmed["INCORRECT".len()..].trim_start_matches([':', ' ']).to_string();
        Verdict::fail(VerdictTier::LlmJudge, feedback)
    } else if upper.starts_with("CORRECT") {
        Verdict::pass(VerdictTier::LlmJudge)
    } else {
        Verdict::error(VerdictTier::LlmJudge, format!("unparseable judge output: {trimmed}"))
    }
}

/// Two-tier verification: numeric rules when both sides parse, LLM judge
/// otherwise. A rule-tier decision makes zero backend calls.
pub fn verify(
    response: &str,
    gold: &str,
    question: &str,
    policy: &TolerancePolicy,
    judge: Option<&Client>,
) -> Verdict {
    let candidate = extract_final_answer(response);
    let gold_answer = extract_final_answer(gold);
    if let (Some(candidate), Some(gold_answer)) = (&candidate, &gold_answer) {
        return if numeric_equivalent(candidate, gold_answer, policy) {
            Verdict::pass(VerdictTier::Rule)
        } else {
            Verdict::fail(
                VerdictTier::Rule,
                format!(
                    "numeric mismatch: extracted {} but expected {}",
                    candidate, gold_answer
                ),
            )
        };
    }
    match judge {
        Some(judge) => judge_with_llm(response, gold, question, judge),
        None => Verdict::fail(VerdictTier::Rule, "unparseable"),
    }
}

/// Shared verifier handle: a tolerance policy plus an optional judge backend.
#[derive(Clone)]
pub struct Verifier {
    pub policy: TolerancePolicy,
    pub judge: Option<Client>,
}

impl Verifier {
    pub fn rule_only(policy: TolerancePolicy) -> Self {
        Self { policy, judge: None }
    }

    pub fn with_judge(policy: TolerancePolicy, judge: Client) -> Self {
        Self { policy, judge: Some(judge) }
    }

    pub fn verify(&self, response: &str, gold: &str, question: &str) -> Verdict {
        verify(response, gold, question, &self.policy, self.judge.as_ref())
    }

    pub fn judge_id(&self) -> String {
        self.judge.as_ref().map(|j| j.backend_id()).unwrap_or_else(|| "rule".into())
    }
}

#[allow(dead_code)]
fn _assert_backend_error_display(e: &BackendError) -> String {
    e.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::make_scripted_backend;

    fn extract(text: &str) -> ExtractedAnswer {
        extract_final_answer(text).unwrap_or_else(|| panic!("no answer in {text:?}"))
    }

    #[test]
    fn template_sentence_wins() {
        let ans = extract("The 2014 value was 285.37. Therefore, the answer is 61.07.");
        assert_eq!(ans.value, 61.07);
        assert!(!ans.is_percent);
    }

    #[test]
    fn scale_word_parsed() {
        let ans = extract("Pro forma net income is $1,802 million.");
        assert_eq!(ans.value, 1802.0);
        assert_eq!(ans.scale, Scale::Million);
    }

    #[test]
    fn parenthesized_percent_is_negative() {
        let ans = extract("The answer is (3.5%)");
        assert_eq!(ans.value, -3.5);
        assert!(ans.is_percent);
    }

    #[test]
    fn no_number_yields_none() {
        assert!(extract_final_answer("I cannot determine this.").is_none());
        assert!(extract_final_answer("").is_none());
    }

    #[test]
    fn thousands_separators_and_currency() {
        let ans = extract("Total was $12,345,678.90 overall.");
        assert_eq!(ans.value, 12_345_678.90);
    }

    #[test]
    fn percent_word_form() {
        let ans = extract("growth was 11.82 percent year over year. The answer is 11.82 percent");
        assert_eq!(ans.value, 11.82);
        assert!(ans.is_percent);
    }

    #[test]
    fn negative_sign_form() {
        let ans = extract("Therefore, the answer is -4.2%");
        assert_eq!(ans.value, -4.2);
        assert!(ans.is_percent);
    }

    #[test]
    fn percent_decimal_equivalence() {
        let policy = TolerancePolicy::default();
        // Hand-derived from the FinQA appendix table: (319.10 - 285.37) / 285.37.
        let derived = (319.10 - 285.37) / 285.37;
        let candidate = ExtractedAnswer::plain(derived);
        let gold = extract("11.82%");
        assert!(numeric_equivalent(&candidate, &gold, &policy));
    }

    #[test]
    fn scale_marked_equivalence() {
        let policy = TolerancePolicy::default();
        let candidate = extract("$71 million");
        assert!(numeric_equivalent(&candidate, &extract("71"), &policy));
        assert!(numeric_equivalent(&candidate, &extract("71,000,000"), &policy));
    }

    #[test]
    fn distinct_values_not_equivalent() {
        let policy = TolerancePolicy::default();
        assert!(!numeric_equivalent(
            &ExtractedAnswer::plain(285.37),
            &ExtractedAnswer::plain(319.10),
            &policy
        ));
    }

    #[test]
    fn within_rel_tol_accepted() {
        let policy = TolerancePolicy::default();
        assert!(numeric_equivalent(
            &ExtractedAnswer::plain(0.118),
            &ExtractedAnswer::plain(0.1182),
            &policy
        ));
    }

    #[test]
    fn no_blind_percent_rescaling() {
        let policy = TolerancePolicy::default();
        // Neither side percent-marked: 0.5 must not match 50.
        assert!(!numeric_equivalent(
            &ExtractedAnswer::plain(0.5),
            &ExtractedAnswer::plain(50.0),
            &policy
        ));
    }

    #[test]
    fn verify_rule_tier_makes_no_backend_calls() {
        let backend = make_scripted_backend(vec!["CORRECT"]);
        let judge = Client::new(backend.clone());
        let verdict = verify(
            "Steps... Therefore, the answer is 71",
            "71",
            "What is the pro forma net income?",
            &TolerancePolicy::default(),
            Some(&judge),
        );
        assert_eq!(verdict.outcome, Outcome::Pass);
        assert_eq!(verdict.tier, VerdictTier::Rule);
        assert!(verdict.feedback.is_empty());
        assert_eq!(backend.call_count(), 0);
    }

    #[test]
    fn verify_falls_back_to_judge() {
        let backend = make_scripted_backend(vec!["CORRECT"]);
        let judge = Client::new(backend.clone());
        let verdict = verify(
            "It increased materially.",
            "increase",
            "Did it increase?",
            &TolerancePolicy::default(),
            Some(&judge),
        );
        assert_eq!(verdict.outcome, Outcome::Pass);
        assert_eq!(verdict.tier, VerdictTier::LlmJudge);
        assert_eq!(backend.call_count(), 1);
    }

    #[test]
    fn verify_without_judge_degrades_to_fail() {
        let verdict = verify(
            "It went up.",
            "increase",
            "Did it increase?",
            &TolerancePolicy::default(),
            None,
        );
        assert_eq!(verdict.outcome, Outcome::Fail);
        assert_eq!(verdict.feedback, "unparseable");
    }

    #[test]
    fn judge_incorrect_carries_feedback() {
        let backend = make_scripted_backend(vec!["INCORRECT: wrong sign"]);
        let judge = Client::new(backend);
        let verdict = judge_with_llm("answer", "gold", "q", &judge);
        assert_eq!(verdict.outcome, Outcome::Fail);
        assert_eq!(verdict.feedback, "wrong sign");
    }

    #[test]
    fn judge_backend_down_is_error_verdict() {
        let backend = make_scripted_backend(vec![]);
        let judge = Client::new(backend);
        let verdict = judge_with_llm("answer", "gold", "q", &judge);
        assert_eq!(verdict.outcome, Outcome::Error);
        assert!(!verdict.feedback.is_empty());
    }

    #[test]
    fn judge_gibberish_is_error_verdict() {
        let backend = make_scripted_backend(vec!["maybe?"]);
        let judge = Client::new(backend);
        let verdict = judge_with_llm("answer", "gold", "q", &judge);
        assert_eq!(verdict.outcome, Outcome::Error);
    }

    #[test]
    fn extraction_idempotent_on_canonical_rendering() {
        for text in ["-3.5%", "1802 million", "0.1182", "42"] {
            let first = extract(text);
            let second = extract(&first.to_string());
            assert_eq!(first.value, second.value);
            assert_eq!(first.is_percent, second.is_percent);
            assert_eq!(first.scale, second.scale);
        }
    }
}
