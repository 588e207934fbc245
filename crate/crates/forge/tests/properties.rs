//! Property-based invariants over persistence, splitting, and numerics.

use std::collections::BTreeSet;

use proptest::prelude::*;

use forge::corpus::{
    load_native_instances, load_records, save_instances, save_records, split_corpus, CoTRecord,
    GuidanceStep, QAInstance, ReasoningAttempt, RecordMeta, RecordStatus, Source,
};
use forge::judge::{
    extract_final_answer, numeric_equivalent, ExtractedAnswer, TolerancePolicy, Verdict,
    VerdictTier,
};

const SOURCES: [Source; 8] = [
    Source::Finqa,
    Source::Convfinqa,
    Source::Docfinqa,
    Source::Tatqa,
    Source::EconLogic,
    Source::Docmath,
    Source::Bizbench,
    Source::Synthetic,
];

fn text() -> impl Strategy<Value = String> {
    // Printable text without raw control characters; newlines exercise the
    // JSONL escaping path.
    proptest::string::string_regex("[ -~\\n]{1,40}").unwrap()
}

fn guidance() -> impl Strategy<Value = GuidanceStep> {
    (any::<bool>(), text()).prop_map(|(sub, t)| {
        if sub {
            GuidanceStep::sub_question(t)
        } else {
            GuidanceStep::program_step(t)
        }
    })
}

fn qa_instance(idx: usize) -> impl Strategy<Value = QAInstance> {
    (
        0usize..SOURCES.len(),
        text(),
        text(),
        text(),
        proptest::collection::vec(guidance(), 0..3),
        // Zero means "not supplied"; the loader backfills it with the
        // estimate, so it cannot round-trip.
        1u64..20_000,
        proptest::option::of(text()),
    )
        .prop_map(move |(src, ctx, q, gold, guidance, tokens, combined)| QAInstance {
            id: format!("prop-{idx}"),
            source: SOURCES[src],
            context_text: ctx,
            question: q,
            gold_answer: gold,
            guidance,
            context_token_count: tokens,
            combined_question: combined,
        })
}

fn instances() -> impl Strategy<Value = Vec<QAInstance>> {
    (1usize..40).prop_flat_map(|n| {
        (0..n).map(qa_instance).collect::<Vec<_>>()
    })
}

fn verdict() -> impl Strategy<Value = Verdict> {
    (0u8..3, text()).prop_map(|(kind, feedback)| match kind {
        0 => Verdict::pass(VerdictTier::Rule),
        1 => Verdict::fail(VerdictTier::LlmJudge, feedback),
        _ => Verdict::error(VerdictTier::Rule, feedback),
    })
}

fn record(idx: usize) -> impl Strategy<Value = CoTRecord> {
    (
        proptest::collection::vec((text(), proptest::option::of(text()), verdict(), text()), 1..4),
        any::<bool>(),
        text(),
        any::<i64>(),
    )
        .prop_map(move |(raw_attempts, verified, prompt, seed)| {
            let attempts: Vec<ReasoningAttempt> = raw_attempts
                .into_iter()
                .enumerate()
                .map(|(index, (reasoning, extracted, mut verdict, feedback))| {
                    // Attempt-level schema: feedback lives on the attempt.
                    verdict.feedback = String::new();
                    ReasoningAttempt {
                        index,
                        reasoning,
                        extracted_answer: extracted,
                        verdict,
                        feedback,
                    }
                })
                .collect();
            CoTRecord {
                instance_id: format!("rec-{idx}"),
                status: if verified { RecordStatus::Verified } else { RecordStatus::Exhausted },
                attempts,
                meta: RecordMeta {
                    generator: "mock:g".into(),
                    judge: "rule".into(),
                    seed,
                    max_iters: 3,
                    prompt,
                },
            }
        })
}

proptest! {
    #[test]
    fn instances_round_trip_through_jsonl(batch in instances()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        save_instances(&batch, &path).unwrap();
        let loaded = load_native_instances(&path).unwrap();
        prop_assert_eq!(loaded, batch);
    }

    #[test]
    fn records_round_trip_through_jsonl(
        batch in (1usize..10).prop_flat_map(|n| (0..n).map(record).collect::<Vec<_>>())
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        save_records(&batch, &path).unwrap();
        let loaded = load_records(&path).unwrap();
        prop_assert_eq!(loaded, batch);
    }

    #[test]
    fn split_partitions_exactly(
        batch in instances(),
        frac in 0.0f64..=1.0,
        seed in any::<i64>(),
    ) {
        let sft_count = (batch.len() as f64 * frac) as usize;
        let split = split_corpus(&batch, sft_count, seed).unwrap();
        prop_assert_eq!(split.sft.len(), sft_count);
        prop_assert_eq!(split.rl.len(), batch.len() - sft_count);
        let sft: BTreeSet<_> = split.sft.iter().collect();
        let rl: BTreeSet<_> = split.rl.iter().collect();
        prop_assert!(sft.is_disjoint(&rl));
        let all: BTreeSet<_> = batch.iter().map(|i| &i.id).collect();
        let union: BTreeSet<_> = sft.union(&rl).copied().collect();
        prop_assert_eq!(union, all);

        // Same seed, same split.
        let again = split_corpus(&batch, sft_count, seed).unwrap();
        prop_assert_eq!(again, split);
    }

    #[test]
    fn equivalence_accepts_within_and_rejects_beyond_tolerance(
        mantissa in 1i64..=999_999,
        frac in -0.9f64..=0.9,
    ) {
        let policy = TolerancePolicy::default();
        let v = mantissa as f64 / 100.0;
        let within = v * (1.0 + frac * policy.rel_tol);
        prop_assert!(numeric_equivalent(
            &ExtractedAnswer::plain(v),
            &ExtractedAnswer::plain(within),
            &policy,
        ));
        let beyond = v * (1.0 + 3.0 * policy.rel_tol) + 3.0 * policy.abs_tol;
        prop_assert!(!numeric_equivalent(
            &ExtractedAnswer::plain(v),
            &ExtractedAnswer::plain(beyond),
            &policy,
        ));
    }

    #[test]
    fn equivalence_is_symmetric(
        a in -1.0e9f64..=1.0e9,
        b in -1.0e9f64..=1.0e9,
        pct in any::<bool>(),
    ) {
        let policy = TolerancePolicy::default();
        let left = ExtractedAnswer { is_percent: pct, ..ExtractedAnswer::plain(a) };
        let right = ExtractedAnswer::plain(b);
        prop_assert_eq!(
            numeric_equivalent(&left, &right, &policy),
            numeric_equivalent(&right, &left, &policy)
        );
    }

    #[test]
    fn extraction_recovers_displayed_answers(
        mantissa in -999_999i64..=999_999,
        pct in any::<bool>(),
    ) {
        let value = mantissa as f64 / 100.0;
        let shown = ExtractedAnswer { is_percent: pct, ..ExtractedAnswer::plain(value) };
        let sentence = format!("Therefore, the answer is {shown}.");
        let got = extract_final_answer(&sentence).unwrap();
        prop_assert_eq!(got.value, shown.value);
        prop_assert_eq!(got.is_percent, shown.is_percent);
    }
}
