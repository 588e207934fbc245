//! Stage runners behind the CLI: each pipeline stage reads JSONL, fans out
//! over instances under a bounded pool, checkpoints per instance, and writes
//! its output atomically in input order only once every instance is done.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{Config, ConfigError};
use crate::corpus::{self, CoTRecord, CorpusError, QAInstance};
use crate::cotloop;
use crate::eval::{self, EvalError, EvalResult, TaskName, VerdictLogEntry};
use crate::filter::{filter_one, FilterDecision, FilterReport};
use crate::judge::{Outcome, Verifier, VerdictTier};
use crate::pool::parallel_map;
use crate::reward::{self, ScoreInput, ScoreOutput};
use crate::synthesis;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Synthesis(#[from] synthesis::SynthesisError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("stage error: {0}")]
    Stage(String),
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Stage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Completed,
    /// Stopped early with the checkpoint flushed; rerun with --resume.
    Interrupted { remaining: usize },
}

/// Per-invocation stage settings, already merged from config and CLI flags.
pub struct StageOptions {
    pub config: Config,
    pub parallelism: usize,
    pub resume: bool,
    pub interrupt_after: Option<usize>,
    pub checkpoint_dir: PathBuf,
    pub run_id: String,
    pub seed: i64,
}

impl StageOptions {
    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint_dir.join(format!("{}.ckpt.json", self.run_id))
    }

    fn verifier(&self) -> Result<Verifier, PipelineError> {
        let policy = self.config.tolerance_policy();
        Ok(match &self.config.pipeline.judge {
            Some(name) => Verifier::with_judge(policy, self.config.client(name)?),
            None => Verifier::rule_only(policy),
        })
    }
}

fn ensure_unique_ids(ids: &[String]) -> Result<(), PipelineError> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(PipelineError::Stage(format!("duplicate instance id `{id}`")));
        }
    }
    Ok(())
}

/// Run `work` over every pending item, recording one checkpoint entry per
/// completion. Honors resume (skip completed ids) and interrupt-after
/// (process at most N pending items, then flush and stop).
fn run_checkpointed<T, F>(
    stage_name: &str,
    opts: &StageOptions,
    ids: &[String],
    items: &[T],
    work: F,
) -> Result<(BTreeMap<String, Value>, StageOutcome), PipelineError>
where
    T: Sync,
    F: Fn(&T) -> Result<Value, PipelineError> + Sync,
{
    ensure_unique_ids(ids)?;
    std::fs::create_dir_all(&opts.checkpoint_dir).map_err(|e| CheckpointError::Io {
        path: opts.checkpoint_dir.display().to_string(),
        source: e,
    })?;
    let ckpt_path = opts.checkpoint_path();
    let digest = opts.config.digest();
    let checkpoint = if opts.resume && ckpt_path.exists() {
        let loaded = Checkpoint::load(&ckpt_path)?;
        loaded.check_compatible(stage_name, &digest)?;
        loaded
    } else {
        Checkpoint::new(&opts.run_id, stage_name, &digest)
    };

    let pending: Vec<usize> =
        (0..items.len()).filter(|&i| !checkpoint.is_completed(&ids[i])).collect();
    let limit = opts.interrupt_after.unwrap_or(pending.len()).min(pending.len());
    let (to_run, deferred) = pending.split_at(limit);

    // Single serialized checkpoint writer; workers only compute.
    let shared = Mutex::new(checkpoint);
    let errors: Vec<PipelineError> = parallel_map(to_run, opts.parallelism, |&i| {
        match work(&items[i]) {
            Ok(value) => {
                let mut guard = shared.lock().unwrap();
                guard.record(&ids[i], value);
                guard.save(&ckpt_path).map_err(PipelineError::from).err()
            }
            Err(e) => Some(e),
        }
    })
    .into_iter()
    .flatten()
    .collect();
    let checkpoint = shared.into_inner().unwrap();
    if let Some(first) = errors.into_iter().next() {
        return Err(first);
    }
    let outcome = if deferred.is_empty() {
        StageOutcome::Completed
    } else {
        StageOutcome::Interrupted { remaining: deferred.len() }
    };
    Ok((checkpoint.results, outcome))
}

fn sibling_path(base: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", base.display()))
}

/// Stage 1: combined-question synthesis. Instances without sub-question
/// guidance pass through untouched.
pub fn stage_synthesize(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
) -> Result<StageOutcome, PipelineError> {
    let instances = corpus::load_native_instances(input)?;
    let generator = opts.config.named_client("generator", &opts.config.pipeline.generator)?;
    let replace = opts.config.pipeline.replace_question;
    let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
    let (results, outcome) = run_checkpointed("synthesize", opts, &ids, &instances, |inst| {
        let has_sub_questions = inst
            .guidance
            .iter()
            .any(|g| g.kind == corpus::GuidanceKind::SubQuestion);
        let mut out = inst.clone();
        if has_sub_questions {
            let combined = synthesis::synthesize_combined_question(inst, &generator)?;
            if replace {
                out.question = combined.text;
            } else {
                out.combined_question = Some(combined.text);
            }
        }
        Ok(serde_json::to_value(out)?)
    })?;
    if outcome == StageOutcome::Completed {
        let out_instances: Vec<QAInstance> = ids
            .iter()
            .map(|id| serde_json::from_value(results[id].clone()))
            .collect::<Result<_, _>>()?;
        corpus::save_instances(&out_instances, output)?;
    }
    Ok(outcome)
}

/// Stage 2: the generate -> verify -> refine loop over every instance.
pub fn stage_generate_cot(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
) -> Result<StageOutcome, PipelineError> {
    let instances = corpus::load_native_instances(input)?;
    let generator = opts.config.named_client("generator", &opts.config.pipeline.generator)?;
    let verifier = opts.verifier()?;
    let decode = opts.config.decode_defaults();
    let max_iters = opts.config.pipeline.max_iters;
    let seed = opts.seed;
    let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
    let (results, outcome) = run_checkpointed("generate-cot", opts, &ids, &instances, |inst| {
        let record =
            cotloop::run_generation_loop(inst, &generator, &verifier, max_iters, &decode, seed);
        Ok(serde_json::to_value(record)?)
    })?;
    if outcome == StageOutcome::Completed {
        let records: Vec<CoTRecord> = ids
            .iter()
            .map(|id| serde_json::from_value(results[id].clone()))
            .collect::<Result<_, _>>()?;
        corpus::save_records(&records, output)?;
    }
    Ok(outcome)
}

/// Stage 3: difficulty filtering. Kept instances go to `output`; the full
/// report lands next to it as `<output>.report.json`.
pub fn stage_filter(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
) -> Result<StageOutcome, PipelineError> {
    let instances = corpus::load_native_instances(input)?;
    let filter_model =
        opts.config.named_client("filter_model", &opts.config.pipeline.filter_model)?;
    let verifier = opts.verifier()?;
    let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
    let (results, outcome) = run_checkpointed("filter", opts, &ids, &instances, |inst| {
        let (decision, answer) = filter_one(inst, &filter_model, &verifier);
        Ok(serde_json::json!({"decision": decision, "answer": answer}))
    })?;
    if outcome == StageOutcome::Completed {
        let mut report = FilterReport::default();
        let mut kept_instances = Vec::new();
        for (instance, id) in instances.iter().zip(&ids) {
            let entry = &results[id];
            let decision: FilterDecision = serde_json::from_value(entry["decision"].clone())?;
            let answer = entry["answer"].as_str().unwrap_or_default().to_string();
            report.attempts.insert(id.clone(), answer);
            match decision {
                FilterDecision::Dropped => report.dropped.push(id.clone()),
                FilterDecision::Kept => {
                    report.kept.push(id.clone());
                    kept_instances.push(instance.clone());
                }
                FilterDecision::Errored => {
                    report.kept.push(id.clone());
                    report.errored.push(id.clone());
                    kept_instances.push(instance.clone());
                }
            }
        }
        corpus::save_instances(&kept_instances, output)?;
        let report_path = sibling_path(output, ".report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)?).map_err(|e| {
            PipelineError::Corpus(CorpusError::Io {
                path: report_path.display().to_string(),
                source: e,
            })
        })?;
    }
    Ok(outcome)
}

/// SFT/RL split: writes the split manifest to `output` and the partitioned
/// instance files next to it.
pub fn stage_split(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
    sft_count: Option<usize>,
) -> Result<StageOutcome, PipelineError> {
    let instances = corpus::load_native_instances(input)?;
    let sft_count = sft_count.unwrap_or(opts.config.pipeline.sft_count);
    let split = corpus::split_corpus(&instances, sft_count, opts.seed)?;
    let by_id: BTreeMap<&str, &QAInstance> =
        instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let pick = |ids: &[String]| -> Vec<QAInstance> {
        ids.iter().map(|id| by_id[id.as_str()].clone()).collect()
    };
    corpus::save_instances(&pick(&split.sft), sibling_path(output, ".sft.jsonl"))?;
    corpus::save_instances(&pick(&split.rl), sibling_path(output, ".rl.jsonl"))?;
    std::fs::write(output, serde_json::to_string_pretty(&split)?).map_err(|e| {
        PipelineError::Corpus(CorpusError::Io { path: output.display().to_string(), source: e })
    })?;
    Ok(StageOutcome::Completed)
}

/// Mine DPO preference pairs from a CoT record file.
pub fn stage_make_dpo_pairs(
    _opts: &StageOptions,
    input: &Path,
    output: &Path,
) -> Result<StageOutcome, PipelineError> {
    let records = corpus::load_records(input)?;
    let pairs: Vec<cotloop::PreferencePair> =
        records.iter().filter_map(cotloop::extract_preference_pair).collect();
    corpus::save_jsonl(&pairs, output)?;
    Ok(StageOutcome::Completed)
}

/// Batch reward scoring for an external trainer.
pub fn stage_score(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
) -> Result<StageOutcome, PipelineError> {
    let rows: Vec<ScoreInput> = corpus::load_jsonl(input)?;
    let policy = opts.config.tolerance_policy();
    let weights = opts.config.reward_weights();
    let threshold = opts.config.pipeline.length_threshold;
    let judge = match &opts.config.pipeline.judge {
        Some(name) => Some(opts.config.client(name)?),
        None => None,
    };
    let ids: Vec<String> = rows.iter().map(|r| r.id.clone()).collect();
    let (results, outcome) = run_checkpointed("score", opts, &ids, &rows, |row| {
        let verdict =
            crate::judge::verify(&row.response, &row.gold, &row.question, &policy, judge.as_ref());
        let logic = match &judge {
            Some(judge) => {
                reward::logic_reward(&row.response, &row.question, &row.gold, judge).0
            }
            None => 0,
        };
        let breakdown = reward::grpo_reward_with_threshold(
            &verdict,
            logic,
            &row.response,
            row.context_tokens,
            &weights,
            threshold,
        );
        Ok(serde_json::to_value(ScoreOutput::from_breakdown(row.id.clone(), &breakdown))?)
    })?;
    if outcome == StageOutcome::Completed {
        let outputs: Vec<ScoreOutput> = ids
            .iter()
            .map(|id| serde_json::from_value(results[id].clone()))
            .collect::<Result<_, _>>()?;
        corpus::save_jsonl(&outputs, output)?;
    }
    Ok(outcome)
}

/// Benchmark one task over a dataset; writes the per-instance verdict log to
/// `output` and returns the aggregate result once complete.
pub fn stage_eval(
    opts: &StageOptions,
    input: &Path,
    output: &Path,
    task: TaskName,
) -> Result<(StageOutcome, Option<EvalResult>), PipelineError> {
    let instances = corpus::load_native_instances(input)?;
    if instances.is_empty() {
        return Err(EvalError::Argument("instance list empty".into()).into());
    }
    let model_name =
        opts.config.pipeline.eval_model.clone().or_else(|| opts.config.pipeline.generator.clone());
    let model = opts.config.named_client("eval_model", &model_name)?;
    let verifier = opts.verifier()?;
    let spec = eval::task_spec(task);
    let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
    let (results, outcome) = run_checkpointed("eval", opts, &ids, &instances, |inst| {
        let prompt = eval::build_prompt(&spec, inst)?;
        let request = GenerationRequest::new(prompt).with_temperature(0.0).with_max_tokens(1024);
        let entry = match model.complete(&request) {
            Ok(resp) => {
                let verdict = verifier.verify(&resp.text, &inst.gold_answer, &inst.question);
                VerdictLogEntry {
                    task,
                    instance_id: inst.id.clone(),
                    response: resp.text,
                    verdict: verdict.outcome,
                    tier: verdict.tier,
                }
            }
            Err(err) => VerdictLogEntry {
                task,
                instance_id: inst.id.clone(),
                response: format!("<error: {err}>"),
                verdict: Outcome::Error,
                tier: VerdictTier::Rule,
            },
        };
        Ok(serde_json::to_value(entry)?)
    })?;
    if outcome != StageOutcome::Completed {
        return Ok((outcome, None));
    }
    let entries: Vec<VerdictLogEntry> = ids
        .iter()
        .map(|id| serde_json::from_value(results[id].clone()))
        .collect::<Result<_, _>>()?;
    corpus::save_jsonl(&entries, output)?;
    let correct = entries.iter().filter(|e| e.verdict == Outcome::Pass).count();
    let errored = entries.iter().filter(|e| e.verdict == Outcome::Error).count();
    let total = entries.len();
    let result = EvalResult {
        task,
        total,
        correct,
        errored,
        accuracy: 100.0 * correct as f64 / total as f64,
    };
    Ok((outcome, Some(result)))
}

/// Convenience used by clients that only need a one-off generation.
pub fn one_shot(client: &Client, prompt: &str) -> Result<String, PipelineError> {
    Ok(client.complete(&GenerationRequest::new(prompt))?.text)
}
