//! Benchmark runner: task registry with zero-shot prompt templates,
//! bounded-parallel inference, verification, and tabular accuracy reports
//! with macro averages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Client, GenerationRequest};
use crate::corpus::QAInstance;
use crate::judge::{Outcome, Verifier, VerdictTier};
use crate::pool::parallel_map;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("duplicate task in results: {0}")]
    DuplicateTask(String),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Finqa,
    DmSimplong,
    DmComplong,
    XbrlMath,
}

impl TaskName {
    pub fn display_name(&self) -> &'static str {
        match self {
            TaskName::Finqa => "FinQA",
            TaskName::DmSimplong => "DM-Simplong",
            TaskName::DmComplong => "DM-Complong",
            TaskName::XbrlMath => "XBRL-Math",
        }
    }

    /// Report column order: FinQA, DM-Simplong, XBRL-Math, DM-Complong.
    pub fn report_order() -> [TaskName; 4] {
        [TaskName::Finqa, TaskName::DmSimplong, TaskName::XbrlMath, TaskName::DmComplong]
    }
}

impl std::str::FromStr for TaskName {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finqa" => Ok(TaskName::Finqa),
            "dm_simplong" => Ok(TaskName::DmSimplong),
            "dm_complong" => Ok(TaskName::DmComplong),
            "xbrl_math" => Ok(TaskName::XbrlMath),
            other => Err(EvalError::Argument(format!("unknown task `{other}`"))),
        }
    }
}

const FINQA_TEMPLATE: &str = "Please answer the given financial question based on the context.\n\
Context: {context}\n\
Question: {question}\n\
Answer:";

const DM_SIMPLONG_TEMPLATE: &str = "You are a financial expert, you are supposed to answer the given question based on the provided financial document context. You need to first think through the problem step by step, documenting each necessary step. Then you are required to conclude your response with the final answer in your last sentence as 'Therefore, the answer is {final answer}'. The final answer should be a numeric value.\n\
\n\
###Context\n\
{context}\n\
\n\
### Input\n\
{question}\n\
\n\
Let's think step by step to answer the given question.\n\
\n\
### Output";

const DM_COMPLONG_TEMPLATE: &str = "You are a financial expert, you are supposed to answer the given question based on the provided financial document context. You need to first think through the problem step by step, documenting each necessary step. Then you are required to conclude your response with the final answer in your last sentence as 'Therefore, the answer is {final answer}'. The final answer should be a numeric value.\n\
###Context\n\
{context}\n\
\n\
### Input\n\
{question}\n\
\n\
Let's think step by step to answer the given question.\n\
\n\
### Output";

const XBRL_MATH_TEMPLATE: &str = "You are a financial expert tasked with carefully reading, analyzing, and answering the following eXtensible Business Reporting Language. Please follow the steps below:\n\
\n\
INPUT: Read the eXtensible Business Reporting Language (XBRL) question: {question}, formula: {context}. Provide only the final answer which is the numerical result of the calculation. For formulas like ROI, provide percentages. Never use the percent symbol in percentages.\n\
\n\
OUTPUT:";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    pub prompt_template: String,
    pub expected_size: Option<u32>,
    pub avg_tokens: Option<u32>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !self.prompt_template.contains("{context}")
            || !self.prompt_template.contains("{question}")
        {
            return Err(EvalError::Argument(format!(
                "task {:?} template missing a placeholder slot",
                self.name
            )));
        }
        Ok(())
    }
}

/// The four benchmark tasks with their registered sizes and average context
/// lengths.
pub fn task_registry() -> Vec<TaskSpec> {
    vec![
        TaskSpec {
            name: TaskName::Finqa,
            prompt_template: FINQA_TEMPLATE.into(),
            expected_size: Some(1100),
            avg_tokens: Some(1128),
        },
        TaskSpec {
            name: TaskName::DmSimplong,
            prompt_template: DM_SIMPLONG_TEMPLATE.into(),
            expected_size: Some(100),
            avg_tokens: Some(4330),
        },
        TaskSpec {
            name: TaskName::DmComplong,
            prompt_template: DM_COMPLONG_TEMPLATE.into(),
            expected_size: Some(300),
            avg_tokens: Some(39983),
        },
        TaskSpec {
            name: TaskName::XbrlMath,
            prompt_template: XBRL_MATH_TEMPLATE.into(),
            expected_size: Some(90),
            avg_tokens: Some(397),
        },
    ]
}

pub fn task_spec(name: TaskName) -> TaskSpec {
    task_registry().into_iter().find(|t| t.name == name).expect("registered task")
}

/// Instantiate the task template with the instance's context and question.
/// The template text itself is reproduced byte-exact; only the two slots are
/// substituted.
pub fn build_prompt(task: &TaskSpec, instance: &QAInstance) -> Result<String, EvalError> {
    task.validate()?;
    if instance.question.is_empty() {
        return Err(EvalError::Argument("instance question empty".into()));
    }
    Ok(task
        .prompt_template
        .replace("{context}", &instance.context_text)
        .replace("{question}", &instance.question))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: TaskName,
    pub total: usize,
    pub correct: usize,
    pub errored: usize,
    /// Percent in [0, 100].
    pub accuracy: f64,
}

/// One line of the per-run verdict log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictLogEntry {
    pub task: TaskName,
    pub instance_id: String,
    pub response: String,
    pub verdict: Outcome,
    pub tier: VerdictTier,
}

/// Run one task over a dataset: every instance prompted exactly once at
/// temperature 0 with max_tokens 1024, each response verified. Backend
/// failures count as errored and score incorrect.
pub fn run_benchmark(
    task: &TaskSpec,
    instances: &[QAInstance],
    model: &Client,
    verifier: &Verifier,
    parallelism: usize,
) -> Result<(EvalResult, Vec<VerdictLogEntry>), EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Argument("instance list empty".into()));
    }
    let entries = parallel_map(instances, parallelism, |instance| {
        let prompt = build_prompt(task, instance)?;
        let request = GenerationRequest::new(prompt).with_temperature(0.0).with_max_tokens(1024);
        let entry = match model.complete(&request) {
            Ok(resp) => {
                let verdict =
                    verifier.verify(&resp.text, &instance.gold_answer, &instance.question);
                VerdictLogEntry {
                    task: task.name,
                    instance_id: instance.id.clone(),
                    response: resp.text,
                    verdict: verdict.outcome,
                    tier: verdict.tier,
                }
            }
            Err(err) => VerdictLogEntry {
                task: task.name,
                instance_id: instance.id.clone(),
                response: format!("<error: {err}>"),
                verdict: Outcome::Error,
                tier: VerdictTier::Rule,
            },
        };
        Ok::<_, EvalError>(entry)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let correct = entries.iter().filter(|e| e.verdict == Outcome::Pass).count();
    let errored = entries.iter().filter(|e| e.verdict == Outcome::Error).count();
    let total = instances.len();
    Ok((
        EvalResult {
            task: task.name,
            total,
            correct,
            errored,
            accuracy: 100.0 * correct as f64 / total as f64,
        },
        entries,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_id: String,
    pub per_task: BTreeMap<TaskName, f64>,
    /// Unweighted macro average of the per-task accuracies.
    pub average: f64,
}

/// Fold per-task results into one report row with the macro average.
pub fn aggregate_report(model_id: &str, results: &[EvalResult]) -> Result<ReportRow, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Argument("no results to aggregate".into()));
    }
    let mut per_task = BTreeMap::new();
    for r in results {
        if per_task.insert(r.task, r.accuracy).is_some() {
            return Err(EvalError::DuplicateTask(r.task.display_name().into()));
        }
    }
    let average = per_task.values().sum::<f64>() / per_task.len() as f64;
    Ok(ReportRow { model_id: model_id.into(), per_task, average })
}

/// Round half-up to two decimals, the report display precision.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(EvalError::Argument(format!("unknown report format `{other}`"))),
        }
    }
}

/// Render rows in the fixed column order with 2-decimal formatting.
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    let order = TaskName::report_order();
    let cell = |row: &ReportRow, task: TaskName| -> String {
        row.per_task.get(&task).map(|v| format!("{:.2}", round2(*v))).unwrap_or_default()
    };
    match format {
        ReportFormat::Markdown => {
            let mut out = String::from("| Model | FinQA | DM-Simplong | XBRL-Math | DM-Complong | Average |\n");
            out.push_str("| --- | --- | --- | --- | --- | --- |\n");
            for row in rows {
                let cells: Vec<String> = order.iter().map(|t| cell(row, *t)).collect();
                out.push_str(&format!(
                    "| {} | {} | {:.2} |\n",
                    row.model_id,
                    cells.join(" | "),
                    round2(row.average)
                ));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("model,finqa,dm_simplong,xbrl_math,dm_complong,average\n");
            for row in rows {
                let cells: Vec<String> = order.iter().map(|t| cell(row, *t)).collect();
                out.push_str(&format!(
                    "{},{},{:.2}\n",
                    row.model_id,
                    cells.join(","),
                    round2(row.average)
                ));
            }
            out
        }
    }
}
