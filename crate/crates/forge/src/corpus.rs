//! Canonical data model and on-disk JSONL formats.
//!
//! Loads the seven source-dataset shapes into [`QAInstance`], persists
//! pipeline outputs, and performs the seeded SFT/RL split.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::judge::Verdict;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Finqa,
    Convfinqa,
    Docfinqa,
    Tatqa,
    EconLogic,
    Docmath,
    Bizbench,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Finqa => "finqa",
            Source::Convfinqa => "convfinqa",
            Source::Docfinqa => "docfinqa",
            Source::Tatqa => "tatqa",
            Source::EconLogic => "econ_logic",
            Source::Docmath => "docmath",
            Source::Bizbench => "bizbench",
            Source::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finqa" => Ok(Source::Finqa),
            "convfinqa" => Ok(Source::Convfinqa),
            "docfinqa" => Ok(Source::Docfinqa),
            "tatqa" => Ok(Source::Tatqa),
            "econ_logic" => Ok(Source::EconLogic),
            "docmath" => Ok(Source::Docmath),
            "bizbench" => Ok(Source::Bizbench),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(CorpusError::Argument(format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    SubQuestion,
    ProgramStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceStep {
    pub kind: GuidanceKind,
    pub text: String,
}

impl GuidanceStep {
    pub fn sub_question(text: impl Into<String>) -> Self {
        Self { kind: GuidanceKind::SubQuestion, text: text.into() }
    }

    pub fn program_step(text: impl Into<String>) -> Self {
        Self { kind: GuidanceKind::ProgramStep, text: text.into() }
    }
}

/// One source question in canonical form. Serialized field names are the
/// on-disk JSONL schema and must stay stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub source: Source,
    #[serde(rename = "context")]
    pub context_text: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default)]
    pub guidance: Vec<GuidanceStep>,
    #[serde(rename = "context_tokens")]
    pub context_token_count: u64,
    /// Stage-1 combined question, kept alongside the original by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_question: Option<String>,
}

impl QAInstance {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::Argument("instance id empty".into()));
        }
        if self.question.is_empty() {
            return Err(CorpusError::Argument(format!("instance {}: question empty", self.id)));
        }
        if self.gold_answer.is_empty() {
            return Err(CorpusError::Argument(format!(
                "instance {}: gold_answer empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// Per-file ingestion summary. Skipped records are counted, never silently
/// dropped.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded_count: usize,
    pub skipped_count: usize,
    pub skipped_lines: Vec<usize>,
}

/// Default token heuristic: ceiling(byte_length / 4). Metadata-supplied
/// counts take precedence at load time.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Load a JSONL file of the named source format.
///
/// Malformed lines abort with the line number; records missing a gold answer
/// are skipped and counted in the report.
pub fn load_instances(
    path: impl AsRef<Path>,
    format: Source,
) -> Result<(Vec<QAInstance>, LoadReport), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match convert_record(&value, format, line_no)? {
            Some(instance) => {
                instance.validate().map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                instances.push(instance);
            }
            None => {
                report.skipped_count += 1;
                report.skipped_lines.push(line_no);
            }
        }
    }
    report.loaded_count = instances.len();
    Ok((instances, report))
}

fn convert_record(
    value: &Value,
    format: Source,
    line_no: usize,
) -> Result<Option<QAInstance>, CorpusError> {
    match format {
        Source::Synthetic => convert_native(value, line_no),
        Source::Finqa => Ok(convert_finqa(value, format, line_no)),
        Source::Convfinqa => Ok(convert_convfinqa(value, line_no)),
        Source::Docfinqa => Ok(convert_flat(value, format, line_no)),
        Source::Tatqa => Ok(convert_tatqa(value, line_no)),
        Source::EconLogic => Ok(convert_econ_logic(value, line_no)),
        Source::Docmath => Ok(convert_docmath(value, line_no)),
        Source::Bizbench => Ok(convert_bizbench(value, line_no)),
    }
}

fn str_field(value: &Value, key: &str) -> Option<String> {
    value.get(key).and_then(|v| match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn text_block(value: Option<&Value>) -> String {
    match value {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str())
            .collect::<Vec<_>>()
            .join(" "),
        _ => String::new(),
    }
}

fn table_text(value: Option<&Value>) -> String {
    let Some(Value::Array(rows)) = value else {
        return String::new();
    };
    rows.iter()
        .map(|row| match row {
            Value::Array(cells) => cells
                .iter()
                .map(|c| match c {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("|"),
            other => other.to_string(),
        })
        .map(|r| format!("|{r}|"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn record_id(value: &Value, format: Source, line_no: usize) -> String {
    str_field(value, "id")
        .or_else(|| str_field(value, "uid"))
        .or_else(|| str_field(value, "question_id"))
        .unwrap_or_else(|| format!("{}-{line_no}", format.as_str()))
}

fn program_steps(program: Option<String>) -> Vec<GuidanceStep> {
    let Some(program) = program else { return Vec::new() };
    program
        .split("),")
        .map(|s| s.trim().trim_end_matches(','))
        .filter(|s| !s.is_empty())
        .map(|s| {
            let text = if s.ends_with(')') { s.to_string() } else { format!("{s})") };
            GuidanceStep::program_step(text)
        })
        .collect()
}

fn convert_native(value: &Value, line_no: usize) -> Result<Option<QAInstance>, CorpusError> {
    let mut instance: QAInstance =
        serde_json::from_value(value.clone()).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    if instance.gold_answer.is_empty() {
        return Ok(None);
    }
    if instance.context_token_count == 0 && !instance.context_text.is_empty() {
        instance.context_token_count = estimate_tokens(&instance.context_text);
    }
    Ok(Some(instance))
}

fn convert_finqa(value: &Value, format: Source, line_no: usize) -> Option<QAInstance> {
    let qa = value.get("qa")?;
    let question = str_field(qa, "question")?;
    let gold = str_field(qa, "answer").or_else(|| str_field(qa, "exe_ans"))?;
    if gold.is_empty() {
        return None;
    }
    let context = [
        text_block(value.get("pre_text")),
        table_text(value.get("table")),
        text_block(value.get("post_text")),
    ]
    .into_iter()
    .filter(|s| !s.is_empty())
    .collect::<Vec<_>>()
    .join("\n");
    Some(QAInstance {
        id: record_id(value, format, line_no),
        source: format,
        context_token_count: estimate_tokens(&context),
        context_text: context,
        question,
        gold_answer: gold,
        guidance: program_steps(str_field(qa, "program")),
        combined_question: None,
    })
}

fn convert_convfinqa(value: &Value, line_no: usize) -> Option<QAInstance> {
    let annotation = value.get("annotation").unwrap_or(value);
    let sub_questions: Vec<String> = annotation
        .get("dialogue_break")
        .and_then(|v| v.as_array())
        .map(|items| items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    let question = value
        .get("qa")
        .and_then(|qa| str_field(qa, "question"))
        .or_else(|| sub_questions.last().cloned())?;
    let gold = value
        .get("qa")
        .and_then(|qa| str_field(qa, "answer"))
        .or_else(|| str_field(annotation, "answer"))
        .or_else(|| {
            annotation
                .get("exe_ans_list")
                .and_then(|v| v.as_array())
                .and_then(|a| a.last())
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
        })?;
    if gold.is_empty() {
        return None;
    }
    let context = [
        text_block(value.get("pre_text")),
        table_text(value.get("table")),
        text_block(value.get("post_text")),
    ]
    .into_iter()
    .filter(|s| !s.is_empty())
    .collect::<Vec<_>>()
    .join("\n");
    Some(QAInstance {
        id: record_id(value, Source::Convfinqa, line_no),
        source: Source::Convfinqa,
        context_token_count: estimate_tokens(&context),
        context_text: context,
        question,
        gold_answer: gold,
        guidance: sub_questions.into_iter().map(GuidanceStep::sub_question).collect(),
        combined_question: None,
    })
}

fn convert_flat(value: &Value, format: Source, line_no: usize) -> Option<QAInstance> {
    let question = str_field(value, "question")?;
    let gold = str_field(value, "answer")?;
    if gold.is_empty() {
        return None;
    }
    let context = text_block(value.get("context"));
    Some(QAInstance {
        id: record_id(value, format, line_no),
        source: format,
        context_token_count: estimate_tokens(&context),
        context_text: context,
        question,
        gold_answer: gold,
        guidance: Vec::new(),
        combined_question: None,
    })
}

fn convert_tatqa(value: &Value, line_no: usize) -> Option<QAInstance> {
    let question = str_field(value, "question")?;
    let gold = match value.get("answer") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect::<Vec<_>>()
            .join(", "),
        _ => return None,
    };
    if gold.is_empty() {
        return None;
    }
    let paragraphs = value
        .get("paragraphs")
        .and_then(|v| v.as_array())
        .map(|items| {
            items
                .iter()
                .map(|p| match p {
                    Value::String(s) => s.clone(),
                    obj => str_field(obj, "text").unwrap_or_default(),
                })
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default();
    let table = value
        .get("table")
        .map(|t| table_text(t.get("table").or(Some(t))))
        .unwrap_or_default();
    let context = [table, paragraphs]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    Some(QAInstance {
        id: record_id(value, Source::Tatqa, line_no),
        source: Source::Tatqa,
        context_token_count: estimate_tokens(&context),
        context_text: context,
        question,
        gold_answer: gold,
        guidance: Vec::new(),
        combined_question: None,
    })
}

fn convert_econ_logic(value: &Value, line_no: usize) -> Option<QAInstance> {
    let question = str_field(value, "question")?;
    let gold = str_field(value, "answer")?;
    if gold.is_empty() {
        return None;
    }
    let context = value
        .get("options")
        .and_then(|v| v.as_array())
        .map(|items| {
            items
                .iter()
                .filter_map(|v| v.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default();
    Some(QAInstance {
        id: record_id(value, Source::EconLogic, line_no),
        source: Source::EconLogic,
        context_token_count: estimate_tokens(&context),
        context_text: context,
        question,
        gold_answer: gold,
        guidance: Vec::new(),
        combined_question: None,
    })
}

fn convert_docmath(value: &Value, line_no: usize) -> Option<QAInstance> {
    let question = str_field(value, "question")?;
    let gold = str_field(value, "ground_truth").or_else(|| str_field(value, "answer"))?;
    if gold.is_empty() {
        return None;
    }
    let context = match value.get("paragraphs") {
        Some(p) => text_block(Some(p)),
        None => text_block(value.get("context")),
    };
    let tokens = value
        .get("n_tokens")
        .or_else(|| value.get("context_tokens"))
        .and_then(|v| v.as_u64())
        .unwrap_or_else(|| estimate_tokens(&context));
    Some(QAInstance {
        id: record_id(value, Source::Docmath, line_no),
        source: Source::Docmath,
        context_text: context,
        question,
        gold_answer: gold,
        guidance: Vec::new(),
        context_token_count: tokens,
        combined_question: None,
    })
}

fn convert_bizbench(value: &Value, line_no: usize) -> Option<QAInstance> {
    let mut instance = convert_flat(value, Source::Bizbench, line_no)?;
    instance.guidance = program_steps(str_field(value, "program"));
    Some(instance)
}

// ---------------------------------------------------------------------------
// CoT record persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Verified,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningAttempt {
    pub index: usize,
    pub reasoning: String,
    pub extracted_answer: Option<String>,
    pub verdict: Verdict,
    pub feedback: String,
}

/// Generator/judge provenance carried with every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub generator: String,
    pub judge: String,
    pub seed: i64,
    pub max_iters: usize,
    /// Initial generation prompt; the DPO pair prompt.
    pub prompt: String,
}

/// Full refinement history for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub instance_id: String,
    pub status: RecordStatus,
    pub attempts: Vec<ReasoningAttempt>,
    pub meta: RecordMeta,
}

/// Write records as JSONL, one object per line. The write is atomic: on any
/// failure the partial temp file is removed and the target left untouched.
pub fn save_records(records: &[CoTRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    save_jsonl(records, path)
}

pub fn save_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    let result = (|| -> Result<(), CorpusError> {
        let io_err = |e: std::io::Error| CorpusError::Io {
            path: tmp.display().to_string(),
            source: e,
        };
        let file = File::create(&tmp).map_err(io_err)?;
        let mut writer = BufWriter::new(file);
        for item in items {
            let line = serde_json::to_string(item).map_err(|e| CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
            writeln!(writer, "{line}").map_err(io_err)?;
        }
        writer.flush().map_err(io_err)?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CorpusError::Io { path: path.display().to_string(), source: e }
    })
}

pub fn load_jsonl<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<CoTRecord>, CorpusError> {
    load_jsonl(path)
}

// ---------------------------------------------------------------------------
// SFT/RL split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub sft: Vec<String>,
    pub rl: Vec<String>,
    pub seed: i64,
}

/// Seeded, source-stratified split. Each source contributes its proportional
/// share of the SFT partition (largest-remainder rounding, so within one of
/// exact proportionality per source).
pub fn split_corpus(
    records: &[QAInstance],
    sft_count: usize,
    seed: i64,
) -> Result<CorpusSplit, CorpusError> {
    if sft_count > records.len() {
        return Err(CorpusError::Argument(format!(
            "sft_count {} exceeds corpus size {}",
            sft_count,
            records.len()
        )));
    }
    let mut by_source: BTreeMap<Source, Vec<String>> = BTreeMap::new();
    for r in records {
        by_source.entry(r.source).or_default().push(r.id.clone());
    }
    let total = records.len();
    // Largest-remainder allocation of sft quotas across sources.
    let mut quotas: Vec<(Source, usize, f64)> = by_source
        .iter()
        .map(|(src, ids)| {
            let exact = if total == 0 {
                0.0
            } else {
                ids.len() as f64 * sft_count as f64 / total as f64
            };
            (*src, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|(_, q, _)| q).sum();
    let mut remainder = sft_count - assigned;
    quotas.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    for quota in quotas.iter_mut() {
        if remainder == 0 {
            break;
        }
        if quota.1 < by_source[&quota.0].len() {
            quota.1 += 1;
            remainder -= 1;
        }
    }
    if remainder > 0 {
        // All fractional slots saturated; give leftovers to any source with room.
        for quota in quotas.iter_mut() {
            while remainder > 0 && quota.1 < by_source[&quota.0].len() {
                quota.1 += 1;
                remainder -= 1;
            }
        }
    }
    quotas.sort_by_key(|(src, _, _)| *src);

    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut sft = Vec::with_capacity(sft_count);
    let mut rl = Vec::with_capacity(total - sft_count);
    for (src, quota, _) in quotas {
        let mut ids = by_source.remove(&src).unwrap();
        ids.shuffle(&mut rng);
        rl.extend(ids.split_off(quota));
        sft.extend(ids);
    }
    Ok(CorpusSplit { sft, rl, seed })
}

pub fn save_instances(
    instances: &[QAInstance],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    save_jsonl(instances, path)
}

pub fn load_native_instances(
    path: impl AsRef<Path>,
) -> Result<Vec<QAInstance>, CorpusError> {
    let (instances, _) = load_instances(path, Source::Synthetic)?;
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn instance(id: &str, source: Source) -> QAInstance {
        QAInstance {
            id: id.into(),
            source,
            context_text: "ctx".into(),
            question: "q?".into(),
            gold_answer: "1".into(),
            guidance: Vec::new(),
            context_token_count: 1,
            combined_question: None,
        }
    }

    #[test]
    fn estimate_tokens_heuristic() {
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn loads_finqa_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finqa.jsonl");
        let line = serde_json::json!({
            "id": "fq-1",
            "pre_text": ["measurement point december 31"],
            "table": [["2014", "285.37"], ["2015", "319.10"]],
            "post_text": [],
            "qa": {
                "question": "what was the percent of the growth of the the priceline group inc . from 2014 to 2015",
                "answer": "11.82%",
                "program": "subtract(319.10, 285.37), divide(#0, 285.37)"
            }
        });
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let (instances, report) = load_instances(&path, Source::Finqa).unwrap();
        assert_eq!(report.skipped_count, 0);
        assert_eq!(instances.len(), 1);
        let inst = &instances[0];
        assert_eq!(inst.id, "fq-1");
        assert_eq!(inst.source, Source::Finqa);
        assert_eq!(inst.gold_answer, "11.82%");
        assert!(inst.question.starts_with("what was the percent of the growth"));
        assert_eq!(inst.guidance.len(), 2);
        assert_eq!(inst.guidance[0].kind, GuidanceKind::ProgramStep);
        assert_eq!(inst.guidance[0].text, "subtract(319.10, 285.37)");
        assert!(inst.context_text.contains("|2015|319.10|"));
    }

    #[test]
    fn missing_gold_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finqa.jsonl");
        let line = serde_json::json!({"id": "fq-1", "qa": {"question": "q?"}});
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let (instances, report) = load_instances(&path, Source::Finqa).unwrap();
        assert!(instances.is_empty());
        assert_eq!(report.skipped_count, 1);
        assert_eq!(report.skipped_lines, vec![1]);
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let (instances, report) = load_instances(&path, Source::Tatqa).unwrap();
        assert!(instances.is_empty());
        assert_eq!(report.skipped_count, 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"question\":\"q\",\"answer\":\"1\"}\nnot json\n").unwrap();
        match load_instances(&path, Source::Docfinqa) {
            Err(CorpusError::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn convfinqa_subquestions_become_guidance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.jsonl");
        let line = serde_json::json!({
            "id": "cv-1",
            "pre_text": ["text"],
            "table": [["a", "1"]],
            "annotation": {
                "dialogue_break": ["what was the 2014 value?", "and the change to 2015?"],
                "answer": "33.73"
            }
        });
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let (instances, _) = load_instances(&path, Source::Convfinqa).unwrap();
        assert_eq!(instances[0].guidance.len(), 2);
        assert_eq!(instances[0].guidance[0].kind, GuidanceKind::SubQuestion);
        assert_eq!(instances[0].question, "and the change to 2015?");
    }

    #[test]
    fn docmath_metadata_token_count_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dm.jsonl");
        let line = serde_json::json!({
            "question_id": "dm-1",
            "question": "q?",
            "ground_truth": "7",
            "paragraphs": ["short context"],
            "n_tokens": 39983
        });
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let (instances, _) = load_instances(&path, Source::Docmath).unwrap();
        assert_eq!(instances[0].context_token_count, 39983);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![
            CoTRecord {
                instance_id: "a".into(),
                status: RecordStatus::Verified,
                attempts: vec![ReasoningAttempt {
                    index: 0,
                    reasoning: "r".into(),
                    extracted_answer: Some("7".into()),
                    verdict: Verdict::pass(crate::judge::VerdictTier::Rule),
                    feedback: String::new(),
                }],
                meta: RecordMeta {
                    generator: "g".into(),
                    judge: "j".into(),
                    seed: 1,
                    max_iters: 3,
                    prompt: "p".into(),
                },
            },
            CoTRecord {
                instance_id: "b".into(),
                status: RecordStatus::Exhausted,
                attempts: vec![],
                meta: RecordMeta {
                    generator: "g".into(),
                    judge: "j".into(),
                    seed: 1,
                    max_iters: 3,
                    prompt: "p".into(),
                },
            },
        ];
        save_records(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let loaded = load_records(&path).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn unwritable_path_leaves_no_partial_file() {
        let records: Vec<CoTRecord> = Vec::new();
        let err = save_records(&records, "/nonexistent-dir/out.jsonl");
        assert!(err.is_err());
        assert!(!Path::new("/nonexistent-dir/out.jsonl").exists());
    }

    #[test]
    fn split_exact_production_sizes() {
        let sources = [Source::Finqa, Source::Convfinqa, Source::Bizbench];
        let records: Vec<QAInstance> = (0..9186)
            .map(|i| instance(&format!("r{i}"), sources[i % 3]))
            .collect();
        let split = split_corpus(&records, 7686, 42).unwrap();
        assert_eq!(split.sft.len(), 7686);
        assert_eq!(split.rl.len(), 1500);
        let sft: HashSet<_> = split.sft.iter().collect();
        let rl: HashSet<_> = split.rl.iter().collect();
        assert!(sft.is_disjoint(&rl));
        assert_eq!(sft.len() + rl.len(), 9186);
    }

    #[test]
    fn split_is_deterministic() {
        let records: Vec<QAInstance> =
            (0..100).map(|i| instance(&format!("r{i}"), Source::Finqa)).collect();
        let a = split_corpus(&records, 70, 7).unwrap();
        let b = split_corpus(&records, 70, 7).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(&records, 70, 8).unwrap();
        assert_ne!(a.sft, c.sft);
    }

    #[test]
    fn split_zero_sft() {
        let records: Vec<QAInstance> =
            (0..5).map(|i| instance(&format!("r{i}"), Source::Tatqa)).collect();
        let split = split_corpus(&records, 0, 1).unwrap();
        assert!(split.sft.is_empty());
        assert_eq!(split.rl.len(), 5);
    }

    #[test]
    fn split_rejects_oversized_sft_count() {
        let records: Vec<QAInstance> = (0..3).map(|i| instance(&format!("r{i}"), Source::Finqa)).collect();
        assert!(matches!(split_corpus(&records, 4, 0), Err(CorpusError::Argument(_))));
    }
}
