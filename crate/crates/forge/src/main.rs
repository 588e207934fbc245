use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use forge::config::{parse_config, Config};
use forge::eval::{self, ReportFormat, TaskName};
use forge::pipeline::{self, StageOptions, StageOutcome};

#[derive(Parser)]
#[command(name = "forge", version, about = "Financial CoT corpus pipeline and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Input JSONL path.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output path.
    #[arg(long = "out")]
    output: PathBuf,
    /// Resume from an existing checkpoint with the same stage and config.
    #[arg(long)]
    resume: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<i64>,
    /// Overrides the config parallelism.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Checkpoint identity; defaults to `<stage>-<output stem>`.
    #[arg(long)]
    run_id: Option<String>,
    /// Stop after this many newly processed instances (testing aid).
    #[arg(long, hide = true)]
    interrupt_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Merge sub-questions into combined multi-step questions.
    Synthesize(CommonArgs),
    /// Run the generate-verify-refine loop over a corpus.
    GenerateCot(CommonArgs),
    /// Drop instances a weaker model already solves.
    Filter(CommonArgs),
    /// Split a corpus into SFT and RL partitions, stratified by source.
    Split {
        #[command(flatten)]
        common: CommonArgs,
        /// Overrides the config SFT partition size.
        #[arg(long)]
        sft_count: Option<usize>,
    },
    /// Mine DPO preference pairs from CoT records.
    MakeDpoPairs(CommonArgs),
    /// Score trainer responses with the composite reward.
    Score(CommonArgs),
    /// Run one benchmark task and report accuracy.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Benchmark task: finqa, dm_simplong, xbrl_math, or dm_complong.
        #[arg(long)]
        task: TaskName,
        /// Optional aggregate report path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Report format: markdown or csv.
        #[arg(long, default_value = "markdown")]
        report_format: ReportFormat,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synthesize(c)
            | Command::GenerateCot(c)
            | Command::Filter(c)
            | Command::MakeDpoPairs(c)
            | Command::Score(c) => c,
            Command::Split { common, .. } | Command::Eval { common, .. } => common,
        }
    }

    fn stage_name(&self) -> &'static str {
        match self {
            Command::Synthesize(_) => "synthesize",
            Command::GenerateCot(_) => "generate-cot",
            Command::Filter(_) => "filter",
            Command::Split { .. } => "split",
            Command::MakeDpoPairs(_) => "make-dpo-pairs",
            Command::Score(_) => "score",
            Command::Eval { .. } => "eval",
        }
    }
}

fn build_options(common: &CommonArgs, stage: &str, config: Config) -> StageOptions {
    let checkpoint_dir = config
        .paths
        .checkpoints
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("checkpoints"));
    let stem = common
        .output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    StageOptions {
        parallelism: common.parallelism.unwrap_or(config.pipeline.parallelism),
        seed: common.seed.unwrap_or(config.pipeline.seed),
        resume: common.resume,
        interrupt_after: common.interrupt_after,
        checkpoint_dir,
        run_id: common.run_id.clone().unwrap_or_else(|| format!("{stage}-{stem}")),
        config,
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    let common = cli.command.common();
    let stage = cli.command.stage_name();
    // Config problems are usage errors: exit 2, before any work starts.
    let config = parse_config(&common.config).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    let opts = build_options(common, stage, config);
    let fail = |e: pipeline::PipelineError| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    };

    let outcome = match &cli.command {
        Command::Synthesize(c) => pipeline::stage_synthesize(&opts, &c.input, &c.output),
        Command::GenerateCot(c) => pipeline::stage_generate_cot(&opts, &c.input, &c.output),
        Command::Filter(c) => pipeline::stage_filter(&opts, &c.input, &c.output),
        Command::Split { common, sft_count } => {
            pipeline::stage_split(&opts, &common.input, &common.output, *sft_count)
        }
        Command::MakeDpoPairs(c) => pipeline::stage_make_dpo_pairs(&opts, &c.input, &c.output),
        Command::Score(c) => pipeline::stage_score(&opts, &c.input, &c.output),
        Command::Eval { common, task, report, report_format } => {
            let (outcome, result) =
                pipeline::stage_eval(&opts, &common.input, &common.output, *task).map_err(fail)?;
            if let Some(result) = result {
                println!(
                    "{}: accuracy {:.2}% ({}/{} correct, {} errored)",
                    result.task.display_name(),
                    result.accuracy,
                    result.correct,
                    result.total,
                    result.errored
                );
                if let Some(report_path) = report {
                    let model = opts
                        .config
                        .pipeline
                        .eval_model
                        .clone()
                        .or_else(|| opts.config.pipeline.generator.clone())
                        .unwrap_or_else(|| "model".into());
                    let row = eval::aggregate_report(&model, std::slice::from_ref(&result))
                        .map_err(|e| fail(e.into()))?;
                    let rendered = eval::render_report(std::slice::from_ref(&row), *report_format);
                    std::fs::write(report_path, rendered).map_err(|e| {
                        eprintln!("error: cannot write report: {e}");
                        ExitCode::from(1)
                    })?;
                }
            }
            Ok(outcome)
        }
    };

    match outcome.map_err(fail)? {
        StageOutcome::Completed => Ok(ExitCode::SUCCESS),
        StageOutcome::Interrupted { remaining } => {
            eprintln!("interrupted: {remaining} instance(s) pending; rerun with --resume");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) | Err(code) => code,
    }
}
