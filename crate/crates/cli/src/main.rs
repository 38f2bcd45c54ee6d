//! `ccrl` — the laboratory command line.
//!
//! Typical pipeline:
//!
//! ```text
//! ccrl gen-problems --count 20 --out run/
//! ccrl sft --problems run/problems.jsonl --steps 200 --out run/
//! ccrl train --mode ccrl --problems run/problems.jsonl --out run/
//! ccrl eval --checkpoint run/checkpoint_final.json --problems run/problems.jsonl
//! ccrl report --run run/
//! ccrl audit-overconfidence --run run/ --run other_run/
//! ```
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ccrl_core::engine::{self, TrainMode, TrainOptions};
use ccrl_core::env::{DEFAULT_OPERAND_RANGE, DEFAULT_PROBLEM_COUNT, DEFAULT_V_MAX};
use ccrl_core::{
    analysis, comt, default_templates, evaluate, generate_problems, load_checkpoint,
    read_problems, rng_stream, save_checkpoint, train_sft, write_problems, CcrlConfig,
    DatasetPolicy, PolicyState, Problem, RunManifest, TeacherEndpoint, TokenId, Vocabulary,
};

#[derive(Parser)]
#[command(name = "ccrl", version, about = "Meta-thought SFT and confidence-calibrated RL on synthetic arithmetic")]
struct Cli {
    /// Config file (TOML or JSON); missing keys use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created when missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct VocabArgs {
    /// Largest number value in the vocabulary.
    #[arg(long, default_value_t = DEFAULT_V_MAX)]
    v_max: i64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem set as JSONL.
    GenProblems {
        #[arg(long, default_value_t = DEFAULT_PROBLEM_COUNT)]
        count: u32,
        #[arg(long, default_value_t = DEFAULT_OPERAND_RANGE.0)]
        operand_min: i64,
        #[arg(long, default_value_t = DEFAULT_OPERAND_RANGE.1)]
        operand_max: i64,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Query the teacher endpoint for meta-thought texts.
    TeacherFetch {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long)]
        base_url: String,
        #[arg(long)]
        model: String,
        /// Environment variable holding the bearer token.
        #[arg(long)]
        auth_env: Option<String>,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 3)]
        retries: u32,
        #[arg(long, default_value_t = 500)]
        backoff_ms: u64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Validate fetched meta-thoughts and print a summary.
    ValidateComt {
        #[arg(long)]
        meta: PathBuf,
    },
    /// Assemble the meta-thought dataset from problems and fetched texts.
    BuildDataset {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::Filter)]
        policy: PolicyArg,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Supervised training on the gold meta-thought skeletons.
    Sft {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: u32,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        /// Train on full gold trajectories instead of meta skeletons.
        #[arg(long, default_value_t = false)]
        full_trajectories: bool,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Reinforcement learning; writes trace, checkpoints, and manifest.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        problems: PathBuf,
        /// Start from this checkpoint instead of a fresh uniform policy.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        iterations: u32,
        #[arg(long, default_value_t = 12)]
        max_len: u32,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Greedy evaluation of a checkpoint; prints the report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, default_value_t = 12)]
        max_len: u32,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Side-by-side overconfidence reports for run directories and/or an
    /// external trajectory dump.
    AuditOverconfidence {
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Average token-length statistics between two datasets.
    Stats {
        #[arg(long)]
        dataset_a: PathBuf,
        #[arg(long)]
        dataset_b: PathBuf,
    },
    /// Render report.json and report.csv from a run's trace.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ccrl,
    Outcome,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    Filter,
}

/// Record format produced by `teacher-fetch` and consumed downstream.
#[derive(Serialize, Deserialize)]
struct MetaRecord {
    problem_id: u32,
    problem_text: String,
    meta_text: String,
}

fn load_config(cli: &Cli) -> Result<CcrlConfig> {
    let mut config = match &cli.config {
        Some(path) => CcrlConfig::from_path(path)?,
        None => CcrlConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn read_meta_records(path: &Path) -> Result<Vec<MetaRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(line)
                .with_context(|| format!("{} line {}", path.display(), line_no + 1))?,
        );
    }
    Ok(records)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for item in items {
        writeln!(file, "{}", serde_json::to_string(item)?)?;
    }
    Ok(())
}

/// Dataset file for `stats`: either meta-thought dataset JSONL (token
/// counts come from `meta_text`) or plain text, one document per line.
fn read_stats_dataset(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(record) = serde_json::from_str::<comt::ComtRecord>(line) {
            docs.push(record.meta_text);
        } else if let Ok(record) = serde_json::from_str::<MetaRecord>(line) {
            docs.push(record.meta_text);
        } else {
            docs.push(line.to_string());
        }
    }
    Ok(docs)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::GenProblems { count, operand_min, operand_max, vocab } => {
            ensure_out(&cli.out)?;
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problems = generate_problems(
                &default_templates(),
                (operand_min, operand_max),
                count,
                &vocabulary,
                &mut rng_stream(config.seed, "gen"),
            )?;
            let path = cli.out.join("problems.jsonl");
            write_problems(&problems, &vocabulary, &path)?;
            RunManifest::new(config, vocabulary.hash()).write(&cli.out.join("manifest.json"))?;
            println!("wrote {} problems to {}", problems.len(), path.display());
        }
        Command::TeacherFetch {
            problems,
            base_url,
            model,
            auth_env,
            timeout_secs,
            retries,
            backoff_ms,
            concurrency,
            vocab,
        } => {
            ensure_out(&cli.out)?;
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problems = read_problems(&problems, &vocabulary)?;
            let mut endpoint = TeacherEndpoint::new(&base_url, &model);
            endpoint.auth_env_var = auth_env;
            endpoint.timeout = std::time::Duration::from_secs(timeout_secs);
            endpoint.max_retries = retries;
            endpoint.backoff_base = std::time::Duration::from_millis(backoff_ms);
            endpoint.concurrency = concurrency;
            let statements: Vec<String> = problems.iter().map(|p| p.statement.clone()).collect();
            let outcomes = comt::fetch_meta_thoughts(&endpoint, &statements);
            let mut records = Vec::new();
            for (problem, outcome) in problems.iter().zip(outcomes) {
                let meta_text = outcome
                    .with_context(|| format!("fetching meta-thought for problem {}", problem.id))?;
                records.push(MetaRecord {
                    problem_id: problem.id,
                    problem_text: problem.statement.clone(),
                    meta_text,
                });
            }
            let path = cli.out.join("meta_raw.jsonl");
            write_jsonl(&path, &records)?;
            println!("fetched {} meta-thoughts to {}", records.len(), path.display());
        }
        Command::ValidateComt { meta } => {
            let records = read_meta_records(&meta)?;
            let mut n_pass = 0usize;
            let mut n_fail = 0usize;
            let mut verdicts = Vec::new();
            for record in &records {
                let validation = comt::validate_meta_thought(&record.meta_text);
                if validation.passed() {
                    n_pass += 1;
                } else {
                    n_fail += 1;
                }
                verdicts.push(comt::ComtRecord {
                    problem_id: record.problem_id,
                    problem_text: record.problem_text.clone(),
                    meta_text: record.meta_text.clone(),
                    token_count: comt::whitespace_token_count(&record.meta_text),
                    validation,
                });
            }
            ensure_out(&cli.out)?;
            let path = cli.out.join("validation.jsonl");
            write_jsonl(&path, &verdicts)?;
            println!(
                "{}",
                serde_json::json!({ "n_records": records.len(), "n_pass": n_pass, "n_fail": n_fail })
            );
        }
        Command::BuildDataset { problems, meta, policy, vocab } => {
            ensure_out(&cli.out)?;
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problem_list = read_problems(&problems, &vocabulary)?;
            let meta_records = read_meta_records(&meta)?;
            if meta_records.len() != problem_list.len() {
                bail!(
                    "{} problems but {} meta records",
                    problem_list.len(),
                    meta_records.len()
                );
            }
            let pairs: Vec<(u32, String)> = problem_list
                .iter()
                .map(|p| (p.id, p.statement.clone()))
                .collect();
            let texts: Vec<String> = meta_records.into_iter().map(|r| r.meta_text).collect();
            let policy = match policy {
                PolicyArg::Strict => DatasetPolicy::Strict,
                PolicyArg::Filter => DatasetPolicy::Filter,
            };
            let (records, report) = comt::build_dataset(&pairs, &texts, policy)?;
            let dataset_path = cli.out.join("comt_dataset.jsonl");
            comt::write_dataset(&records, &dataset_path)?;
            std::fs::write(
                cli.out.join("rejects.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            println!(
                "dataset {} records -> {} ({} rejected)",
                report.n_input,
                dataset_path.display(),
                report.n_fail
            );
        }
        Command::Sft { problems, steps, lr, full_trajectories, vocab } => {
            ensure_out(&cli.out)?;
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problem_list = read_problems(&problems, &vocabulary)?;
            let dataset: Vec<(&Problem, &[TokenId])> = problem_list
                .iter()
                .map(|p| {
                    let tokens: &[TokenId] = if full_trajectories {
                        &p.gold_full_tokens
                    } else {
                        &p.gold_meta_tokens
                    };
                    (p, tokens)
                })
                .collect();
            let mut state = PolicyState::new(&vocabulary);
            let trace = train_sft(&mut state, &dataset, steps, lr, config.grad_clip_norm)?;
            let ckpt = cli.out.join("checkpoint_sft.json");
            save_checkpoint(&state, &ckpt)?;
            let nll: Vec<serde_json::Value> = trace
                .iter()
                .enumerate()
                .map(|(step, nll)| serde_json::json!({"step": step, "nll": nll}))
                .collect();
            write_jsonl(&cli.out.join("sft_nll.jsonl"), &nll)?;
            RunManifest::new(config, vocabulary.hash()).write(&cli.out.join("manifest.json"))?;
            println!(
                "sft: nll {:.6} -> {:.6}, checkpoint {}",
                trace.first().unwrap(),
                trace.last().unwrap(),
                ckpt.display()
            );
        }
        Command::Train { mode, problems, init_checkpoint, iterations, max_len, vocab } => {
            ensure_out(&cli.out)?;
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problem_list = read_problems(&problems, &vocabulary)?;
            let mut state = match init_checkpoint {
                Some(path) => load_checkpoint(&path, &vocabulary)?,
                None => PolicyState::new(&vocabulary),
            };
            let mode = match mode {
                ModeArg::Ccrl => TrainMode::Ccrl,
                ModeArg::Outcome => TrainMode::OutcomeOnly,
            };
            let manifest = RunManifest::new(config.clone(), vocabulary.hash());
            manifest.write(&cli.out.join("manifest.json"))?;
            save_checkpoint(&state, &cli.out.join("checkpoint_init.json"))?;
            let options = TrainOptions {
                iterations,
                max_len,
                ..TrainOptions::default()
            };
            let output = engine::train(&config, &problem_list, &vocabulary, &mut state, mode, &options)?;
            std::fs::write(
                cli.out.join("trace.jsonl"),
                engine::trace_to_jsonl(&output.trace)?,
            )?;
            save_checkpoint(&state, &cli.out.join("checkpoint_final.json"))?;
            write_jsonl(&cli.out.join("eval_final.jsonl"), &output.final_rows)?;
            let last = output.trace.last();
            println!(
                "trained {} iterations, final accuracy {}",
                output.trace.len(),
                last.map(|r| r.accuracy).unwrap_or(0.0)
            );
        }
        Command::Eval { checkpoint, problems, max_len, vocab } => {
            let vocabulary = Vocabulary::standard(vocab.v_max)?;
            let problem_list = read_problems(&problems, &vocabulary)?;
            let state = load_checkpoint(&checkpoint, &vocabulary)?;
            let (report, _) = evaluate(&state, &problem_list, &vocabulary, max_len)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::AuditOverconfidence { runs, external } => {
            if runs.is_empty() && external.is_none() {
                bail!("nothing to audit: pass --run and/or --external");
            }
            let mut entries = Vec::new();
            for run in &runs {
                let manifest = RunManifest::read(&run.join("manifest.json"))?;
                let rows_text = std::fs::read_to_string(run.join("eval_final.jsonl"))?;
                let mut outcomes = Vec::new();
                for line in rows_text.lines().filter(|l| !l.trim().is_empty()) {
                    let row: analysis::EvalRow = serde_json::from_str(line)?;
                    outcomes.push((row.correct, row.confidence));
                }
                let report = analysis::overconfidence(&outcomes, &manifest.config.thresholds);
                entries.push(serde_json::json!({
                    "run": run.display().to_string(),
                    "report": report,
                }));
            }
            if let Some(path) = external {
                let (scored, rejected) = analysis::ingest_external_trajectories(&path, &config)?;
                let outcomes: Vec<(bool, Option<f64>)> = scored
                    .iter()
                    .map(|s| (s.answer_correct, s.confidence))
                    .collect();
                let report = analysis::overconfidence(&outcomes, &config.thresholds);
                entries.push(serde_json::json!({
                    "external": path.display().to_string(),
                    "n_scored": scored.len(),
                    "rejected": rejected,
                    "report": report,
                }));
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({ "audits": entries }))?
            );
        }
        Command::Stats { dataset_a, dataset_b } => {
            let a = read_stats_dataset(&dataset_a)?;
            let b = read_stats_dataset(&dataset_b)?;
            let stats = comt::dataset_stats(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Report { run } => {
            let trace_text = std::fs::read_to_string(run.join("trace.jsonl"))?;
            let trace = engine::trace_from_jsonl(&trace_text)?;
            std::fs::write(run.join("report.json"), analysis::render_report_json(&trace)?)?;
            std::fs::write(run.join("report.csv"), analysis::render_report_csv(&trace))?;
            println!("wrote {} and {}", run.join("report.json").display(), run.join("report.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
