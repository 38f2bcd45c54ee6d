//! The meta-thought data pipeline.
//!
//! A teacher endpoint (OpenAI-compatible chat completions) is prompted to
//! describe each problem's reasoning steps with variable names only. The
//! validator rejects any response containing a numeral outside whitelisted
//! step-enumeration patterns, the dataset builder assembles the surviving
//! records into JSONL, and the stats helper compares average token lengths
//! between two datasets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{CcrlError, Result};

/// Connection settings for the teacher model. The bearer token is read
/// from the named environment variable at request time and never stored.
#[derive(Debug, Clone)]
pub struct TeacherEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub auth_env_var: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_base: Duration,
    /// In-flight request cap for batch fetches.
    pub concurrency: usize,
}

impl TeacherEndpoint {
    pub fn new(base_url: &str, model_name: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model_name: model_name.to_string(),
            auth_env_var: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            concurrency: 4,
        }
    }
}

/// The instruction sent to the teacher, verbatim, with the problem text
/// substituted at the end.
pub fn build_teacher_prompt(problem_text: &str) -> Result<String> {
    if problem_text.is_empty() {
        return Err(CcrlError::InvalidInput("empty problem text".into()));
    }
    Ok(format!(
        "Solve this problem by describing the REASONING STEPS in natural language using only variable names. Do NOT calculate any specific numbers. Question: {problem_text}"
    ))
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

fn is_transient_status(status: reqwest::StatusCode) -> bool {
    status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS
}

/// One chat-completion round trip with exponential backoff on transport
/// failures and transient statuses. Non-transient HTTP errors and
/// malformed bodies fail immediately.
pub fn fetch_meta_thought(endpoint: &TeacherEndpoint, problem_text: &str) -> Result<String> {
    let prompt = build_teacher_prompt(problem_text)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(endpoint.timeout)
        .build()
        .map_err(|e| CcrlError::Transport(e.to_string()))?;
    let url = format!("{}/v1/chat/completions", endpoint.base_url);
    let token = endpoint
        .auth_env_var
        .as_ref()
        .and_then(|var| std::env::var(var).ok());

    let mut delay = endpoint.backoff_base;
    let mut last_error = String::new();
    for attempt in 0..=endpoint.max_retries {
        if attempt > 0 {
            std::thread::sleep(delay);
            delay *= 2;
        }
        let body = ChatRequest {
            model: &endpoint.model_name,
            messages: vec![ChatMessage { role: "user", content: &prompt }],
        };
        let mut request = client.post(&url).json(&body);
        if let Some(token) = &token {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Err(e) => {
                last_error = format!("request failed: {e}");
            }
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let parsed: ChatResponse = response
                        .json()
                        .map_err(|e| CcrlError::Protocol(format!("bad response body: {e}")))?;
                    let choice = parsed
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| CcrlError::Protocol("response has no choices".into()))?;
                    return Ok(choice.message.content);
                }
                if is_transient_status(status) {
                    last_error = format!("transient status {status}");
                } else {
                    return Err(CcrlError::Transport(format!(
                        "teacher endpoint answered {status}"
                    )));
                }
            }
        }
    }
    Err(CcrlError::Transport(format!(
        "gave up after {} attempts: {last_error}",
        endpoint.max_retries + 1
    )))
}

/// Fetch a batch concurrently under the endpoint's in-flight cap. Results
/// come back in problem order regardless of completion order.
pub fn fetch_meta_thoughts(
    endpoint: &TeacherEndpoint,
    problems: &[String],
) -> Vec<Result<String>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> =
        Mutex::new((0..problems.len()).map(|_| None).collect());
    let workers = endpoint.concurrency.max(1).min(problems.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= problems.len() {
                    break;
                }
                let outcome = fetch_meta_thought(endpoint, &problems[index]);
                results.lock().unwrap()[index] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}

/// Validation verdict for one meta-thought text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetaValidation {
    Pass {
        /// Quantity words ("half", "twice") worth flagging, never fatal.
        warnings: Vec<String>,
    },
    Fail {
        reason: String,
        /// The offending numeral substrings in order of appearance.
        spans: Vec<String>,
    },
}

impl MetaValidation {
    pub fn passed(&self) -> bool {
        matches!(self, MetaValidation::Pass { .. })
    }
}

/// Quantity words that pass validation but are reported as warnings.
const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "half",
    "twice", "double", "triple", "dozen",
];

/// A meta-thought must not calculate specific numbers: any numeral fails
/// validation unless it sits in a step-enumeration pattern at the start of
/// a line ("Step 3:", "3.", "(3)").
pub fn validate_meta_thought(meta_text: &str) -> MetaValidation {
    // Checked once per line start; everything after the prefix is scanned.
    let enumeration =
        Regex::new(r"^\s*(?:[Ss]tep\s+\d+\s*:|\d+\.|\(\d+\))\s*").expect("valid pattern");
    let mut spans = Vec::new();
    for line in meta_text.lines() {
        let rest = match enumeration.find(line) {
            Some(m) => &line[m.end()..],
            None => line,
        };
        let mut digits = String::new();
        for ch in rest.chars().chain(std::iter::once(' ')) {
            if ch.is_ascii_digit() {
                digits.push(ch);
            } else if !digits.is_empty() {
                spans.push(digits.clone());
                digits.clear();
            }
        }
    }
    if !spans.is_empty() {
        return MetaValidation::Fail {
            reason: "contains numerals outside step enumeration".into(),
            spans,
        };
    }
    let lower = meta_text.to_lowercase();
    let warnings: Vec<String> = NUMBER_WORDS
        .iter()
        .filter(|w| {
            lower
                .split(|c: char| !c.is_ascii_alphabetic())
                .any(|token| token == **w)
        })
        .map(|w| format!("quantity word {w:?}"))
        .collect();
    MetaValidation::Pass { warnings }
}

/// One dataset row: a problem paired with its teacher meta-thought.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComtRecord {
    pub problem_id: u32,
    pub problem_text: String,
    pub meta_text: String,
    pub validation: MetaValidation,
    pub token_count: usize,
}

/// What to do with records that fail validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPolicy {
    /// Abort on the first failing record.
    Strict,
    /// Drop failing records and report them.
    Filter,
}

/// Counts and names of dropped records plus all collected warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectReport {
    pub n_input: usize,
    pub n_pass: usize,
    pub n_fail: usize,
    pub failures: Vec<RejectedRecord>,
    pub warnings: BTreeMap<u32, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub problem_id: u32,
    pub reason: String,
    pub spans: Vec<String>,
}

/// Shared whitespace token count used by the dataset statistics.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Validate each (problem, meta-thought) pair and assemble the dataset.
/// `Strict` aborts on any failure; `Filter` drops failures into the report.
pub fn build_dataset(
    problems: &[(u32, String)],
    meta_texts: &[String],
    policy: DatasetPolicy,
) -> Result<(Vec<ComtRecord>, RejectReport)> {
    if problems.len() != meta_texts.len() {
        return Err(CcrlError::InvalidInput(format!(
            "{} problems but {} meta texts",
            problems.len(),
            meta_texts.len()
        )));
    }
    let mut records = Vec::new();
    let mut report = RejectReport {
        n_input: problems.len(),
        ..RejectReport::default()
    };
    for ((problem_id, problem_text), meta_text) in problems.iter().zip(meta_texts) {
        let validation = validate_meta_thought(meta_text);
        match &validation {
            MetaValidation::Pass { warnings } => {
                if !warnings.is_empty() {
                    report.warnings.insert(*problem_id, warnings.clone());
                }
                report.n_pass += 1;
                records.push(ComtRecord {
                    problem_id: *problem_id,
                    problem_text: problem_text.clone(),
                    meta_text: meta_text.clone(),
                    validation,
                    token_count: whitespace_token_count(meta_text),
                });
            }
            MetaValidation::Fail { reason, spans } => match policy {
                DatasetPolicy::Strict => {
                    return Err(CcrlError::InvalidInput(format!(
                        "problem {problem_id} failed validation under strict policy: {reason} ({spans:?})"
                    )));
                }
                DatasetPolicy::Filter => {
                    report.n_fail += 1;
                    report.failures.push(RejectedRecord {
                        problem_id: *problem_id,
                        reason: reason.clone(),
                        spans: spans.clone(),
                    });
                }
            },
        }
    }
    Ok((records, report))
}

/// Write passing records as UTF-8 JSONL, one record per line.
pub fn write_dataset(records: &[ComtRecord], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ComtRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| {
            CcrlError::InvalidInput(format!("dataset line {}: {e}", line_no + 1))
        })?);
    }
    Ok(records)
}

/// Mean whitespace-token lengths of two datasets and the relative
/// reduction of the second against the first, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean_tokens_a: f64,
    pub mean_tokens_b: f64,
    pub percent_reduction: f64,
}

pub fn dataset_stats(dataset_a: &[String], dataset_b: &[String]) -> Result<DatasetStats> {
    if dataset_a.is_empty() || dataset_b.is_empty() {
        return Err(CcrlError::InvalidInput("empty dataset".into()));
    }
    let mean = |dataset: &[String]| {
        dataset
            .iter()
            .map(|t| whitespace_token_count(t) as f64)
            .sum::<f64>()
            / dataset.len() as f64
    };
    let mean_a = mean(dataset_a);
    let mean_b = mean(dataset_b);
    Ok(DatasetStats {
        mean_tokens_a: mean_a,
        mean_tokens_b: mean_b,
        percent_reduction: (1.0 - mean_b / mean_a) * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_contains_required_phrases() {
        let prompt = build_teacher_prompt("P").unwrap();
        assert!(prompt.contains("REASONING STEPS"));
        assert!(prompt.contains("Do NOT calculate"));
        assert!(prompt.ends_with("Question: P"));
    }

    #[test]
    fn prompt_rejects_empty_problem() {
        assert!(build_teacher_prompt("").is_err());
    }

    #[test]
    fn prompt_passes_unicode_through() {
        let text = "Müller kauft Äpfel — 何個?";
        let prompt = build_teacher_prompt(text).unwrap();
        assert!(prompt.ends_with(&format!("Question: {text}")));
    }

    #[test]
    fn validator_accepts_plain_prose() {
        let v = validate_meta_thought("multiply the number of friends by the price");
        assert!(v.passed());
    }

    #[test]
    fn validator_whitelists_step_enumeration() {
        assert!(validate_meta_thought("Step 1: add A and B").passed());
        assert!(validate_meta_thought("1. add A and B\n2. double the sum").passed());
        assert!(validate_meta_thought("(3) subtract C").passed());
        // Enumeration only counts at the line start.
        assert!(!validate_meta_thought("add A and B in Step 3: then 7").passed());
    }

    #[test]
    fn validator_reports_offending_spans() {
        match validate_meta_thought("add 48 and 24") {
            MetaValidation::Fail { spans, .. } => assert_eq!(spans, vec!["48", "24"]),
            MetaValidation::Pass { .. } => panic!("expected failure"),
        }
    }

    #[test]
    fn validator_warns_on_quantity_words() {
        match validate_meta_thought("take half of the total, then double it") {
            MetaValidation::Pass { warnings } => {
                assert!(warnings.iter().any(|w| w.contains("half")));
                assert!(warnings.iter().any(|w| w.contains("double")));
            }
            MetaValidation::Fail { .. } => panic!("quantity words must pass"),
        }
    }

    #[test]
    fn build_dataset_policies() {
        let problems = vec![
            (0u32, "p0".to_string()),
            (1, "p1".to_string()),
            (2, "p2".to_string()),
        ];
        let metas = vec![
            "add A and B".to_string(),
            "add 48 and B".to_string(),
            "double the sum".to_string(),
        ];
        let (records, report) =
            build_dataset(&problems, &metas, DatasetPolicy::Filter).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(report.n_fail, 1);
        assert_eq!(report.failures[0].problem_id, 1);
        assert_eq!(report.failures[0].spans, vec!["48"]);

        assert!(build_dataset(&problems, &metas, DatasetPolicy::Strict).is_err());

        let all_pass = vec!["add A".to_string(), "add B".to_string(), "add C".to_string()];
        let (records, report) =
            build_dataset(&problems, &all_pass, DatasetPolicy::Strict).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(report.n_pass, 3);

        assert!(build_dataset(&problems, &all_pass[..2].to_vec(), DatasetPolicy::Filter).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let problems = vec![(0u32, "p0".to_string()), (1, "p1".to_string())];
        let metas = vec!["add A and B".to_string(), "double C".to_string()];
        let (records, _) = build_dataset(&problems, &metas, DatasetPolicy::Strict).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_dataset(&records, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), records);
    }

    #[test]
    fn stats_arithmetic() {
        let a: Vec<String> = vec![
            (0..100).map(|_| "w").collect::<Vec<_>>().join(" "),
            (0..300).map(|_| "w").collect::<Vec<_>>().join(" "),
        ];
        let b: Vec<String> = vec![
            (0..100).map(|_| "w").collect::<Vec<_>>().join(" "),
            (0..100).map(|_| "w").collect::<Vec<_>>().join(" "),
        ];
        let stats = dataset_stats(&a, &b).unwrap();
        assert_eq!(stats.mean_tokens_a, 200.0);
        assert_eq!(stats.mean_tokens_b, 100.0);
        assert_eq!(stats.percent_reduction, 50.0);

        let same = dataset_stats(&a, &a).unwrap();
        assert_eq!(same.percent_reduction, 0.0);

        assert!(dataset_stats(&[], &b).is_err());
    }

    #[test]
    fn validator_fuzz_no_false_accepts() {
        use rand::Rng;
        let mut rng = crate::rng::rng_stream(41, "validator-fuzz");
        let words = ["add", "the", "variable", "sum", "of", "each", "then", "total"];
        for _ in 0..1000 {
            let mut text = String::new();
            let mut planted_illegal = false;
            for _ in 0..rng.random_range(1..6) {
                // Compose one line.
                let style: u8 = rng.random_range(0..4);
                match style {
                    0 => text.push_str(&format!("Step {}: ", rng.random_range(1..20))),
                    1 => text.push_str(&format!("{}. ", rng.random_range(1..20))),
                    2 => text.push_str(&format!("({}) ", rng.random_range(1..20))),
                    _ => {}
                }
                for _ in 0..rng.random_range(1..8) {
                    if rng.random::<f64>() < 0.15 {
                        text.push_str(&format!("{} ", rng.random_range(0..500)));
                        planted_illegal = true;
                    } else {
                        text.push_str(words[rng.random_range(0..words.len())]);
                        text.push(' ');
                    }
                }
                text.push('\n');
            }
            let verdict = validate_meta_thought(&text);
            if planted_illegal {
                assert!(!verdict.passed(), "false accept on: {text:?}");
            } else {
                assert!(verdict.passed(), "false reject on: {text:?}");
            }
        }
    }
}
