//! Evaluation and calibration analytics.
//!
//! Greedy evaluation scores exact-match accuracy; overconfidence analysis
//! restricts to the incorrect predictions and asks how often their
//! confidence score `exp(-H_max)` strictly exceeds each threshold.
//! External trajectory dumps (tokens as text plus either full probability
//! vectors or precomputed entropies) run through the same reward pipeline
//! in general-text mode.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::classify_text_tokens;
use crate::config::CcrlConfig;
use crate::engine::IterationRecord;
use crate::env::{check_answer, Problem};
use crate::error::{CcrlError, Result};
use crate::policy::{greedy_trajectory, PolicyState};
use crate::reward::{
    confidence_reward, confidence_summary, extract_answer, outcome_reward,
};
use crate::vocab::Vocabulary;

/// One problem's greedy evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub problem_id: u32,
    pub template_id: u32,
    pub correct: bool,
    /// `exp(-H_max)` over the computed positions of the greedy trajectory;
    /// absent when the trajectory holds no computed number.
    pub confidence: Option<f64>,
    pub extracted_answer: Option<i64>,
}

/// Aggregate greedy-evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_problems: usize,
    pub per_template_accuracy: BTreeMap<u32, f64>,
    pub mean_confidence_correct: Option<f64>,
    pub mean_confidence_incorrect: Option<f64>,
}

/// Greedy-decode every problem and score exact-match accuracy plus
/// per-trajectory confidence.
pub fn evaluate(
    state: &PolicyState,
    problems: &[Problem],
    vocab: &Vocabulary,
    max_len: u32,
) -> Result<(EvalReport, Vec<EvalRow>)> {
    if problems.is_empty() {
        return Err(CcrlError::InvalidInput("empty problem set".into()));
    }
    let mut rows = Vec::with_capacity(problems.len());
    for problem in problems {
        let trajectory = greedy_trajectory(state, problem, vocab, max_len);
        let answer = extract_answer(&trajectory.tokens, vocab)?;
        let correct = check_answer(problem, answer);
        let summary = confidence_summary(
            &trajectory.tokens,
            &trajectory.dists,
            &problem.number_set(),
            vocab,
        )?;
        rows.push(EvalRow {
            problem_id: problem.id,
            template_id: problem.template_id,
            correct,
            confidence: summary.confidence_score,
            extracted_answer: answer,
        });
    }

    let n = rows.len();
    let n_correct = rows.iter().filter(|r| r.correct).count();
    let mut per_template: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for row in &rows {
        let entry = per_template.entry(row.template_id).or_insert((0, 0));
        entry.1 += 1;
        if row.correct {
            entry.0 += 1;
        }
    }
    let mean_conf = |want_correct: bool| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.correct == want_correct)
            .filter_map(|r| r.confidence)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let report = EvalReport {
        accuracy: n_correct as f64 / n as f64,
        n_problems: n,
        per_template_accuracy: per_template
            .into_iter()
            .map(|(k, (c, t))| (k, c as f64 / t as f64))
            .collect(),
        mean_confidence_correct: mean_conf(true),
        mean_confidence_incorrect: mean_conf(false),
    };
    Ok((report, rows))
}

/// Stable map key for a threshold value.
pub fn threshold_key(threshold: f64) -> String {
    format!("{threshold}")
}

/// Per-threshold exceedance rates among incorrect predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverconfidenceReport {
    /// threshold -> fraction of incorrect predictions (with a confidence
    /// score) strictly above the threshold; absent when none qualify.
    pub rates: BTreeMap<String, Option<f64>>,
    /// Incorrect predictions carrying a confidence score.
    pub n_incorrect: usize,
    /// Incorrect predictions without one; excluded from the rates.
    pub n_absent_confidence: usize,
}

/// Compute exceedance rates over `(correct, confidence)` pairs. Only
/// incorrect predictions count; those without a confidence score are
/// tallied separately and excluded from the denominators.
pub fn overconfidence(
    outcomes: &[(bool, Option<f64>)],
    thresholds: &[f64],
) -> OverconfidenceReport {
    let mut confidences = Vec::new();
    let mut n_absent = 0usize;
    for &(correct, confidence) in outcomes {
        if correct {
            continue;
        }
        match confidence {
            Some(c) => confidences.push(c),
            None => n_absent += 1,
        }
    }
    let mut rates = BTreeMap::new();
    for &t in thresholds {
        let rate = if confidences.is_empty() {
            None
        } else {
            let above = confidences.iter().filter(|&&c| c > t).count();
            Some(above as f64 / confidences.len() as f64)
        };
        rates.insert(threshold_key(t), rate);
    }
    OverconfidenceReport {
        rates,
        n_incorrect: confidences.len(),
        n_absent_confidence: n_absent,
    }
}

// --- External trajectory ingestion --------------------------------------

#[derive(Debug, Deserialize)]
struct ExternalRecord {
    problem: String,
    tokens: Vec<String>,
    #[serde(default)]
    gold_answer: Option<f64>,
    #[serde(default)]
    answer_correct: Option<bool>,
    /// Full per-position probability vectors (any vocabulary size).
    #[serde(default)]
    probs: Option<Vec<Vec<f64>>>,
    /// Precomputed per-position entropies; only numeric positions need one.
    #[serde(default)]
    entropies: Option<Vec<Option<f64>>>,
}

/// One scored external trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTrajectory {
    pub line: usize,
    pub answer_correct: bool,
    pub h_max: Option<f64>,
    pub confidence: Option<f64>,
    pub outcome: f64,
    pub confidence_term: f64,
    pub total_reward: f64,
}

/// A rejected input line and why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

fn entropy_of_prob_vector(probs: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(CcrlError::InvalidInput(format!(
                "probability entry {p} is not a finite nonnegative value"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CcrlError::InvalidInput(format!(
            "probability vector mass {sum} not within 1e-6 of 1"
        )));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum())
}

fn score_external_record(record: &ExternalRecord, config: &CcrlConfig) -> Result<ScoredTrajectory> {
    let spans = classify_text_tokens(&record.tokens, &record.problem);

    let entropy_at = |position: usize| -> Result<f64> {
        if let Some(probs) = &record.probs {
            if let Some(vector) = probs.get(position) {
                if !vector.is_empty() {
                    return entropy_of_prob_vector(vector);
                }
            }
        }
        if let Some(entropies) = &record.entropies {
            if let Some(Some(h)) = entropies.get(position) {
                if h.is_finite() && *h >= 0.0 {
                    return Ok(*h);
                }
                return Err(CcrlError::InvalidInput(format!(
                    "entropy at position {position} must be a finite nonnegative value"
                )));
            }
        }
        Err(CcrlError::InvalidInput(format!(
            "no probabilities or entropy at computed position {position}"
        )))
    };

    // A number span's entropy is the maximum over its constituent tokens.
    let mut h_max: Option<f64> = None;
    for span in spans.iter().filter(|s| s.computed) {
        for &position in &span.positions {
            let h = entropy_at(position)?;
            h_max = Some(match h_max {
                Some(b) if b >= h => b,
                _ => h,
            });
        }
    }

    let extracted = spans.last().map(|s| s.value);
    let answer_correct = match (record.answer_correct, record.gold_answer) {
        (Some(flag), _) => flag,
        (None, Some(gold)) => extracted == Some(gold),
        (None, None) => {
            return Err(CcrlError::InvalidInput(
                "record carries neither answer_correct nor gold_answer".into(),
            ))
        }
    };

    let outcome = outcome_reward(answer_correct, config);
    let confidence_term = confidence_reward(answer_correct, h_max, config);
    Ok(ScoredTrajectory {
        line: 0,
        answer_correct,
        h_max,
        confidence: h_max.map(|h| (-h).exp()),
        outcome,
        confidence_term,
        total_reward: outcome + confidence_term,
    })
}

/// Score a JSONL dump of external trajectories. Malformed lines and
/// records lacking confidence data at a computed position are rejected
/// with their 1-based line number.
pub fn ingest_external_trajectories(
    path: &Path,
    config: &CcrlConfig,
) -> Result<(Vec<ScoredTrajectory>, Vec<RejectedLine>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut scored = Vec::new();
    let mut rejected = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExternalRecord>(&line) {
            Err(e) => rejected.push(RejectedLine {
                line: line_no,
                reason: format!("malformed record: {e}"),
            }),
            Ok(record) => match score_external_record(&record, config) {
                Ok(mut s) => {
                    s.line = line_no;
                    scored.push(s);
                }
                Err(e) => rejected.push(RejectedLine {
                    line: line_no,
                    reason: e.to_string(),
                }),
            },
        }
    }
    Ok((scored, rejected))
}

// --- Report rendering ----------------------------------------------------

/// Machine-readable run report: a JSON summary plus a flat CSV of the
/// trace for plotting. Pure functions of the trace, so identical traces
/// render byte-identically.
pub fn render_report_json(trace: &[IterationRecord]) -> Result<String> {
    #[derive(Serialize)]
    struct Report<'a> {
        n_iterations: usize,
        final_record: Option<&'a IterationRecord>,
        trace: &'a [IterationRecord],
    }
    let report = Report {
        n_iterations: trace.len(),
        final_record: trace.last(),
        trace,
    };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

pub fn render_report_csv(trace: &[IterationRecord]) -> String {
    let mut thresholds: Vec<String> = trace
        .first()
        .map(|r| r.overconf.keys().cloned().collect())
        .unwrap_or_default();
    thresholds.sort();
    let mut out = String::from("iter,mean_reward,accuracy,l_policy,l_value,l_kl,clip_fraction");
    for t in &thresholds {
        out.push_str(&format!(",overconf_{t}"));
    }
    out.push('\n');
    for record in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            record.iter,
            record.mean_reward,
            record.accuracy,
            record.l_policy,
            record.l_value,
            record.l_kl,
            record.clip_fraction
        ));
        for t in &thresholds {
            match record.overconf.get(t).copied().flatten() {
                Some(rate) => out.push_str(&format!(",{rate}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{default_templates, generate_problems};
    use crate::policy::ContextKey;
    use crate::rng::rng_stream;
    use crate::vocab::Marker;

    fn setup() -> (Vocabulary, Vec<Problem>) {
        let vocab = Vocabulary::standard(60).unwrap();
        let problems = generate_problems(
            &default_templates()[..4],
            (2, 5),
            4,
            &vocab,
            &mut rng_stream(31, "gen"),
        )
        .unwrap();
        (vocab, problems)
    }

    /// Plant enormous logits so the greedy path replays the given tokens.
    fn script_policy(vocab: &Vocabulary, problems: &[Problem], gold: &[bool]) -> PolicyState {
        let mut state = PolicyState::new(vocab);
        for (problem, &correct) in problems.iter().zip(gold) {
            let tokens = if correct {
                problem.gold_full_tokens.clone()
            } else {
                vec![vocab.number(1).unwrap(), vocab.marker(Marker::Eos)]
            };
            for (t, tok) in tokens.iter().enumerate() {
                let mut logits = vec![0.0; vocab.len()];
                logits[tok.index()] = 300.0;
                state
                    .theta
                    .insert(ContextKey::for_problem(problem, t as u32), logits);
            }
        }
        state
    }

    #[test]
    fn evaluate_all_correct() {
        let (vocab, problems) = setup();
        let state = script_policy(&vocab, &problems, &[true; 4]);
        let (report, rows) = evaluate(&state, &problems, &vocab, 12).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!(rows.iter().all(|r| r.correct));
    }

    #[test]
    fn evaluate_all_wrong_when_nothing_numeric_matches() {
        let (vocab, problems) = setup();
        // Uniform policy greedily emits token 0 forever: answer 0, never gold.
        let state = PolicyState::new(&vocab);
        let (report, _) = evaluate(&state, &problems, &vocab, 12).unwrap();
        assert_eq!(report.accuracy, 0.0);
    }

    #[test]
    fn evaluate_mixed_counts() {
        let (vocab, problems) = setup();
        let state = script_policy(&vocab, &problems, &[true, true, true, false]);
        let (report, rows) = evaluate(&state, &problems, &vocab, 12).unwrap();
        assert_eq!(report.accuracy, 0.75);
        assert_eq!(rows.iter().filter(|r| r.correct).count(), 3);
        assert_eq!(report.n_problems, 4);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let (vocab, _) = setup();
        let state = PolicyState::new(&vocab);
        assert!(evaluate(&state, &[], &vocab, 12).is_err());
    }

    #[test]
    fn overconfidence_counting_example() {
        let outcomes = vec![
            (false, Some(0.95)),
            (false, Some(0.6)),
            (false, Some(0.3)),
            (true, Some(0.99)),
        ];
        let report = overconfidence(&outcomes, &[0.5, 0.7, 0.9]);
        assert_eq!(report.n_incorrect, 3);
        assert!((report.rates["0.5"].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.rates["0.7"].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.rates["0.9"].unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overconfidence_all_max_confidence() {
        let outcomes = vec![(false, Some(1.0)); 5];
        let report = overconfidence(&outcomes, &[0.5, 0.7, 0.9]);
        for rate in report.rates.values() {
            assert_eq!(*rate, Some(1.0));
        }
    }

    #[test]
    fn overconfidence_empty_incorrect_set() {
        let outcomes = vec![(true, Some(0.9)), (false, None)];
        let report = overconfidence(&outcomes, &[0.5]);
        assert_eq!(report.n_incorrect, 0);
        assert_eq!(report.n_absent_confidence, 1);
        assert_eq!(report.rates["0.5"], None);
    }

    #[test]
    fn overconfidence_rates_non_increasing() {
        use rand::Rng;
        let mut rng = rng_stream(32, "overconf-prop");
        for _ in 0..300 {
            let n = rng.random_range(0..30);
            let outcomes: Vec<(bool, Option<f64>)> = (0..n)
                .map(|_| {
                    let correct: bool = rng.random();
                    let confidence = if rng.random::<f64>() < 0.2 {
                        None
                    } else {
                        Some(rng.random::<f64>())
                    };
                    (correct, confidence)
                })
                .collect();
            let thresholds = [0.1, 0.3, 0.5, 0.7, 0.9];
            let report = overconfidence(&outcomes, &thresholds);
            let mut previous = f64::INFINITY;
            for &t in &thresholds {
                if let Some(rate) = report.rates[&threshold_key(t)] {
                    assert!(rate <= previous + 1e-15);
                    previous = rate;
                }
            }
        }
    }

    #[test]
    fn external_two_path_consistency() {
        let config = CcrlConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.jsonl");
        // Same trajectory twice: once with full distributions, once with
        // precomputed entropies.
        let uniform4 = vec![0.25, 0.25, 0.25, 0.25];
        let two_way = vec![0.5, 0.5, 0.0, 0.0];
        let point = vec![1.0, 0.0, 0.0, 0.0];
        let with_probs = serde_json::json!({
            "problem": "Ana has 3 pens and buys 4 more; how many now?",
            "tokens": ["answer", "7", "from", "12"],
            "gold_answer": 12.0,
            "probs": [uniform4, two_way, [0.25, 0.25, 0.25, 0.25], point],
        });
        let with_entropies = serde_json::json!({
            "problem": "Ana has 3 pens and buys 4 more; how many now?",
            "tokens": ["answer", "7", "from", "12"],
            "gold_answer": 12.0,
            "entropies": [null, 2f64.ln(), null, 0.0],
        });
        std::fs::write(
            &path,
            format!("{with_probs}\n{with_entropies}\n"),
        )
        .unwrap();
        let (scored, rejected) = ingest_external_trajectories(&path, &config).unwrap();
        assert!(rejected.is_empty());
        assert_eq!(scored.len(), 2);
        assert!(scored[0].answer_correct);
        let a = &scored[0];
        let b = &scored[1];
        assert!((a.h_max.unwrap() - b.h_max.unwrap()).abs() < 1e-9);
        assert!((a.total_reward - b.total_reward).abs() < 1e-9);
    }

    #[test]
    fn external_missing_confidence_data_rejected_with_line() {
        let config = CcrlConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.jsonl");
        let ok = serde_json::json!({
            "problem": "p has 3",
            "tokens": ["3"],
            "answer_correct": true,
        });
        let missing = serde_json::json!({
            "problem": "p has 3",
            "tokens": ["7"],
            "answer_correct": false,
        });
        std::fs::write(&path, format!("{ok}\nnot json\n{missing}\n")).unwrap();
        let (scored, rejected) = ingest_external_trajectories(&path, &config).unwrap();
        // "3" is extracted (appears in problem): no computed position, so it
        // scores without any entropy data.
        assert_eq!(scored.len(), 1);
        assert_eq!(scored[0].h_max, None);
        assert_eq!(rejected.len(), 2);
        assert_eq!(rejected[0].line, 2);
        assert_eq!(rejected[1].line, 3);
        assert!(rejected[1].reason.contains("position"));
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let record = IterationRecord {
            iter: 0,
            mean_reward: -1.0,
            accuracy: 0.25,
            l_policy: 0.5,
            l_value: 1.5,
            l_kl: 0.0,
            clip_fraction: 0.0,
            overconf: [("0.5".to_string(), Some(0.5)), ("0.9".to_string(), None)]
                .into_iter()
                .collect(),
        };
        let trace = vec![record];
        assert_eq!(
            render_report_json(&trace).unwrap(),
            render_report_json(&trace).unwrap()
        );
        let csv = render_report_csv(&trace);
        assert!(csv.starts_with("iter,"));
        assert!(csv.contains("overconf_0.5"));
        assert_eq!(csv, render_report_csv(&trace));
    }
}
