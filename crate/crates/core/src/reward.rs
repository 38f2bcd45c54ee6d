//! Outcome and confidence rewards.
//!
//! A trajectory earns `r_plus` when its extracted answer matches the gold
//! answer and `r_minus` otherwise. On top of that, confidence at the
//! *computed* number positions is scored through the predictive entropy:
//! with `H_max` the largest entropy over those positions, a correct answer
//! adds `alpha * exp(-H_max)` and an incorrect one subtracts
//! `beta * exp(-H_max)`. Confident mistakes are punished hardest; hesitant
//! mistakes are punished least. A trajectory with no computed numbers has
//! nothing to calibrate and gets a zero confidence term.
//!
//! Entropies are in nats, measured over the full vocabulary distribution.

use std::collections::BTreeMap;

use crate::audit::{classify_tokens, NumberSet};
use crate::config::CcrlConfig;
use crate::dist::Distribution;
use crate::env::{check_answer, Problem};
use crate::error::{CcrlError, Result};
use crate::vocab::{Marker, TokenId, TokenKind, Vocabulary};

/// Shannon entropy in nats, with `0 * ln 0` taken as 0. Always lies in
/// `[0, ln |V|]` up to rounding.
pub fn position_entropy(dist: &Distribution) -> f64 {
    let mut h = 0.0;
    for &p in dist.probs() {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Maximum entropy over the computed positions; `None` when there are no
/// computed positions. Every index must have an entropy entry.
pub fn max_entropy(
    per_position: &BTreeMap<usize, f64>,
    computed: &[usize],
) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for &t in computed {
        let h = *per_position.get(&t).ok_or_else(|| {
            CcrlError::InvalidInput(format!("no entropy recorded for position {t}"))
        })?;
        best = Some(match best {
            Some(b) if b >= h => b,
            _ => h,
        });
    }
    Ok(best)
}

/// The confidence term: `alpha * exp(-h_max)` when correct,
/// `-beta * exp(-h_max)` when not, and 0 when there is nothing to score.
pub fn confidence_reward(answer_correct: bool, h_max: Option<f64>, config: &CcrlConfig) -> f64 {
    match h_max {
        None => 0.0,
        Some(h) => {
            let score = (-h).exp();
            if answer_correct {
                config.alpha * score
            } else {
                -config.beta * score
            }
        }
    }
}

/// The outcome term: `r_plus` when correct, `r_minus` otherwise.
pub fn outcome_reward(answer_correct: bool, config: &CcrlConfig) -> f64 {
    if answer_correct {
        config.r_plus
    } else {
        config.r_minus
    }
}

/// Entropy bookkeeping for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSummary {
    /// Entropy at every computed position.
    pub per_position_entropy: BTreeMap<usize, f64>,
    /// Largest of those entropies, absent when no position is computed.
    pub h_max: Option<f64>,
    /// `exp(-h_max)`, in (0, 1] when present.
    pub confidence_score: Option<f64>,
}

/// One trajectory's scored reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub outcome: f64,
    pub confidence: f64,
    pub total: f64,
    pub answer_correct: bool,
}

/// The answer a trajectory asserts: the number token immediately after the
/// last `ANS` marker, falling back to the last number token anywhere, or
/// nothing when the sequence holds no number.
pub fn extract_answer(tokens: &[TokenId], vocab: &Vocabulary) -> Result<Option<i64>> {
    let ans = vocab.marker(Marker::Ans);
    let last_ans = tokens.iter().rposition(|&t| t == ans);
    if let Some(pos) = last_ans {
        if let Some(&next) = tokens.get(pos + 1) {
            if let TokenKind::Number(v) = vocab.kind(next)? {
                return Ok(Some(v));
            }
        }
    }
    for &token in tokens.iter().rev() {
        if let TokenKind::Number(v) = vocab.kind(token)? {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Summarize per-position entropies over the computed positions of a
/// trajectory. `dists` may be shorter than `tokens` only if no computed
/// position falls outside it; otherwise the trajectory is incomplete.
pub fn confidence_summary(
    tokens: &[TokenId],
    dists: &[Distribution],
    n_q: &NumberSet,
    vocab: &Vocabulary,
) -> Result<ConfidenceSummary> {
    let audit = classify_tokens(tokens, n_q, vocab)?;
    let mut per_position = BTreeMap::new();
    for &t in &audit.computed_indices {
        let dist = dists.get(t).ok_or_else(|| {
            CcrlError::IncompleteTrajectory(format!(
                "no distribution recorded at computed position {t}"
            ))
        })?;
        per_position.insert(t, position_entropy(dist));
    }
    let h_max = max_entropy(&per_position, &audit.computed_indices)?;
    Ok(ConfidenceSummary {
        per_position_entropy: per_position,
        h_max,
        confidence_score: h_max.map(|h| (-h).exp()),
    })
}

/// Score a full trajectory against a problem: extract the answer, audit
/// the numeric tokens, and combine the outcome and confidence terms.
pub fn total_reward(
    tokens: &[TokenId],
    dists: &[Distribution],
    problem: &Problem,
    vocab: &Vocabulary,
    config: &CcrlConfig,
) -> Result<RewardBreakdown> {
    let answer = extract_answer(tokens, vocab)?;
    let answer_correct = check_answer(problem, answer);
    let summary = confidence_summary(tokens, dists, &problem.number_set(), vocab)?;
    let outcome = outcome_reward(answer_correct, config);
    let confidence = confidence_reward(answer_correct, summary.h_max, config);
    Ok(RewardBreakdown {
        outcome,
        confidence,
        total: outcome + confidence,
        answer_correct,
    })
}
