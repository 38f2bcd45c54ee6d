//! Numeric-token audit.
//!
//! Splits the number tokens of a trajectory into *extracted* tokens (the
//! value appears in the problem statement) and *computed* tokens (it does
//! not). Membership is decided purely by value: an occurrence is computed
//! exactly when its value is absent from the statement number set, even if
//! it arose as an operator constant rather than an arithmetic result.
//! Operator and marker tokens belong to neither class.
//!
//! A general-text mode applies the same split to whitespace-tokenized LLM
//! output: thousands separators are stripped, values compare as canonical
//! decimals, and consecutive numeric fragments form one number span.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vocab::{TokenId, TokenKind, Vocabulary};

/// The set of numbers appearing in a problem statement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberSet {
    values: BTreeSet<i64>,
}

impl NumberSet {
    pub fn new(values: impl IntoIterator<Item = i64>) -> Self {
        Self {
            values: values.into_iter().collect(),
        }
    }

    /// Collect every decimal integer literal in `text`. Values compare
    /// numerically, so `048` and `48` coincide.
    pub fn from_text(text: &str) -> Self {
        let mut values = BTreeSet::new();
        let mut digits = String::new();
        for ch in text.chars().chain(std::iter::once(' ')) {
            if ch.is_ascii_digit() {
                digits.push(ch);
            } else if !digits.is_empty() {
                if let Ok(v) = digits.parse::<i64>() {
                    values.insert(v);
                }
                digits.clear();
            }
        }
        Self { values }
    }

    pub fn contains(&self, value: i64) -> bool {
        self.values.contains(&value)
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.values.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-position classification tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionTag {
    Extracted,
    Computed,
    Other,
}

/// Output of [`classify_tokens`]: the ordered index sets and one tag per
/// position. Extracted and computed indices never overlap, and every
/// number-kind token lands in exactly one of the two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditResult {
    pub extracted_indices: Vec<usize>,
    pub computed_indices: Vec<usize>,
    pub tags: Vec<PositionTag>,
}

/// Classify each trajectory token against the statement number set.
pub fn classify_tokens(
    tokens: &[TokenId],
    n_q: &NumberSet,
    vocab: &Vocabulary,
) -> Result<AuditResult> {
    let mut extracted = Vec::new();
    let mut computed = Vec::new();
    let mut tags = Vec::with_capacity(tokens.len());
    for (t, &token) in tokens.iter().enumerate() {
        let tag = match vocab.kind(token)? {
            TokenKind::Number(v) => {
                if n_q.contains(v) {
                    extracted.push(t);
                    PositionTag::Extracted
                } else {
                    computed.push(t);
                    PositionTag::Computed
                }
            }
            TokenKind::Op(_) | TokenKind::Marker(_) => PositionTag::Other,
        };
        tags.push(tag);
    }
    Ok(AuditResult {
        extracted_indices: extracted,
        computed_indices: computed,
        tags,
    })
}

// --- General-text mode -------------------------------------------------

/// A contiguous run of numeric fragments in a token stream, carrying its
/// canonical value and the positions it spans.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberSpan {
    pub positions: Vec<usize>,
    pub value: f64,
    pub computed: bool,
}

fn is_numeric_fragment(token: &str) -> bool {
    !token.is_empty()
        && token.chars().any(|c| c.is_ascii_digit())
        && token.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

/// Separator tokens that may join two numeric fragments ("3" "." "5").
fn is_connector(token: &str) -> bool {
    token == "." || token == ","
}

/// Parse one canonical decimal value from a fragment run: thousands
/// separators are stripped, a trailing period is treated as punctuation.
fn parse_canonical(text: &str) -> Option<f64> {
    let stripped: String = text.chars().filter(|&c| c != ',').collect();
    let trimmed = stripped.trim_end_matches('.');
    if trimmed.is_empty() {
        return None;
    }
    trimmed.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Canonical values of every number literal in free text.
pub fn text_number_values(text: &str) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    let mut run = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_ascii_digit() || ((ch == ',' || ch == '.') && !run.is_empty()) {
            run.push(ch);
        } else if !run.is_empty() {
            if let Some(v) = parse_canonical(&run) {
                out.insert(v.to_bits());
            }
            run.clear();
        }
    }
    out
}

/// Group whitespace tokens into number spans and classify each span
/// against the canonical values found in `problem_text`. Adjacent numeric
/// fragments (as real tokenizers produce for `3`, `.`, `5`) merge into a
/// single span whose value is the parse of their concatenation.
pub fn classify_text_tokens(tokens: &[String], problem_text: &str) -> Vec<NumberSpan> {
    let statement = text_number_values(problem_text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_numeric_fragment(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut text = tokens[i].clone();
        i += 1;
        loop {
            if i < tokens.len() && is_numeric_fragment(&tokens[i]) {
                text.push_str(&tokens[i]);
                i += 1;
            } else if i + 1 < tokens.len()
                && is_connector(&tokens[i])
                && is_numeric_fragment(&tokens[i + 1])
            {
                text.push_str(&tokens[i]);
                text.push_str(&tokens[i + 1]);
                i += 2;
            } else {
                break;
            }
        }
        if let Some(value) = parse_canonical(&text) {
            spans.push(NumberSpan {
                positions: (start..i).collect(),
                value,
                computed: !statement.contains(&value.to_bits()),
            });
        }
    }
    spans
}
