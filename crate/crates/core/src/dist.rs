//! Probability distributions over the vocabulary.

use rand::Rng;

use crate::error::{CcrlError, Result};

/// Tolerance on the probability-mass sum when validating a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A validated probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates nonnegativity and unit mass (within [`SUM_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CcrlError::InvalidInput("empty distribution".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(CcrlError::InvalidInput(format!(
                    "distribution entry {p} is not a finite nonnegative probability"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CcrlError::InvalidInput(format!(
                "distribution mass {sum} not within {SUM_TOLERANCE} of 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample. Consumes exactly one `f64` draw from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave acc marginally below 1; charge the tail.
        self.probs.len() - 1
    }

    /// Natural log of the probability at `index`.
    pub fn log_prob(&self, index: usize) -> f64 {
        self.probs[index].ln()
    }
}

/// Numerically stable softmax: shifts by the maximum logit before
/// exponentiating, which preserves the argmax and the exact ratios.
pub fn softmax(logits: &[f64]) -> Result<Distribution> {
    if logits.is_empty() {
        return Err(CcrlError::InvalidInput("softmax of empty logits".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if !l.is_finite() {
            return Err(CcrlError::InvalidInput(format!("non-finite logit {l}")));
        }
        if l > max {
            max = l;
        }
    }
    let mut exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    Ok(Distribution { probs: exps })
}
