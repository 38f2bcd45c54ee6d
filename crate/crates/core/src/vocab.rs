//! The shared token vocabulary.
//!
//! Every model in the lab emits tokens from one flat vocabulary: one token
//! per integer value in `[0, v_max]`, a small set of arithmetic operator
//! tokens, and control markers. Token ids are dense indices `0..len`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CcrlError, Result};

/// Index into a [`Vocabulary`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Arithmetic operators. `Dbl` doubles the accumulator; the others combine
/// the accumulator with the second operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Dbl,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Dbl];

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "ADD",
            Op::Sub => "SUB",
            Op::Mul => "MUL",
            Op::Dbl => "DBL",
        }
    }
}

/// Control markers: `Ans` announces the final answer, `Eos` ends a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Marker {
    Ans,
    Eos,
}

impl Marker {
    pub const ALL: [Marker; 2] = [Marker::Ans, Marker::Eos];

    pub fn name(self) -> &'static str {
        match self {
            Marker::Ans => "ANS",
            Marker::Eos => "EOS",
        }
    }
}

/// What a single token denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Number(i64),
    Op(Op),
    Marker(Marker),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(v) => write!(f, "{v}"),
            TokenKind::Op(op) => f.write_str(op.name()),
            TokenKind::Marker(m) => f.write_str(m.name()),
        }
    }
}

/// An ordered token table. Id `i` denotes `entries[i]`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<TokenKind>,
    v_max: i64,
    number_ids: BTreeMap<i64, TokenId>,
    op_ids: BTreeMap<Op, TokenId>,
    marker_ids: BTreeMap<Marker, TokenId>,
}

impl Vocabulary {
    /// The canonical layout: numbers `0..=v_max` (id equals value), then the
    /// four operators, then the two markers.
    pub fn standard(v_max: i64) -> Result<Self> {
        if v_max < 0 {
            return Err(CcrlError::InvalidInput(format!(
                "v_max must be nonnegative, got {v_max}"
            )));
        }
        let mut entries = Vec::with_capacity(v_max as usize + 7);
        for v in 0..=v_max {
            entries.push(TokenKind::Number(v));
        }
        for op in Op::ALL {
            entries.push(TokenKind::Op(op));
        }
        for m in Marker::ALL {
            entries.push(TokenKind::Marker(m));
        }
        Self::from_entries(entries)
    }

    /// Build from an explicit entry list, checking the vocabulary invariants:
    /// unique number values in `[0, max]`, and the required operator and
    /// marker sets present.
    pub fn from_entries(entries: Vec<TokenKind>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CcrlError::InvalidInput("empty vocabulary".into()));
        }
        let mut number_ids = BTreeMap::new();
        let mut op_ids = BTreeMap::new();
        let mut marker_ids = BTreeMap::new();
        let mut v_max = 0i64;
        for (i, kind) in entries.iter().enumerate() {
            let id = TokenId(i as u32);
            match *kind {
                TokenKind::Number(v) => {
                    if v < 0 {
                        return Err(CcrlError::InvalidInput(format!(
                            "negative number token {v}"
                        )));
                    }
                    if number_ids.insert(v, id).is_some() {
                        return Err(CcrlError::InvalidInput(format!(
                            "duplicate number token {v}"
                        )));
                    }
                    v_max = v_max.max(v);
                }
                TokenKind::Op(op) => {
                    if op_ids.insert(op, id).is_some() {
                        return Err(CcrlError::InvalidInput(format!(
                            "duplicate op token {}",
                            op.name()
                        )));
                    }
                }
                TokenKind::Marker(m) => {
                    if marker_ids.insert(m, id).is_some() {
                        return Err(CcrlError::InvalidInput(format!(
                            "duplicate marker token {}",
                            m.name()
                        )));
                    }
                }
            }
        }
        for op in Op::ALL {
            if !op_ids.contains_key(&op) {
                return Err(CcrlError::InvalidInput(format!(
                    "missing op token {}",
                    op.name()
                )));
            }
        }
        for m in Marker::ALL {
            if !marker_ids.contains_key(&m) {
                return Err(CcrlError::InvalidInput(format!(
                    "missing marker token {}",
                    m.name()
                )));
            }
        }
        Ok(Self {
            entries,
            v_max,
            number_ids,
            op_ids,
            marker_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest representable number value.
    pub fn v_max(&self) -> i64 {
        self.v_max
    }

    pub fn kind(&self, id: TokenId) -> Result<TokenKind> {
        self.entries
            .get(id.index())
            .copied()
            .ok_or_else(|| CcrlError::InvalidInput(format!("token id {} outside vocabulary", id.0)))
    }

    /// Id of the token for an exact integer value, if representable.
    pub fn number(&self, value: i64) -> Option<TokenId> {
        self.number_ids.get(&value).copied()
    }

    pub fn op(&self, op: Op) -> TokenId {
        self.op_ids[&op]
    }

    pub fn marker(&self, m: Marker) -> TokenId {
        self.marker_ids[&m]
    }

    /// Human-readable token name ("48", "ADD", "EOS").
    pub fn name(&self, id: TokenId) -> Result<String> {
        Ok(self.kind(id)?.to_string())
    }

    /// Parse a token name produced by [`Vocabulary::name`].
    pub fn parse_name(&self, name: &str) -> Result<TokenId> {
        for op in Op::ALL {
            if name == op.name() {
                return Ok(self.op(op));
            }
        }
        for m in Marker::ALL {
            if name == m.name() {
                return Ok(self.marker(m));
            }
        }
        let value: i64 = name
            .parse()
            .map_err(|_| CcrlError::InvalidInput(format!("unknown token name {name:?}")))?;
        self.number(value)
            .ok_or_else(|| CcrlError::InvalidInput(format!("number {value} not in vocabulary")))
    }

    /// Render a token sequence as names.
    pub fn names(&self, tokens: &[TokenId]) -> Result<Vec<String>> {
        tokens.iter().map(|&t| self.name(t)).collect()
    }

    /// Parse a sequence of token names.
    pub fn parse_names(&self, names: &[String]) -> Result<Vec<TokenId>> {
        names.iter().map(|n| self.parse_name(n)).collect()
    }

    /// SHA-256 over the canonical entry list, hex encoded. Checkpoints and
    /// manifests embed this to detect vocabulary mismatches.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for kind in &self.entries {
            hasher.update(kind.to_string().as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_is_dense_and_complete() {
        let v = Vocabulary::standard(10).unwrap();
        assert_eq!(v.len(), 11 + 4 + 2);
        assert_eq!(v.number(7), Some(TokenId(7)));
        assert_eq!(v.kind(TokenId(7)).unwrap(), TokenKind::Number(7));
        assert_eq!(v.kind(v.op(Op::Dbl)).unwrap(), TokenKind::Op(Op::Dbl));
        assert_eq!(v.kind(v.marker(Marker::Eos)).unwrap(), TokenKind::Marker(Marker::Eos));
    }

    #[test]
    fn duplicate_numbers_rejected() {
        let mut entries: Vec<TokenKind> = (0..=3).map(TokenKind::Number).collect();
        entries.push(TokenKind::Number(2));
        for op in Op::ALL {
            entries.push(TokenKind::Op(op));
        }
        for m in Marker::ALL {
            entries.push(TokenKind::Marker(m));
        }
        assert!(Vocabulary::from_entries(entries).is_err());
    }

    #[test]
    fn missing_required_ops_rejected() {
        let mut entries: Vec<TokenKind> = (0..=3).map(TokenKind::Number).collect();
        entries.push(TokenKind::Op(Op::Add));
        for m in Marker::ALL {
            entries.push(TokenKind::Marker(m));
        }
        assert!(Vocabulary::from_entries(entries).is_err());
    }

    #[test]
    fn token_id_out_of_range_is_error() {
        let v = Vocabulary::standard(4).unwrap();
        assert!(v.kind(TokenId(999)).is_err());
    }

    #[test]
    fn name_round_trip() {
        let v = Vocabulary::standard(20).unwrap();
        for id in [v.number(13).unwrap(), v.op(Op::Sub), v.marker(Marker::Ans)] {
            let name = v.name(id).unwrap();
            assert_eq!(v.parse_name(&name).unwrap(), id);
        }
        assert!(v.parse_name("HALT").is_err());
        assert!(v.parse_name("21").is_err());
    }

    #[test]
    fn hash_changes_with_layout() {
        let a = Vocabulary::standard(10).unwrap();
        let b = Vocabulary::standard(11).unwrap();
        assert_eq!(a.hash(), Vocabulary::standard(10).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
