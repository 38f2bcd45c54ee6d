//! Synthetic multi-step arithmetic problems.
//!
//! A template is a short operator program over two operands plus a
//! statement pattern. Replaying the program yields the ground-truth
//! intermediate values and final answer; the statement text exists to
//! define which numbers count as "given" (some templates deliberately
//! mention only one operand, so the other is computed-by-definition).
//!
//! Each problem carries two gold trajectories: the *full* trace
//! interleaving operator tokens with the values they produce, and the
//! *meta* trace holding only the operator skeleton with no numbers.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audit::NumberSet;
use crate::error::{CcrlError, Result};
use crate::vocab::{Marker, Op, TokenId, Vocabulary};

/// How many operands the statement pattern names explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mentions {
    Both,
    FirstOnly,
    None,
}

/// A problem schema: operator program, statement pattern, and the
/// admissibility rule for operand draws.
#[derive(Clone)]
pub struct Template {
    pub id: u32,
    pub ops: Vec<Op>,
    pub statement_pattern: String,
    pub mentions: Mentions,
    /// Extra operand constraint beyond value-range admissibility.
    pub constraint: fn(i64, i64) -> bool,
}

impl std::fmt::Debug for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Template")
            .field("id", &self.id)
            .field("ops", &self.ops)
            .field("statement_pattern", &self.statement_pattern)
            .finish()
    }
}

fn no_constraint(_: i64, _: i64) -> bool {
    true
}

impl Template {
    pub fn new(id: u32, ops: Vec<Op>, statement_pattern: &str, mentions: Mentions) -> Self {
        Self {
            id,
            ops,
            statement_pattern: statement_pattern.to_string(),
            mentions,
            constraint: no_constraint,
        }
    }

    /// Replay the operator program: the accumulator starts at `a`, each
    /// binary operator combines it with `b`, and `DBL` doubles it. Returns
    /// one value per operator.
    pub fn values(&self, a: i64, b: i64) -> Vec<i64> {
        let mut acc = a;
        let mut out = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            acc = match op {
                Op::Add => acc + b,
                Op::Sub => acc - b,
                Op::Mul => acc * b,
                Op::Dbl => 2 * acc,
            };
            out.push(acc);
        }
        out
    }

    pub fn answer(&self, a: i64, b: i64) -> i64 {
        *self.values(a, b).last().expect("templates have >= 1 op")
    }

    /// An operand pair is admissible when the template constraint holds and
    /// every produced value stays a positive in-vocabulary number.
    pub fn admissible(&self, a: i64, b: i64, v_max: i64) -> bool {
        (self.constraint)(a, b) && self.values(a, b).iter().all(|&v| v >= 1 && v <= v_max)
    }

    pub fn render_statement(&self, a: i64, b: i64) -> String {
        self.statement_pattern
            .replace("{a}", &a.to_string())
            .replace("{b}", &b.to_string())
    }
}

/// One generated problem instance with its ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: u32,
    pub template_id: u32,
    pub a: i64,
    pub b: i64,
    pub statement: String,
    pub statement_numbers: Vec<i64>,
    pub gold_intermediates: Vec<i64>,
    pub gold_answer: i64,
    pub gold_full_tokens: Vec<TokenId>,
    pub gold_meta_tokens: Vec<TokenId>,
}

impl Problem {
    pub fn number_set(&self) -> NumberSet {
        NumberSet::new(self.statement_numbers.iter().copied())
    }
}

fn template_3_constraint(a: i64, b: i64) -> bool {
    a - b == 2 && b != 2
}

/// The default ten-template environment. Values stay within `v_max = 400`
/// for operands in `[2, 9]`. Template 3 pins `a - b = 2` so every draw
/// contains the doubling constant as a computed intermediate, and
/// template 7 names only its first operand.
pub fn default_templates() -> Vec<Template> {
    let mut t3 = Template::new(
        3,
        vec![Op::Sub, Op::Dbl],
        "Rae bakes {a} rolls, sells {b} of them, and then doubles what remains.",
        Mentions::Both,
    );
    t3.constraint = template_3_constraint;
    vec![
        Template::new(
            0,
            vec![Op::Add, Op::Dbl],
            "Maya has {a} marbles, wins {b} more, and then doubles her collection.",
            Mentions::Both,
        ),
        Template::new(
            1,
            vec![Op::Mul, Op::Add],
            "Lia plants {a} rows with {b} seeds in each row, then plants {b} extra seeds.",
            Mentions::Both,
        ),
        Template::new(
            2,
            vec![Op::Add, Op::Mul],
            "Ben saves {a} coins, finds {b} more, and a machine multiplies his total by {b}.",
            Mentions::Both,
        ),
        t3,
        Template::new(
            4,
            vec![Op::Mul, Op::Dbl],
            "A box holds {a} crayons; Kim buys {b} boxes and then doubles her pile.",
            Mentions::Both,
        ),
        Template::new(
            5,
            vec![Op::Dbl, Op::Add],
            "Sam's {a} stickers double overnight, and {b} more arrive by mail.",
            Mentions::Both,
        ),
        Template::new(
            6,
            vec![Op::Dbl, Op::Sub, Op::Mul, Op::Add],
            "Noor's {a} tomato plants double; {b} wilt, each survivor yields {b} tomatoes, and {b} more arrive.",
            Mentions::Both,
        ),
        Template::new(
            7,
            vec![Op::Add, Op::Dbl],
            "Tara picks {a} flowers; her sister picks some too, and together they double their bunch.",
            Mentions::FirstOnly,
        ),
        Template::new(
            8,
            vec![Op::Mul, Op::Sub],
            "A sheet has {a} stickers in each of {b} strips; {b} stickers tear off.",
            Mentions::Both,
        ),
        Template::new(
            9,
            vec![Op::Add, Op::Mul, Op::Dbl],
            "Avi scores {a} points, earns {b} bonus points, a combo multiplies his total by {b}, and a star doubles it.",
            Mentions::Both,
        ),
    ]
}

/// Default number-token ceiling.
pub const DEFAULT_V_MAX: i64 = 400;
/// Default operand range.
pub const DEFAULT_OPERAND_RANGE: (i64, i64) = (2, 9);
/// Default training-set size: templates cycle, two draws each. Small
/// enough that tabular reinforcement learning converges in minutes.
pub const DEFAULT_PROBLEM_COUNT: u32 = 20;

fn build_problem(id: u32, template: &Template, a: i64, b: i64, vocab: &Vocabulary) -> Result<Problem> {
    let values = template.values(a, b);
    let (answer, intermediates) = values.split_last().expect("nonempty values");
    let statement = template.render_statement(a, b);
    let statement_numbers: Vec<i64> = NumberSet::from_text(&statement).iter().collect();

    let number_token = |v: i64| {
        vocab.number(v).ok_or_else(|| {
            CcrlError::Generation(format!(
                "template {} value {v} exceeds vocabulary ceiling {}",
                template.id,
                vocab.v_max()
            ))
        })
    };
    let mut full = Vec::with_capacity(2 * values.len() + 3);
    for (op, &v) in template.ops.iter().zip(&values) {
        full.push(vocab.op(*op));
        full.push(number_token(v)?);
    }
    full.push(vocab.marker(Marker::Ans));
    full.push(number_token(*answer)?);
    full.push(vocab.marker(Marker::Eos));

    let mut meta: Vec<TokenId> = template.ops.iter().map(|&op| vocab.op(op)).collect();
    meta.push(vocab.marker(Marker::Ans));
    meta.push(vocab.marker(Marker::Eos));

    Ok(Problem {
        id,
        template_id: template.id,
        a,
        b,
        statement,
        statement_numbers,
        gold_intermediates: intermediates.to_vec(),
        gold_answer: *answer,
        gold_full_tokens: full,
        gold_meta_tokens: meta,
    })
}

/// Deterministically generate `count` problems, cycling through the
/// templates. Operand pairs are drawn uniformly from each template's
/// enumerated admissible set; a template with no admissible pair in the
/// given range is a generation error naming the template.
pub fn generate_problems<R: Rng + ?Sized>(
    templates: &[Template],
    operand_range: (i64, i64),
    count: u32,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<Problem>> {
    if templates.is_empty() {
        return Err(CcrlError::InvalidInput("no templates".into()));
    }
    if count == 0 {
        return Err(CcrlError::InvalidInput("count must be >= 1".into()));
    }
    let (lo, hi) = operand_range;
    if lo > hi {
        return Err(CcrlError::InvalidInput(format!(
            "empty operand range [{lo}, {hi}]"
        )));
    }
    let mut admissible: Vec<Vec<(i64, i64)>> = Vec::with_capacity(templates.len());
    for template in templates {
        let mut pairs = Vec::new();
        for a in lo..=hi {
            for b in lo..=hi {
                if template.admissible(a, b, vocab.v_max()) {
                    pairs.push((a, b));
                }
            }
        }
        if pairs.is_empty() {
            return Err(CcrlError::Generation(format!(
                "template {} has no admissible operands in [{lo}, {hi}] with v_max {}",
                template.id,
                vocab.v_max()
            )));
        }
        admissible.push(pairs);
    }
    let mut problems = Vec::with_capacity(count as usize);
    for i in 0..count {
        let slot = (i as usize) % templates.len();
        let pairs = &admissible[slot];
        let (a, b) = pairs[rng.random_range(0..pairs.len())];
        problems.push(build_problem(i, &templates[slot], a, b, vocab)?);
    }
    Ok(problems)
}

/// Exact-match answer check; a missing answer is wrong.
pub fn check_answer(problem: &Problem, answer: Option<i64>) -> bool {
    answer == Some(problem.gold_answer)
}

// --- Problem-set file format (JSONL, token names) ----------------------

#[derive(Debug, Serialize, Deserialize)]
struct ProblemRecord {
    id: u32,
    template_id: u32,
    a: i64,
    b: i64,
    statement: String,
    statement_numbers: Vec<i64>,
    gold_intermediates: Vec<i64>,
    gold_answer: i64,
    gold_full_tokens: Vec<String>,
    gold_meta_tokens: Vec<String>,
}

pub fn write_problems(problems: &[Problem], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for p in problems {
        let record = ProblemRecord {
            id: p.id,
            template_id: p.template_id,
            a: p.a,
            b: p.b,
            statement: p.statement.clone(),
            statement_numbers: p.statement_numbers.clone(),
            gold_intermediates: p.gold_intermediates.clone(),
            gold_answer: p.gold_answer,
            gold_full_tokens: vocab.names(&p.gold_full_tokens)?,
            gold_meta_tokens: vocab.names(&p.gold_meta_tokens)?,
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_problems(path: &Path, vocab: &Vocabulary) -> Result<Vec<Problem>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut problems = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord = serde_json::from_str(&line).map_err(|e| {
            CcrlError::InvalidInput(format!("problem file line {}: {e}", line_no + 1))
        })?;
        problems.push(Problem {
            id: record.id,
            template_id: record.template_id,
            a: record.a,
            b: record.b,
            statement: record.statement,
            statement_numbers: record.statement_numbers,
            gold_intermediates: record.gold_intermediates,
            gold_answer: record.gold_answer,
            gold_full_tokens: vocab.parse_names(&record.gold_full_tokens)?,
            gold_meta_tokens: vocab.parse_names(&record.gold_meta_tokens)?,
        });
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::classify_tokens;
    use crate::rng::rng_stream;
    use crate::vocab::TokenKind;

    fn vocab() -> Vocabulary {
        Vocabulary::standard(DEFAULT_V_MAX).unwrap()
    }

    #[test]
    fn add_then_double_ground_truth() {
        let v = vocab();
        let t = &default_templates()[0];
        let p = build_problem(0, t, 3, 4, &v).unwrap();
        assert_eq!(p.gold_intermediates, vec![7]);
        assert_eq!(p.gold_answer, 14);
        let names = v.names(&p.gold_full_tokens).unwrap();
        assert_eq!(names, ["ADD", "7", "DBL", "14", "ANS", "14", "EOS"]);
        let meta = v.names(&p.gold_meta_tokens).unwrap();
        assert_eq!(meta, ["ADD", "DBL", "ANS", "EOS"]);
        assert_eq!(p.statement_numbers, vec![3, 4]);
    }

    #[test]
    fn generation_is_deterministic() {
        let v = vocab();
        let templates = default_templates();
        let a = generate_problems(&templates, (2, 9), 30, &v, &mut rng_stream(7, "gen")).unwrap();
        let b = generate_problems(&templates, (2, 9), 30, &v, &mut rng_stream(7, "gen")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overflowing_range_is_an_error() {
        let v = vocab();
        let templates = default_templates();
        let err = generate_problems(&templates, (90, 99), 10, &v, &mut rng_stream(7, "gen"));
        assert!(matches!(err, Err(CcrlError::Generation(_))));
    }

    #[test]
    fn replay_reproduces_ground_truth() {
        let v = vocab();
        let templates = default_templates();
        let problems =
            generate_problems(&templates, (2, 9), 60, &v, &mut rng_stream(3, "gen")).unwrap();
        for p in &problems {
            let t = &templates[p.template_id as usize];
            let values = t.values(p.a, p.b);
            let (ans, inter) = values.split_last().unwrap();
            assert_eq!(p.gold_intermediates, inter);
            assert_eq!(p.gold_answer, *ans);
        }
    }

    #[test]
    fn meta_trajectories_have_no_numbers() {
        let v = vocab();
        let problems = generate_problems(&default_templates(), (2, 9), 40, &v, &mut rng_stream(5, "gen"))
            .unwrap();
        for p in &problems {
            for &tok in &p.gold_meta_tokens {
                assert!(!matches!(v.kind(tok).unwrap(), TokenKind::Number(_)));
            }
            let audit = classify_tokens(&p.gold_meta_tokens, &p.number_set(), &v).unwrap();
            assert!(audit.computed_indices.is_empty());
        }
    }

    #[test]
    fn default_set_covers_operator_constant_case() {
        // At least one problem's gold trace contains a computed number equal
        // to the doubling constant 2 while 2 is absent from its statement.
        let v = vocab();
        let problems = generate_problems(
            &default_templates(),
            DEFAULT_OPERAND_RANGE,
            DEFAULT_PROBLEM_COUNT,
            &v,
            &mut rng_stream(7, "gen"),
        )
        .unwrap();
        let covered = problems.iter().any(|p| {
            let audit = classify_tokens(&p.gold_full_tokens, &p.number_set(), &v).unwrap();
            audit.computed_indices.iter().any(|&t| {
                matches!(v.kind(p.gold_full_tokens[t]).unwrap(), TokenKind::Number(2))
            }) && !p.number_set().contains(2)
        });
        assert!(covered);
    }

    #[test]
    fn single_mention_template_hides_second_operand() {
        let v = vocab();
        let t = &default_templates()[7];
        let p = build_problem(0, t, 5, 4, &v).unwrap();
        assert_eq!(p.statement_numbers, vec![5]);
    }

    #[test]
    fn check_answer_exact_match() {
        let v = vocab();
        let p = build_problem(0, &default_templates()[0], 3, 4, &v).unwrap();
        assert!(check_answer(&p, Some(14)));
        assert!(!check_answer(&p, Some(13)));
        assert!(!check_answer(&p, None));
    }

    #[test]
    fn problem_file_round_trip() {
        let v = vocab();
        let problems =
            generate_problems(&default_templates(), (2, 9), 20, &v, &mut rng_stream(9, "gen"))
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("problems.jsonl");
        write_problems(&problems, &v, &path).unwrap();
        let back = read_problems(&path, &v).unwrap();
        assert_eq!(problems, back);
    }
}
