//! The tabular-contextual policy.
//!
//! The actor conditions on a [`ContextKey`] — problem identity plus step
//! index — and holds one logit vector per visited key; the critic holds
//! one scalar per key. Unvisited keys read as all-zero logits (a uniform
//! distribution) and zero value, so a fresh policy behaves uniformly at
//! random. A frozen copy of the actor table serves as the reference model
//! for KL regularization during reinforcement learning.
//!
//! Everything is differentiable by hand: the log-softmax derivative gives
//! `p - onehot(target)` per visited key, and both the supervised objective
//! and the policy-gradient surrogate reduce to per-token coefficients on
//! that form.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{softmax, Distribution};
use crate::env::Problem;
use crate::error::{CcrlError, Result};
use crate::vocab::{Marker, TokenId, Vocabulary};

/// Conditioning context: which problem we are solving and how many tokens
/// have been emitted so far. The key space is finite:
/// `|templates| * |operand pairs| * max_len`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ContextKey {
    pub template_id: u32,
    pub a: i64,
    pub b: i64,
    pub t: u32,
}

impl ContextKey {
    pub fn for_problem(problem: &Problem, t: u32) -> Self {
        Self {
            template_id: problem.template_id,
            a: problem.a,
            b: problem.b,
            t,
        }
    }
}

/// Sparse gradient: one vector per touched context key.
pub type GradientMap = BTreeMap<ContextKey, Vec<f64>>;

/// Actor logits, critic values, and the frozen reference table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    vocab_hash: String,
    vocab_len: usize,
    pub theta: BTreeMap<ContextKey, Vec<f64>>,
    pub phi: BTreeMap<ContextKey, f64>,
    pub reference_theta: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyState {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self {
            vocab_hash: vocab.hash(),
            vocab_len: vocab.len(),
            theta: BTreeMap::new(),
            phi: BTreeMap::new(),
            reference_theta: BTreeMap::new(),
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Snapshot the current actor table as the frozen reference.
    pub fn freeze_reference(&mut self) {
        self.reference_theta = self.theta.clone();
    }

    pub fn logits(&self, key: &ContextKey) -> Vec<f64> {
        self.theta
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab_len])
    }

    fn reference_logits(&self, key: &ContextKey) -> Vec<f64> {
        self.reference_theta
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab_len])
    }

    /// Critic estimate for a context; unvisited keys read zero.
    pub fn value(&self, key: &ContextKey) -> f64 {
        self.phi.get(key).copied().unwrap_or(0.0)
    }

    /// Mean absolute actor logit, the quantity watched by the divergence
    /// guard. Zero for an empty table.
    pub fn mean_abs_logit(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for logits in self.theta.values() {
            for &l in logits {
                sum += l.abs();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Exact KL divergence between actor and reference at one key.
    pub fn kl_to_reference(&self, key: &ContextKey) -> f64 {
        let p = action_distribution(self, key);
        let q = softmax(&self.reference_logits(key)).expect("finite reference logits");
        p.probs()
            .iter()
            .zip(q.probs())
            .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
            .sum()
    }
}

/// Actor distribution at a context; uniform for unvisited keys.
pub fn action_distribution(state: &PolicyState, key: &ContextKey) -> Distribution {
    softmax(&state.logits(key)).expect("finite actor logits")
}

/// Reference distribution at a context.
pub fn reference_distribution(state: &PolicyState, key: &ContextKey) -> Distribution {
    softmax(&state.reference_logits(key)).expect("finite reference logits")
}

/// Everything recorded while producing one token sequence: the per-step
/// actor distribution, the chosen token's log-probability under actor and
/// reference, and the critic value at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<TokenId>,
    pub keys: Vec<ContextKey>,
    pub dists: Vec<Distribution>,
    pub logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub ended_with_eos: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn run_policy<F>(
    state: &PolicyState,
    problem: &Problem,
    vocab: &Vocabulary,
    max_len: u32,
    mut select: F,
) -> Trajectory
where
    F: FnMut(&Distribution) -> usize,
{
    let eos = vocab.marker(Marker::Eos);
    let mut out = Trajectory {
        tokens: Vec::new(),
        keys: Vec::new(),
        dists: Vec::new(),
        logprobs: Vec::new(),
        ref_logprobs: Vec::new(),
        values: Vec::new(),
        ended_with_eos: false,
    };
    for t in 0..max_len {
        let key = ContextKey::for_problem(problem, t);
        let dist = action_distribution(state, &key);
        let index = select(&dist);
        let token = TokenId(index as u32);
        let ref_dist = reference_distribution(state, &key);
        out.keys.push(key);
        out.logprobs.push(dist.log_prob(index));
        out.ref_logprobs.push(ref_dist.log_prob(index));
        out.values.push(state.value(&key));
        out.dists.push(dist);
        out.tokens.push(token);
        if token == eos {
            out.ended_with_eos = true;
            break;
        }
    }
    out
}

/// Sample autoregressively until `EOS` or `max_len`. Hitting `max_len`
/// without `EOS` simply truncates; answer extraction still applies.
pub fn sample_trajectory<R: Rng + ?Sized>(
    state: &PolicyState,
    problem: &Problem,
    vocab: &Vocabulary,
    rng: &mut R,
    max_len: u32,
) -> Trajectory {
    run_policy(state, problem, vocab, max_len, |dist| dist.sample(rng))
}

/// Greedy decode with full bookkeeping; ties break to the lowest token id.
pub fn greedy_trajectory(
    state: &PolicyState,
    problem: &Problem,
    vocab: &Vocabulary,
    max_len: u32,
) -> Trajectory {
    run_policy(state, problem, vocab, max_len, |dist| dist.argmax())
}

/// Greedy decode, tokens only.
pub fn greedy_decode(
    state: &PolicyState,
    problem: &Problem,
    vocab: &Vocabulary,
    max_len: u32,
) -> Vec<TokenId> {
    greedy_trajectory(state, problem, vocab, max_len).tokens
}

fn check_tokens_in_vocab(state: &PolicyState, tokens: &[TokenId]) -> Result<()> {
    for &tok in tokens {
        if tok.index() >= state.vocab_len {
            return Err(CcrlError::InvalidInput(format!(
                "token id {} outside vocabulary of size {}",
                tok.0, state.vocab_len
            )));
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of the target sequences: for each example
/// the per-token NLLs are summed, then averaged across the dataset.
pub fn comt_nll(state: &PolicyState, dataset: &[(&Problem, &[TokenId])]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(CcrlError::InvalidInput("empty dataset".into()));
    }
    let mut total = 0.0;
    for (problem, tokens) in dataset {
        check_tokens_in_vocab(state, tokens)?;
        for (t, &tok) in tokens.iter().enumerate() {
            let key = ContextKey::for_problem(problem, t as u32);
            let dist = action_distribution(state, &key);
            total -= dist.log_prob(tok.index());
        }
    }
    Ok(total / dataset.len() as f64)
}

/// Gradient of one example's summed NLL with respect to the actor logits:
/// `p - onehot(target)` at every visited key.
pub fn logit_gradient_nll(
    state: &PolicyState,
    problem: &Problem,
    tokens: &[TokenId],
) -> Result<GradientMap> {
    check_tokens_in_vocab(state, tokens)?;
    let mut grad = GradientMap::new();
    for (t, &tok) in tokens.iter().enumerate() {
        let key = ContextKey::for_problem(problem, t as u32);
        let dist = action_distribution(state, &key);
        let entry = grad.entry(key).or_insert_with(|| vec![0.0; state.vocab_len]);
        for (g, &p) in entry.iter_mut().zip(dist.probs()) {
            *g += p;
        }
        entry[tok.index()] -= 1.0;
    }
    Ok(grad)
}

/// Weighted policy-gradient form: at each visited key the contribution is
/// `coeff[t] * (p - onehot(y_t))`, with `p` taken from the *current* actor.
/// Vanilla policy gradient uses the advantage as the coefficient; the PPO
/// surrogate supplies its clipped-ratio weight.
pub fn logit_gradient_pg(
    state: &PolicyState,
    trajectory: &Trajectory,
    coefficients: &[f64],
) -> Result<GradientMap> {
    if coefficients.len() != trajectory.len() {
        return Err(CcrlError::InvalidInput(format!(
            "{} coefficients for {} tokens",
            coefficients.len(),
            trajectory.len()
        )));
    }
    check_tokens_in_vocab(state, &trajectory.tokens)?;
    let mut grad = GradientMap::new();
    for (t, (&tok, key)) in trajectory.tokens.iter().zip(&trajectory.keys).enumerate() {
        let coeff = coefficients[t];
        if coeff == 0.0 {
            continue;
        }
        let dist = action_distribution(state, key);
        let entry = grad
            .entry(*key)
            .or_insert_with(|| vec![0.0; state.vocab_len]);
        for (g, &p) in entry.iter_mut().zip(dist.probs()) {
            *g += coeff * p;
        }
        entry[tok.index()] -= coeff;
    }
    Ok(grad)
}

/// Global L2 norm of a gradient map.
pub fn gradient_norm(grad: &GradientMap) -> f64 {
    grad.values()
        .flat_map(|v| v.iter())
        .map(|&g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scale the gradient down to `max_norm` when it exceeds it.
pub fn clip_gradient(grad: &mut GradientMap, max_norm: f64) -> f64 {
    let norm = gradient_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for v in grad.values_mut() {
            for g in v.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// Gradient-descent step on the actor logits.
pub fn apply_actor_gradient(state: &mut PolicyState, grad: &GradientMap, lr: f64) {
    if lr == 0.0 {
        return;
    }
    let vocab_len = state.vocab_len;
    for (key, g) in grad {
        let logits = state
            .theta
            .entry(*key)
            .or_insert_with(|| vec![0.0; vocab_len]);
        for (l, &gi) in logits.iter_mut().zip(g) {
            *l -= lr * gi;
        }
    }
}

/// Full-batch gradient descent on the supervised objective. Returns the
/// NLL before any step followed by the NLL after each step.
pub fn train_sft(
    state: &mut PolicyState,
    dataset: &[(&Problem, &[TokenId])],
    steps: u32,
    lr: f64,
    grad_clip_norm: f64,
) -> Result<Vec<f64>> {
    let mut trace = vec![comt_nll(state, dataset)?];
    for _ in 0..steps {
        let mut grad = GradientMap::new();
        for (problem, tokens) in dataset {
            let example = logit_gradient_nll(state, problem, tokens)?;
            for (key, g) in example {
                let entry = grad.entry(key).or_insert_with(|| vec![0.0; state.vocab_len]);
                for (acc, gi) in entry.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
        let scale = 1.0 / dataset.len() as f64;
        for v in grad.values_mut() {
            for g in v.iter_mut() {
                *g *= scale;
            }
        }
        clip_gradient(&mut grad, grad_clip_norm);
        apply_actor_gradient(state, &grad, lr);
        trace.push(comt_nll(state, dataset)?);
    }
    Ok(trace)
}

// --- Checkpoints --------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LogitEntry {
    key: ContextKey,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ValueEntry {
    key: ContextKey,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    vocab_hash: String,
    vocab_len: usize,
    theta: Vec<LogitEntry>,
    phi: Vec<ValueEntry>,
    reference_theta: Vec<LogitEntry>,
}

/// Serialize the full policy state. Entries are written in key order, so
/// identical states produce identical bytes.
pub fn save_checkpoint(state: &PolicyState, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        vocab_hash: state.vocab_hash.clone(),
        vocab_len: state.vocab_len,
        theta: state
            .theta
            .iter()
            .map(|(k, v)| LogitEntry { key: *k, logits: v.clone() })
            .collect(),
        phi: state
            .phi
            .iter()
            .map(|(k, v)| ValueEntry { key: *k, value: *v })
            .collect(),
        reference_theta: state
            .reference_theta
            .iter()
            .map(|(k, v)| LogitEntry { key: *k, logits: v.clone() })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a checkpoint, rejecting version or vocabulary-hash mismatches.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<PolicyState> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| CcrlError::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CcrlError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    if file.vocab_hash != vocab.hash() {
        return Err(CcrlError::Checkpoint(format!(
            "vocabulary hash mismatch: checkpoint {} vs current {}",
            file.vocab_hash,
            vocab.hash()
        )));
    }
    if file.vocab_len != vocab.len() {
        return Err(CcrlError::Checkpoint("vocabulary length mismatch".into()));
    }
    let mut state = PolicyState::new(vocab);
    for entry in file.theta {
        if entry.logits.len() != vocab.len() {
            return Err(CcrlError::Checkpoint("malformed logit vector".into()));
        }
        state.theta.insert(entry.key, entry.logits);
    }
    for entry in file.phi {
        state.phi.insert(entry.key, entry.value);
    }
    for entry in file.reference_theta {
        if entry.logits.len() != vocab.len() {
            return Err(CcrlError::Checkpoint("malformed reference vector".into()));
        }
        state.reference_theta.insert(entry.key, entry.logits);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{default_templates, generate_problems};
    use crate::rng::rng_stream;
    use crate::vocab::Op;

    fn small_vocab() -> Vocabulary {
        Vocabulary::standard(8).unwrap()
    }

    fn one_problem(vocab: &Vocabulary) -> Problem {
        generate_problems(&default_templates()[..1], (2, 4), 1, vocab, &mut rng_stream(1, "gen"))
            .unwrap()
            .remove(0)
    }

    #[test]
    fn fresh_state_is_uniform() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let key = ContextKey { template_id: 0, a: 2, b: 2, t: 0 };
        let d = action_distribution(&state, &key);
        for &p in d.probs() {
            assert!((p - 1.0 / v.len() as f64).abs() < 1e-15);
        }
        assert_eq!(state.value(&key), 0.0);
    }

    #[test]
    fn seeded_logits_give_exact_softmax() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let key = ContextKey { template_id: 0, a: 2, b: 2, t: 0 };
        // Only two effective choices; the rest carry negligible mass.
        let mut logits = vec![-1e9; v.len()];
        logits[0] = 1f64.ln();
        logits[1] = 3f64.ln();
        state.theta.insert(key, logits);
        let d = action_distribution(&state, &key);
        assert!((d.probs()[0] - 0.25).abs() < 1e-9);
        assert!((d.probs()[1] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn reference_matches_actor_after_freeze() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let key = ContextKey { template_id: 0, a: 3, b: 2, t: 1 };
        state.theta.insert(key, (0..v.len()).map(|i| i as f64 * 0.1).collect());
        state.freeze_reference();
        assert_eq!(
            action_distribution(&state, &key),
            reference_distribution(&state, &key)
        );
        assert!(state.kl_to_reference(&key).abs() < 1e-15);
        // An actor update breaks the identity.
        let mut grad = GradientMap::new();
        grad.insert(key, {
            let mut g = vec![0.0; v.len()];
            g[0] = 1.0;
            g
        });
        apply_actor_gradient(&mut state, &grad, 0.5);
        assert!(state.kl_to_reference(&key) > 0.0);
    }

    #[test]
    fn deterministic_sampling_replays() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let p = one_problem(&v);
        let a = sample_trajectory(&state, &p, &v, &mut rng_stream(3, "roll"), 8);
        let b = sample_trajectory(&state, &p, &v, &mut rng_stream(3, "roll"), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn near_deterministic_policy_samples_its_argmax_path() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let p = one_problem(&v);
        // Force ADD, 4, EOS with enormous logits.
        let script = [v.op(Op::Add), v.number(4).unwrap(), v.marker(Marker::Eos)];
        for (t, tok) in script.iter().enumerate() {
            let mut logits = vec![0.0; v.len()];
            logits[tok.index()] = 200.0;
            state
                .theta
                .insert(ContextKey::for_problem(&p, t as u32), logits);
        }
        let traj = sample_trajectory(&state, &p, &v, &mut rng_stream(4, "roll"), 8);
        assert_eq!(traj.tokens, script.to_vec());
        assert!(traj.ended_with_eos);
        assert_eq!(greedy_decode(&state, &p, &v, 8), script.to_vec());
    }

    #[test]
    fn max_len_one_yields_single_token() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let p = one_problem(&v);
        let traj = sample_trajectory(&state, &p, &v, &mut rng_stream(5, "roll"), 1);
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn greedy_tie_break_is_lowest_id() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let p = one_problem(&v);
        let tokens = greedy_decode(&state, &p, &v, 5);
        assert_eq!(tokens, vec![TokenId(0); 5]);
    }

    #[test]
    fn comt_nll_examples() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let p = one_problem(&v);

        // Single token with model probability 1/2.
        let mut logits = vec![-1e9; v.len()];
        logits[0] = 0.0;
        logits[1] = 0.0;
        state.theta.insert(ContextKey::for_problem(&p, 0), logits);
        let tokens = [TokenId(0)];
        let nll = comt_nll(&state, &[(&p, &tokens)]).unwrap();
        assert!((nll - 2f64.ln()).abs() < 1e-9);

        // Probability ~1 on every target: NLL ~ 0.
        let mut sure = PolicyState::new(&v);
        let script = [v.op(Op::Add), v.marker(Marker::Eos)];
        for (t, tok) in script.iter().enumerate() {
            let mut logits = vec![-500.0; v.len()];
            logits[tok.index()] = 500.0;
            sure.theta.insert(ContextKey::for_problem(&p, t as u32), logits);
        }
        let nll = comt_nll(&sure, &[(&p, &script[..])]).unwrap();
        assert!(nll.abs() < 1e-9);

        // Two tokens with probabilities 1/2 and 1/4.
        let mut two = PolicyState::new(&v);
        let mut l0 = vec![-1e9; v.len()];
        l0[0] = 0.0;
        l0[1] = 0.0;
        let mut l1 = vec![-1e9; v.len()];
        l1[0] = 1f64.ln();
        l1[1] = 3f64.ln();
        two.theta.insert(ContextKey::for_problem(&p, 0), l0);
        two.theta.insert(ContextKey::for_problem(&p, 1), l1);
        let tokens = [TokenId(0), TokenId(0)];
        let nll = comt_nll(&two, &[(&p, &tokens[..])]).unwrap();
        assert!((nll - (2f64.ln() + 4f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn nll_gradient_matches_closed_form_two_action_case() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let p = one_problem(&v);
        let key = ContextKey::for_problem(&p, 0);
        let mut logits = vec![-1e9; v.len()];
        logits[0] = 0.0;
        logits[1] = 0.0;
        state.theta.insert(key, logits);
        let tokens = [TokenId(0)];
        let grad = logit_gradient_nll(&state, &p, &tokens).unwrap();
        let g = &grad[&key];
        assert!((g[0] - (-0.5)).abs() < 1e-9);
        assert!((g[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn nll_gradient_vanishes_at_optimum() {
        let v = small_vocab();
        let mut state = PolicyState::new(&v);
        let p = one_problem(&v);
        let key = ContextKey::for_problem(&p, 0);
        let mut logits = vec![-500.0; v.len()];
        logits[3] = 500.0;
        state.theta.insert(key, logits);
        let grad = logit_gradient_nll(&state, &p, &[TokenId(3)]).unwrap();
        for &g in &grad[&key] {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let v = small_vocab();
        let p = one_problem(&v);
        let mut rng = rng_stream(6, "fd");
        let mut state = PolicyState::new(&v);
        let tokens: Vec<TokenId> = (0..3)
            .map(|_| TokenId(rng.random_range(0..v.len() as u32)))
            .collect();
        for t in 0..tokens.len() {
            let logits: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            state.theta.insert(ContextKey::for_problem(&p, t as u32), logits);
        }
        let analytic = logit_gradient_nll(&state, &p, &tokens).unwrap();
        let h = 1e-5;
        for (key, grad) in &analytic {
            for i in 0..v.len() {
                let mut plus = state.clone();
                plus.theta.get_mut(key).unwrap()[i] += h;
                let mut minus = state.clone();
                minus.theta.get_mut(key).unwrap()[i] -= h;
                // Example-level objective: summed NLL of the single example.
                let f_plus = comt_nll(&plus, &[(&p, &tokens)]).unwrap();
                let f_minus = comt_nll(&minus, &[(&p, &tokens)]).unwrap();
                let numeric = (f_plus - f_minus) / (2.0 * h);
                let a = grad[i];
                if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                assert!(rel < 1e-5, "key {key:?} comp {i}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn pg_gradient_coeff_zero_is_zero() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let p = one_problem(&v);
        let traj = sample_trajectory(&state, &p, &v, &mut rng_stream(7, "roll"), 5);
        let coeffs = vec![0.0; traj.len()];
        let grad = logit_gradient_pg(&state, &traj, &coeffs).unwrap();
        assert!(grad.is_empty());
    }

    #[test]
    fn pg_gradient_length_mismatch_is_error() {
        let v = small_vocab();
        let state = PolicyState::new(&v);
        let p = one_problem(&v);
        let traj = sample_trajectory(&state, &p, &v, &mut rng_stream(7, "roll"), 5);
        assert!(logit_gradient_pg(&state, &traj, &[1.0]).is_err());
    }

    #[test]
    fn sft_descends_monotonically() {
        let v = Vocabulary::standard(30).unwrap();
        let problems =
            generate_problems(&default_templates(), (2, 5), 6, &v, &mut rng_stream(8, "gen"))
                .unwrap();
        let dataset: Vec<(&Problem, &[TokenId])> = problems
            .iter()
            .map(|p| (p, p.gold_meta_tokens.as_slice()))
            .collect();
        let mut state = PolicyState::new(&v);
        let trace = train_sft(&mut state, &dataset, 100, 0.5, 1e9).unwrap();
        assert_eq!(trace.len(), 101);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "NLL increased: {} -> {}", w[0], w[1]);
        }
        assert!(trace[100] < trace[0]);
    }

    #[test]
    fn checkpoint_round_trip_and_hash_guard() {
        let v = Vocabulary::standard(20).unwrap();
        let mut state = PolicyState::new(&v);
        let key = ContextKey { template_id: 1, a: 4, b: 5, t: 2 };
        state.theta.insert(key, (0..v.len()).map(|i| i as f64).collect());
        state.phi.insert(key, -0.75);
        state.freeze_reference();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path, &v).unwrap();
        assert_eq!(state, loaded);

        let other = Vocabulary::standard(21).unwrap();
        assert!(matches!(
            load_checkpoint(&path, &other),
            Err(CcrlError::Checkpoint(_))
        ));
    }
}
