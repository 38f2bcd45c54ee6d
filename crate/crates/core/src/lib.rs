//! Desk-scale laboratory for two-stage reasoning post-training: supervised
//! learning on abstract meta-thought skeletons, then reinforcement learning
//! whose reward calibrates confidence on computed intermediate numbers.
//!
//! The models are tabular-contextual softmax policies over a toy arithmetic
//! vocabulary, which keeps every gradient analytically checkable while the
//! reward, advantage-estimation, and clipped-update machinery runs exactly
//! as it would at scale.
//!
//! Module map:
//! - [`vocab`], [`config`], [`dist`], [`rng`], [`manifest`]: shared domain
//!   types, the run configuration, and the determinism contract.
//! - [`env`]: synthetic problem generation with gold trajectories.
//! - [`audit`]: extracted/computed classification of numeric tokens.
//! - [`reward`]: entropy-based confidence measurement and the calibrated
//!   reward.
//! - [`policy`]: the tabular actor, critic, reference model, sampling, and
//!   analytic gradients.
//! - [`engine`]: advantage estimation, clipped losses, and the training
//!   loop with its outcome-only ablation mode.
//! - [`comt`]: the teacher-distillation pipeline for meta-thought data.
//! - [`analysis`]: greedy evaluation, overconfidence analytics, external
//!   trajectory ingestion, and report rendering.

pub mod analysis;
pub mod audit;
pub mod comt;
pub mod config;
pub mod dist;
pub mod engine;
pub mod env;
pub mod error;
pub mod manifest;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod vocab;

pub use analysis::{
    evaluate, ingest_external_trajectories, overconfidence, EvalReport, EvalRow,
    OverconfidenceReport,
};
pub use audit::{classify_tokens, AuditResult, NumberSet, PositionTag};
pub use comt::{
    build_dataset, build_teacher_prompt, dataset_stats, fetch_meta_thought, validate_meta_thought,
    ComtRecord, DatasetPolicy, MetaValidation, TeacherEndpoint,
};
pub use config::CcrlConfig;
pub use dist::{softmax, Distribution};
pub use engine::{
    clipped_value_loss, gae_advantages, kl_penalty, normalize_advantages, ppo_policy_loss,
    td_errors, train, IterationRecord, LossReport, RolloutBatch, TrainMode, TrainOptions,
    TrainOutput,
};
pub use env::{
    check_answer, default_templates, generate_problems, read_problems, write_problems, Problem,
    Template,
};
pub use error::{CcrlError, Result};
pub use manifest::RunManifest;
pub use policy::{
    action_distribution, comt_nll, greedy_decode, greedy_trajectory, load_checkpoint,
    logit_gradient_nll, logit_gradient_pg, sample_trajectory, save_checkpoint, train_sft,
    ContextKey, PolicyState, Trajectory,
};
pub use reward::{
    confidence_reward, confidence_summary, extract_answer, max_entropy, outcome_reward,
    position_entropy, total_reward, ConfidenceSummary, RewardBreakdown,
};
pub use rng::rng_stream;
pub use vocab::{Marker, Op, TokenId, TokenKind, Vocabulary};
