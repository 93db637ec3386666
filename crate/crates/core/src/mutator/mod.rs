//! Seed-pool mutation loop.
//!
//! Each iteration draws a pool member and an operation uniformly at random,
//! asks the mutator for the operation's arguments, validates and applies the
//! call, then repairs any inconsistencies it introduced through refinement
//! requests. Candidates that survive and render differently from every
//! existing member join the pool.

mod client;
mod prompts;
mod synthetic;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{
    apply_operation, detect_inconsistencies, parse_op_call, stale_mentions, Inconsistency, OpCall, Origin,
};
use crate::template::{MetaTemplate, OpKind, OpSpec, TemplateError};
use crate::validation::{validate_call, Condition, EmbedError, EmbeddingClient, ValidationPolicy, Verdict};

pub use client::{ClientError, DecodeParams, MutatorClient, MutatorRequest, RequestKind, TranscriptClient};
pub use prompts::{build_mutation_prompt, build_refinement_prompt};
pub use synthetic::SyntheticMutator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopBudget {
    pub max_iterations: u64,
    pub max_refinement_rounds: u32,
    /// Extra attempts after a retryable client failure.
    pub client_retries: u32,
    pub rng_seed: u64,
}

impl Default for LoopBudget {
    fn default() -> Self {
        LoopBudget {
            max_iterations: 5000,
            max_refinement_rounds: 3,
            client_retries: 2,
            rng_seed: 0,
        }
    }
}

impl LoopBudget {
    pub fn check(&self) -> Result<(), String> {
        if self.max_iterations == 0 || self.max_refinement_rounds == 0 {
            return Err("max_iterations and max_refinement_rounds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub budget: LoopBudget,
    pub policy: ValidationPolicy,
    pub decode: DecodeParams,
}

/// Accepted meta-templates; member 0 is the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub members: Vec<MetaTemplate>,
    pub threshold: usize,
}

impl Pool {
    pub fn new(seed: MetaTemplate, threshold: usize) -> Self {
        Pool {
            members: vec![seed],
            threshold,
        }
    }

    pub fn seed(&self) -> &MetaTemplate {
        &self.members[0]
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.threshold
    }

    /// Mean number of operations applied per mutant (the seed excluded).
    pub fn mean_lineage_len(&self) -> f64 {
        let mutants = &self.members[1..];
        if mutants.is_empty() {
            return 0.0;
        }
        mutants.iter().map(|m| m.lineage.len()).sum::<usize>() as f64 / mutants.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    Parse { detail: String },
    Validation { condition: Condition, detail: String },
    Apply { detail: String },
    NoRefinementOperation { node: String },
    Unresolved { remaining: usize },
    Duplicate { member: usize },
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Parse { .. } => "parse",
            Rejection::Validation { condition, .. } => match condition {
                Condition::C1 => "c1",
                Condition::C2 => "c2",
                Condition::C3 => "c3",
            },
            Rejection::Apply { .. } => "apply",
            Rejection::NoRefinementOperation { .. } => "no_refinement_operation",
            Rejection::Unresolved { .. } => "unresolved",
            Rejection::Duplicate { .. } => "duplicate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Accepted { member: usize },
    Rejected(Rejection),
}

/// One mutator round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub ordinal: u64,
    pub kind: RequestKind,
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<OpCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

/// Transcript entry for one loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub parent: usize,
    pub operation: String,
    pub exchanges: Vec<Exchange>,
    pub outcome: Outcome,
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("mutator client failed: {0}")]
    Client(#[from] ClientError),
    #[error("embedding client failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error(
        "budget exhausted after {iterations} iterations with {accepted} accepted mutants (acceptance rate {rate:.3})"
    )]
    BudgetExhausted {
        iterations: u64,
        accepted: usize,
        rate: f64,
    },
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("seed template is inconsistent: {0}")]
    Seed(String),
}

/// Mutable loop state shared across iterations.
pub struct LoopState {
    rng: ChaCha8Rng,
    next_ordinal: u64,
    iteration: u64,
    rendered: HashSet<String>,
}

impl LoopState {
    pub fn new(pool: &Pool, seed: u64) -> Self {
        LoopState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_ordinal: 0,
            iteration: 0,
            rendered: pool.members.iter().map(MetaTemplate::render).collect(),
        }
    }
}

struct Ctx<'a> {
    client: &'a mut dyn MutatorClient,
    embedder: &'a dyn EmbeddingClient,
    cfg: &'a LoopConfig,
}

impl Ctx<'_> {
    fn request(
        &mut self,
        state: &mut LoopState,
        kind: RequestKind,
        prompt: String,
        template: &MetaTemplate,
        spec: &OpSpec,
        inconsistency: Option<&Inconsistency>,
    ) -> Result<Exchange, ClientError> {
        let ordinal = state.next_ordinal;
        state.next_ordinal += 1;
        let req = MutatorRequest {
            ordinal,
            kind,
            prompt: &prompt,
            params: &self.cfg.decode,
            template,
            spec,
            inconsistency,
        };
        let mut attempt = 0;
        let response = loop {
            match self.client.complete_request(&req) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.cfg.budget.client_retries => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        Ok(Exchange {
            ordinal,
            kind,
            prompt,
            response,
            call: None,
            verdict: None,
        })
    }

    /// Parses, validates and applies the call in `ex`.
    fn settle(
        &self,
        ex: &mut Exchange,
        base: &MetaTemplate,
        spec: &OpSpec,
        origin: Origin,
    ) -> Result<Result<MetaTemplate, Rejection>, EmbedError> {
        let call = match parse_op_call(&ex.response) {
            Ok(c) => c.with_origin(origin),
            Err(e) => return Ok(Err(Rejection::Parse { detail: e.to_string() })),
        };
        ex.call = Some(call.clone());
        let verdict = if call.name != spec.name {
            Verdict::reject(Condition::C1, format!("expected `{}`, got `{}`", spec.name, call.name))
        } else {
            validate_call(&call, base, self.embedder, &self.cfg.policy)?
        };
        ex.verdict = Some(verdict.clone());
        if !verdict.accepted {
            return Ok(Err(Rejection::Validation {
                condition: verdict.condition.unwrap_or(Condition::C1),
                detail: verdict.detail,
            }));
        }
        Ok(apply_operation(base, &call).map_err(|e| Rejection::Apply { detail: e.to_string() }))
    }
}

fn refinement_spec<'a>(mt: &'a MetaTemplate, node: &str) -> Option<&'a OpSpec> {
    mt.op_catalog
        .iter()
        .find(|s| s.kind == OpKind::ParaphraseText && s.target == node)
}

/// Runs one iteration. The pool grows by one member on acceptance.
pub fn mutate_once(
    pool: &mut Pool,
    state: &mut LoopState,
    client: &mut dyn MutatorClient,
    embedder: &dyn EmbeddingClient,
    cfg: &LoopConfig,
) -> Result<IterationRecord, LoopError> {
    assert!(!pool.members.is_empty(), "pool must contain the seed");
    let parent_idx = state.rng.gen_range(0..pool.members.len());
    let spec_idx = state.rng.gen_range(0..pool.members[parent_idx].op_catalog.len());
    mutate_choice(pool, state, parent_idx, spec_idx, client, embedder, cfg)
}

/// One iteration with the parent and operation already chosen.
pub fn mutate_choice(
    pool: &mut Pool,
    state: &mut LoopState,
    parent_idx: usize,
    spec_idx: usize,
    client: &mut dyn MutatorClient,
    embedder: &dyn EmbeddingClient,
    cfg: &LoopConfig,
) -> Result<IterationRecord, LoopError> {
    let iteration = state.iteration;
    state.iteration += 1;
    let parent = pool.members[parent_idx].clone();
    let spec = parent.op_catalog[spec_idx].clone();

    let mut ctx = Ctx { client, embedder, cfg };
    let mut record = IterationRecord {
        iteration,
        parent: parent_idx,
        operation: spec.name.clone(),
        exchanges: Vec::new(),
        outcome: Outcome::Rejected(Rejection::Unresolved { remaining: 0 }),
    };
    let reject = |mut record: IterationRecord, r: Rejection| {
        record.outcome = Outcome::Rejected(r);
        Ok(record)
    };

    let prompt = build_mutation_prompt(&parent, &spec);
    let mut ex = ctx.request(state, RequestKind::Mutation, prompt, &parent, &spec, None)?;
    let settled = ctx.settle(&mut ex, &parent, &spec, Origin::Mutation)?;
    let call = ex.call.clone();
    record.exchanges.push(ex);
    let mut candidate = match settled {
        Ok(c) => c,
        Err(r) => return reject(record, r),
    };

    let introduced = detect_inconsistencies(&parent, &candidate, call.as_ref().expect("applied call"));
    for original in introduced {
        let node = original.rule.dependent_node.clone();
        let Some(ref_spec) = refinement_spec(&candidate, &node).cloned() else {
            return reject(record, Rejection::NoRefinementOperation { node });
        };
        for _ in 0..cfg.budget.max_refinement_rounds {
            let Some(inc) = stale_mentions(&candidate).into_iter().find(|i| i.rule == original.rule) else {
                break;
            };
            let dependent = candidate.tree.node(&node).expect("rule node exists");
            let prompt = build_refinement_prompt(&inc, &ref_spec, &dependent.kind.to_string(), &dependent.content);
            let mut ex = ctx.request(
                state,
                RequestKind::Refinement,
                prompt,
                &candidate,
                &ref_spec,
                Some(&inc),
            )?;
            let settled = ctx.settle(&mut ex, &candidate, &ref_spec, Origin::Refinement)?;
            record.exchanges.push(ex);
            if let Ok(refined) = settled {
                candidate = refined;
            }
        }
    }
    let remaining = stale_mentions(&candidate).len();
    if remaining > 0 {
        return reject(record, Rejection::Unresolved { remaining });
    }
    let rendered = candidate.render();
    if state.rendered.contains(&rendered) {
        let member = pool.members.iter().position(|m| m.render() == rendered).unwrap_or(0);
        return reject(record, Rejection::Duplicate { member });
    }
    state.rendered.insert(rendered);
    pool.members.push(candidate);
    record.outcome = Outcome::Accepted {
        member: pool.members.len() - 1,
    };
    Ok(record)
}

/// Grows a pool from `seed` until it holds `threshold` members, reporting
/// every iteration to `observe`.
pub fn run_mutation_loop_with(
    seed: MetaTemplate,
    threshold: usize,
    client: &mut dyn MutatorClient,
    embedder: &dyn EmbeddingClient,
    cfg: &LoopConfig,
    observe: &mut dyn FnMut(&IterationRecord, &Pool),
) -> Result<Pool, LoopError> {
    if threshold == 0 {
        return Err(LoopError::Config("threshold must be at least 1".into()));
    }
    cfg.budget.check().map_err(LoopError::Config)?;
    cfg.policy.check().map_err(LoopError::Config)?;
    if seed.op_catalog.is_empty() && threshold > 1 {
        return Err(LoopError::Config("seed has an empty operation catalog".into()));
    }
    if let Some(inc) = stale_mentions(&seed).first() {
        return Err(LoopError::Seed(inc.reason.clone()));
    }
    let mut pool = Pool::new(seed.without_lineage(), threshold);
    let mut state = LoopState::new(&pool, cfg.budget.rng_seed);
    while !pool.is_full() {
        if state.iteration >= cfg.budget.max_iterations {
            let accepted = pool.members.len() - 1;
            return Err(LoopError::BudgetExhausted {
                iterations: state.iteration,
                accepted,
                rate: accepted as f64 / state.iteration as f64,
            });
        }
        let record = mutate_once(&mut pool, &mut state, client, embedder, cfg)?;
        observe(&record, &pool);
    }
    Ok(pool)
}

pub fn run_mutation_loop(
    seed: MetaTemplate,
    threshold: usize,
    client: &mut dyn MutatorClient,
    embedder: &dyn EmbeddingClient,
    cfg: &LoopConfig,
) -> Result<(Pool, Vec<IterationRecord>), LoopError> {
    let mut transcript = Vec::new();
    let pool = run_mutation_loop_with(seed, threshold, client, embedder, cfg, &mut |r, _| {
        transcript.push(r.clone())
    })?;
    Ok((pool, transcript))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RevalidationError {
    #[error("member {member}: {source}")]
    Template { member: usize, source: TemplateError },
    #[error("member {member}: node set differs from the seed")]
    Structure { member: usize },
    #[error("member {member}: lineage step {step} `{call}` rejected: {detail}")]
    Step {
        member: usize,
        step: usize,
        call: String,
        detail: String,
    },
    #[error("member {member}: replaying the lineage does not reproduce the template")]
    Replay { member: usize },
    #[error("member {member}: {remaining} stale mention(s)")]
    Inconsistent { member: usize, remaining: usize },
    #[error("members {0} and {1} render identically")]
    Duplicate(usize, usize),
    #[error("embedding client failed: {0}")]
    Embedding(String),
}

/// Re-checks every pool member from scratch: invariants, structure, the
/// validity of each lineage step replayed from the seed, consistency and
/// distinctness.
pub fn revalidate(
    pool: &Pool,
    embedder: &dyn EmbeddingClient,
    policy: &ValidationPolicy,
) -> Result<(), RevalidationError> {
    let seed = pool.seed().without_lineage();
    let signature = seed.tree.node_signature();
    let mut seen: Vec<String> = Vec::with_capacity(pool.members.len());
    for (member, mt) in pool.members.iter().enumerate() {
        mt.validate()
            .map_err(|source| RevalidationError::Template { member, source })?;
        if mt.tree.node_signature() != signature {
            return Err(RevalidationError::Structure { member });
        }
        let mut replay = seed.clone();
        for (step, call) in mt.lineage.iter().enumerate() {
            let step_err = |detail: String| RevalidationError::Step {
                member,
                step,
                call: call.to_string(),
                detail,
            };
            let verdict = validate_call(call, &replay, embedder, policy)
                .map_err(|e| RevalidationError::Embedding(e.to_string()))?;
            if !verdict.accepted {
                return Err(step_err(verdict.detail));
            }
            replay = apply_operation(&replay, call).map_err(|e| step_err(e.to_string()))?;
        }
        if replay != *mt {
            return Err(RevalidationError::Replay { member });
        }
        let remaining = stale_mentions(mt).len();
        if remaining > 0 {
            return Err(RevalidationError::Inconsistent { member, remaining });
        }
        let rendered = mt.render();
        if let Some(prev) = seen.iter().position(|r| *r == rendered) {
            return Err(RevalidationError::Duplicate(prev, member));
        }
        seen.push(rendered);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
