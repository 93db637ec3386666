use super::*;
use crate::validation::StubEmbedder;

fn fixture(name: &str) -> MetaTemplate {
    let path = format!("{}/fixtures/meta/{name}.json", env!("CARGO_MANIFEST_DIR"));
    MetaTemplate::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn spec_index(mt: &MetaTemplate, name: &str) -> usize {
    mt.op_catalog.iter().position(|s| s.name == name).unwrap()
}

#[test]
fn mutation_prompt_text() {
    let mt = fixture("cruxeval_input");
    let spec = mt.op("change_tag_case").unwrap();
    let prompt = build_mutation_prompt(&mt, spec);
    let expected = format!(
        "Below, you are provided with a prompt template.\n{}\nYour task is to slightly modify the template to create a \
new one. The operation you are required to apply is:\nchange_tag_case(tag: str, case: Literal['upper', 'lower', \
'title', 'capitalize']): {}\nPlease apply this operation only once. Make sure the operation changes the template.\n\
Answer with a valid Python function call, using exactly the operation name. Do not include any extra information or \
comments.",
        mt.render(),
        spec.description
    );
    assert_eq!(prompt, expected);
    assert_eq!(build_mutation_prompt(&mt, spec), prompt);
}

#[test]
fn zero_argument_signature() {
    let mut mt = fixture("single_text");
    mt.op_catalog[0].args.clear();
    let prompt = build_mutation_prompt(&mt, &mt.op_catalog[0]);
    assert!(prompt.contains("\nparaphrase_greeting(): Paraphrase the greeting.\n"));
}

#[test]
fn refinement_prompt_text() {
    let before = fixture("cruxeval_input");
    let call = OpCall::new("paraphrase_answer_tag", vec![crate::ops::Literal::Str("RESULT".into())]);
    let after = apply_operation(&before, &call).unwrap();
    let inc = &detect_inconsistencies(&before, &after, &call)[0];
    let spec = after.op("paraphrase_instruction").unwrap();
    let content = &after.tree.node("instruction").unwrap().content;
    let prompt = build_refinement_prompt(inc, spec, "text", content);
    assert!(prompt.starts_with(&format!(
        "Below, you are provided with the text of a prompt.\n{content}\n"
    )));
    assert!(prompt.contains(
        "There are inconsistencies in the text because it refers to [ANS], which now appears in the prompt as \
[RESULT]. Your task is to fix the text for consistency."
    ));
    assert!(prompt.ends_with(
        "Do not include any extra information or comments. Answer with a valid Python function call, using exactly \
the operation name."
    ));
    assert_eq!(build_refinement_prompt(inc, spec, "text", content), prompt);
}

fn scripted(responses: &[&str]) -> TranscriptClient {
    TranscriptClient::from_responses(responses.iter().copied())
}

#[test]
fn scripted_paraphrase_is_accepted() {
    let seed = fixture("cruxeval_input");
    let mut pool = Pool::new(seed.clone(), 10);
    let mut state = LoopState::new(&pool, 1);
    let mut client = scripted(&["change_section_delimiter(\"\\n\\n\")"]);
    let cfg = LoopConfig::default();
    let idx = spec_index(&seed, "change_section_delimiter");
    let rec = mutate_choice(
        &mut pool,
        &mut state,
        0,
        idx,
        &mut client,
        &StubEmbedder::default(),
        &cfg,
    )
    .unwrap();
    assert_eq!(rec.outcome, Outcome::Accepted { member: 1 });
    assert_eq!(pool.members[1].lineage.len(), 1);
}

#[test]
fn garbage_is_rejected_without_growth() {
    let seed = fixture("cruxeval_input");
    let mut pool = Pool::new(seed, 10);
    let mut state = LoopState::new(&pool, 1);
    let mut client = scripted(&["Sure! I changed the template for you."]);
    let rec = mutate_once(
        &mut pool,
        &mut state,
        &mut client,
        &StubEmbedder::default(),
        &LoopConfig::default(),
    )
    .unwrap();
    assert!(matches!(rec.outcome, Outcome::Rejected(Rejection::Parse { .. })));
    assert_eq!(pool.members.len(), 1);
}

#[test]
fn tag_rename_then_refinement() {
    let seed = fixture("cruxeval_input");
    let fixed = seed
        .tree
        .node("instruction")
        .unwrap()
        .content
        .replace("[ANS]", "[RESULT]");
    let refine = OpCall::new("paraphrase_instruction", vec![crate::ops::Literal::Str(fixed)]).to_string();
    let mut client = scripted(&["paraphrase_answer_tag(\"RESULT\")", &refine]);
    let mut pool = Pool::new(seed.clone(), 10);
    let mut state = LoopState::new(&pool, 1);
    let idx = spec_index(&seed, "paraphrase_answer_tag");
    let rec = mutate_choice(
        &mut pool,
        &mut state,
        0,
        idx,
        &mut client,
        &StubEmbedder::default(),
        &LoopConfig::default(),
    )
    .unwrap();
    assert_eq!(rec.outcome, Outcome::Accepted { member: 1 });
    assert_eq!(rec.exchanges.len(), 2);
    assert_eq!(rec.exchanges[1].kind, RequestKind::Refinement);
    let member = &pool.members[1];
    assert_eq!(member.lineage.len(), 2);
    assert_eq!(member.lineage[1].origin, Origin::Refinement);
    assert!(stale_mentions(member).is_empty());
    assert!(member.render().contains("enclosed in [RESULT] tags.\n[PY]"));
}

#[test]
fn failed_refinement_is_unresolved() {
    let seed = fixture("cruxeval_input");
    let mut client = scripted(&["paraphrase_answer_tag(\"RESULT\")", "nope", "nope", "nope"]);
    let mut pool = Pool::new(seed.clone(), 10);
    let mut state = LoopState::new(&pool, 1);
    let idx = spec_index(&seed, "paraphrase_answer_tag");
    let rec = mutate_choice(
        &mut pool,
        &mut state,
        0,
        idx,
        &mut client,
        &StubEmbedder::default(),
        &LoopConfig::default(),
    )
    .unwrap();
    assert_eq!(rec.outcome, Outcome::Rejected(Rejection::Unresolved { remaining: 1 }));
    assert_eq!(rec.exchanges.len(), 4);
    assert_eq!(pool.members.len(), 1);
}

#[test]
fn duplicates_are_rejected() {
    let seed = fixture("cruxeval_input");
    let idx = spec_index(&seed, "change_section_delimiter");
    let mut client = scripted(&[
        "change_section_delimiter(\"\\n\\n\")",
        "change_section_delimiter(\"\\n\\n\")",
    ]);
    let mut pool = Pool::new(seed, 10);
    let mut state = LoopState::new(&pool, 1);
    let cfg = LoopConfig::default();
    let e = StubEmbedder::default();
    mutate_choice(&mut pool, &mut state, 0, idx, &mut client, &e, &cfg).unwrap();
    let rec = mutate_choice(&mut pool, &mut state, 0, idx, &mut client, &e, &cfg).unwrap();
    assert_eq!(rec.outcome, Outcome::Rejected(Rejection::Duplicate { member: 1 }));
}

#[test]
fn threshold_one_makes_no_calls() {
    let mut client = scripted(&[]);
    let (pool, transcript) = run_mutation_loop(
        fixture("cruxeval_input"),
        1,
        &mut client,
        &StubEmbedder::default(),
        &LoopConfig::default(),
    )
    .unwrap();
    assert_eq!(pool.members.len(), 1);
    assert!(transcript.is_empty());
}

#[test]
fn budget_exhaustion() {
    let mut client = scripted(&["no"; 10]);
    let mut cfg = LoopConfig::default();
    cfg.budget.max_iterations = 10;
    let err = run_mutation_loop(
        fixture("cruxeval_input"),
        5,
        &mut client,
        &StubEmbedder::default(),
        &cfg,
    )
    .unwrap_err();
    match err {
        LoopError::BudgetExhausted {
            iterations,
            accepted,
            rate,
        } => {
            assert_eq!((iterations, accepted), (10, 0));
            assert_eq!(rate, 0.0);
        }
        other => panic!("unexpected {other}"),
    }
}

struct Flaky {
    failures: u32,
    inner: TranscriptClient,
}

impl MutatorClient for Flaky {
    fn complete(&mut self, p: &str, d: &DecodeParams) -> Result<String, ClientError> {
        self.inner.complete(p, d)
    }

    fn complete_request(&mut self, req: &MutatorRequest<'_>) -> Result<String, ClientError> {
        if self.failures > 0 {
            self.failures -= 1;
            return Err(ClientError::Transport("reset".into()));
        }
        self.inner.complete_request(req)
    }
}

#[test]
fn transient_failures_are_retried() {
    let seed = fixture("single_text");
    let cfg = LoopConfig::default();
    let mut ok = Flaky {
        failures: 2,
        inner: scripted(&["paraphrase_greeting(\"hi\")"]),
    };
    let (pool, _) = run_mutation_loop(seed.clone(), 2, &mut ok, &StubEmbedder::default(), &cfg).unwrap();
    assert_eq!(pool.members[1].render(), "hi");
    let mut broken = Flaky {
        failures: 3,
        inner: scripted(&["paraphrase_greeting(\"hi\")"]),
    };
    let err = run_mutation_loop(seed, 2, &mut broken, &StubEmbedder::default(), &cfg).unwrap_err();
    assert!(matches!(err, LoopError::Client(ClientError::Transport(_))));
}

#[test]
fn synthetic_loop_is_reproducible_and_valid() {
    let e = StubEmbedder::default();
    let mut cfg = LoopConfig::default();
    cfg.budget.rng_seed = 7;
    let run = |cfg: &LoopConfig| {
        let mut client = SyntheticMutator::new(cfg.budget.rng_seed);
        run_mutation_loop(fixture("cruxeval_input"), 30, &mut client, &e, cfg).unwrap()
    };
    let (a, transcript) = run(&cfg);
    let (b, _) = run(&cfg);
    assert_eq!(a, b);
    assert_eq!(a.members.len(), 30);
    revalidate(&a, &e, &cfg.policy).unwrap();
    assert!(a.mean_lineage_len() >= 1.0);

    let jsonl: String = transcript
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    let mut replay = TranscriptClient::parse_jsonl(&jsonl).unwrap();
    let (c, _) = run_mutation_loop(fixture("cruxeval_input"), 30, &mut replay, &e, &cfg).unwrap();
    assert_eq!(c, a);
}

#[test]
fn synthetic_loop_on_every_fixture() {
    let e = StubEmbedder::default();
    for name in [
        "cruxeval_output",
        "testeval_overall",
        "coderujb_defect",
        "coderujb_testgen",
    ] {
        let mut client = SyntheticMutator::new(3);
        let (pool, _) = run_mutation_loop(fixture(name), 20, &mut client, &e, &LoopConfig::default())
            .unwrap_or_else(|err| panic!("{name}: {err}"));
        revalidate(&pool, &e, &ValidationPolicy::default()).unwrap_or_else(|err| panic!("{name}: {err}"));
    }
}

#[test]
fn revalidation_catches_tampering() {
    let e = StubEmbedder::default();
    let mut client = SyntheticMutator::new(5);
    let (mut pool, _) =
        run_mutation_loop(fixture("cruxeval_input"), 5, &mut client, &e, &LoopConfig::default()).unwrap();
    pool.members[2].tree.node_mut("d1").unwrap().content = "\n~~\n".into();
    assert!(revalidate(&pool, &e, &ValidationPolicy::default()).is_err());
}
