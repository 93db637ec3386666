use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::ops::{apply_operation, Literal, OpCall};
use crate::template::MetaTemplate;

fn cruxeval() -> MetaTemplate {
    let path = format!("{}/fixtures/meta/cruxeval_input.json", env!("CARGO_MANIFEST_DIR"));
    MetaTemplate::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(v: &str) -> Literal {
    Literal::Str(v.into())
}

#[derive(Default)]
struct Counting {
    calls: AtomicUsize,
}

impl EmbeddingClient for Counting {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        StubEmbedder::default().embed(text)
    }
}

struct Failing;

impl EmbeddingClient for Failing {
    fn embed(&self, _: &str) -> Result<Vec<f64>, EmbedError> {
        Err(EmbedError::Transport("connection refused".into()))
    }
}

#[test]
fn c1_signature() {
    let mt = cruxeval();
    let spec = mt.op("change_tag_case").unwrap();
    assert!(check_arguments(&OpCall::new("change_tag_case", vec![s("ANS"), s("lower")]), spec).accepted);
    assert!(
        check_arguments(
            &OpCall::new("change_tag_case", vec![s("ANS"), Literal::Ident("lower".into())]),
            spec
        )
        .accepted
    );
    let count = check_arguments(&OpCall::new("change_tag_case", vec![s("ANS")]), spec);
    assert_eq!(count.condition, Some(Condition::C1));
    let ty = check_arguments(&OpCall::new("change_tag_case", vec![s("ANS"), Literal::Int(7)]), spec);
    assert_eq!(ty.condition, Some(Condition::C1));
    let member = check_arguments(&OpCall::new("change_tag_case", vec![s("ANS"), s("sponge")]), spec);
    assert_eq!(member.condition, Some(Condition::C1));
    let long = check_arguments(
        &OpCall::new("paraphrase_code_tag", vec![s("A_VERY_LONG_TAG_NAME_INDEED_YES")]),
        mt.op("paraphrase_code_tag").unwrap(),
    );
    assert_eq!(long.condition, Some(Condition::C1));
}

#[test]
fn c3_rules() {
    let mt = cruxeval();
    let p = ValidationPolicy::default();
    let c3 = |name: &str, args: Vec<Literal>| {
        let call = OpCall::new(name, args);
        check_description(&call, mt.op(name).unwrap(), &mt, &p)
    };
    assert_eq!(c3("change_format", vec![s("{}...{}")]).condition, Some(Condition::C3));
    assert_eq!(
        c3("change_format", vec![s("[{}]...[\\{}]")]).condition,
        Some(Condition::C3)
    );
    assert!(c3("change_format", vec![s("<{}>...</{}>")]).accepted);
    assert!(c3("change_section_delimiter", vec![s("\n\n")]).accepted);
    assert_eq!(
        c3("change_section_delimiter", vec![s("\n")]).condition,
        Some(Condition::C3)
    );
    assert_eq!(
        c3("change_section_delimiter", vec![s("\nNEXT\n")]).condition,
        Some(Condition::C3)
    );
    assert_eq!(
        c3("change_section_delimiter", vec![s(&"-".repeat(17))]).condition,
        Some(Condition::C3)
    );
    assert_eq!(c3("paraphrase_instruction", vec![s("")]).condition, Some(Condition::C3));
    assert_eq!(
        c3("paraphrase_instruction", vec![s("Solve it.")]).condition,
        Some(Condition::C3)
    );
    assert_eq!(
        c3("change_tag_case", vec![s("ANS"), s("upper")]).condition,
        Some(Condition::C3)
    );
    assert_eq!(
        c3("change_tag_case", vec![s("PY"), s("lower")]).condition,
        Some(Condition::C3)
    );
    assert!(c3("change_tag_case", vec![s("ANS"), s("lower")]).accepted);
    assert_eq!(c3("paraphrase_code_tag", vec![s("ANS")]).condition, Some(Condition::C3));
    assert_eq!(c3("paraphrase_code_tag", vec![s("PY")]).condition, Some(Condition::C3));
}

#[test]
fn c3_keeps_slot_markers() {
    let mt = cruxeval();
    let mut doc: serde_json::Value = serde_json::from_str(&mt.to_document()).unwrap();
    doc["operations"].as_array_mut().unwrap().push(serde_json::json!({
        "name": "paraphrase_answer", "kind": 1, "target": "answer",
        "args": [{"name": "new_text", "type": "string"}], "description": "Paraphrase."
    }));
    let mt = MetaTemplate::parse(&doc.to_string()).unwrap();
    let p = ValidationPolicy::default();
    let spec = mt.op("paraphrase_answer").unwrap();
    let lost = OpCall::new("paraphrase_answer", vec![s("\nassert f(??) == 3\n")]);
    assert_eq!(check_description(&lost, spec, &mt, &p).condition, Some(Condition::C3));
    let kept = OpCall::new("paraphrase_answer", vec![s("\nassert {{output}} == f(??)\n")]);
    assert!(check_description(&kept, spec, &mt, &p).accepted);
}

#[test]
fn c2_gate_and_threshold() {
    let p = ValidationPolicy::default();
    let e = StubEmbedder::default();
    let twenty = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen \
sixteen seventeen eighteen nineteen twenty";
    let v = check_semantics(twenty, twenty, &e, &p).unwrap();
    assert!(v.accepted);
    assert_eq!(v.similarity, Some(1.0));
    let eight = "a b c d e f g h";
    assert!(
        check_semantics(eight, "something entirely different", &e, &p)
            .unwrap()
            .accepted
    );
    let ten = "a b c d e f g h i j";
    assert!(check_semantics(ten, "zzz", &e, &p).unwrap().accepted);
    let unrelated = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu nu xi omicron pi rho \
sigma tau upsilon";
    let v = check_semantics(twenty, unrelated, &e, &p).unwrap();
    assert_eq!(v.condition, Some(Condition::C2));
    assert_eq!(v.similarity, Some(0.0));
    let blank = check_semantics(twenty, "...", &e, &p).unwrap();
    assert_eq!(blank.condition, Some(Condition::C2));
}

#[test]
fn c2_client_failure_propagates() {
    let p = ValidationPolicy::default();
    let long = "w ".repeat(11);
    assert!(check_semantics(&long, "x", &Failing, &p).is_err());
}

#[test]
fn order_short_circuits_before_embedding() {
    let mt = cruxeval();
    let p = ValidationPolicy::default();
    let counter = Counting::default();
    let bad_arity = OpCall::new("paraphrase_instruction", vec![s("a"), s("b")]);
    assert_eq!(
        validate_call(&bad_arity, &mt, &counter, &p).unwrap().condition,
        Some(Condition::C1)
    );
    let lost_ref = OpCall::new(
        "paraphrase_instruction",
        vec![s("Find an input for the function, please.")],
    );
    assert_eq!(
        validate_call(&lost_ref, &mt, &counter, &p).unwrap().condition,
        Some(Condition::C3)
    );
    assert_eq!(counter.calls.load(Ordering::SeqCst), 0);
    let unknown = OpCall::new("remove_node", vec![]);
    assert_eq!(
        validate_call(&unknown, &mt, &counter, &p).unwrap().condition,
        Some(Condition::C1)
    );

    let drift = OpCall::new(
        "paraphrase_instruction",
        vec![s(
            "Write a poem about autumn leaves and rivers, then place it between [ANS] markers for me today.",
        )],
    );
    assert_eq!(
        validate_call(&drift, &mt, &counter, &p).unwrap().condition,
        Some(Condition::C2)
    );
    assert_eq!(counter.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn accepted_calls_apply_cleanly() {
    let mt = cruxeval();
    let p = ValidationPolicy::default();
    let e = StubEmbedder::default();
    let calls = [
        OpCall::new("change_format", vec![s("¿¡!{}¡¿?...¿¡!/{}¡¿?")]),
        OpCall::new("change_tag_case", vec![s("ANS"), s("title")]),
        OpCall::new("paraphrase_code_tag", vec![s("CODE")]),
        OpCall::new("change_section_delimiter", vec![s("\n---\n")]),
    ];
    for c in calls {
        let v = validate_call(&c, &mt, &e, &p).unwrap();
        assert!(v.accepted, "{c}: {}", v.detail);
        apply_operation(&mt, &c).unwrap();
    }
}

#[test]
fn policy_bounds() {
    assert!(ValidationPolicy::default().check().is_ok());
    let bad = ValidationPolicy {
        similarity_threshold: 0.0,
        ..Default::default()
    };
    assert!(bad.check().is_err());
}
