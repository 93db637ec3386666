use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use super::*;
use crate::mutator::ClientError;
use crate::template::TaskInstance;

/// Fraction of k-subsets of n samples that contain at least one of the c
/// correct ones, by enumeration.
fn pass_at_k_enumerated(n: u32, c: u32, k: u32) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != k {
            continue;
        }
        total += 1;
        if mask & ((1 << c) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn pass_at_k_examples() {
    assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
    assert_eq!(pass_at_k(10, 10, 5).unwrap(), 1.0);
    assert!((pass_at_k(5, 1, 3).unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(pass_at_k(7, 3, 1).unwrap(), 3.0 / 7.0);
    assert!(pass_at_k(5, 6, 1).is_err());
    assert!(pass_at_k(5, 1, 0).is_err());
    assert!(pass_at_k(5, 1, 6).is_err());
    let big = pass_at_k(10_000, 17, 100).unwrap();
    assert!(big > 0.0 && big < 1.0);
}

#[test]
fn pass_at_k_matches_enumeration() {
    for n in 1..=10 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n as u64, c as u64, k as u64).unwrap();
                assert!((got - pass_at_k_enumerated(n, c, k)).abs() < 1e-12, "n={n} c={c} k={k}");
            }
        }
    }
}

proptest! {
    #[test]
    fn pass_at_k_monotone(n in 1u64..60, c in 0u64..60, k in 1u64..60) {
        prop_assume!(c <= n && k <= n);
        let v = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= v - 1e-12);
        }
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= v - 1e-12);
        }
    }
}

fn record(model: &str, t: usize, inst: &str, s: u32, passed: bool) -> EvalRecord {
    EvalRecord {
        model_id: model.into(),
        task_id: "task".into(),
        template_id: t,
        instance_id: inst.into(),
        sample_idx: s,
        raw_response: String::new(),
        error: None,
        extracted: None,
        passed: Some(passed),
        score: Some(if passed { 1.0 } else { 0.0 }),
        judge_meta: serde_json::Value::Null,
    }
}

#[test]
fn aggregate_examples() {
    let mut recs = Vec::new();
    for s in 0..10 {
        recs.push(record("m", 0, "a", s, true));
        recs.push(record("m", 0, "b", s, false));
    }
    let refs: Vec<&EvalRecord> = recs.iter().collect();
    let inst = vec!["a".to_string(), "b".to_string()];
    assert_eq!(
        aggregate_metric(&refs, &inst, 10, MetricKind::PassAtK { k: 5 }).unwrap(),
        0.5
    );

    let all: Vec<EvalRecord> = (0..10).map(|s| record("m", 0, "a", s, true)).collect();
    let refs: Vec<&EvalRecord> = all.iter().collect();
    let one = vec!["a".to_string()];
    for metric in [
        MetricKind::Accuracy,
        MetricKind::PassAtK { k: 5 },
        MetricKind::MeanPassRate,
    ] {
        assert_eq!(aggregate_metric(&refs, &one, 10, metric).unwrap(), 1.0);
    }

    let refs: Vec<&EvalRecord> = recs.iter().filter(|r| r.instance_id == "a").collect();
    assert!(matches!(
        aggregate_metric(&refs, &inst, 10, MetricKind::Accuracy),
        Err(MetricError::IncompleteData { .. })
    ));
}

#[test]
fn mean_pass_rate_uses_scores() {
    let mut r = record("m", 0, "a", 0, false);
    r.score = Some(0.25);
    let inst = vec!["a".to_string()];
    assert_eq!(
        aggregate_metric(&[&r], &inst, 1, MetricKind::MeanPassRate).unwrap(),
        0.25
    );
}

#[test]
fn unjudged_records_are_incomplete() {
    let mut r = record("m", 0, "a", 0, true);
    r.passed = None;
    let inst = vec!["a".to_string()];
    assert!(aggregate_metric(&[&r], &inst, 1, MetricKind::Accuracy).is_err());
}

#[test]
fn presets_follow_published_settings() {
    let crux = TaskPreset::CruxevalI.sampling();
    assert_eq!(
        (crux.temperature, crux.max_new_tokens, crux.num_generations),
        (0.8, 100, 10)
    );
    assert_eq!(TaskPreset::TestevalOverall.sampling().num_generations, 10);
    assert_eq!(TaskPreset::TestevalPath.sampling().num_generations, 1);
    assert_eq!(TaskPreset::CoderujbDefect.sampling().max_new_tokens, 30);
    assert_eq!(TaskPreset::CoderujbTestgen.sampling().max_new_tokens, 512);
    assert_eq!(TaskPreset::CruxevalO.metric(), MetricKind::PassAtK { k: 5 });
    assert_eq!(TaskPreset::CoderujbDefect.metric(), MetricKind::Accuracy);
}

fn instances(n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| TaskInstance {
            instance_id: format!("i{i:02}"),
            slot_values: BTreeMap::from([("x".to_string(), i.to_string())]),
            judge_payload: serde_json::json!({ "expected": i.to_string() }),
        })
        .collect()
}

struct Echo;

impl InferenceClient for Echo {
    fn generate(&self, req: &InferenceRequest<'_>) -> Result<Vec<String>, ClientError> {
        let answer = req.prompt.rsplit(' ').next().unwrap_or("").to_string();
        Ok((0..req.n)
            .map(|s| if s % 2 == 0 { answer.clone() } else { "wrong".into() })
            .collect())
    }
}

struct Down;

impl InferenceClient for Down {
    fn generate(&self, _: &InferenceRequest<'_>) -> Result<Vec<String>, ClientError> {
        Err(ClientError::Transport("refused".into()))
    }
}

fn params(temperature: f64, n: u32) -> SamplingParams {
    SamplingParams {
        temperature,
        max_new_tokens: 16,
        num_generations: n,
    }
}

fn collect(run: &TaskRun<'_>, client: &dyn InferenceClient, done: &HashSet<(usize, String)>) -> Vec<EvalRecord> {
    let mut out = Vec::new();
    run_task(run, client, done, &mut |recs| {
        out.extend(recs);
        Ok(())
    })
    .unwrap();
    sort_records(&mut out);
    out
}

#[test]
fn run_task_produces_every_coordinate() {
    let templates = vec!["answer {{x}}".to_string(), "reply with {{x}}".to_string()];
    let inst = instances(3);
    let run = TaskRun {
        task_id: "t",
        model_id: "m",
        templates: &templates,
        instances: &inst,
        params: params(0.8, 4),
        concurrency: 3,
        retries: 0,
    };
    let mut recs = collect(&run, &Echo, &HashSet::new());
    assert_eq!(recs.len(), 2 * 3 * 4);
    let coords: HashSet<Coordinate> = recs.iter().map(EvalRecord::coordinate).collect();
    assert_eq!(coords.len(), recs.len());

    judge_records(
        &mut recs,
        &[Adapter::default(), Adapter::default()],
        &inst,
        &ExactOracle,
    );
    let ids: Vec<String> = inst.iter().map(|i| i.instance_id.clone()).collect();
    let series = compute_series("t", &recs, &["m".into()], 2, &ids, 4, MetricKind::PassAtK { k: 1 }).unwrap();
    assert_eq!(series[0].values, vec![0.5, 0.5]);

    let mut shuffled = recs.clone();
    shuffled.reverse();
    let again = compute_series("t", &shuffled, &["m".into()], 2, &ids, 4, MetricKind::PassAtK { k: 1 }).unwrap();
    assert_eq!(again, series);
}

#[test]
fn greedy_requests_once_and_duplicates() {
    let templates = vec!["answer {{x}}".to_string()];
    let inst = instances(1);
    let run = TaskRun {
        task_id: "t",
        model_id: "m",
        templates: &templates,
        instances: &inst,
        params: params(0.0, 3),
        concurrency: 1,
        retries: 0,
    };
    let recs = collect(&run, &Echo, &HashSet::new());
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.raw_response == "0"));
}

#[test]
fn failing_client_yields_failed_records() {
    let templates = vec!["{{x}}".to_string()];
    let inst = instances(2);
    let run = TaskRun {
        task_id: "t",
        model_id: "m",
        templates: &templates,
        instances: &inst,
        params: params(0.8, 2),
        concurrency: 2,
        retries: 1,
    };
    let mut recs = collect(&run, &Down, &HashSet::new());
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.error.is_some()));
    judge_records(&mut recs, &[Adapter::default()], &inst, &ExactOracle);
    assert!(recs.iter().all(|r| r.passed == Some(false)));
}

#[test]
fn done_units_are_skipped() {
    let templates = vec!["{{x}}".to_string(), "= {{x}}".to_string()];
    let inst = instances(2);
    let run = TaskRun {
        task_id: "t",
        model_id: "m",
        templates: &templates,
        instances: &inst,
        params: params(0.8, 1),
        concurrency: 2,
        retries: 0,
    };
    let done = HashSet::from([(0usize, "i00".to_string()), (1usize, "i01".to_string())]);
    let recs = collect(&run, &Echo, &done);
    let units: Vec<(usize, &str)> = recs.iter().map(|r| (r.template_id, r.instance_id.as_str())).collect();
    assert_eq!(units, [(0, "i01"), (1, "i00")]);
}

#[test]
fn missing_slot_aborts_before_requests() {
    let templates = vec!["{{y}}".to_string()];
    let inst = instances(1);
    let run = TaskRun {
        task_id: "t",
        model_id: "m",
        templates: &templates,
        instances: &inst,
        params: params(0.8, 1),
        concurrency: 1,
        retries: 0,
    };
    let err = run_task(&run, &Echo, &HashSet::new(), &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, RunError::Fill { .. }));
}

#[test]
fn canned_inference_cycles() {
    let c = CannedInference::parse_jsonl(
        "{\"template_id\":0,\"instance_id\":\"a\",\"responses\":[\"x\",\"y\"]}\n\
         {\"model_id\":\"m2\",\"template_id\":0,\"instance_id\":\"a\",\"response\":\"z\"}\n",
    )
    .unwrap();
    let p = params(0.8, 3);
    let req = |model| InferenceRequest {
        model_id: model,
        template_id: 0,
        instance_id: "a",
        prompt: "",
        params: &p,
        n: 3,
    };
    assert_eq!(c.generate(&req("m1")).unwrap(), ["x", "y", "x"]);
    assert_eq!(c.generate(&req("m2")).unwrap(), ["z", "z", "z"]);
}
