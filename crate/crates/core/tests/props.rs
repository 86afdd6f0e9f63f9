mod support;

use std::collections::BTreeMap;

use proptest::prelude::*;

use apiguard_core::auth::AuthIdentity;
use apiguard_core::corpus::{concat_and_bind, slice_prefix, PoolEntry};
use apiguard_core::http::{
    Binding, Body, ExecutedCall, Extractor, HttpAction, Provenance, Slot, StatusExpectation, TestCase, TimingExpectation,
};
use apiguard_core::report::JsonPlan;
use apiguard_core::schema::{EndpointId, Verb};

use support::reference;

const PATHS: [&str; 4] = ["/a", "/a/{id}", "/a/{id}/b/{sub}", "/c/{sub}"];

fn action() -> impl Strategy<Value = HttpAction> {
    (
        prop::sample::select(vec![Verb::Get, Verb::Put, Verb::Delete, Verb::Post]),
        prop::sample::select(PATHS.to_vec()),
        prop::sample::select(vec!["FOO", "BAR", "anonymous"]),
        0u32..50,
        "[a-z]{1,6}",
        prop::option::of(prop::sample::select(vec![200u16, 201, 403, 404])),
        prop::option::of(0.0f64..6000.0),
        prop::option::of("[ -~]{0,12}"),
    )
        .prop_map(|(verb, path, who, id, sub, status, timing, body)| {
            let ep = EndpointId::new(verb, path);
            let mut a = HttpAction::new(ep.clone(), who);
            for p in ep.placeholders() {
                let v = if p == "id" { id.to_string() } else { sub.clone() };
                a.path_args.insert(p, v);
            }
            a.query = vec![("q".into(), sub.clone())];
            a.expected_status = status.map(StatusExpectation::Exact);
            a.timing = timing.map(TimingExpectation::LessThanMs);
            a.body = body.map(|t| Body::json(serde_json::json!({ "name": t, "n": id })));
            a
        })
}

fn test_case(max: usize) -> impl Strategy<Value = TestCase> {
    prop::collection::vec(action(), 1..=max)
        .prop_flat_map(|calls| {
            let n = calls.len();
            let bindings = prop::collection::vec((0..n, 0..n, any::<bool>()), 0..=n);
            (Just(calls), bindings)
        })
        .prop_map(|(calls, raw)| {
            let mut t = TestCase::new(calls, Provenance::SecuritySynthesis(206));
            for (a, b, loc) in raw {
                let (src, dst) = (a.min(b), a.max(b));
                if src == dst || !t.calls[dst].endpoint.placeholders().contains(&"id".to_string()) {
                    continue;
                }
                if t.bindings.iter().any(|x| x.target_call_index == dst) {
                    continue;
                }
                t.bindings.push(Binding {
                    source_call_index: src,
                    extractor: if loc { Extractor::LocationHeader } else { Extractor::BodyField("id".into()) },
                    target_call_index: dst,
                    target_slot: Slot::PathArg("id".into()),
                });
            }
            t
        })
}

fn entry(test: TestCase, statuses: Vec<u16>, cut: usize) -> PoolEntry {
    let executed = test
        .calls
        .iter()
        .zip(statuses.iter().cycle())
        .take(cut.clamp(1, test.calls.len()))
        .map(|(a, s)| ExecutedCall {
            action: a.clone(),
            status: *s,
            response_headers: BTreeMap::new(),
            response_body: String::new(),
            body_truncated: false,
            duration_ms: 1.0,
            timed_out: *s == 0,
        })
        .collect();
    PoolEntry { test, executed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn json_plan_is_lossless(tests in prop::collection::vec(test_case(5), 0..4)) {
        let plan = JsonPlan {
            format_version: 1,
            base_url: "http://127.0.0.1:1".into(),
            identities: vec![
                AuthIdentity::with_headers("FOO", &[("Authorization", "FOO")]),
                AuthIdentity::anonymous(),
            ],
            tests: tests
                .into_iter()
                .enumerate()
                .map(|(i, test)| apiguard_core::report::PlanTest {
                    name: format!("t{i}"),
                    fault_code: Some(204),
                    fault_comment: None,
                    test,
                })
                .collect(),
        };
        let back = JsonPlan::parse(&plan.to_json()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn slicing_matches_reference(
        t in test_case(5),
        statuses in prop::collection::vec(prop::sample::select(vec![0u16, 200, 201, 403, 404, 500]), 1..5),
        cut in 1usize..6,
        k in 0usize..6,
    ) {
        let e = entry(t, statuses, cut);
        match (slice_prefix(&e, k), reference::prefix(&e, k)) {
            (Ok(got), Some(want)) => {
                prop_assert_eq!(reference::flatten(&got), want);
                prop_assert!(got.calls.iter().all(|c| c.timing.is_none()));
                prop_assert!(got.validate().is_ok());
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "impl {:?} vs reference {:?}", got.is_ok(), want.is_some()),
        }
    }

    #[test]
    fn binding_matches_reference(head in test_case(5), tail in test_case(5), bind: bool) {
        match (concat_and_bind(&head, &tail, bind), reference::concat(&head, &tail, bind)) {
            (Ok(got), Some(want)) => {
                prop_assert_eq!(reference::flatten(&got), want);
                prop_assert!(got.validate().is_ok());
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "impl {:?} vs reference {:?}", got, want.is_some()),
        }
    }
}
