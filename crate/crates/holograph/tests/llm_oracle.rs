mod common;

use std::time::Duration;

use common::{completion, MockServer};
use holograph::core::error::Error;
use holograph::core::query::{Budget, Oracle, QueryCandidate, QueryKind};
use holograph::llm::LlmOracle;
use serde_json::Value;

fn query(kind: QueryKind, i: usize, j: usize) -> QueryCandidate {
    QueryCandidate { kind, i, j, epistemic: 1.0, instrumental: 0.0, efe_score: -1.0 }
}

fn names() -> Vec<String> {
    vec!["smoking".into(), "cancer".into(), "tar".into()]
}

#[test]
fn yes_with_high_confidence() {
    let server = MockServer::replying("Yes, smoking causes cancer. Confidence: high");
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_A"), "mock-model", names());
    let mut budget = Budget::new(10, 1000);
    let a = oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut budget).unwrap();
    assert_eq!(a.belief, 0.95);
    assert_eq!(a.confidence, 0.9);
    assert_eq!(a.tokens_used, 15);
    assert_eq!((budget.used_queries, budget.used_tokens), (1, 15));

    let reqs = server.requests.lock().unwrap();
    let body = &reqs[0].body;
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["max_tokens"], 4096);
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs[0]["role"], "system");
    let user = msgs[1]["content"].as_str().unwrap();
    assert!(user.contains("smoking") && user.contains("cancer"));
}

#[test]
fn api_key_comes_from_the_environment() {
    std::env::set_var("HOLOGRAPH_TEST_KEY_B", "sk-test-123");
    let server = MockServer::replying("No. Confidence: low");
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_B"), "mock-model", names());
    let a = oracle.ask(&query(QueryKind::Mechanism, 1, 2), &mut Budget::new(5, 1000)).unwrap();
    assert_eq!((a.belief, a.confidence), (0.05, 0.3));
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-test-123"));

    let server = MockServer::replying("yes");
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_UNSET"), "mock-model", names());
    oracle.ask(&query(QueryKind::Mechanism, 1, 2), &mut Budget::new(5, 1000)).unwrap();
    assert_eq!(server.requests.lock().unwrap()[0].header("authorization"), None);
}

#[test]
fn unparseable_reply_gets_one_reprompt_then_neutral() {
    let server = MockServer::replying("It depends on many factors.");
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_C"), "mock-model", names());
    let mut budget = Budget::new(10, 1000);
    let a = oracle.ask(&query(QueryKind::Direction, 0, 2), &mut budget).unwrap();
    assert_eq!((a.belief, a.confidence), (0.5, 0.0));
    assert_eq!(server.count(), 2);
    assert_eq!(budget.used_queries, 1);
    assert_eq!(budget.used_tokens, 30);
    let reqs = server.requests.lock().unwrap();
    let msgs = reqs[1].body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 4);
    assert_eq!(msgs[2]["role"], "assistant");
}

#[test]
fn reprompt_can_recover_a_verdict() {
    let server = MockServer::start(Box::new(|idx, _| {
        let text = if idx == 0 { "Hard to say." } else { "Yes. Confidence: medium" };
        (200, completion(text, 3, 2))
    }));
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_D"), "mock-model", names());
    let a = oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut Budget::new(10, 1000)).unwrap();
    assert_eq!((a.belief, a.confidence, a.tokens_used), (0.95, 0.6, 10));
}

#[test]
fn transport_failures_retry_then_give_up() {
    let server = MockServer::start(Box::new(|_, _| (503, "{\"error\":\"overloaded\"}".into())));
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_E"), "mock-model", names())
        .with_retry(3, Duration::from_millis(1));
    let err = oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut Budget::new(10, 1000)).unwrap_err();
    assert!(matches!(err, Error::OracleUnavailable(_)));
    assert_eq!(server.count(), 4);

    let flaky = MockServer::start(Box::new(|idx, _| {
        if idx < 2 {
            (500, "{}".into())
        } else {
            (200, completion("yes", 1, 1))
        }
    }));
    let mut oracle = LlmOracle::new(&flaky.spec("HOLOGRAPH_TEST_KEY_E"), "mock-model", names())
        .with_retry(3, Duration::from_millis(1));
    let a = oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut Budget::new(10, 1000)).unwrap();
    assert_eq!(a.belief, 0.95);
    assert_eq!(flaky.count(), 3);

    let mut closed = LlmOracle::new(&holograph::core::experiment::LlmSpec {
        base_url: "http://127.0.0.1:1/v1".into(),
        ..server.spec("HOLOGRAPH_TEST_KEY_E")
    }, "m", names())
    .with_retry(2, Duration::from_millis(1));
    assert!(matches!(
        closed.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut Budget::new(1, 10)),
        Err(Error::OracleUnavailable(_))
    ));
}

#[test]
fn budget_is_checked_before_sending() {
    let server = MockServer::replying("yes");
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_F"), "mock-model", names());
    let mut budget = Budget::new(3, 1_000);
    for _ in 0..3 {
        oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut budget).unwrap();
    }
    assert_eq!(oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut budget), Err(Error::BudgetExhausted));
    assert_eq!(server.count(), 3);

    let mut tokens = Budget::new(100, 20);
    oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut tokens).unwrap();
    oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut tokens).unwrap();
    assert_eq!(oracle.ask(&query(QueryKind::EdgeExistence, 0, 1), &mut tokens), Err(Error::BudgetExhausted));
    assert_eq!(server.count(), 5);
    assert_eq!(tokens.used_tokens, 20);
}

#[test]
fn audit_log_has_timestamps_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let server = MockServer::start(Box::new(|idx, _| {
        if idx == 0 {
            (502, "{}".into())
        } else {
            (200, completion("No. Confidence: 80%", 7, 4))
        }
    }));
    let mut oracle = LlmOracle::new(&server.spec("HOLOGRAPH_TEST_KEY_G"), "mock-model", names())
        .with_retry(3, Duration::from_millis(1))
        .with_audit(&path)
        .unwrap();
    let a = oracle.ask(&query(QueryKind::Confounder, 0, 1), &mut Budget::new(5, 1000)).unwrap();
    assert_eq!((a.belief, a.confidence), (0.05, 0.8));
    drop(oracle);
    let lines: Vec<Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        let ts = l["timestamp"].as_str().unwrap();
        assert!(chrono_like(ts), "{ts}");
        assert!(l["request"]["messages"].is_array());
        assert_eq!(l["query"]["kind"], "confounder");
    }
    assert_eq!(lines[0]["status"], 502);
    assert!(lines[0]["error"].is_string());
    assert_eq!(lines[1]["total_tokens"], 11);
    assert_eq!(lines[1]["prompt_tokens"], 7);
    assert_eq!(lines[1]["completion_tokens"], 4);
    assert_eq!(lines[1]["response"]["choices"][0]["message"]["content"], "No. Confidence: 80%");
}

fn chrono_like(ts: &str) -> bool {
    ts.len() >= 20 && ts.as_bytes()[4] == b'-' && ts.as_bytes()[10] == b'T'
}
