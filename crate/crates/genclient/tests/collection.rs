use std::collections::HashMap;
use std::time::Duration;

use dimt_core::mbr::Origin;
use dimt_core::types::Segment;
use dimt_core::jsonl::JsonlRecord;
use dimt_genclient::mock::{
    EchoResponder, FailFirst, LedgerEntry, MockOptions, MockReply, MockRequest, MockServer, Responder,
};
use dimt_genclient::{EndpointConfig, GenClient, GenError, PromptTemplate, RequestKind, SamplingConfig};

fn endpoint(server: &MockServer) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(server.base_url(), "mock-model");
    cfg.backoff_base_ms = 40;
    cfg.backoff_cap_ms = 400;
    cfg.timeout_secs = 10.0;
    cfg
}

fn template() -> PromptTemplate {
    PromptTemplate::new("Translate:\n{source_text}").unwrap()
}

fn sampled_entries(ledger: &[LedgerEntry]) -> impl Iterator<Item = &LedgerEntry> {
    ledger.iter().filter(|e| e.request_id.as_deref().is_some_and(|id| id.contains("/sample-")))
}

#[tokio::test]
async fn defaults_yield_eleven_candidates_deterministic_first() {
    let server = MockServer::start(EchoResponder).await.unwrap();
    let client = GenClient::new(endpoint(&server), SamplingConfig::default()).unwrap();
    let set = client
        .collect_candidates(&Segment::text("s1", "hello world"), "hello world")
        .await
        .unwrap();

    assert_eq!(set.candidates.len(), 11);
    assert_eq!(set.candidates[0].origin, Origin::Deterministic);
    assert_eq!(set.candidates[0].text, "hello world");
    for (k, c) in set.candidates[1..].iter().enumerate() {
        assert_eq!(c.origin, Origin::Sampled);
        assert_eq!(c.sample_index, Some(k as u32));
        assert_eq!(c.text, format!("hello world #{k}"));
    }
    set.validate().unwrap();
    assert_eq!(server.request_count(), 11);
}

#[tokio::test]
async fn ledger_shows_sampling_parameters_only_on_sampled_requests() {
    let server = MockServer::start(EchoResponder).await.unwrap();
    let client = GenClient::new(endpoint(&server), SamplingConfig::default()).unwrap();
    client.collect_candidates(&Segment::text("s1", "x"), "x").await.unwrap();

    let ledger = server.ledger();
    let det: Vec<_> = ledger
        .iter()
        .filter(|e| e.request_id.as_deref() == Some("s1/deterministic"))
        .collect();
    assert_eq!(det.len(), 1);
    assert!(det[0].body.get("temperature").is_none());
    assert!(det[0].body.get("top_p").is_none());
    assert_eq!(det[0].body["top_k"], 1);

    let sampled: Vec<_> = sampled_entries(&ledger).collect();
    assert_eq!(sampled.len(), 10);
    for e in sampled {
        assert_eq!(e.body["temperature"], 0.7);
        assert_eq!(e.body["top_p"], 0.95);
        assert_eq!(e.body["n"], 1);
        assert_eq!(e.body["model"], "mock-model");
    }
}

#[tokio::test]
async fn zero_samples_gives_single_candidate() {
    let server = MockServer::start(EchoResponder).await.unwrap();
    let sampling = SamplingConfig { num_samples: 0, ..SamplingConfig::default() };
    let client = GenClient::new(endpoint(&server), sampling).unwrap();
    let set = client.collect_candidates(&Segment::text("s", "only"), "only").await.unwrap();
    assert_eq!(set.candidates.len(), 1);
    assert_eq!(set.candidates[0].origin, Origin::Deterministic);
}

#[tokio::test]
async fn retries_follow_backoff_schedule() {
    let server = MockServer::start(FailFirst { failures: 2, status: 503, inner: EchoResponder })
        .await
        .unwrap();
    let cfg = endpoint(&server);
    let sampling = SamplingConfig { num_samples: 0, ..SamplingConfig::default() };
    let client = GenClient::new(cfg.clone(), sampling).unwrap();
    let set = client.collect_candidates(&Segment::text("s", "abc"), "abc").await.unwrap();
    assert_eq!(set.generation.as_ref().unwrap().retries, 2);
    assert_eq!(client.retries(), 2);

    let ledger = server.ledger();
    assert_eq!(ledger.len(), 3);
    assert_eq!(ledger.iter().map(|e| e.status).collect::<Vec<_>>(), [503, 503, 200]);
    for k in 0..2 {
        let gap = ledger[k + 1].arrived - ledger[k].arrived;
        let floor = cfg.backoff_ceiling(k as u32) / 2;
        assert!(gap >= floor, "retry {k}: gap {gap:?} < {floor:?}");
    }
}

#[tokio::test]
async fn failing_twice_with_defaults_still_yields_eleven() {
    let server = MockServer::start(FailFirst { failures: 2, status: 500, inner: EchoResponder })
        .await
        .unwrap();
    let client = GenClient::new(endpoint(&server), SamplingConfig::default()).unwrap();
    let set = client.collect_candidates(&Segment::text("s", "abc"), "abc").await.unwrap();
    assert_eq!(set.candidates.len(), 11);
    // Every one of the 11 requests failed twice.
    assert_eq!(set.generation.unwrap().retries, 22);
    assert_eq!(server.request_count(), 11 + 22);
}

#[tokio::test]
async fn exhausted_retries_name_segment_and_kind() {
    let server = MockServer::start(|_: &MockRequest<'_>| MockReply::Status(502, "down".into()))
        .await
        .unwrap();
    let mut cfg = endpoint(&server);
    cfg.max_retries = 1;
    let sampling = SamplingConfig { num_samples: 0, ..SamplingConfig::default() };
    let client = GenClient::new(cfg, sampling).unwrap();
    let err = client.collect_candidates(&Segment::text("seg-9", "a"), "a").await.unwrap_err();
    match &err {
        GenError::Exhausted { segment_id, kind, attempts, .. } => {
            assert_eq!(segment_id, "seg-9");
            assert_eq!(*kind, RequestKind::Deterministic);
            assert_eq!(*attempts, 2);
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.to_string().contains("seg-9"));
    assert_eq!(server.request_count(), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let server = MockServer::start(|_: &MockRequest<'_>| MockReply::Status(401, "bad key".into()))
        .await
        .unwrap();
    let sampling = SamplingConfig { num_samples: 0, ..SamplingConfig::default() };
    let client = GenClient::new(endpoint(&server), sampling).unwrap();
    let err = client.collect_candidates(&Segment::text("s", "a"), "a").await.unwrap_err();
    assert!(err.is_configuration());
    assert!(matches!(err, GenError::Rejected { status: 401, .. }));
    assert_eq!(server.request_count(), 1);
}

#[tokio::test]
async fn rate_limits_and_malformed_bodies_are_retried() {
    let server = MockServer::start(|r: &MockRequest<'_>| match r.attempt {
        0 => MockReply::Status(429, "slow down".into()),
        1 => MockReply::Malformed,
        _ => MockReply::Content("ok".into()),
    })
    .await
    .unwrap();
    let sampling = SamplingConfig { num_samples: 0, ..SamplingConfig::default() };
    let client = GenClient::new(endpoint(&server), sampling).unwrap();
    let set = client.collect_candidates(&Segment::text("s", "a"), "a").await.unwrap();
    assert_eq!(set.candidates[0].text, "ok");
    assert_eq!(server.request_count(), 3);
}

#[tokio::test]
async fn batch_preserves_order_and_bounds_concurrency() {
    let server = MockServer::start_with(
        EchoResponder,
        MockOptions { latency: Duration::from_millis(30), ..MockOptions::default() },
    )
    .await
    .unwrap();
    let mut cfg = endpoint(&server);
    cfg.max_concurrent_requests = 2;
    let sampling = SamplingConfig { num_samples: 3, ..SamplingConfig::default() };
    let client = GenClient::new(cfg, sampling).unwrap();
    let segments: Vec<_> = (0..5).map(|i| Segment::text(format!("seg-{i}"), format!("text {i}"))).collect();

    let results = client.collect_batch(segments, &template(), false).await.unwrap();
    assert_eq!(results.len(), 5);
    for (i, r) in results.iter().enumerate() {
        let set = r.as_ref().unwrap();
        assert_eq!(set.segment_id, format!("seg-{i}"));
        assert_eq!(set.candidates.len(), 4);
        assert_eq!(set.candidates[0].text, format!("Translate:\ntext {i}"));
    }
    assert!(server.max_in_flight() <= 2, "saw {} in flight", server.max_in_flight());
    assert!(server.max_in_flight() >= 1);
    assert_eq!(server.request_count(), 5 * 4);
}

#[tokio::test]
async fn empty_batch_is_empty() {
    let server = MockServer::start(EchoResponder).await.unwrap();
    let client = GenClient::new(endpoint(&server), SamplingConfig::default()).unwrap();
    let results = client.collect_batch(Vec::new(), &template(), false).await.unwrap();
    assert!(results.is_empty());
    assert_eq!(server.request_count(), 0);
}

fn fail_segment_2(r: &MockRequest<'_>) -> MockReply {
    match r.kind() {
        Some(("seg-2", _)) => MockReply::Status(500, "broken".into()),
        _ => EchoResponder.respond(r),
    }
}

#[tokio::test]
async fn permanent_failure_is_reported_inline() {
    let server = MockServer::start(fail_segment_2).await.unwrap();
    let mut cfg = endpoint(&server);
    cfg.max_retries = 1;
    let sampling = SamplingConfig { num_samples: 2, ..SamplingConfig::default() };
    let client = GenClient::new(cfg, sampling).unwrap();
    let segments: Vec<_> = (0..5).map(|i| Segment::text(format!("seg-{i}"), "t")).collect();

    let results = client.collect_batch(segments.clone(), &template(), false).await.unwrap();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 4);
    let err = results[2].as_ref().unwrap_err();
    assert_eq!(err.segment_id(), Some("seg-2"));

    let err = client.collect_batch(segments, &template(), true).await.unwrap_err();
    assert_eq!(err.segment_id(), Some("seg-2"));
}

#[tokio::test]
async fn request_count_matches_invariant() {
    let server = MockServer::start(FailFirst { failures: 1, status: 503, inner: EchoResponder })
        .await
        .unwrap();
    let sampling = SamplingConfig { num_samples: 4, ..SamplingConfig::default() };
    let client = GenClient::new(endpoint(&server), sampling.clone()).unwrap();
    let segments: Vec<_> = (0..3).map(|i| Segment::text(format!("s{i}"), "t")).collect();
    let results = client.collect_batch(segments, &template(), true).await.unwrap();
    let retries: u32 = results.iter().map(|r| r.as_ref().unwrap().generation.as_ref().unwrap().retries).sum();

    let expected = 3 * sampling.requests_per_segment() + retries as usize;
    assert_eq!(server.request_count(), expected);
    assert_eq!(client.requests_sent() as usize, expected);

    let mut per_id: HashMap<String, usize> = HashMap::new();
    for e in server.ledger() {
        *per_id.entry(e.request_id.unwrap()).or_default() += 1;
    }
    assert_eq!(per_id.len(), 15);
    assert!(per_id.values().all(|&n| n == 2));
}

#[tokio::test]
async fn candidate_text_is_byte_identical() {
    let tricky = "  lead\u{3000}全角  trailing \n\r\ttabs ——— \u{FEFF}bom é\u{301}  ";
    let server = MockServer::start(move |_: &MockRequest<'_>| MockReply::Content(tricky.to_string()))
        .await
        .unwrap();
    let client = GenClient::new(endpoint(&server), SamplingConfig::default()).unwrap();
    let set = client.collect_candidates(&Segment::text("s", "a"), "a").await.unwrap();
    assert!(set.candidates.iter().all(|c| c.text == tricky));
}
