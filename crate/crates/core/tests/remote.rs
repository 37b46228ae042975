mod common;

use std::time::Duration;

use common::{chat_body, MockServer};
use sdgmap::embed::{remote_embed, EmbedError, EmbeddingProvider, RemoteEmbedder};
use sdgmap::llmtag::{ChatClient, ChatRequest, LlmError, RetryPolicy};

fn fast_policy(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        sleep: Duration::from_millis(5),
        max_attempts,
    }
}

fn client(server: &MockServer) -> ChatClient {
    ChatClient::new(&server.url(), "test-key", Duration::from_secs(5)).unwrap()
}

#[test]
fn fail_fail_succeed_makes_three_requests() {
    let server = MockServer::scripted(vec![
        (502, "{}".into()),
        (503, "{}".into()),
        (200, chat_body("1. Goal 7 - confidence level: High (90%)")),
    ]);
    let answer = client(&server)
        .complete_with_retry(&ChatRequest::user("hello"), &fast_policy(10))
        .unwrap();
    assert_eq!(server.requests(), 3);
    assert!(answer.contains("Goal 7"));
}

#[test]
fn permanent_failure_exhausts_attempts() {
    let server = MockServer::scripted(vec![(502, "bad gateway".into())]);
    let err = client(&server)
        .complete_with_retry(&ChatRequest::user("hello"), &fast_policy(3))
        .unwrap_err();
    assert_eq!(server.requests(), 3);
    match err {
        LlmError::RetriesExhausted { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(matches!(*last, LlmError::Server { status: 502, .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rate_limit_is_retried() {
    let server = MockServer::scripted(vec![(429, "{}".into()), (200, chat_body("ok"))]);
    let answer = client(&server)
        .complete_with_retry(&ChatRequest::user("hello"), &fast_policy(5))
        .unwrap();
    assert_eq!(answer, "ok");
    assert_eq!(server.requests(), 2);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = MockServer::scripted(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let err = client(&server)
        .complete_with_retry(&ChatRequest::user("hello"), &fast_policy(5))
        .unwrap_err();
    assert!(matches!(err, LlmError::Auth { status: 401 }));
    assert_eq!(server.requests(), 1);
}

#[test]
fn bad_request_is_not_retried() {
    let server = MockServer::scripted(vec![(400, "{}".into())]);
    let err = client(&server)
        .complete_with_retry(&ChatRequest::user("hello"), &fast_policy(5))
        .unwrap_err();
    assert!(matches!(err, LlmError::Rejected { status: 400, .. }));
    assert_eq!(server.requests(), 1);
}

#[test]
fn malformed_body_is_protocol_error() {
    let server = MockServer::scripted(vec![(200, "{\"choices\":[]}".into())]);
    let err = client(&server)
        .complete(&ChatRequest::user("hello"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)));
}

#[test]
fn request_carries_model_and_bearer_key() {
    let seen = std::sync::Arc::new(std::sync::Mutex::new(None));
    let captured = seen.clone();
    let server = MockServer::start(move |req, _| {
        *captured.lock().unwrap() = Some((
            req.path.clone(),
            req.header("authorization").map(str::to_string),
            req.json(),
        ));
        (200, chat_body("fine"))
    });
    client(&server)
        .complete(&ChatRequest::user("prompt text"))
        .unwrap();
    let (path, auth, body) = seen.lock().unwrap().take().unwrap();
    assert_eq!(path, "/chat/completions");
    assert_eq!(auth.as_deref(), Some("Bearer test-key"));
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["max_tokens"], 600);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "prompt text");
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let c = ChatClient::new(
        &format!("http://127.0.0.1:{port}"),
        "k",
        Duration::from_secs(2),
    )
    .unwrap();
    let err = c
        .complete_with_retry(&ChatRequest::user("x"), &fast_policy(2))
        .unwrap_err();
    match err {
        LlmError::RetriesExhausted { attempts: 2, last } => {
            assert!(matches!(*last, LlmError::Transport(_)))
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn embed_server(dim: usize) -> MockServer {
    MockServer::start(move |req, _| {
        let texts = req.json()["texts"].as_array().cloned().unwrap_or_default();
        let vectors: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| {
                let len = t.as_str().unwrap_or("").len() as f64;
                (0..dim).map(|i| if i == 0 { 1.0 } else { len }).collect()
            })
            .collect();
        (200, serde_json::json!({ "vectors": vectors }).to_string())
    })
}

#[test]
fn remote_embed_roundtrip() {
    let server = embed_server(3);
    let texts: Vec<String> = ["a", "bb", "ccc"].iter().map(|s| s.to_string()).collect();
    let out = remote_embed(&server.url(), &texts, 3).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[1].values(), &[1.0, 2.0, 2.0]);
}

#[test]
fn remote_embed_preserves_order_across_batches() {
    let server = embed_server(2);
    let texts: Vec<String> = (0..150).map(|i| "x".repeat(i + 1)).collect();
    let embedder =
        RemoteEmbedder::with_options(server.url(), 2, 4, 16, Duration::from_secs(5)).unwrap();
    let out = embedder.embed(&texts).unwrap();
    assert_eq!(out.len(), 150);
    for (i, v) in out.iter().enumerate() {
        assert_eq!(v.values()[1], (i + 1) as f64);
    }
    assert_eq!(server.requests(), 10);
}

#[test]
fn remote_embed_wrong_arity_is_protocol_error() {
    let server = MockServer::scripted(vec![(200, "{\"vectors\":[[1.0,0.0]]}".into())]);
    let texts = vec!["a".to_string(), "b".to_string()];
    let err = remote_embed(&server.url(), &texts, 2).unwrap_err();
    assert!(matches!(err, EmbedError::Protocol(_)), "{err:?}");
}

#[test]
fn remote_embed_wrong_length_is_dimension_mismatch() {
    let server = MockServer::scripted(vec![(200, "{\"vectors\":[[1.0,0.0,0.5]]}".into())]);
    let err = remote_embed(&server.url(), &["a".to_string()], 2).unwrap_err();
    assert!(
        matches!(
            err,
            EmbedError::DimensionMismatch {
                expected: 2,
                found: 3
            }
        ),
        "{err:?}"
    );
}

#[test]
fn remote_embed_server_error_is_transport_error() {
    let server = MockServer::scripted(vec![(500, "{}".into())]);
    let err = remote_embed(&server.url(), &["a".to_string()], 2).unwrap_err();
    assert!(matches!(err, EmbedError::Transport(_)));
}
