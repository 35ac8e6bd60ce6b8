//! The HTTP gateway against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use mcq_harness::gateway::{
    GatewayError, HttpGateway, ModelGateway, ModelSpec, Provider, QueryRequest, RetryPolicy, TrialKey,
};

/// Serve `responses` in order, one per connection, and count requests.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut buf = vec![0; len];
            let _ = reader.read_exact(&mut buf);
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (format!("http://{addr}"), hits)
}

fn spec(provider: Provider, base_url: String) -> ModelSpec {
    let mut s = ModelSpec::new(provider, "test-model");
    s.base_url = Some(base_url);
    s.rate_limit = 100.0;
    s.retry = RetryPolicy {
        max_attempts: 3,
        backoff_base_ms: 1,
    };
    s
}

fn request() -> QueryRequest {
    QueryRequest {
        prompt: "pick one".into(),
        options: vec!["a".into(), "b".into()],
        key: TrialKey::Null {
            n: 2,
            trial: 0,
            attempt: 0,
        },
        truth: None,
    }
}

#[test]
fn server_errors_exhaust_retries() {
    let (url, hits) = serve(vec![(503, "{}".into()); 3]);
    let gw = HttpGateway::with_api_key(spec(Provider::OpenaiLike, url), "k").unwrap();
    match gw.query(&request()) {
        Err(GatewayError::Provider {
            status: Some(503),
            attempts: 3,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn recovers_after_transient_failure() {
    let ok = r#"{"choices":[{"message":{"content":"b"}}]}"#.to_string();
    let (url, hits) = serve(vec![(500, "{}".into()), (429, "{}".into()), (200, ok)]);
    let gw = HttpGateway::with_api_key(spec(Provider::GroqLike, url), "k").unwrap();
    assert_eq!(gw.query(&request()).unwrap(), "b");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_rate_limit() {
    let (url, _) = serve(vec![(429, "{}".into()); 3]);
    let gw = HttpGateway::with_api_key(spec(Provider::OpenaiLike, url), "k").unwrap();
    assert!(matches!(gw.query(&request()), Err(GatewayError::RateLimited { attempts: 3 })));
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, hits) = serve(vec![(401, "{}".into()); 3]);
    let gw = HttpGateway::with_api_key(spec(Provider::AnthropicLike, url), "k").unwrap();
    assert!(matches!(gw.query(&request()), Err(GatewayError::Unauthorized { status: 401 })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn provider_response_shapes() {
    let cases = [
        (Provider::AnthropicLike, r#"{"content":[{"type":"text","text":"a"}]}"#),
        (
            Provider::GoogleLike,
            r#"{"candidates":[{"content":{"parts":[{"text":"a"}]}}]}"#,
        ),
        (Provider::OpenaiLike, r#"{"choices":[{"message":{"content":"a"}}]}"#),
    ];
    for (provider, body) in cases {
        let (url, _) = serve(vec![(200, body.into())]);
        let gw = HttpGateway::with_api_key(spec(provider, url), "k").unwrap();
        assert_eq!(gw.query(&request()).unwrap(), "a", "{provider:?}");
    }
}

#[test]
fn missing_credentials() {
    std::env::remove_var("GROQ_API_KEY");
    let s = ModelSpec::new(Provider::GroqLike, "llama-3");
    match HttpGateway::from_env(s) {
        Err(GatewayError::Auth { env_var, .. }) => assert_eq!(env_var, "GROQ_API_KEY"),
        other => panic!("unexpected {other:?}"),
    }
}
