//! The chat client against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use hiprompt::knowledge::{run_pipeline, AcquireConfig, CategorySet, LiveClient, LiveConfig, LlmClient, MockLlm};
use hiprompt::Error;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: Value,
}

type Responder = Box<dyn Fn(usize, &Value) -> (u16, String) + Send + Sync>;

/// Serves one response per connection and records every request.
fn serve(respond: Responder) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    authorization = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let index = {
                let mut seen = log.lock().unwrap();
                seen.push(Seen { authorization, body: body.clone() });
                seen.len() - 1
            };
            let (status, payload) = respond(index, &body);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

fn completion(content: &str) -> String {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

fn config(url: &str) -> LiveConfig {
    let mut cfg = LiveConfig::new(url, "test-model");
    cfg.backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(10);
    cfg
}

#[test]
fn retries_transient_failures_then_succeeds() {
    let (url, seen) = serve(Box::new(|i, _| if i < 2 { (503, "busy".into()) } else { (200, completion("1. red\n2. blue")) }));
    let mut cfg = config(&url);
    cfg.api_key = Some("secret".into());
    let answer = LiveClient::new(cfg).ask("What colors?").unwrap();
    assert_eq!(answer, "1. red\n2. blue");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[2].authorization.as_deref(), Some("Bearer secret"));
    assert_eq!(seen[2].body["model"], "test-model");
    assert_eq!(seen[2].body["messages"][0]["content"], "What colors?");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(Box::new(|_, _| (400, "{}".into())));
    let err = LiveClient::new(config(&url)).ask("anything").unwrap_err();
    assert!(matches!(err, Error::Client(_)));
    assert_eq!(err.exit_code(), 3);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, seen) = serve(Box::new(|_, _| (500, "{}".into())));
    let mut cfg = config(&url);
    cfg.max_attempts = 2;
    assert!(matches!(LiveClient::new(cfg).ask("q"), Err(Error::Client(_))));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn malformed_body_is_a_client_error() {
    let (url, _) = serve(Box::new(|_, _| (200, json!({ "choices": [] }).to_string())));
    assert!(matches!(LiveClient::new(config(&url)).ask("q"), Err(Error::Client(_))));
}

#[test]
fn cached_answers_skip_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = serve(Box::new(|_, _| (200, completion("1. cached"))));
    let mut cfg = config(&url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let client = LiveClient::new(cfg.clone());
    assert_eq!(client.ask("q").unwrap(), "1. cached");
    assert_eq!(LiveClient::new(cfg).ask("q").unwrap(), "1. cached");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn live_pipeline_matches_mock_pipeline() {
    // The server answers with the mock, so both paths must agree exactly.
    let mock = MockLlm::new(4);
    let (url, _) = serve(Box::new(move |_, body| {
        let question = body["messages"][0]["content"].as_str().unwrap_or_default();
        match mock.ask(question) {
            Ok(answer) => (200, completion(&answer)),
            Err(_) => (400, "{}".into()),
        }
    }));
    let cats = CategorySet::new(["knife", "fork", "sofa", "chair"]).unwrap();
    let acquire = AcquireConfig {
        per_attribute: 2,
        fine_attributes: Some(2),
        per_pair: 3,
        ..AcquireConfig::default()
    };
    let live = run_pipeline(&LiveClient::new(config(&url)), &cats, &acquire).unwrap();
    let offline = run_pipeline(&MockLlm::new(4), &cats, &acquire).unwrap();
    assert_eq!(live, offline);
}
