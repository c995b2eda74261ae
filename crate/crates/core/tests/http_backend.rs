//! HTTP provider against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use leap_core::backend::{BackendError, ChatBackend, ChatRequest, Embedder, HttpBackend, Message, RetryPolicy};

struct Captured {
    path: String,
    auth: Option<String>,
    body: String,
}

/// Serves one canned (status, body) per connection, in order.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                path,
                auth,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn backend(url: &str, retries: u32) -> HttpBackend {
    HttpBackend::new(
        url,
        "gpt-test",
        "embed-test",
        3,
        Some("sk-test".into()),
        RetryPolicy {
            max_retries: retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        },
        Duration::from_secs(5),
    )
    .unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        system_prompt: "sys".into(),
        messages: vec![Message::user("hello")],
        temperature: 0.0,
        top_p: 1.0,
        max_tokens: 16,
        tag: None,
    }
}

const OK_CHAT: &str = r#"{"choices":[{"message":{"role":"assistant","content":"fine"}}]}"#;

#[test]
fn retries_transient_failures_then_succeeds() {
    let (url, seen) = stub(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, OK_CHAT.into()),
    ]);
    let b = backend(&url, 3);
    assert_eq!(b.complete(&request()).unwrap(), "fine");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let golden = r#"{"model":"gpt-test","messages":[{"role":"system","content":"sys"},{"role":"user","content":"hello"}],"temperature":0.0,"top_p":1.0,"max_tokens":16}"#;
    for c in seen.iter() {
        assert_eq!(c.path, "/v1/chat/completions");
        assert_eq!(c.auth.as_deref(), Some("Bearer sk-test"));
        assert_eq!(c.body, golden);
    }
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![(400, r#"{"error":"bad"}"#.into()), (200, OK_CHAT.into())]);
    let err = backend(&url, 3).complete(&request()).unwrap_err();
    match err {
        BackendError::Provider { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("expected provider error, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_report_timeout() {
    let (url, seen) = stub(vec![(503, "{}".into()), (429, "{}".into()), (502, "{}".into())]);
    let err = backend(&url, 2).complete(&request()).unwrap_err();
    match err {
        BackendError::Timeout { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(last.contains("502"), "{last}");
        }
        other => panic!("expected timeout, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn malformed_success_body_is_decode_error() {
    let (url, _) = stub(vec![(200, r#"{"choices":[]}"#.into())]);
    assert!(matches!(
        backend(&url, 0).complete(&request()),
        Err(BackendError::Decode(_))
    ));
}

#[test]
fn embeddings_golden_body_and_dimension_check() {
    let (url, seen) = stub(vec![
        (200, r#"{"data":[{"embedding":[0.5,-1.0,2.0]}]}"#.into()),
        (200, r#"{"data":[{"embedding":[0.5]}]}"#.into()),
    ]);
    let b = backend(&url, 0);
    assert_eq!(b.embed("some text").unwrap().as_slice(), &[0.5, -1.0, 2.0]);
    assert!(matches!(b.embed("again"), Err(BackendError::Decode(_))));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body, r#"{"model":"embed-test","input":"some text"}"#);
}

#[test]
fn empty_text_is_rejected_before_sending() {
    let b = backend("http://127.0.0.1:9/v1", 0);
    assert!(matches!(b.embed("   "), Err(BackendError::Precondition(_))));
}
