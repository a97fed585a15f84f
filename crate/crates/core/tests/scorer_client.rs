use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use medcorr::http::RetryPolicy;
use medcorr::metrics::{HttpScorer, ScorerError, SemanticScorer};
use serde_json::{json, Value};

struct Request {
    method: String,
    path: String,
    body: Value,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap().to_string();
    let path = parts.next().unwrap().to_string();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).unwrap();
        if header.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    Request {
        method,
        path,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    }
}

/// Serves one canned response per connection, in order, and reports what
/// it received.
fn serve(responses: Vec<(u16, Value)>) -> (String, mpsc::Receiver<Request>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let req = read_request(&mut stream);
            tx.send(req).unwrap();
            let body = body.to_string();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn quick_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_backoff_ms: 1,
        max_backoff_ms: 5,
    }
}

fn pairs() -> Vec<(String, String)> {
    vec![("a b".into(), "a c".into()), ("x".into(), "x".into())]
}

#[test]
fn posts_pairs_and_reads_scores() {
    let reply = json!({"results": [
        {"bertscore": 0.5, "bleurt": 0.25},
        {"bertscore": 1.0, "bleurt": 0.75}
    ]});
    let (url, rx) = serve(vec![(200, reply)]);
    let scorer = HttpScorer::new(url, Duration::from_secs(5), quick_retry(1));
    let scores = scorer.score(&pairs()).unwrap();
    assert_eq!(scores[1].bertscore, 1.0);
    assert_eq!(scores[0].bleurt, 0.25);
    let req = rx.recv().unwrap();
    assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/score"));
    assert_eq!(req.body["pairs"][0]["candidate"], "a b");
    assert_eq!(req.body["pairs"][0]["reference"], "a c");
}

#[test]
fn retries_transient_failures() {
    let ok = json!([{"bertscore": 0.1, "bleurt": 0.2}, {"bertscore": 0.3, "bleurt": 0.4}]);
    let (url, rx) = serve(vec![(503, json!({"error": "warming up"})), (200, ok)]);
    let scorer = HttpScorer::new(url, Duration::from_secs(5), quick_retry(3));
    assert_eq!(scorer.score(&pairs()).unwrap().len(), 2);
    assert_eq!(rx.iter().count(), 2);
}

#[test]
fn wrong_result_count_is_an_error() {
    let (url, _rx) = serve(vec![(200, json!([{"bertscore": 0.1, "bleurt": 0.2}]))]);
    let scorer = HttpScorer::new(url, Duration::from_secs(5), quick_retry(1));
    assert!(matches!(
        scorer.score(&pairs()),
        Err(ScorerError::CountMismatch {
            expected: 2,
            got: 1
        })
    ));
}

#[test]
fn health_feeds_provenance() {
    let health = json!({"status": "ok", "bertscore": "roberta-large", "bleurt": "BLEURT-20"});
    let (url, rx) = serve(vec![(200, health.clone())]);
    let scorer = HttpScorer::new(url, Duration::from_secs(5), quick_retry(1));
    assert_eq!(scorer.provenance(), Some(health));
    let req = rx.recv().unwrap();
    assert_eq!((req.method.as_str(), req.path.as_str()), ("GET", "/health"));
}

#[test]
fn unreachable_service_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let scorer = HttpScorer::new(
        format!("http://127.0.0.1:{port}"),
        Duration::from_secs(2),
        quick_retry(2),
    );
    assert!(matches!(
        scorer.score(&pairs()),
        Err(ScorerError::Unavailable(_))
    ));
}
