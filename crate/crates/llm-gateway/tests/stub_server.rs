//! Gateway behavior against a local stub endpoint: caching, retries,
//! concurrency cap, rate budget, credential handling.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ldst_llm_gateway::{Gateway, GatewayConfig, GatewayError, RetryPolicy};

type Handler = dyn Fn(usize) -> (u16, String, Duration) + Send + Sync;

struct StubServer {
    endpoint: String,
    hits: Arc<AtomicUsize>,
    max_concurrent: Arc<AtomicUsize>,
    arrivals: Arc<Mutex<Vec<Instant>>>,
    shutdown: Arc<AtomicBool>,
    port: u16,
}

fn chat_body(content: &str) -> String {
    format!(
        r#"{{"choices":[{{"message":{{"content":"{content}"}}}}],"usage":{{"prompt_tokens":5,"completion_tokens":2}}}}"#
    )
}

impl StubServer {
    fn start(handler: Arc<Handler>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let port = listener.local_addr().unwrap().port();
        let hits = Arc::new(AtomicUsize::new(0));
        let concurrent = Arc::new(AtomicUsize::new(0));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let arrivals = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));

        {
            let hits = hits.clone();
            let concurrent = concurrent.clone();
            let max_concurrent = max_concurrent.clone();
            let arrivals = arrivals.clone();
            let shutdown = shutdown.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let handler = handler.clone();
                    let hits = hits.clone();
                    let concurrent = concurrent.clone();
                    let max_concurrent = max_concurrent.clone();
                    let arrivals = arrivals.clone();
                    std::thread::spawn(move || {
                        handle_connection(
                            stream,
                            &handler,
                            &hits,
                            &concurrent,
                            &max_concurrent,
                            &arrivals,
                        );
                    });
                }
            });
        }
        StubServer {
            endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            hits,
            max_concurrent,
            arrivals,
            shutdown,
            port,
        }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(("127.0.0.1", self.port));
    }
}

fn handle_connection(
    mut stream: TcpStream,
    handler: &Arc<Handler>,
    hits: &AtomicUsize,
    concurrent: &AtomicUsize,
    max_concurrent: &AtomicUsize,
    arrivals: &Mutex<Vec<Instant>>,
) {
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buffer.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buffer) {
                    break pos;
                }
            }
            Err(_) => return,
        }
    };
    let headers = String::from_utf8_lossy(&buffer[..header_end]).to_lowercase();
    let content_length = headers
        .lines()
        .find_map(|line| line.strip_prefix("content-length:"))
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    while buffer.len() < header_end + 4 + content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buffer.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }

    let index = hits.fetch_add(1, Ordering::SeqCst);
    arrivals.lock().unwrap().push(Instant::now());
    let live = concurrent.fetch_add(1, Ordering::SeqCst) + 1;
    max_concurrent.fetch_max(live, Ordering::SeqCst);

    let (status, body, delay) = handler(index);
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
    concurrent.fetch_sub(1, Ordering::SeqCst);
}

fn find_header_end(buffer: &[u8]) -> Option<usize> {
    buffer.windows(4).position(|w| w == b"\r\n\r\n")
}

fn config_for(server: &StubServer, cache_dir: &std::path::Path, key_env: &str) -> GatewayConfig {
    let mut config = GatewayConfig::new(server.endpoint.clone(), cache_dir);
    config.api_key_env = key_env.to_string();
    config.requests_per_minute = 100_000.0;
    config.retry = RetryPolicy {
        max_attempts: 4,
        backoff_base_ms: 10,
    };
    config
}

#[test]
fn second_identical_call_is_served_from_cache() {
    let server = StubServer::start(Arc::new(|_| (200, chat_body("north"), Duration::ZERO)));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_CACHE", "sk-test");
    let gateway = Gateway::new(config_for(&server, dir.path(), "LDST_TEST_KEY_CACHE")).unwrap();

    let first = gateway.complete("what is the area?").unwrap();
    assert_eq!(first.response, "north");
    assert_eq!(first.attempts, 1);
    assert_eq!(server.hits(), 1);

    let second = gateway.complete("what is the area?").unwrap();
    assert_eq!(second.response, "north");
    assert_eq!(second.attempts, 0, "cache hits make no network call");
    assert_eq!(server.hits(), 1);

    // Replay offline: dead endpoint, no credentials, same cache directory.
    let mut offline = GatewayConfig::new("http://127.0.0.1:9/unreachable", dir.path());
    offline.api_key_env = "LDST_TEST_KEY_ABSENT_FOR_REPLAY".into();
    let offline_gateway = Gateway::new(offline).unwrap();
    let replayed = offline_gateway.complete("what is the area?").unwrap();
    assert_eq!(replayed.response, "north");
    assert_eq!(server.hits(), 1);
}

#[test]
fn rate_limited_responses_are_retried_with_backoff() {
    let server = StubServer::start(Arc::new(|index| {
        if index < 2 {
            (429, String::new(), Duration::ZERO)
        } else {
            (200, chat_body("cambridge"), Duration::ZERO)
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_RETRY", "sk-test");
    let gateway = Gateway::new(config_for(&server, dir.path(), "LDST_TEST_KEY_RETRY")).unwrap();

    let record = gateway.complete("destination?").unwrap();
    assert_eq!(record.response, "cambridge");
    assert_eq!(record.attempts, 3, "two 429s then success");
    assert_eq!(server.hits(), 3);
}

#[test]
fn retries_exhaust_into_an_error() {
    let server = StubServer::start(Arc::new(|_| (429, String::new(), Duration::ZERO)));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_EXHAUST", "sk-test");
    let gateway = Gateway::new(config_for(&server, dir.path(), "LDST_TEST_KEY_EXHAUST")).unwrap();
    match gateway.complete("anything") {
        Err(GatewayError::Exhausted { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(server.hits(), 4);
}

#[test]
fn missing_credentials_error_before_any_request() {
    let server = StubServer::start(Arc::new(|_| (200, chat_body("x"), Duration::ZERO)));
    let dir = tempfile::tempdir().unwrap();
    let gateway =
        Gateway::new(config_for(&server, dir.path(), "LDST_TEST_KEY_NEVER_SET")).unwrap();
    match gateway.complete("hello") {
        Err(GatewayError::MissingCredentials(var)) => {
            assert_eq!(var, "LDST_TEST_KEY_NEVER_SET")
        }
        other => panic!("expected missing credentials, got {other:?}"),
    }
    assert_eq!(server.hits(), 0);
}

#[test]
fn auth_rejection_is_not_retried() {
    let server = StubServer::start(Arc::new(|_| (401, String::new(), Duration::ZERO)));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_AUTH", "sk-bad");
    let gateway = Gateway::new(config_for(&server, dir.path(), "LDST_TEST_KEY_AUTH")).unwrap();
    match gateway.complete("hello") {
        Err(GatewayError::AuthRejected(401)) => {}
        other => panic!("expected auth rejection, got {other:?}"),
    }
    assert_eq!(server.hits(), 1);
}

#[test]
fn in_flight_requests_never_exceed_the_cap() {
    let server = StubServer::start(Arc::new(|_| {
        (200, chat_body("v"), Duration::from_millis(60))
    }));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_POOL", "sk-test");
    let mut config = config_for(&server, dir.path(), "LDST_TEST_KEY_POOL");
    config.max_in_flight = 3;
    let gateway = Gateway::new(config).unwrap();

    let prompts: Vec<String> = (0..12).map(|i| format!("prompt {i}")).collect();
    let results = gateway.complete_many(&prompts);
    assert!(results.iter().all(Result::is_ok));
    assert_eq!(server.hits(), 12);
    let observed = server.max_concurrent.load(Ordering::SeqCst);
    assert!(observed <= 3, "in-flight cap violated: {observed}");
    assert!(observed >= 2, "pool never overlapped: {observed}");
}

#[test]
fn sustained_rate_stays_within_the_minute_budget() {
    let server = StubServer::start(Arc::new(|_| (200, chat_body("v"), Duration::ZERO)));
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("LDST_TEST_KEY_RATE", "sk-test");
    let mut config = config_for(&server, dir.path(), "LDST_TEST_KEY_RATE");
    config.requests_per_minute = 1200.0; // 20/s → 50 ms spacing
    config.max_in_flight = 6;
    let gateway = Gateway::new(config).unwrap();

    let prompts: Vec<String> = (0..6).map(|i| format!("rated {i}")).collect();
    let started = Instant::now();
    let results = gateway.complete_many(&prompts);
    assert!(results.iter().all(Result::is_ok));
    // Five inter-arrival gaps at ≥ 50 ms each.
    assert!(
        started.elapsed() >= Duration::from_millis(230),
        "finished too fast: {:?}",
        started.elapsed()
    );
    let arrivals = server.arrivals.lock().unwrap();
    let mut sorted: Vec<Instant> = arrivals.clone();
    sorted.sort();
    for pair in sorted.windows(2) {
        let gap = pair[1].duration_since(pair[0]);
        assert!(
            gap >= Duration::from_millis(40),
            "arrivals only {gap:?} apart"
        );
    }
}
