//! Embedding provider client against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use consensus_rank::io::{fetch_embeddings, ProviderConfig, ProviderError, RetryPolicy};
use consensus_rank::pipeline::resolve_embeddings;
use consensus_rank::{load_scenes, rank_corpus, DecompositionConfig};
use serde_json::{json, Value};

struct Request {
    body: Value,
    authorization: Option<String>,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

/// Counts requests and the peak number handled at once.
struct MockProvider {
    url: String,
    requests: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Request>>>,
}

impl MockProvider {
    fn start(delay: Duration, handler: impl Fn(&Request, usize) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/embed", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let active = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let (requests, peak, seen) = (requests.clone(), peak.clone(), seen.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { break };
                    let (requests, peak, active, seen, handler) =
                        (requests.clone(), peak.clone(), active.clone(), seen.clone(), handler.clone());
                    std::thread::spawn(move || {
                        let Some(req) = read_request(&stream) else { return };
                        let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        let index = requests.fetch_add(1, Ordering::SeqCst);
                        std::thread::sleep(delay);
                        let (status, body) = handler(&req, index);
                        seen.lock().unwrap().push(req);
                        active.fetch_sub(1, Ordering::SeqCst);
                        write_response(stream, status, &body);
                    });
                }
            });
        }
        Self {
            url,
            requests,
            peak,
            seen,
        }
    }

    fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut length = 0;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().ok()?,
                "authorization" => authorization = Some(value.trim().to_owned()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Request {
        body: serde_json::from_slice(&body).ok()?,
        authorization,
    })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
}

/// A stand-in encoder: deterministic in the text, dimension `dim`.
fn encode(text: &str, dim: usize) -> Vec<f64> {
    let bytes = text.as_bytes();
    (0..dim)
        .map(|j| {
            let b = bytes.get(j % bytes.len().max(1)).copied().unwrap_or(0) as f64;
            b / 7.0 + j as f64 * 0.1 + bytes.len() as f64
        })
        .collect()
}

fn texts_of(req: &Request) -> Vec<String> {
    req.body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_owned())
        .collect()
}

fn echo(dim: usize) -> impl Fn(&Request, usize) -> (u16, String) + Send + Sync + 'static {
    move |req, _| {
        let vectors: Vec<Vec<f64>> = texts_of(req).iter().map(|t| encode(t, dim)).collect();
        (200, json!({ "embeddings": vectors }).to_string())
    }
}

fn quick_retry(cfg: &mut ProviderConfig, attempts: u32) {
    cfg.retry = RetryPolicy {
        max_attempts: attempts,
        backoff_base: Duration::from_millis(5),
    };
}

#[test]
fn bounded_concurrency_and_cache_hits() {
    let server = MockProvider::start(Duration::from_millis(40), echo(5));
    let cache = tempfile::tempdir().unwrap();
    let mut cfg = ProviderConfig::new(&server.url, "enc-small");
    cfg.batch_size = 1;
    cfg.cache_dir = Some(cache.path().to_path_buf());
    let texts: Vec<String> = (0..30).map(|i| format!("caption number {i}")).collect();

    let first = fetch_embeddings(&cfg, &texts).unwrap();
    assert_eq!(server.requests(), 30);
    assert!(server.peak() <= 8, "peak in-flight {}", server.peak());
    assert!(server.peak() >= 2, "requests never overlapped");
    for (t, v) in texts.iter().zip(&first) {
        assert_eq!(v, &encode(t, 5));
    }
    for req in server.seen.lock().unwrap().iter() {
        assert_eq!(req.body["model"], "enc-small");
    }

    let second = fetch_embeddings(&cfg, &texts).unwrap();
    assert_eq!(server.requests(), 30, "cache hits must not reach the network");
    let bits = |vs: &[Vec<f64>]| -> Vec<u64> { vs.iter().flatten().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&first), bits(&second));

    // A different model must not be served from the same cache entries.
    let mut other = cfg.clone();
    other.model = "enc-large".into();
    fetch_embeddings(&other, &texts[..3]).unwrap();
    assert_eq!(server.requests(), 33);
}

#[test]
fn texts_are_batched_and_deduplicated() {
    let server = MockProvider::start(Duration::ZERO, echo(3));
    let cfg = ProviderConfig::new(&server.url, "m");
    let mut texts: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
    texts.extend(texts.clone());
    let out = fetch_embeddings(&cfg, &texts).unwrap();
    assert_eq!(out.len(), 60);
    assert_eq!(out[0], out[30]);
    // 30 distinct texts in batches of 16.
    assert_eq!(server.requests(), 2);
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = server.seen.lock().unwrap().iter().map(|r| texts_of(r).len()).collect();
        s.sort_unstable();
        s
    };
    assert_eq!(sizes, [14, 16]);
}

#[test]
fn mixed_dimensions_are_dimension_drift() {
    let server = MockProvider::start(Duration::ZERO, |_, _| {
        (200, json!({ "embeddings": [vec![0.5; 1024], vec![0.5; 512]] }).to_string())
    });
    let cfg = ProviderConfig::new(&server.url, "m");
    match fetch_embeddings(&cfg, &["a".into(), "b".into()]) {
        Err(ProviderError::DimensionDrift {
            expected: 1024,
            got: 512,
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockProvider::start(Duration::ZERO, |_, _| (400, "{}".into()));
    let mut cfg = ProviderConfig::new(&server.url, "m");
    quick_retry(&mut cfg, 4);
    match fetch_embeddings(&cfg, &["a".into()]) {
        Err(ProviderError::Rejected { status: 400 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests(), 1);
}

#[test]
fn server_errors_are_retried() {
    let server = MockProvider::start(Duration::ZERO, |req, i| {
        if i < 2 {
            (503, "{}".into())
        } else {
            echo(2)(req, i)
        }
    });
    let mut cfg = ProviderConfig::new(&server.url, "m");
    quick_retry(&mut cfg, 4);
    let out = fetch_embeddings(&cfg, &["abc".into()]).unwrap();
    assert_eq!(out, vec![encode("abc", 2)]);
    assert_eq!(server.requests(), 3);

    let down = MockProvider::start(Duration::ZERO, |_, _| (500, "{}".into()));
    let mut cfg = ProviderConfig::new(&down.url, "m");
    quick_retry(&mut cfg, 3);
    match fetch_embeddings(&cfg, &["abc".into()]) {
        Err(ProviderError::ProviderUnavailable { attempts: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(down.requests(), 3);
}

#[test]
fn malformed_bodies_are_rejected() {
    for body in [
        "not json".to_owned(),
        json!({ "vectors": [[1.0]] }).to_string(),
        json!({ "embeddings": [[1.0], [2.0]] }).to_string(),
        json!({ "embeddings": [[]] }).to_string(),
    ] {
        let server = MockProvider::start(Duration::ZERO, move |_, _| (200, body.clone()));
        let cfg = ProviderConfig::new(&server.url, "m");
        match fetch_embeddings(&cfg, &["a".into()]) {
            Err(ProviderError::MalformedResponse(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn bearer_token_is_sent_but_never_cached() {
    let server = MockProvider::start(Duration::ZERO, echo(2));
    let cache = tempfile::tempdir().unwrap();
    let mut cfg = ProviderConfig::new(&server.url, "m");
    cfg.token_env = "CONSENSUS_RANK_TEST_PROVIDER_TOKEN".into();
    cfg.cache_dir = Some(cache.path().to_path_buf());
    std::env::set_var(&cfg.token_env, "s3cret-token");
    fetch_embeddings(&cfg, &["a".into()]).unwrap();
    let auth = server.seen.lock().unwrap()[0].authorization.clone();
    assert_eq!(auth.as_deref(), Some("Bearer s3cret-token"));
    for entry in std::fs::read_dir(cache.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains("s3cret"));
    }
}

#[test]
fn text_only_scenes_rank_after_resolution() {
    let server = MockProvider::start(Duration::ZERO, echo(6));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("texts.jsonl");
    let lines: String = ["A bus at a stop.", "A bus at the stop.", "A bus waiting.", "A whale in the sky."]
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}\n", json!({"scene_id": "s", "caption_id": format!("c{i}"), "model": "m", "text": t})))
        .collect();
    std::fs::write(&path, lines).unwrap();
    let mut scenes = load_scenes(&path).unwrap();
    let cfg = ProviderConfig::new(&server.url, "m");
    assert_eq!(resolve_embeddings(&mut scenes, Some(&cfg)).unwrap(), 4);
    assert!(scenes[0].has_all_embeddings());
    let ranked = rank_corpus(&scenes, &DecompositionConfig::default(), 2, false).unwrap();
    assert!(ranked.failures.is_empty());
    assert_eq!(ranked.scenes[0].ranking.captions.len(), 4);
}
