use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use codeorigin::vectorize::{request_body, EmbeddingCache, RemoteConfig, DEFAULT_MODEL};
use codeorigin::Error;

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

/// Serves `responses` in order, one per connection, and returns what it saw.
fn stub_server(responses: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut payload = vec![0; len];
            reader.read_exact(&mut payload).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
            seen.push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: payload,
            });
        }
        seen
    });
    (url, handle)
}

fn config(endpoint: String) -> RemoteConfig {
    RemoteConfig {
        endpoint,
        api_key: "test-key".into(),
        timeout: Duration::from_secs(10),
    }
}

fn header<'a>(c: &'a Captured, name: &str) -> Option<&'a str> {
    c.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

#[test]
fn golden_request_and_cache_hit() {
    let (url, server) = stub_server(vec![(200, r#"{"data":[{"embedding":[0.25,-0.5,1.0]}]}"#.into())]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let cache = EmbeddingCache::open(&path, DEFAULT_MODEL, 3)
        .unwrap()
        .online(config(url))
        .unwrap();
    let v = cache.embed("print(\"hi\")\n").unwrap();
    assert_eq!(v.values(), &[0.25, -0.5, 1.0]);
    // second call is served from the cache; the server accepts only one connection
    assert_eq!(cache.embed("print(\"hi\")\n").unwrap(), v);

    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].request_line, "POST /v1/embeddings HTTP/1.1");
    assert_eq!(header(&seen[0], "authorization"), Some("Bearer test-key"));
    assert_eq!(header(&seen[0], "content-type"), Some("application/json"));
    assert_eq!(seen[0].body, request_body("print(\"hi\")\n", DEFAULT_MODEL));
    assert_eq!(
        seen[0].body,
        br#"{"input":"print(\"hi\")\n","model":"text-embedding-ada-002"}"#
    );

    let offline = EmbeddingCache::open(&path, DEFAULT_MODEL, 3).unwrap();
    assert_eq!(offline.embed("print(\"hi\")\n").unwrap(), v);
}

#[test]
fn rate_limit_is_retriable() {
    let (url, server) = stub_server(vec![(429, r#"{"error":"slow down"}"#.into())]);
    let cache = EmbeddingCache::in_memory(DEFAULT_MODEL, 3).online(config(url)).unwrap();
    match cache.embed("x") {
        Err(Error::Http {
            status: Some(429),
            retriable: true,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    server.join().unwrap();
    assert!(cache.is_empty());
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, server) = stub_server(vec![(200, r#"{"data":[{"embedding":[1.0,2.0]}]}"#.into())]);
    let cache = EmbeddingCache::in_memory(DEFAULT_MODEL, 3).online(config(url)).unwrap();
    assert!(matches!(
        cache.embed("x"),
        Err(Error::DimensionMismatch { expected: 3, got: 2 })
    ));
    server.join().unwrap();
}
