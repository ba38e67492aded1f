//! Shared helpers for integration tests: a scripted HTTP stub and fixture
//! builders for pools, mock tables and test sets.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use fewshot_core::backend::{MockRule, MockTable, WeightedOutput};
use fewshot_core::pool::Demonstration;

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

type Handler = dyn Fn(usize, &Recorded) -> (u16, String) + Send + Sync;

/// Loopback HTTP server answering each request with `handler(attempt, request)`.
pub struct StubServer {
    pub url: String,
    log: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &Recorded) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let log: Arc<Mutex<Vec<Recorded>>> = Arc::default();
        let handler: Arc<Handler> = Arc::new(handler);
        let server_log = Arc::clone(&log);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = Vec::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        headers.push((k.trim().to_string(), v.trim().to_string()));
                    }
                }
                let len = headers
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                    .and_then(|(_, v)| v.parse().ok())
                    .unwrap_or(0usize);
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let rec = Recorded { path, headers, body: String::from_utf8(body).unwrap() };
                let attempt = {
                    let mut log = server_log.lock().unwrap();
                    log.push(rec.clone());
                    log.len()
                };
                let (status, body) = handler(attempt, &rec);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Self { url, log }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.log.lock().unwrap().clone()
    }
}

pub fn write_lines<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).unwrap());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

pub fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn rule(query: &str, when: Option<&str>, outputs: &[(&str, f64)]) -> MockRule {
    MockRule {
        query: query.to_string(),
        when_contains: when.map(str::to_string),
        outputs: outputs.iter().map(|(t, w)| WeightedOutput { text: t.to_string(), weight: *w }).collect(),
    }
}

pub fn table(rules: Vec<MockRule>) -> MockTable {
    MockTable { rules, fallback: Default::default() }
}

/// German-English pool of `n` plain demonstrations.
pub fn plain_pool(n: usize) -> Vec<Demonstration> {
    (0..n).map(|i| Demonstration::new(format!("Satz {i}"), format!("Sentence {i}"))).collect()
}
