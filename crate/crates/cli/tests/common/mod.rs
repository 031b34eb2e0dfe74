#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

/// A request as seen by the test server.
#[derive(Debug, Clone)]
pub struct Seen {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

pub struct Server {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl Server {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Serves completion requests on a local port, one connection at a time.
/// `handler` gets the 0-based request number and the JSON body and returns
/// the status and response body.
pub fn serve<F>(handler: F) -> Server
where
    F: Fn(usize, &serde_json::Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (h, s) = (hits.clone(), seen.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                continue;
            }
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, text) = handler(n, &body);
            s.lock().unwrap().push(Seen { authorization: auth, body });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Server { url, hits, seen }
}

/// A 200 response answering each prompt with `answer(prompt)`.
pub fn choices(body: &serde_json::Value, answer: impl Fn(&str) -> String) -> (u16, String) {
    let prompts = body["prompt"].as_array().cloned().unwrap_or_default();
    let choices: Vec<_> = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| serde_json::json!({"text": answer(p.as_str().unwrap_or_default()), "index": i}))
        .collect();
    (200, serde_json::json!({ "choices": choices }).to_string())
}

/// Yes or No, fixed per prompt.
pub fn hashed_answer(prompt: &str) -> String {
    if prompt.len().is_multiple_of(2) { " Yes".into() } else { " No".into() }
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}
