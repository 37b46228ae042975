#![allow(dead_code)]

pub mod oracle;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Body of a chat-completions response carrying `content`.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

pub struct Request {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server on 127.0.0.1 answering each request through a
/// handler that sees the request and its zero-based index.
pub struct MockServer {
    addr: String,
    count: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(
        handler: impl Fn(&Request, usize) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let count = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let (count, bodies, stop) = (count.clone(), bodies.clone(), stop.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (count, bodies, handler) = (count.clone(), bodies.clone(), handler.clone());
                    std::thread::spawn(move || serve(stream, &count, &bodies, handler.as_ref()));
                }
            })
        };
        MockServer {
            addr,
            count,
            bodies,
            stop,
            worker: Some(worker),
        }
    }

    /// Replies with the scripted sequence; the last entry repeats once exhausted.
    pub fn scripted(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        Self::start(move |_, i| script[i.min(script.len() - 1)].clone())
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(&self.addr);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(stream: TcpStream, count: &AtomicUsize, bodies: &Mutex<Vec<String>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 {
            return;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request = Request {
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let index = {
        // Record and count under one lock so indices match body order.
        let mut b = bodies.lock().unwrap();
        b.push(request.body.clone());
        count.fetch_add(1, Ordering::SeqCst)
    };
    let (status, payload) = handler(&request, index);
    let reply = format!(
        "HTTP/1.1 {status} Mock\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(reply.as_bytes());
    let _ = stream.flush();
}

/// Deterministic stand-in for the chat model used by the end-to-end tests.
/// Known fixture titles get their recorded answers; other titles get a
/// two-goal answer derived from the title bytes.
pub fn llm_answer(prompt: &str) -> String {
    if prompt.contains("made with renewable energy appeal") {
        return fixture_text("llm_outputs/renewable_energy_answer.txt");
    }
    if prompt.contains("No sustainable population") {
        return fixture_text("llm_outputs/population_answer.txt");
    }
    if prompt.contains("modernist architecture") || prompt.contains("Graph algorithms") {
        return fixture_text("llm_outputs/no_goals.txt");
    }
    if prompt.contains("mutation analysis") {
        return "The publication may relate to Goal 9 (Industry, Innovation and Infrastructure)."
            .into();
    }
    let title = prompt
        .split("Title: ")
        .nth(1)
        .and_then(|t| t.split(". Abstract:").next())
        .unwrap_or("");
    let sum: usize = title.bytes().map(usize::from).sum();
    let g1 = sum % 17 + 1;
    let g2 = (sum / 17) % 17 + 1;
    let g2 = if g2 == g1 { g1 % 17 + 1 } else { g2 };
    format!(
        "The publication aligns with the following SDGs:\n\
         1. Goal {g1} - confidence level: High (85%) - The study addresses this goal directly.\n\
         2. Goal {g2} - confidence level: Medium ({}%) - The link is indirect.",
        50 + sum % 30
    )
}

/// Chat server answering every request with [`llm_answer`].
pub fn llm_server() -> MockServer {
    MockServer::start(|req, _| {
        let prompt = req.json()["messages"][0]["content"]
            .as_str()
            .unwrap_or("")
            .to_string();
        (200, chat_body(&llm_answer(&prompt)))
    })
}

/// Title embedded in a recorded chat request body.
pub fn prompt_title(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).unwrap_or_default();
    let prompt = v["messages"][0]["content"].as_str().unwrap_or("");
    prompt
        .split("Title: ")
        .nth(1)
        .and_then(|t| t.split(". Abstract:").next())
        .unwrap_or("")
        .to_string()
}
