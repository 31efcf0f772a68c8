#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use clinret::corpus::Chunk;
use serde_json::Value;
use tiny_http::{Header, Response, Server};

/// A request as seen by a stub handler.
pub struct Seen {
    pub hit: usize,
    pub body: Value,
    pub authorization: Option<String>,
}

/// Local HTTP server answering every POST through `handler`.
pub struct Stub {
    pub url: String,
    hits: Arc<AtomicUsize>,
    pub auth_seen: Arc<Mutex<Vec<Option<String>>>>,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl Stub {
    pub fn serve<F>(handler: F) -> Self
    where
        F: Fn(&Seen) -> (u16, String) + Send + Sync + 'static,
    {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub server"));
        let port = server.server_addr().to_ip().expect("tcp listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let auth_seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, h, auth) = (server.clone(), hits.clone(), auth_seen.clone());
        let handler = Arc::new(handler);
        let thread = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut raw = String::new();
                let _ = req.as_reader().read_to_string(&mut raw);
                let authorization = req
                    .headers()
                    .iter()
                    .find(|hd| hd.field.equiv("Authorization"))
                    .map(|hd| hd.value.as_str().to_owned());
                auth.lock().unwrap().push(authorization.clone());
                let seen = Seen {
                    hit: h.fetch_add(1, Ordering::SeqCst) + 1,
                    body: serde_json::from_str(&raw).unwrap_or(Value::Null),
                    authorization,
                };
                let handler = handler.clone();
                // answer concurrently so parallel clients are not serialized
                std::thread::spawn(move || {
                    let (status, body) = handler(&seen);
                    let ct = Header::from_bytes("Content-Type", "application/json").unwrap();
                    let _ = req.respond(Response::from_string(body).with_status_code(status).with_header(ct));
                });
            }
        });
        Self {
            url: format!("http://127.0.0.1:{port}/"),
            hits,
            auth_seen,
            server,
            thread: Some(thread),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn chunk(id: &str, patient: &str, text: &str) -> Chunk {
    Chunk {
        chunk_id: id.to_owned(),
        patient_id: patient.to_owned(),
        note_id: id.split('#').next().unwrap_or(id).to_owned(),
        start_offset: 0,
        end_offset: text.len(),
        text: text.to_owned(),
    }
}

/// Fenced structured reply as the labeling prompts request.
pub fn reply(label: bool, terms: &[&str]) -> String {
    format!(
        "Reasoning first.\n```json\n{}\n```",
        serde_json::json!({"reasoning": "scripted", "evidence_terms": terms, "label": label})
    )
}
