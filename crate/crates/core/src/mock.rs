//! In-process HTTP classifier speaking the default remote wire protocol,
//! with deterministic failure injection. Used by tests and `serve-mock`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use crate::error::{Error, Result};
use crate::harness::fnv1a;
use crate::image::decode_png;
use crate::model::{predict, LabelSet, ModelParams};

/// Failure injection keyed on a hash of the request image, so the same image
/// always gets the same treatment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailurePlan {
    /// Images answered with HTTP 503 on every attempt.
    pub persistent_fraction: f64,
    /// Images answered with HTTP 503 on the first attempt only.
    pub transient_fraction: f64,
    /// Images answered with a body that violates the schema.
    pub malformed_fraction: f64,
    /// Expected bearer token; requests without it get HTTP 401.
    pub required_token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    Normal,
    Persistent,
    Transient,
    Malformed,
}

impl FailurePlan {
    fn fate(&self, key: u64) -> Fate {
        let u = (key >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.persistent_fraction {
            Fate::Persistent
        } else if u < self.persistent_fraction + self.transient_fraction {
            Fate::Transient
        } else if u < self.persistent_fraction + self.transient_fraction + self.malformed_fraction {
            Fate::Malformed
        } else {
            Fate::Normal
        }
    }

    /// Whether the image behind `png` bytes is scheduled to fail on every
    /// attempt.
    pub fn fails_persistently(&self, png: &[u8]) -> Result<bool> {
        Ok(self.fate(image_key(png)?) == Fate::Persistent)
    }
}

fn image_key(png: &[u8]) -> Result<u64> {
    Ok(fnv1a(decode_png(png)?.pixels()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub at: Instant,
    pub status: u16,
}

struct State {
    params: ModelParams,
    labels: LabelSet,
    plan: FailurePlan,
    attempts: HashMap<u64, u32>,
    log: Vec<RequestRecord>,
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(params: ModelParams, labels: LabelSet, plan: FailurePlan) -> Result<Self> {
        Self::bind("127.0.0.1:0", params, labels, plan)
    }

    pub fn bind(
        addr: &str,
        params: ModelParams,
        labels: LabelSet,
        plan: FailurePlan,
    ) -> Result<Self> {
        if labels.len() != params.classes {
            return Err(Error::Shape(format!(
                "{} labels for a {}-class model",
                labels.len(),
                params.classes
            )));
        }
        let server = Arc::new(Server::http(addr).map_err(|e| Error::Transport(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Transport("mock server has no IP address".into()))?;
        let state = Arc::new(Mutex::new(State {
            params,
            labels,
            plan,
            attempts: HashMap::new(),
            log: Vec::new(),
        }));
        let worker = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let at = Instant::now();
                    let mut body = String::new();
                    let (status, text) = match req.as_reader().read_to_string(&mut body) {
                        Ok(_) => {
                            let auth = req
                                .headers()
                                .iter()
                                .find(|h| h.field.equiv("Authorization"))
                                .map(|h| h.value.as_str().to_string());
                            handle(&state, &body, auth.as_deref())
                        }
                        Err(e) => (400, json!({"error": e.to_string()}).to_string()),
                    };
                    state
                        .lock()
                        .expect("mock state poisoned")
                        .log
                        .push(RequestRecord { at, status });
                    let header = Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let _ = req.respond(
                        Response::from_string(text)
                            .with_status_code(status)
                            .with_header(header),
                    );
                }
            })
        };
        Ok(Self {
            server,
            addr,
            state,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/classify", self.addr)
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.state.lock().expect("mock state poisoned").log.clone()
    }

    /// Blocks serving requests until the process exits.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn handle(state: &Mutex<State>, body: &str, auth: Option<&str>) -> (u16, String) {
    let err = |code: u16, msg: String| (code, json!({ "error": msg }).to_string());
    let req: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return err(400, format!("bad JSON: {e}")),
    };
    let Some(b64) = req.get("image_png_b64").and_then(Value::as_str) else {
        return err(400, "missing image_png_b64".into());
    };
    let top_k = req.get("top_k").and_then(Value::as_u64).unwrap_or(5) as usize;
    let png = match base64::engine::general_purpose::STANDARD.decode(b64) {
        Ok(b) => b,
        Err(e) => return err(400, format!("bad base64: {e}")),
    };
    let img = match decode_png(&png) {
        Ok(i) => i,
        Err(e) => return err(400, format!("bad PNG: {e}")),
    };
    let key = fnv1a(img.pixels());
    let mut st = state.lock().expect("mock state poisoned");
    if let Some(token) = &st.plan.required_token {
        if auth != Some(format!("Bearer {token}").as_str()) {
            return err(401, "unauthorized".into());
        }
    }
    let attempt = {
        let a = st.attempts.entry(key).or_insert(0);
        *a += 1;
        *a
    };
    match st.plan.fate(key) {
        Fate::Persistent => return err(503, "injected failure".into()),
        Fate::Transient if attempt == 1 => return err(503, "injected transient failure".into()),
        Fate::Malformed => return (200, json!({"labels": [{"name": "circle"}]}).to_string()),
        _ => {}
    }
    let pred = match predict(&st.params, &img) {
        Ok(p) => p,
        Err(e) => return err(422, e.to_string()),
    };
    let mut ranked: Vec<(usize, f64)> = pred.scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let labels: Vec<Value> = ranked
        .into_iter()
        .take(top_k.max(1))
        .map(|(i, s)| json!({"name": st.labels.names[i], "score": s}))
        .collect();
    (200, json!({ "labels": labels }).to_string())
}
