//! JSON-over-HTTP noise-predictor protocol.
//!
//! `POST /v1/eps_hat` with
//! `{"x": [[f64; d]; b], "sigma": f64, "conditioning": string, "cfg_scale": f64}`
//! answers `{"eps_hat": [[f64; d]; b]}`; failures answer 4xx with `{"error": string}`.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AnalyticScoreModel, ConditioningLabel, ScoreModel};
use crate::error::{check_dim, Error, Result};

pub const EPS_HAT_PATH: &str = "/v1/eps_hat";

/// Largest request or response body either side accepts.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsHatRequest {
    pub x: Vec<Vec<f64>>,
    pub sigma: f64,
    pub conditioning: String,
    pub cfg_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsHatResponse {
    pub eps_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Client for a remote noise predictor. Stateless: one connection per request.
#[derive(Debug, Clone)]
pub struct RemoteScoreModel {
    endpoint: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteScoreModel {
    /// `endpoint` is the base address, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        Self {
            endpoint,
            dim,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// One protocol round trip.
    pub fn request(&self, req: &EpsHatRequest) -> Result<Vec<Vec<f64>>> {
        for x in &req.x {
            check_dim("remote request point", self.dim, x.len())?;
        }
        let body = serde_json::to_string(req)?;
        if body.len() > MAX_BODY_BYTES {
            return Err(Error::Parameter(format!(
                "request body of {} bytes exceeds the {MAX_BODY_BYTES}-byte protocol limit",
                body.len()
            )));
        }
        let url = format!("{}{}", self.endpoint, EPS_HAT_PATH);
        let transport = |e: ureq::Error| Error::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES as u64)
            .read_to_string()
            .map_err(transport)?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(Error::Remote {
                endpoint: self.endpoint.clone(),
                status,
                message,
            });
        }
        let parsed: EpsHatResponse =
            serde_json::from_str(&text).map_err(|e| Error::MalformedResponse {
                endpoint: self.endpoint.clone(),
                message: e.to_string(),
            })?;
        let shape_ok = parsed.eps_hat.len() == req.x.len()
            && parsed
                .eps_hat
                .iter()
                .zip(&req.x)
                .all(|(e, x)| e.len() == x.len());
        if !shape_ok {
            let got_d = parsed.eps_hat.first().map_or(0, Vec::len);
            return Err(Error::ShapeMismatch {
                endpoint: self.endpoint.clone(),
                expected: format!("[{}; {}]", self.dim, req.x.len()),
                got: format!("[{}; {}]", got_d, parsed.eps_hat.len()),
            });
        }
        Ok(parsed.eps_hat)
    }
}

impl ScoreModel for RemoteScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Items sharing a prompt go out in one request; distinct prompts are
    /// split into separate requests and reassembled in input order.
    fn eps_hat_batch(
        &self,
        xs: &[Vec<f64>],
        sigma: f64,
        labels: &[ConditioningLabel],
        cfg_scale: f64,
    ) -> Result<Vec<Vec<f64>>> {
        check_dim("labels per batch", xs.len(), labels.len())?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            groups.entry(l.prompt()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); xs.len()];
        for (prompt, idx) in groups {
            let req = EpsHatRequest {
                x: idx.iter().map(|&i| xs[i].clone()).collect(),
                sigma,
                conditioning: prompt,
                cfg_scale,
            };
            for (i, e) in idx.into_iter().zip(self.request(&req)?) {
                out[i] = e;
            }
        }
        Ok(out)
    }
}

/// What the loopback stub computes.
#[derive(Debug, Clone)]
pub enum StubBackend {
    /// Always answers zeros.
    Zeros { dim: usize },
    /// Evaluates a closed-form model.
    Analytic(AnalyticScoreModel),
}

impl StubBackend {
    fn dim(&self) -> usize {
        match self {
            StubBackend::Zeros { dim } => *dim,
            StubBackend::Analytic(m) => m.dim(),
        }
    }

    fn answer(&self, req: &EpsHatRequest) -> std::result::Result<EpsHatResponse, String> {
        let d = self.dim();
        if let Some(bad) = req.x.iter().find(|x| x.len() != d) {
            return Err(format!("expected points of dimension {d}, got {}", bad.len()));
        }
        if !(req.sigma >= 0.0 && req.sigma.is_finite()) {
            return Err(format!("sigma must be finite and >= 0, got {}", req.sigma));
        }
        let eps_hat = match self {
            StubBackend::Zeros { .. } => req.x.iter().map(|x| vec![0.0; x.len()]).collect(),
            StubBackend::Analytic(m) => {
                let label = ConditioningLabel::from_prompt(&req.conditioning);
                let labels = vec![label; req.x.len()];
                m.eps_hat_batch(&req.x, req.sigma, &labels, req.cfg_scale)
                    .map_err(|e| e.to_string())?
            }
        };
        Ok(EpsHatResponse { eps_hat })
    }
}

/// Loopback HTTP server speaking the eps-hat protocol. Stops on drop.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to `addr` (use port 0 for an ephemeral port) and serve in a background thread.
    pub fn spawn(addr: &str, backend: StubBackend) -> Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| Error::Transport {
            endpoint: addr.to_string(),
            message: e.to_string(),
        })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Parameter("stub server must bind an IP address".into()))?;
        let server = Arc::new(server);
        let worker = {
            let server = Arc::clone(&server);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &backend);
                }
            })
        };
        Ok(Self {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the serving thread exits (never, unless shut down elsewhere).
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
        .expect("static header");
    tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_body(msg: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse { error: msg.into() }).expect("serializable")
}

fn handle(mut request: tiny_http::Request, backend: &StubBackend) {
    let response = if request.url() != EPS_HAT_PATH {
        json_response(404, error_body(format!("no route for {}", request.url())))
    } else if *request.method() != tiny_http::Method::Post {
        json_response(405, error_body("use POST"))
    } else if request.body_length().is_some_and(|n| n > MAX_BODY_BYTES) {
        json_response(413, error_body("request body too large"))
    } else {
        let mut body = String::new();
        let limited = request
            .as_reader()
            .take(MAX_BODY_BYTES as u64 + 1)
            .read_to_string(&mut body);
        match limited {
            Err(e) => json_response(400, error_body(format!("unreadable body: {e}"))),
            Ok(n) if n > MAX_BODY_BYTES => json_response(413, error_body("request body too large")),
            Ok(_) => match serde_json::from_str::<EpsHatRequest>(&body) {
                Err(e) => json_response(400, error_body(format!("invalid request: {e}"))),
                Ok(req) => match backend.answer(&req) {
                    Ok(resp) => json_response(200, serde_json::to_string(&resp).expect("serializable")),
                    Err(msg) => json_response(422, error_body(msg)),
                },
            },
        }
    };
    if let Err(e) = request.respond(response) {
        log::warn!("stub server failed to respond: {e}");
    }
}
