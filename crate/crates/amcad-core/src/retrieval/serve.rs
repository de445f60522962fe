//! Line-protocol retrieval service: newline-delimited JSON requests over a
//! TCP stream, one response line per request. Indices are immutable after
//! load; connections are handled concurrently.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::retrieval::{retrieve, IndexSet, Request, RetrievalConfig, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct AdHit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Response {
    pub ads: Vec<AdHit>,
    pub warnings: Vec<String>,
    pub latency_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
    pub detail: String,
}

fn handle_line(line: &str, indices: &IndexSet, cfg: &RetrievalConfig) -> String {
    let started = Instant::now();
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return serde_json::to_string(&ErrorResponse {
                error: "parse".into(),
                detail: e.to_string(),
            })
            .expect("error response serializes");
        }
    };
    let mut warnings = Vec::new();
    if let Ok(idx) = indices.get(crate::index::IndexType::I2I) {
        for p in &req.preclick {
            if idx.lookup(p).is_none() {
                warnings.push(format!("unknown preclick id {p}"));
            }
        }
    }
    match retrieve(&req, indices, cfg) {
        Ok(cands) => {
            let response = Response {
                ads: cands
                    .into_iter()
                    .map(|c| AdHit { id: c.ad_id, score: c.score })
                    .collect(),
                warnings,
                latency_us: started.elapsed().as_micros() as u64,
            };
            serde_json::to_string(&response).expect("response serializes")
        }
        Err(e) => serde_json::to_string(&ErrorResponse {
            error: "request".into(),
            detail: e.to_string(),
        })
        .expect("error response serializes"),
    }
}

fn handle_connection(stream: TcpStream, indices: Arc<IndexSet>, cfg: Arc<RetrievalConfig>) {
    let reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let out = handle_line(&line, &indices, &cfg);
        if writer.write_all(out.as_bytes()).is_err() || writer.write_all(b"\n").is_err() {
            break;
        }
        if writer.flush().is_err() {
            break;
        }
    }
}

/// A bound retrieval server. `spawn` starts the accept loop on a thread and
/// returns the actual local address (useful with port 0).
pub struct Server {
    pub addr: std::net::SocketAddr,
    listener: TcpListener,
    indices: Arc<IndexSet>,
    cfg: Arc<RetrievalConfig>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, indices: IndexSet, cfg: RetrievalConfig) -> Result<Server> {
        indices.require_all()?;
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        Ok(Server { addr, listener, indices: Arc::new(indices), cfg: Arc::new(cfg) })
    }

    /// Accept connections forever, one thread per connection.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let indices = Arc::clone(&self.indices);
            let cfg = Arc::clone(&self.cfg);
            std::thread::spawn(move || handle_connection(stream, indices, cfg));
        }
        Ok(())
    }

    /// Run the accept loop on a background thread.
    pub fn spawn(self) -> std::net::SocketAddr {
        let addr = self.addr;
        std::thread::spawn(move || {
            let _ = self.run();
        });
        addr
    }
}

/// Bind and serve forever.
pub fn serve(addr: impl ToSocketAddrs, indices: IndexSet, cfg: RetrievalConfig) -> Result<()> {
    Server::bind(addr, indices, cfg)?.run()
}
