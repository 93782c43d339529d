//! Remote backend speaking line-delimited JSON over TCP, so real model
//! servers can sit behind the same [`LmBackend`] trait as the synthetic
//! backends. One JSON document per line in each direction:
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"vocab_size":32000,"eos":2}
//! -> {"op":"logprobs","context":[1,15,42]}
//! <- {"logprobs":[-9.2,null,...]}          // one entry per vocab token
//! <- {"error":"description"}               // any request may fail
//! ```
//!
//! JSON has no -inf, so `null` encodes zero probability. Returned logprobs
//! are treated as unnormalized log-weights and renormalized, so servers may
//! send raw logits. [`serve_backend`] exposes
//! any local backend over the same protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::backends::{check_context, LmBackend};
use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId};

pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Deserialize)]
struct HelloReply {
    vocab_size: usize,
    #[serde(default)]
    eos: Option<TokenId>,
}

#[derive(Deserialize)]
struct LogprobsReply {
    logprobs: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct ErrorReply {
    error: String,
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client for a model served over the line-delimited JSON protocol.
///
/// Holds one connection; concurrent queries are serialized through an
/// internal lock, so a shared `RemoteLm` is safe from multiple threads.
pub struct RemoteLm {
    endpoint: String,
    vocab_size: usize,
    eos: Option<TokenId>,
    conn: Mutex<Conn>,
}

impl std::fmt::Debug for RemoteLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLm")
            .field("endpoint", &self.endpoint)
            .field("vocab_size", &self.vocab_size)
            .field("eos", &self.eos)
            .finish_non_exhaustive()
    }
}

impl RemoteLm {
    /// Connects and performs the hello handshake with the default timeout.
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_with_timeout(endpoint, DEFAULT_REMOTE_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self> {
        let addr_str = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
        let addrs: Vec<_> = addr_str
            .to_socket_addrs()
            .map_err(|e| Error::backend_unavailable(format!("cannot resolve {endpoint:?}: {e}")))?
            .collect();
        let mut last_err = None;
        let mut stream = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let stream = stream.ok_or_else(|| {
            Error::backend_unavailable(format!(
                "cannot connect to {endpoint:?}: {}",
                last_err.map_or_else(|| "no addresses".to_string(), |e| e.to_string())
            ))
        })?;
        stream
            .set_read_timeout(Some(timeout))
            .and_then(|_| stream.set_write_timeout(Some(timeout)))
            .map_err(|e| Error::backend_unavailable(format!("cannot configure socket: {e}")))?;
        let writer = stream
            .try_clone()
            .map_err(|e| Error::backend_unavailable(format!("cannot clone socket: {e}")))?;
        let mut conn = Conn { reader: BufReader::new(stream), writer };

        let reply = request(&mut conn, endpoint, &json!({"op": "hello"}))?;
        let hello: HelloReply = serde_json::from_str(&reply).map_err(|e| {
            Error::backend_unavailable(format!("{endpoint}: malformed hello reply: {e}"))
        })?;
        if hello.vocab_size == 0 {
            return Err(Error::backend_unavailable(format!(
                "{endpoint}: server reports an empty vocabulary"
            )));
        }
        if let Some(eos) = hello.eos {
            if eos as usize >= hello.vocab_size {
                return Err(Error::backend_unavailable(format!(
                    "{endpoint}: eos token {eos} outside vocab_size {}",
                    hello.vocab_size
                )));
            }
        }
        Ok(RemoteLm {
            endpoint: endpoint.to_string(),
            vocab_size: hello.vocab_size,
            eos: hello.eos,
            conn: Mutex::new(conn),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn request(conn: &mut Conn, endpoint: &str, body: &serde_json::Value) -> Result<String> {
    let mut line = serde_json::to_string(body).expect("request serialization cannot fail");
    line.push('\n');
    conn.writer
        .write_all(line.as_bytes())
        .and_then(|_| conn.writer.flush())
        .map_err(|e| Error::backend_unavailable(format!("{endpoint}: write failed: {e}")))?;
    let mut reply = String::new();
    let n = conn
        .reader
        .read_line(&mut reply)
        .map_err(|e| Error::backend_unavailable(format!("{endpoint}: read failed: {e}")))?;
    if n == 0 {
        return Err(Error::backend_unavailable(format!(
            "{endpoint}: connection closed by server"
        )));
    }
    if let Ok(err) = serde_json::from_str::<ErrorReply>(&reply) {
        return Err(Error::backend_unavailable(format!(
            "{endpoint}: server error: {}",
            err.error
        )));
    }
    Ok(reply)
}

impl LmBackend for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        check_context(self.vocab_size, context)?;
        let mut conn = self.conn.lock().expect("remote connection lock poisoned");
        let reply = request(
            &mut conn,
            &self.endpoint,
            &json!({"op": "logprobs", "context": context}),
        )?;
        drop(conn);
        let parsed: LogprobsReply = serde_json::from_str(&reply).map_err(|e| {
            Error::backend_unavailable(format!("{}: malformed logprobs reply: {e}", self.endpoint))
        })?;
        if parsed.logprobs.len() != self.vocab_size {
            return Err(Error::backend_unavailable(format!(
                "{}: reply holds {} logprobs, expected vocab_size {}",
                self.endpoint,
                parsed.logprobs.len(),
                self.vocab_size
            )));
        }
        let log_weights: Vec<f64> = parsed
            .logprobs
            .iter()
            .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
            .collect();
        Distribution::from_log_weights(&log_weights).map_err(|e| {
            Error::backend_unavailable(format!("{}: unusable logprobs: {e}", self.endpoint))
        })
    }
}

// ---------------------------------------------------------------------------
// Server side
// ---------------------------------------------------------------------------

/// Serves `backend` over the protocol until the listener fails. Each
/// connection gets its own thread; intended for tests and for embedding in
/// server binaries.
pub fn serve_backend(listener: TcpListener, backend: Arc<dyn LmBackend>) -> std::io::Result<()> {
    loop {
        let (stream, _) = listener.accept()?;
        let backend = Arc::clone(&backend);
        std::thread::spawn(move || {
            let _ = handle_client(stream, backend.as_ref());
        });
    }
}

/// Answers requests on one connection until EOF.
pub fn handle_client(stream: TcpStream, backend: &dyn LmBackend) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_request(&line, backend);
        let mut out = reply.to_string();
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

fn handle_request(line: &str, backend: &dyn LmBackend) -> serde_json::Value {
    #[derive(Deserialize)]
    struct Request {
        op: String,
        #[serde(default)]
        context: Option<Vec<TokenId>>,
    }
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return json!({"error": format!("malformed request: {e}")}),
    };
    match request.op.as_str() {
        "hello" => json!({"vocab_size": backend.vocab_size(), "eos": backend.eos_token()}),
        "logprobs" => {
            let context = request.context.unwrap_or_default();
            match backend.next_distribution(&context) {
                Ok(dist) => {
                    let logprobs: Vec<Option<f64>> = (0..dist.len() as TokenId)
                        .map(|t| {
                            let lp = dist.log_prob(t);
                            lp.is_finite().then_some(lp)
                        })
                        .collect();
                    json!({"logprobs": logprobs})
                }
                Err(e) => json!({"error": e.to_string()}),
            }
        }
        other => json!({"error": format!("unknown op {other:?}")}),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{TableLm, TableLmSpec, TableRowSpec};

    fn spawn_table_server() -> (std::net::SocketAddr, Arc<TableLm>) {
        let spec = TableLmSpec {
            vocab: vec!["a".into(), "b".into(), "c".into()],
            default: vec![0.7, 0.2, 0.1],
            rows: vec![TableRowSpec { suffix: vec!["a".into()], probs: vec![0.1, 0.8, 0.1] }],
            eos: Some("c".into()),
        };
        let table = Arc::new(TableLm::from_spec(&spec).unwrap());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let served: Arc<dyn LmBackend> = table.clone();
        std::thread::spawn(move || {
            let _ = serve_backend(listener, served);
        });
        (addr, table)
    }

    #[test]
    fn handshake_and_queries_mirror_the_served_table() {
        let (addr, table) = spawn_table_server();
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        assert_eq!(remote.vocab_size(), 3);
        assert_eq!(remote.eos_token(), Some(2));
        for ctx in [&[][..], &[0][..], &[1, 0][..], &[2, 1][..]] {
            let local = table.next_distribution(ctx).unwrap();
            let served = remote.next_distribution(ctx).unwrap();
            for t in 0..3 {
                assert!(
                    (local.prob(t) - served.prob(t)).abs() < 1e-9,
                    "context {ctx:?} token {t}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_context_is_rejected_client_side() {
        let (addr, _) = spawn_table_server();
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        assert!(matches!(
            remote.next_distribution(&[7]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn concurrent_queries_share_one_connection() {
        let (addr, table) = spawn_table_server();
        let remote = Arc::new(RemoteLm::connect(&addr.to_string()).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let remote = Arc::clone(&remote);
                std::thread::spawn(move || {
                    let ctx = [(i % 3) as TokenId];
                    remote.next_distribution(&ctx).unwrap().prob(1)
                })
            })
            .collect();
        for (i, handle) in handles.into_iter().enumerate() {
            let got = handle.join().unwrap();
            let want = table.next_distribution(&[(i % 3) as TokenId]).unwrap().prob(1);
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn unreachable_endpoint_is_backend_unavailable() {
        // Bind and immediately drop to find a port with no listener.
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        match RemoteLm::connect_with_timeout(&addr.to_string(), Duration::from_millis(200)) {
            Err(Error::BackendUnavailable(_)) => {}
            other => panic!("expected backend-unavailable, got {other:?}"),
        }
    }

    /// A misbehaving server for client robustness checks: replies to hello
    /// normally, then sends whatever canned line it was given.
    fn spawn_canned_server(canned: &'static str) -> std::net::SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { return };
                let mut writer = stream.try_clone().unwrap();
                let reader = BufReader::new(stream);
                for line in reader.lines() {
                    let Ok(line) = line else { return };
                    let reply = if line.contains("hello") {
                        "{\"vocab_size\":3,\"eos\":null}".to_string()
                    } else {
                        canned.to_string()
                    };
                    if writer.write_all(reply.as_bytes()).is_err()
                        || writer.write_all(b"\n").is_err()
                    {
                        return;
                    }
                }
            }
        });
        addr
    }

    #[test]
    fn reply_length_mismatch_is_backend_unavailable() {
        let addr = spawn_canned_server("{\"logprobs\":[-0.1,-0.2]}");
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        match remote.next_distribution(&[0]) {
            Err(Error::BackendUnavailable(msg)) => assert!(msg.contains("expected vocab_size"), "{msg}"),
            other => panic!("expected backend-unavailable, got {other:?}"),
        }
    }

    #[test]
    fn server_error_reply_is_backend_unavailable() {
        let addr = spawn_canned_server("{\"error\":\"model exploded\"}");
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        match remote.next_distribution(&[0]) {
            Err(Error::BackendUnavailable(msg)) => assert!(msg.contains("model exploded"), "{msg}"),
            other => panic!("expected backend-unavailable, got {other:?}"),
        }
    }

    #[test]
    fn zero_probability_entries_survive_the_wire() {
        let table = Arc::new(TableLm::context_free(&[0.5, 0.0, 0.5]).unwrap());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let served: Arc<dyn LmBackend> = table.clone();
        std::thread::spawn(move || {
            let _ = serve_backend(listener, served);
        });
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        let d = remote.next_distribution(&[]).unwrap();
        assert_eq!(d.prob(1), 0.0);
        assert!((d.prob(0) - 0.5).abs() < 1e-12);
        assert!((d.prob(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_logprobs_normalize_to_uniform() {
        let addr = spawn_canned_server("{\"logprobs\":[0.0,0.0,0.0]}");
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        let d = remote.next_distribution(&[0]).unwrap();
        for t in 0..3 {
            assert!((d.prob(t) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_reply_is_backend_unavailable() {
        let addr = spawn_canned_server("not json at all");
        let remote = RemoteLm::connect(&addr.to_string()).unwrap();
        assert!(matches!(
            remote.next_distribution(&[0]),
            Err(Error::BackendUnavailable(_))
        ));
    }
}
