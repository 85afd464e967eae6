//! Newline-delimited JSON access to an environment over TCP.
//!
//! Requests: `{"id":int,"cmd":"spec"|"reset"|"step"|"close","seed":int?,"action":int?}`.
//! Responses echo `id` and carry either a step result or
//! `{"error":code,"message":text}`. One controller at a time; a second
//! connection gets `busy` in reply to its first request and is closed.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Value};

use super::arbitrage::{ArbitrageEnv, StepResult, OBSERVATION_LEN, PRICE_NORM_EUR_MWH};
use super::backend::Backend;
use super::EnvError;
use crate::domain::Seed;

const POLL: Duration = Duration::from_millis(50);
const BUSY_GRACE: Duration = Duration::from_secs(2);
const MAX_LINE: usize = 64 * 1024;

struct Shared<B: Backend> {
    env: Mutex<ArbitrageEnv<B>>,
    active: AtomicBool,
    stop: AtomicBool,
}

/// Running environment server. Dropping it stops the server.
pub struct EnvServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl EnvServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the server is stopped from elsewhere (e.g. a signal
    /// handler flipping the flag returned by [`EnvServerHandle::stop_flag`]).
    pub fn wait(mut self) {
        while !self.stop.load(Ordering::SeqCst) {
            thread::sleep(POLL);
        }
        self.stop_now();
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EnvServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves `env` on `bind`.
pub fn serve_env<B: Backend + 'static>(
    env: ArbitrageEnv<B>,
    bind: SocketAddr,
) -> Result<EnvServerHandle, EnvError> {
    let listener =
        TcpListener::bind(bind).map_err(|e| EnvError::Transport(format!("{bind}: {e}")))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        env: Mutex::new(env),
        active: AtomicBool::new(false),
        stop: AtomicBool::new(false),
    });
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::Builder::new()
            .name("env-accept".into())
            .spawn(move || accept_loop(&listener, &shared, &stop))
            .map_err(|e| EnvError::Transport(e.to_string()))?
    };
    Ok(EnvServerHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}

fn accept_loop<B: Backend + 'static>(
    listener: &TcpListener,
    shared: &Arc<Shared<B>>,
    stop: &AtomicBool,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let shared = Arc::clone(shared);
                let claimed = shared
                    .active
                    .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                    .is_ok();
                debug!("env connection from {peer} (controller: {claimed})");
                workers.push(thread::spawn(move || {
                    let result = if claimed {
                        let r = serve_controller(stream, &shared);
                        shared.active.store(false, Ordering::SeqCst);
                        r
                    } else {
                        refuse_busy(stream)
                    };
                    if let Err(e) = result {
                        debug!("env connection from {peer} ended: {e}");
                    }
                }));
                workers.retain(|w| !w.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5))
            }
            Err(e) => {
                warn!("env accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    shared.stop.store(true, Ordering::SeqCst);
    for w in workers {
        let _ = w.join();
    }
}

enum Line {
    Text(String),
    Eof,
    Stopped,
}

/// Reads one newline-terminated line, polling `stop` between timeouts.
fn read_line(
    reader: &mut BufReader<TcpStream>,
    buf: &mut Vec<u8>,
    stop: &AtomicBool,
    deadline: Option<Instant>,
) -> io::Result<Line> {
    buf.clear();
    loop {
        if stop.load(Ordering::SeqCst) || deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(Line::Stopped);
        }
        match reader.read_until(b'\n', buf) {
            Ok(0) => return Ok(Line::Eof),
            Ok(_) if buf.ends_with(b"\n") => {
                return Ok(Line::Text(String::from_utf8_lossy(buf).trim().to_string()));
            }
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) => {}
            Err(e) => return Err(e),
        }
        if buf.len() > MAX_LINE {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "request line too long",
            ));
        }
    }
}

fn send(stream: &mut TcpStream, v: &Value) -> io::Result<()> {
    let mut line = serde_json::to_string(v).expect("json value serializes");
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    stream.flush()
}

fn error_reply(id: &Value, code: &str, message: &str) -> Value {
    json!({"id": id, "error": code, "message": message})
}

fn refuse_busy(stream: TcpStream) -> io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let never = AtomicBool::new(false);
    let mut buf = Vec::new();
    // Answer the first request so the client sees the refusal as a reply.
    let id = match read_line(
        &mut reader,
        &mut buf,
        &never,
        Some(Instant::now() + BUSY_GRACE),
    )? {
        Line::Text(t) => serde_json::from_str::<Value>(&t)
            .ok()
            .and_then(|v| v.get("id").cloned())
            .unwrap_or(Value::Null),
        _ => Value::Null,
    };
    send(
        &mut writer,
        &error_reply(&id, "busy", "another controller holds this environment"),
    )?;
    writer.shutdown(std::net::Shutdown::Both)
}

fn step_reply(id: &Value, r: &StepResult) -> Value {
    json!({
        "id": id,
        "observation": r.observation,
        "reward": r.reward,
        "terminated": r.terminated,
        "truncated": r.truncated,
        "info": r.info,
    })
}

fn serve_controller<B: Backend>(stream: TcpStream, shared: &Shared<B>) -> io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        let text = match read_line(&mut reader, &mut buf, &shared.stop, None)? {
            Line::Text(t) => t,
            Line::Eof | Line::Stopped => return Ok(()),
        };
        if text.is_empty() {
            continue;
        }
        let (reply, close) = handle_request(&text, shared);
        send(&mut writer, &reply)?;
        if close {
            return writer.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn handle_request<B: Backend>(text: &str, shared: &Shared<B>) -> (Value, bool) {
    let req: Value = match serde_json::from_str(text) {
        Ok(v @ Value::Object(_)) => v,
        Ok(_) => {
            return (
                error_reply(&Value::Null, "bad_request", "request must be a JSON object"),
                false,
            )
        }
        Err(e) => {
            return (
                error_reply(&Value::Null, "bad_request", &format!("invalid JSON: {e}")),
                false,
            )
        }
    };
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    if !id.is_u64() && !id.is_i64() {
        return (
            error_reply(&id, "bad_request", "id must be an integer"),
            false,
        );
    }
    let Some(cmd) = req.get("cmd").and_then(Value::as_str) else {
        return (error_reply(&id, "bad_request", "missing cmd"), false);
    };
    let mut env = shared.env.lock().unwrap_or_else(|p| p.into_inner());
    let outcome = match cmd {
        "spec" => {
            let c = env.config();
            Ok(json!({
                "id": id,
                "observation_length": OBSERVATION_LEN,
                "action_count": c.action_set_kw.len(),
                "action_set_kw": c.action_set_kw,
                "n_steps": c.grid.n_steps(),
                "step_s": c.grid.step_s(),
                "price_norm_eur_mwh": PRICE_NORM_EUR_MWH,
            }))
        }
        "reset" => {
            let seed = match req.get("seed") {
                None | Some(Value::Null) => Some(0),
                Some(v) => v.as_u64(),
            };
            match seed {
                Some(s) => env.reset(Seed(s)).map(|r| step_reply(&id, &r)),
                None => {
                    return (
                        error_reply(&id, "bad_request", "seed must be a non-negative integer"),
                        false,
                    )
                }
            }
        }
        "step" => match req.get("action").and_then(Value::as_u64) {
            Some(a) => env.step(a as usize).map(|r| step_reply(&id, &r)),
            None => {
                return (
                    error_reply(
                        &id,
                        "bad_request",
                        "step needs a non-negative integer action",
                    ),
                    false,
                )
            }
        },
        "close" => return (json!({"id": id, "ok": true}), true),
        other => {
            return (
                error_reply(&id, "bad_request", &format!("unknown cmd {other:?}")),
                false,
            )
        }
    };
    match outcome {
        Ok(v) => (v, false),
        Err(e) => (error_reply(&id, e.code(), &e.to_string()), false),
    }
}
