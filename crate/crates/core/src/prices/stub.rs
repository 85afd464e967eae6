//! Minimal HTTP server implementing the day-ahead endpoint for tests and
//! offline demos.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::NaiveDate;

use super::fetch::PricePoint;
use super::PriceSeries;
use crate::domain::format_utc;

#[derive(Debug, Clone)]
pub enum StubReply {
    Status(u16),
    Json(String),
}

struct StubState {
    script: Mutex<VecDeque<StubReply>>,
    series: Option<PriceSeries>,
    hits: AtomicUsize,
    stop: AtomicBool,
}

/// Serves `GET /?area=..&date=YYYY-MM-DD`. Scripted replies are consumed
/// first; afterwards the day is sliced from the backing series (404 when
/// not covered).
pub struct StubPriceServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    thread: Option<JoinHandle<()>>,
}

impl StubPriceServer {
    pub fn start(series: Option<PriceSeries>, script: Vec<StubReply>) -> std::io::Result<Self> {
        Self::bind(SocketAddr::from(([127, 0, 0, 1], 0)), series, script)
    }

    pub fn bind(
        addr: SocketAddr,
        series: Option<PriceSeries>,
        script: Vec<StubReply>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(StubState {
            script: Mutex::new(script.into()),
            series,
            hits: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
        });
        let st = Arc::clone(&state);
        let thread = thread::spawn(move || {
            while !st.stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = handle(&st, stream);
                    }
                    Err(_) => thread::sleep(Duration::from_millis(5)),
                }
            }
        });
        Ok(Self {
            addr,
            state,
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/day-ahead", self.addr)
    }

    /// Number of requests served so far.
    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubPriceServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// JSON body for one day of `series`.
pub fn day_json(series: &PriceSeries) -> String {
    let points: Vec<PricePoint> = series
        .points()
        .map(|(ts, p)| PricePoint {
            start: format_utc(ts),
            price: p.0,
        })
        .collect();
    serde_json::to_string(&points).expect("points serialize")
}

fn query_param<'a>(target: &'a str, key: &str) -> Option<&'a str> {
    let (_, query) = target.split_once('?')?;
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn handle(state: &StubState, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
    }
    state.hits.fetch_add(1, Ordering::SeqCst);
    let target = request_line.split_whitespace().nth(1).unwrap_or("/");

    let scripted = state
        .script
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .pop_front();
    let (status, body) = match scripted {
        Some(StubReply::Status(code)) => (code, String::new()),
        Some(StubReply::Json(body)) => (200, body),
        None => {
            let day = query_param(target, "date")
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
            match (day, &state.series) {
                (Some(day), Some(series)) => match series.day(day) {
                    Ok(d) => (200, day_json(&d)),
                    Err(_) => (404, String::new()),
                },
                (None, _) => (400, String::new()),
                (_, None) => (404, String::new()),
            }
        }
    };
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}
