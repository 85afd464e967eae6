use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use hemsgym::assets::BatteryParams;
use hemsgym::domain::{utc_midnight, EnergyPrice, Seed, TimeGrid};
use hemsgym::env::{serve_env, ArbitrageEnv, ArbitrageEnvConfig, SimBackend};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

fn env() -> ArbitrageEnv<SimBackend> {
    let grid = TimeGrid::day(utc_midnight(2024, 3, 4));
    let prices = (0..96)
        .map(|i| EnergyPrice(60.0 + 45.0 * (i as f64 / 7.0).sin() - 0.37 * i as f64))
        .collect();
    let cfg = ArbitrageEnvConfig::new(grid, prices, BatteryParams::ideal());
    ArbitrageEnv::new(cfg, SimBackend::ideal()).unwrap()
}

struct Conn {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    next_id: u64,
}

impl Conn {
    fn open(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Self {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
            next_id: 1,
        }
    }

    fn send_line(&mut self, line: &str) -> Value {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        self.reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    }

    fn call(&mut self, mut req: Value) -> Value {
        let id = self.next_id;
        self.next_id += 1;
        req["id"] = json!(id);
        let reply = self.send_line(&req.to_string());
        assert_eq!(reply["id"], json!(id));
        reply
    }
}

fn actions() -> Vec<usize> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(96);
    (0..96).map(|_| rng.gen_range(0..3)).collect()
}

#[test]
fn wire_replay_matches_native_rewards_exactly() {
    let mut native = env();
    native.reset(Seed(4)).unwrap();
    let expected: Vec<f64> = actions()
        .into_iter()
        .map(|a| native.step(a).unwrap().reward)
        .collect();

    let server = serve_env(env(), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let mut c = Conn::open(server.local_addr());
    c.call(json!({"cmd": "reset", "seed": 4}));
    let mut got = Vec::new();
    let mut last = Value::Null;
    for a in actions() {
        last = c.call(json!({"cmd": "step", "action": a}));
        got.push(last["reward"].as_f64().unwrap());
    }
    assert_eq!(got, expected);
    assert_eq!(last["terminated"], json!(true));
    let after = c.call(json!({"cmd": "step", "action": 1}));
    assert!(after["error"].is_string());
}

#[test]
fn second_connection_is_refused_busy() {
    let server = serve_env(env(), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let mut first = Conn::open(server.local_addr());
    first.call(json!({"cmd": "spec"}));
    let mut second = Conn::open(server.local_addr());
    let reply = second.call(json!({"cmd": "spec"}));
    assert_eq!(reply["error"], json!("busy"));
    // The controller is unaffected.
    assert_eq!(first.call(json!({"cmd": "spec"}))["n_steps"], json!(96));
}

#[test]
fn controller_slot_frees_after_close() {
    let server = serve_env(env(), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let mut first = Conn::open(server.local_addr());
    first.call(json!({"cmd": "close"}));
    drop(first);
    std::thread::sleep(Duration::from_millis(200));
    let mut next = Conn::open(server.local_addr());
    let r = next.call(json!({"cmd": "reset"}));
    assert!(r["observation"].is_array(), "{r}");
}

#[test]
fn malformed_requests_get_error_replies() {
    let server = serve_env(env(), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let mut c = Conn::open(server.local_addr());
    for line in [
        "not json",
        "[1,2]",
        r#"{"id":"x","cmd":"spec"}"#,
        r#"{"id":1}"#,
        r#"{"id":2,"cmd":"dance"}"#,
    ] {
        let r = c.send_line(line);
        assert!(r["error"].is_string(), "{line}: {r}");
    }
    let r = c.call(json!({"cmd": "step", "action": 0}));
    assert!(r["error"].is_string(), "step before reset: {r}");
}
