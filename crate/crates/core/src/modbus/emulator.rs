//! MODBUS/TCP hardware emulator.
//!
//! [`EmulatedDevice`] is the register-addressable device model: a non-ideal
//! battery, a thermostat-controlled room and replayed PV/load traces, all
//! advanced in fixed emulated ticks. [`emulator_serve`] puts it behind a TCP
//! listener with one thread per connection and a single ticking thread; all
//! of them go through one mutex, so every observable history is a serial
//! order of tick, read and write events.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::codec::{decode_value, encode_saturating, RegisterSpec};
use super::frame::{
    be_u16, exception_pdu, MbapFrame, EX_GATEWAY_TARGET, EX_ILLEGAL_ADDRESS, EX_ILLEGAL_FUNCTION,
    EX_ILLEGAL_VALUE, FN_READ_HOLDING, FN_WRITE_MULTIPLE, FN_WRITE_SINGLE, HEADER_LEN,
    MAX_READ_COUNT, MAX_WRITE_COUNT,
};
use super::regmap::{names, RegisterMap};
use super::ModbusError;
use crate::assets::{
    battery_step, meter_net_kw, thermal_step, BatteryParams, BatteryState, ThermalParams,
    ThermalState, Trace,
};
use crate::domain::{utc_midnight, PowerKw, Seed, TimeGrid};

pub const DEFAULT_PORT: u16 = 15020;
pub const DEFAULT_TICK_S: u32 = 10;
pub const DEFAULT_TIME_SCALE: f64 = 3600.0;

#[derive(Debug, Clone)]
pub struct EmulatorConfig {
    pub map: RegisterMap,
    pub battery: BatteryParams,
    pub thermal: ThermalParams,
    pub initial_soc: f64,
    pub initial_temp_c: f64,
    pub pv: Trace,
    pub load: Trace,
    /// Emulated seconds per model tick.
    pub tick_s: u32,
    /// Emulated seconds per wall second.
    pub time_scale: f64,
    pub seed: Seed,
    pub bind: SocketAddr,
    /// Keep a per-tick log of the model (see [`TickRow`]).
    pub record_ticks: bool,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        let day = TimeGrid::day(utc_midnight(2024, 1, 1));
        Self {
            map: RegisterMap::default(),
            battery: BatteryParams::default(),
            thermal: ThermalParams::default(),
            initial_soc: 0.5,
            initial_temp_c: 18.0,
            pv: Trace::clear_sky_pv(day, 3.0),
            load: Trace::household_load(day),
            tick_s: DEFAULT_TICK_S,
            time_scale: DEFAULT_TIME_SCALE,
            seed: Seed(0),
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            record_ticks: false,
        }
    }
}

impl EmulatorConfig {
    pub fn validate(&self) -> Result<(), ModbusError> {
        let cfg = |m: String| ModbusError::Config(m);
        self.map.validate_for_device()?;
        self.battery.validate().map_err(|e| cfg(e.to_string()))?;
        self.thermal.validate().map_err(|e| cfg(e.to_string()))?;
        if !(1..=60).contains(&self.tick_s) {
            return Err(cfg(format!("tick {} s outside 1..=60", self.tick_s)));
        }
        if !(self.time_scale >= 1.0 && self.time_scale.is_finite()) {
            return Err(cfg(format!("time_scale {} < 1", self.time_scale)));
        }
        if f64::from(self.tick_s) / 3600.0 > self.thermal.tau_h / 4.0 {
            return Err(cfg("tick too long for the thermal time constant".into()));
        }
        if !(self.battery.soc_min..=self.battery.soc_max).contains(&self.initial_soc) {
            return Err(cfg(format!(
                "initial soc {} outside battery bounds",
                self.initial_soc
            )));
        }
        Ok(())
    }

    /// Wall-clock duration of one tick.
    pub fn tick_wall(&self) -> Duration {
        Duration::from_secs_f64(f64::from(self.tick_s) / self.time_scale)
    }
}

/// Model state after one emulated tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    /// Emulated seconds since start at the end of the tick.
    pub elapsed_s: u64,
    pub soc_before: f64,
    pub soc: f64,
    pub setpoint_kw: f64,
    pub delivered_kw: f64,
    pub temp_c: f64,
    pub heater_on: bool,
    pub thermostat_setpoint_c: f64,
    pub pv_kw: f64,
    pub load_kw: f64,
    pub grid_kw: f64,
}

struct Bound {
    soc: RegisterSpec,
    power: RegisterSpec,
    setpoint: RegisterSpec,
    temp: RegisterSpec,
    thermostat: RegisterSpec,
    pv: RegisterSpec,
    load: RegisterSpec,
    grid: RegisterSpec,
    heartbeat: RegisterSpec,
}

impl Bound {
    fn from_map(map: &RegisterMap) -> Self {
        let get = |n: &str| map.by_name(n).cloned().expect("validated map");
        Self {
            soc: get(names::SOC),
            power: get(names::BATTERY_POWER),
            setpoint: get(names::BATTERY_SETPOINT),
            temp: get(names::ROOM_TEMP),
            thermostat: get(names::THERMOSTAT_SETPOINT),
            pv: get(names::PV_POWER),
            load: get(names::LOAD_POWER),
            grid: get(names::GRID_POWER),
            heartbeat: get(names::HEARTBEAT),
        }
    }
}

/// The emulated device behind the register map.
pub struct EmulatedDevice {
    map: RegisterMap,
    bound: Bound,
    battery_params: BatteryParams,
    thermal_params: ThermalParams,
    pv: Trace,
    load: Trace,
    tick_s: u32,
    battery: BatteryState,
    thermal: ThermalState,
    regs: HashMap<u16, u16>,
    tick: u64,
    rng: ChaCha8Rng,
    record: bool,
    log: Vec<TickRow>,
}

impl EmulatedDevice {
    pub fn new(cfg: &EmulatorConfig) -> Result<Self, ModbusError> {
        cfg.validate()?;
        let bound = Bound::from_map(&cfg.map);
        let mut regs: HashMap<u16, u16> =
            cfg.map.registers.iter().map(|r| (r.address, 0)).collect();
        regs.insert(
            bound.thermostat.address,
            encode_saturating(&bound.thermostat, cfg.thermal.setpoint_c),
        );
        let initial_temp = cfg.initial_temp_c;
        let mut dev = Self {
            map: cfg.map.clone(),
            bound,
            battery_params: cfg.battery,
            thermal_params: cfg.thermal,
            pv: cfg.pv.clone(),
            load: cfg.load.clone(),
            tick_s: cfg.tick_s,
            battery: BatteryState::at(cfg.initial_soc),
            thermal: ThermalState {
                temp_c: initial_temp,
                heater_on: initial_temp < cfg.thermal.setpoint_c - cfg.thermal.hysteresis_c,
            },
            regs,
            tick: 0,
            rng: cfg.seed.rng(),
            record: cfg.record_ticks,
            log: Vec::new(),
        };
        let (pv, load) = dev.traces_at(0);
        dev.refresh_measured(pv, load);
        Ok(dev)
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn elapsed_s(&self) -> u64 {
        self.tick * u64::from(self.tick_s)
    }

    pub fn battery(&self) -> BatteryState {
        self.battery
    }

    pub fn thermal(&self) -> ThermalState {
        self.thermal
    }

    pub fn tick_log(&self) -> &[TickRow] {
        &self.log
    }

    fn traces_at(&self, elapsed_s: u64) -> (PowerKw, PowerKw) {
        (
            self.pv.sample_wrapped(elapsed_s),
            self.load.sample_wrapped(elapsed_s),
        )
    }

    fn reg(&self, spec: &RegisterSpec) -> f64 {
        decode_value(spec, self.regs[&spec.address])
    }

    fn refresh_measured(&mut self, pv: PowerKw, load: PowerKw) {
        let b = &self.bound;
        let delivered = self.battery.last_delivered_kw;
        let values = [
            (&b.soc, self.battery.soc * 100.0),
            (&b.power, delivered.0),
            (&b.temp, self.thermal.temp_c),
            (&b.pv, pv.0),
            (&b.load, load.0),
            (&b.grid, meter_net_kw(load, pv, delivered).0),
        ];
        for (spec, v) in values {
            self.regs.insert(spec.address, encode_saturating(spec, v));
        }
        self.regs
            .insert(b.heartbeat.address, (self.tick & 0xFFFF) as u16);
    }

    /// Advances the models by one tick using the currently written setpoints.
    pub fn step_tick(&mut self) {
        let dt_h = f64::from(self.tick_s) / 3600.0;
        let setpoint = PowerKw(self.reg(&self.bound.setpoint));
        let thermostat = self.reg(&self.bound.thermostat);
        // One draw per tick keeps the stream aligned whether or not the
        // battery is noisy.
        let z: f64 = self.rng.sample(StandardNormal);
        let soc_before = self.battery.soc;
        let (battery, delivered) =
            battery_step(&self.battery_params, &self.battery, setpoint, dt_h, z)
                .expect("setpoint decoded from a register is finite");
        self.battery = battery;

        let params = ThermalParams {
            setpoint_c: thermostat,
            ..self.thermal_params
        };
        match thermal_step(&params, &self.thermal, dt_h) {
            Ok(t) => self.thermal = t,
            Err(e) => warn!("thermal model rejected tick {}: {e}", self.tick),
        }

        let (pv, load) = self.traces_at(self.elapsed_s());
        self.tick += 1;
        self.refresh_measured(pv, load);
        if self.record {
            self.log.push(TickRow {
                tick: self.tick,
                elapsed_s: self.elapsed_s(),
                soc_before,
                soc: self.battery.soc,
                setpoint_kw: setpoint.0,
                delivered_kw: delivered.0,
                temp_c: self.thermal.temp_c,
                heater_on: self.thermal.heater_on,
                thermostat_setpoint_c: thermostat,
                pv_kw: pv.0,
                load_kw: load.0,
                grid_kw: meter_net_kw(load, pv, delivered).0,
            });
        }
    }

    /// Serves one request PDU and returns the response PDU.
    pub fn handle_pdu(&mut self, unit_id: u8, pdu: &[u8]) -> Vec<u8> {
        let Some(&function) = pdu.first() else {
            return exception_pdu(0, EX_ILLEGAL_FUNCTION);
        };
        if unit_id != self.map.unit_id && unit_id != 0 && unit_id != 0xFF {
            return exception_pdu(function, EX_GATEWAY_TARGET);
        }
        match function {
            FN_READ_HOLDING => self.read_holding(pdu),
            FN_WRITE_SINGLE => self.write_single(pdu),
            FN_WRITE_MULTIPLE => self.write_multiple(pdu),
            _ => exception_pdu(function, EX_ILLEGAL_FUNCTION),
        }
    }

    fn read_holding(&self, pdu: &[u8]) -> Vec<u8> {
        if pdu.len() != 5 {
            return exception_pdu(FN_READ_HOLDING, EX_ILLEGAL_VALUE);
        }
        let (addr, count) = (be_u16(pdu, 1), be_u16(pdu, 3));
        if count == 0 || count > MAX_READ_COUNT {
            return exception_pdu(FN_READ_HOLDING, EX_ILLEGAL_VALUE);
        }
        let mut out = vec![FN_READ_HOLDING, (count * 2) as u8];
        for i in 0..u32::from(count) {
            let a = u32::from(addr) + i;
            let Some(raw) = u16::try_from(a).ok().and_then(|a| self.regs.get(&a)) else {
                return exception_pdu(FN_READ_HOLDING, EX_ILLEGAL_ADDRESS);
            };
            out.extend_from_slice(&raw.to_be_bytes());
        }
        out
    }

    fn writable(&self, address: u16) -> bool {
        self.map
            .by_address(address)
            .is_some_and(RegisterSpec::writable)
    }

    fn write_single(&mut self, pdu: &[u8]) -> Vec<u8> {
        if pdu.len() != 5 {
            return exception_pdu(FN_WRITE_SINGLE, EX_ILLEGAL_VALUE);
        }
        let (addr, raw) = (be_u16(pdu, 1), be_u16(pdu, 3));
        if !self.writable(addr) {
            return exception_pdu(FN_WRITE_SINGLE, EX_ILLEGAL_ADDRESS);
        }
        self.regs.insert(addr, raw);
        pdu.to_vec()
    }

    fn write_multiple(&mut self, pdu: &[u8]) -> Vec<u8> {
        if pdu.len() < 6 {
            return exception_pdu(FN_WRITE_MULTIPLE, EX_ILLEGAL_VALUE);
        }
        let (addr, count, bytes) = (be_u16(pdu, 1), be_u16(pdu, 3), pdu[5] as usize);
        if count == 0
            || count > MAX_WRITE_COUNT
            || bytes != 2 * count as usize
            || pdu.len() != 6 + bytes
        {
            return exception_pdu(FN_WRITE_MULTIPLE, EX_ILLEGAL_VALUE);
        }
        let targets: Option<Vec<u16>> = (0..u32::from(count))
            .map(|i| {
                u16::try_from(u32::from(addr) + i)
                    .ok()
                    .filter(|a| self.writable(*a))
            })
            .collect();
        let Some(targets) = targets else {
            return exception_pdu(FN_WRITE_MULTIPLE, EX_ILLEGAL_ADDRESS);
        };
        for (i, a) in targets.into_iter().enumerate() {
            self.regs.insert(a, be_u16(pdu, 6 + 2 * i));
        }
        pdu[..5].to_vec()
    }
}

struct Shared {
    device: Mutex<EmulatedDevice>,
    stop: AtomicBool,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, EmulatedDevice> {
        self.device.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Running emulator. Dropping it stops the server.
pub struct EmulatorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    tick_s: u32,
}

impl EmulatorHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ticks(&self) -> u64 {
        self.shared.lock().ticks()
    }

    pub fn tick_s(&self) -> u32 {
        self.tick_s
    }

    pub fn battery(&self) -> BatteryState {
        self.shared.lock().battery()
    }

    pub fn thermal(&self) -> ThermalState {
        self.shared.lock().thermal()
    }

    pub fn tick_log(&self) -> Vec<TickRow> {
        self.shared.lock().tick_log().to_vec()
    }

    /// Blocks until the model has completed `tick` ticks.
    pub fn wait_for_tick(&self, tick: u64) {
        while self.ticks() < tick {
            thread::sleep(Duration::from_micros(200));
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for EmulatorHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Starts the emulator: binds the listener, then spawns the acceptor and the
/// tick loop.
pub fn emulator_serve(config: EmulatorConfig) -> Result<EmulatorHandle, ModbusError> {
    let device = EmulatedDevice::new(&config)?;
    let listener = TcpListener::bind(config.bind)
        .map_err(|e| ModbusError::Startup(format!("{}: {e}", config.bind)))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| ModbusError::Startup(e.to_string()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| ModbusError::Startup(e.to_string()))?;
    let shared = Arc::new(Shared {
        device: Mutex::new(device),
        stop: AtomicBool::new(false),
    });

    let tick_wall = config.tick_wall();
    let ticker = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("emulator-tick".into())
            .spawn(move || tick_loop(&shared, tick_wall))
            .map_err(|e| ModbusError::Startup(e.to_string()))?
    };
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("emulator-accept".into())
            .spawn(move || accept_loop(&shared, &listener))
            .map_err(|e| ModbusError::Startup(e.to_string()))?
    };
    Ok(EmulatorHandle {
        addr,
        shared,
        threads: vec![ticker, acceptor],
        tick_s: config.tick_s,
    })
}

fn tick_loop(shared: &Shared, tick_wall: Duration) {
    let start = Instant::now();
    let mut k: u64 = 1;
    while !shared.stop.load(Ordering::Relaxed) {
        let deadline = start + tick_wall.mul_f64(k as f64);
        loop {
            let now = Instant::now();
            if now >= deadline || shared.stop.load(Ordering::Relaxed) {
                break;
            }
            thread::sleep((deadline - now).min(Duration::from_millis(20)));
        }
        if shared.stop.load(Ordering::Relaxed) {
            break;
        }
        shared.lock().step_tick();
        k += 1;
    }
}

fn accept_loop(shared: &Arc<Shared>, listener: &TcpListener) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("emulator: connection from {peer}");
                let shared = Arc::clone(shared);
                workers.retain(|w| !w.is_finished());
                workers.push(thread::spawn(move || {
                    if let Err(e) = serve_connection(&shared, stream) {
                        warn!("emulator: closing connection from {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5))
            }
            Err(e) => {
                warn!("emulator: accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Fills `buf`. Returns `Ok(false)` on a clean close before any byte, or on
/// shutdown while idle.
fn read_full(stream: &mut TcpStream, buf: &mut [u8], stop: &AtomicBool) -> io::Result<bool> {
    let mut filled = 0;
    let mut stalled_since: Option<Instant> = None;
    while filled < buf.len() {
        match stream.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "truncated frame",
                ))
            }
            Ok(n) => {
                filled += n;
                stalled_since = None;
            }
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                if stop.load(Ordering::Relaxed) {
                    return Ok(false);
                }
                if filled > 0 {
                    let since = *stalled_since.get_or_insert_with(Instant::now);
                    if since.elapsed() > Duration::from_secs(5) {
                        return Err(io::Error::new(
                            io::ErrorKind::TimedOut,
                            "partial frame stalled",
                        ));
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn serve_connection(shared: &Shared, mut stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    stream.set_nodelay(true)?;
    loop {
        let mut header = [0u8; HEADER_LEN];
        if !read_full(&mut stream, &mut header, &shared.stop)? {
            return Ok(());
        }
        let (tid, unit, pdu_len) = MbapFrame::parse_header(&header).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("malformed frame: {e}"))
        })?;
        let mut pdu = vec![0u8; pdu_len];
        if !read_full(&mut stream, &mut pdu, &shared.stop)? {
            return Ok(());
        }
        let resp = shared.lock().handle_pdu(unit, &pdu);
        stream.write_all(&MbapFrame::new(tid, unit, resp).to_bytes())?;
    }
}
