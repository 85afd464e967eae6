use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::backend::{Backend, BackendObservation};
use super::EnvError;
use crate::domain::{PowerKw, Seed, TimeGrid};
use crate::modbus::{
    decode_value, encode_value, names, ModbusClient, ModbusError, RegisterMap, RegisterSpec,
    DEFAULT_TICK_S, DEFAULT_TIME_SCALE,
};

/// Where and how to reach the device.
#[derive(Debug, Clone)]
pub struct HardwareConfig {
    /// `host:port`.
    pub addr: String,
    pub map: RegisterMap,
    /// Emulated seconds per device tick; the heartbeat register counts ticks.
    pub tick_s: u32,
    /// Expected device time scale; only used to pick the polling interval.
    pub time_scale: f64,
    pub io_timeout: Duration,
    /// Heartbeat silence after which a step is abandoned.
    pub stall_timeout: Duration,
}

impl HardwareConfig {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            map: RegisterMap::default(),
            tick_s: DEFAULT_TICK_S,
            time_scale: DEFAULT_TIME_SCALE,
            io_timeout: crate::modbus::DEFAULT_TIMEOUT,
            stall_timeout: Duration::from_secs(5),
        }
    }

    fn poll_interval(&self) -> Duration {
        let tick_wall = f64::from(self.tick_s) / self.time_scale;
        Duration::from_secs_f64((tick_wall / 4.0).clamp(1e-4, 0.25))
    }
}

fn map_err(e: ModbusError) -> EnvError {
    if e.is_transport() {
        EnvError::Transport(e.to_string())
    } else {
        EnvError::Backend(e.to_string())
    }
}

struct Bound {
    soc: RegisterSpec,
    power: RegisterSpec,
    setpoint: RegisterSpec,
    temp: RegisterSpec,
    pv: RegisterSpec,
    load: RegisterSpec,
    heartbeat: RegisterSpec,
}

struct Snapshot {
    soc: f64,
    power: f64,
    temp: f64,
    pv: f64,
    load: f64,
    heartbeat: u16,
}

/// A device behind MODBUS/TCP, stepped by watching its tick counter.
///
/// A control step spans `step_s / tick_s` device ticks. Delivered power is
/// the mean of the power register over those ticks; the state of charge is
/// whatever the device reports.
pub struct HardwareBackend {
    config: HardwareConfig,
    bound: Bound,
    block: Option<(u16, u16)>,
    client: Option<ModbusClient>,
    ticks_per_step: u16,
    step_start: u16,
    baseline_soc: Option<f64>,
    last: Option<BackendObservation>,
}

impl HardwareBackend {
    pub fn new(config: HardwareConfig) -> Result<Self, EnvError> {
        config
            .map
            .validate_for_device()
            .map_err(|e| EnvError::Config(e.to_string()))?;
        let get = |n: &str| config.map.by_name(n).cloned().expect("validated map");
        let bound = Bound {
            soc: get(names::SOC),
            power: get(names::BATTERY_POWER),
            setpoint: get(names::BATTERY_SETPOINT),
            temp: get(names::ROOM_TEMP),
            pv: get(names::PV_POWER),
            load: get(names::LOAD_POWER),
            heartbeat: get(names::HEARTBEAT),
        };
        let (lo, n) = config.map.span();
        let block = (n as usize == config.map.registers.len() && n <= 125).then_some((lo, n));
        Ok(Self {
            config,
            bound,
            block,
            client: None,
            ticks_per_step: 0,
            step_start: 0,
            baseline_soc: None,
            last: None,
        })
    }

    /// State of charge read at the last reset.
    pub fn baseline_soc(&self) -> Option<f64> {
        self.baseline_soc
    }

    fn client(&mut self) -> Result<&mut ModbusClient, EnvError> {
        if self.client.is_none() {
            let c = ModbusClient::connect_timeout(
                self.config.addr.as_str(),
                self.config.map.unit_id,
                self.config.io_timeout,
            )
            .map_err(|e| EnvError::Transport(e.to_string()))?;
            self.client = Some(c);
        }
        Ok(self.client.as_mut().expect("connected"))
    }

    fn read(&mut self) -> Result<Snapshot, EnvError> {
        let block = self.block;
        let specs = [
            self.bound.soc.clone(),
            self.bound.power.clone(),
            self.bound.temp.clone(),
            self.bound.pv.clone(),
            self.bound.load.clone(),
            self.bound.heartbeat.clone(),
        ];
        let client = self.client()?;
        let raws: Result<Vec<u16>, ModbusError> = match block {
            Some((lo, n)) => client.read_holding(lo, n).map(|all| {
                specs
                    .iter()
                    .map(|s| all[(s.address - lo) as usize])
                    .collect()
            }),
            None => specs
                .iter()
                .map(|s| client.read_holding(s.address, 1).map(|v| v[0]))
                .collect(),
        };
        let raws = raws.map_err(|e| {
            // Reconnect on the next call rather than reuse a desynchronized stream.
            self.client = None;
            map_err(e)
        })?;
        let d = |i: usize| decode_value(&specs[i], raws[i]);
        Ok(Snapshot {
            soc: d(0) / 100.0,
            power: d(1),
            temp: d(2),
            pv: d(3),
            load: d(4),
            heartbeat: raws[5],
        })
    }

    fn observation(s: &Snapshot, delivered: f64) -> BackendObservation {
        BackendObservation {
            soc: s.soc.clamp(0.0, 1.0),
            delivered: PowerKw(delivered),
            temp_c: s.temp,
            pv: PowerKw(s.pv),
            load: PowerKw(s.load),
        }
    }
}

impl Backend for HardwareBackend {
    fn kind(&self) -> &'static str {
        "hardware"
    }

    fn reset(&mut self, grid: &TimeGrid, _initial_soc: f64, _seed: Seed) -> Result<(), EnvError> {
        let step_s = grid.step_s();
        if !step_s.is_multiple_of(self.config.tick_s)
            || step_s / self.config.tick_s > u32::from(u16::MAX / 2)
        {
            return Err(EnvError::Config(format!(
                "control step {step_s} s is not a usable multiple of the {} s device tick",
                self.config.tick_s
            )));
        }
        self.ticks_per_step = (step_s / self.config.tick_s) as u16;
        // Idle first so the device does not keep a previous episode's setpoint.
        self.apply_setpoint(PowerKw::ZERO)?;
        let snap = self.read()?;
        self.step_start = snap.heartbeat;
        self.baseline_soc = Some(snap.soc);
        self.last = Some(Self::observation(&snap, 0.0));
        debug!("hardware reset at tick {} soc {}", snap.heartbeat, snap.soc);
        Ok(())
    }

    fn apply_setpoint(&mut self, setpoint: PowerKw) -> Result<(), EnvError> {
        let raw = encode_value(&self.bound.setpoint, setpoint.0)
            .map_err(|e| EnvError::Backend(e.to_string()))?;
        let address = self.bound.setpoint.address;
        let result = self.client()?.write_register(address, raw);
        result.map_err(|e| {
            self.client = None;
            map_err(e)
        })
    }

    fn advance(&mut self) -> Result<(), EnvError> {
        if self.ticks_per_step == 0 {
            return Err(EnvError::Lifecycle("hardware backend not reset".into()));
        }
        let need = self.ticks_per_step;
        let poll = self.config.poll_interval();
        let mut counted: u16 = 0;
        let mut energy_ticks = 0.0;
        let mut last_progress_at = Instant::now();
        let mut last_hb = None;
        loop {
            let snap = self.read()?;
            let progress = snap.heartbeat.wrapping_sub(self.step_start);
            if last_hb != Some(snap.heartbeat) {
                last_hb = Some(snap.heartbeat);
                last_progress_at = Instant::now();
            }
            // The power register holds the latest tick; ticks skipped between
            // polls are attributed the same value.
            let upto = progress.min(need);
            if upto > counted {
                energy_ticks += snap.power * f64::from(upto - counted);
                counted = upto;
            }
            if counted >= need {
                self.step_start = self.step_start.wrapping_add(need);
                self.last = Some(Self::observation(&snap, energy_ticks / f64::from(need)));
                return Ok(());
            }
            if last_progress_at.elapsed() > self.config.stall_timeout {
                return Err(EnvError::Transport(format!(
                    "device heartbeat stalled for {:?}",
                    self.config.stall_timeout
                )));
            }
            thread::sleep(poll);
        }
    }

    fn observe(&mut self) -> Result<BackendObservation, EnvError> {
        match self.last {
            Some(o) => Ok(o),
            None => {
                let snap = self.read()?;
                Ok(Self::observation(&snap, 0.0))
            }
        }
    }
}
