use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{info, warn};

use hemsgym::assets::BatteryParams;
use hemsgym::config::ExperimentConfig;
use hemsgym::control::{days_from_series, FrozenPolicy, TransferReport};
use hemsgym::env::{serve_env, ArbitrageEnv, ClockMode, HardwareBackend, SimBackend};
use hemsgym::modbus::{emulator_serve, ModbusClient, RegisterMap};
use hemsgym::pipeline::{self, PipelineError};
use hemsgym::prices::{fetch_day_ahead_with, PriceError, PriceSeries};
use hemsgym::telemetry::{steps_to_csv, RunManifest, RunStore};

/// Exit status classes.
enum Failure {
    /// Bad input or configuration (exit 2).
    Usage(anyhow::Error),
    /// Environment, network or filesystem trouble (exit 3).
    Env(anyhow::Error),
    /// The run finished early; partial results were written (exit 4).
    Partial(anyhow::Error),
}

type CliResult = Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn env(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn env(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Env(e.into()))
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match &e {
        PipelineError::Env(env) if env.code() == "transport" => Failure::Env(e.into()),
        _ => Failure::Usage(e.into()),
    }
}

#[derive(Parser)]
#[command(
    name = "hemsgym",
    version,
    about = "Home energy management testbed: train in simulation, serve the emulated device, measure the sim-to-real gap"
)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the Q-learning controller on the ideal backend and write a frozen policy.
    Train(TrainArgs),
    /// Run the MODBUS/TCP device emulator until interrupted.
    ServeHw(ServeHwArgs),
    /// Evaluate a frozen policy in simulation and against the device; report the gap.
    Transfer(TransferArgs),
    /// Fetch day-ahead prices (or revalidate a fixture) into a fixture CSV.
    FetchPrices(FetchArgs),
    /// Serve one simulated day over the newline-delimited JSON protocol.
    ServeEnv(ServeEnvArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training episodes [default: training.episodes, 2000]
    #[arg(long)]
    episodes: Option<usize>,
    /// Run seed [default: experiment.seed, 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the frozen policy.
    #[arg(long, default_value = "policy.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeHwArgs {
    /// TCP port [default: emulator.port, 15020]
    #[arg(long)]
    port: Option<u16>,
    /// Emulated seconds per wall second [default: emulator.time_scale, 3600]
    #[arg(long)]
    time_scale: Option<f64>,
    /// Noise seed [default: experiment.seed, 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the charge taper and tracking noise.
    #[arg(long)]
    ideal: bool,
}

#[derive(Args)]
struct TransferArgs {
    /// Frozen policy file written by `train`.
    #[arg(long)]
    policy: PathBuf,
    /// Evaluation days [default: prices.eval_days, 4]
    #[arg(long)]
    days: Option<usize>,
    /// Device address host:port [default: emulator.host:emulator.port]
    #[arg(long)]
    hw: Option<String>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["endpoint", "fixture"])))]
struct FetchArgs {
    /// Day-ahead endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Existing fixture CSV to revalidate and normalize.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Delivery day (required with --endpoint; restricts a fixture to one day).
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Bidding zone [default: prices.area, BE]
    #[arg(long)]
    area: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeEnvArgs {
    /// TCP port.
    #[arg(long, default_value_t = 15555)]
    port: u16,
    /// Day of the evaluation fixture to serve [default: its first full day]
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Pace steps at step/factor wall seconds instead of the virtual clock.
    #[arg(long)]
    time_scale: Option<f64>,
    /// Drive the device at host:port instead of the ideal simulation.
    #[arg(long)]
    hw: Option<String>,
}

fn defaults_help() -> String {
    let b = BatteryParams::default();
    format!(
        "Default battery: capacity {} kWh, p_max {} kW, eta {}/{}, taper from SoC {}, SoC range [{}, {}], tracking noise {} kW\n\n\
         Default register map:\n{}\n\
         Exit codes: 0 success, 2 usage or config error, 3 environment or IO error, 4 partial result",
        b.capacity_kwh,
        b.p_max_kw,
        b.eta_charge,
        b.eta_discharge,
        b.taper_start_soc,
        b.soc_min,
        b.soc_max,
        b.tracking_noise_std_kw,
        RegisterMap::default()
    )
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).usage(),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_config(cfg: &ExperimentConfig) -> CliResult {
    cfg.validate().usage()?;
    println!(
        "# effective config (sha256 {})\n{}",
        cfg.hash(),
        cfg.to_toml()
    );
    Ok(())
}

fn interrupt_channel() -> Result<mpsc::Receiver<()>, Failure> {
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .env()?;
    Ok(rx)
}

fn resolve(addr: &str) -> Result<SocketAddr, Failure> {
    addr.to_socket_addrs()
        .usage()?
        .next()
        .ok_or_else(|| Failure::Usage(anyhow!("{addr} resolves to no address")))
}

fn cmd_train(mut cfg: ExperimentConfig, args: TrainArgs) -> CliResult {
    if let Some(e) = args.episodes {
        cfg.training.episodes = e;
    }
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    print_config(&cfg)?;
    let fixture = &cfg.prices.train_fixture;
    if !fixture.is_file() {
        return Err(Failure::Usage(anyhow!(
            "price fixture {} not found",
            fixture.display()
        )));
    }
    let store = RunStore::new(&cfg.experiment.runs_dir);
    let mut run = store
        .create_run(RunManifest::new("train", "sim", cfg.experiment.seed, &cfg))
        .env()?;
    let mut log_err = None;
    let trained = pipeline::train_policy(&cfg, |stats| {
        if log_err.is_none() {
            log_err = run.log_metric(stats).err();
        }
    });
    if let Some(e) = log_err {
        return Err(Failure::Env(e.into()));
    }
    let (_, policy) = match trained {
        Ok(t) => t,
        Err(e) => {
            let _ = run.finalize("failed");
            return Err(pipeline_failure(e));
        }
    };
    policy
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .env()?;
    run.write_artifact("policy.txt", &policy.to_text()).env()?;
    let dir = run.dir().to_path_buf();
    run.finalize("completed").env()?;
    println!("policy written to {}", args.out.display());
    println!("run {}", dir.display());
    Ok(())
}

fn cmd_serve_hw(mut cfg: ExperimentConfig, args: ServeHwArgs) -> CliResult {
    if let Some(p) = args.port {
        cfg.emulator.port = p;
    }
    if let Some(t) = args.time_scale {
        cfg.emulator.time_scale = t;
    }
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    if args.ideal {
        cfg.battery = cfg.battery.as_ideal();
    }
    print_config(&cfg)?;
    let em_cfg = cfg.emulator_config().usage()?;
    let stop = interrupt_channel()?;
    let handle = emulator_serve(em_cfg.clone()).env()?;
    let store = RunStore::new(&cfg.experiment.runs_dir);
    let run = store
        .create_run(RunManifest::new(
            "serve-hw",
            "emulator",
            cfg.experiment.seed,
            &cfg,
        ))
        .env()?;
    println!("register map:\n{}", em_cfg.map);
    println!("listening on {}", handle.local_addr());
    let _ = stop.recv();
    info!("interrupt received, stopping emulator");
    let ticks = handle.ticks();
    let log = handle.tick_log();
    handle.shutdown();
    if em_cfg.record_ticks {
        let mut text = String::new();
        for row in &log {
            text.push_str(&serde_json::to_string(row).env()?);
            text.push('\n');
        }
        run.write_artifact("ticks.log", &text).env()?;
    }
    run.write_artifact("summary.txt", &format!("ticks {ticks}\n"))
        .env()?;
    run.finalize("stopped").env()?;
    println!("stopped after {ticks} ticks");
    Ok(())
}

fn write_transfer(
    store: &RunStore,
    cfg: &ExperimentConfig,
    policy: &FrozenPolicy,
    report: &TransferReport,
) -> Result<PathBuf, Failure> {
    let run = store
        .create_run(RunManifest::new(
            "transfer",
            "sim+hardware",
            cfg.experiment.seed,
            cfg,
        ))
        .env()?;
    run.write_artifact("report.csv", &report.to_csv()).env()?;
    run.write_artifact("summary.txt", &report.summary()).env()?;
    run.write_artifact("policy.txt", &policy.to_text()).env()?;
    for (name, eval) in [("sim", &report.sim), ("real", &report.real)] {
        let rows: Vec<_> = eval
            .records
            .iter()
            .flat_map(|r| r.rows().iter().cloned())
            .collect();
        run.write_artifact(&format!("{name}_steps.csv"), &steps_to_csv(&rows))
            .env()?;
    }
    let dir = run.dir().to_path_buf();
    run.finalize(if report.truncated() {
        "truncated"
    } else {
        "completed"
    })
    .env()?;
    Ok(dir)
}

fn cmd_transfer(mut cfg: ExperimentConfig, args: TransferArgs) -> CliResult {
    if let Some(d) = args.days {
        cfg.prices.eval_days = d;
    }
    print_config(&cfg)?;
    let policy = FrozenPolicy::load(&args.policy)
        .with_context(|| format!("policy {}", args.policy.display()))
        .usage()?;
    if policy.config_hash != cfg.hash() {
        warn!(
            "policy was trained under config {}, evaluating under {}",
            policy.config_hash,
            cfg.hash()
        );
    }
    let addr = args.hw.unwrap_or_else(|| cfg.emulator_addr());
    let sock = resolve(&addr)?;
    let io_timeout = Duration::from_secs_f64(cfg.hardware.io_timeout_s);
    ModbusClient::connect_timeout(sock, cfg.register_map().usage()?.unit_id, io_timeout)
        .with_context(|| format!("device at {addr} unreachable"))
        .env()?;
    let report = pipeline::transfer(&cfg, &policy, &addr).map_err(pipeline_failure)?;
    print!("{}", report.summary());
    let dir = write_transfer(
        &RunStore::new(&cfg.experiment.runs_dir),
        &cfg,
        &policy,
        &report,
    )?;
    println!("report written to {}", dir.display());
    if report.truncated() {
        let why = [&report.sim.error, &report.real.error]
            .into_iter()
            .flatten()
            .cloned()
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Failure::Partial(anyhow!("run truncated: {why}")));
    }
    Ok(())
}

fn cmd_fetch_prices(cfg: ExperimentConfig, args: FetchArgs) -> CliResult {
    print_config(&cfg)?;
    let series = if let Some(endpoint) = &args.endpoint {
        let date = args
            .date
            .ok_or_else(|| Failure::Usage(anyhow!("--date is required with --endpoint")))?;
        let area = args.area.as_deref().unwrap_or(&cfg.prices.area);
        fetch_day_ahead_with(endpoint, area, date, &cfg.fetch_options()).map_err(|e| match e {
            PriceError::Transport(_) | PriceError::Io(_) => {
                Failure::Env(anyhow!("{endpoint}: {e}"))
            }
            other => Failure::Usage(anyhow!("{endpoint}: {other}")),
        })?
    } else {
        let path = args.fixture.as_ref().expect("clap enforces one source");
        let series = PriceSeries::load_fixture(path)
            .with_context(|| format!("fixture {}", path.display()))
            .usage()?;
        match args.date {
            Some(d) => series
                .day(d)
                .with_context(|| format!("{d} in {}", path.display()))
                .usage()?,
            None => series,
        }
    };
    series
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .env()?;
    println!(
        "{} hourly prices written to {}",
        series.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_serve_env(cfg: ExperimentConfig, args: ServeEnvArgs) -> CliResult {
    print_config(&cfg)?;
    let series = PriceSeries::load_fixture(&cfg.prices.eval_fixture)
        .with_context(|| format!("fixture {}", cfg.prices.eval_fixture.display()))
        .usage()?;
    let date = match args.date {
        Some(d) => d,
        None => *series
            .full_days()
            .first()
            .ok_or_else(|| Failure::Usage(anyhow!("evaluation fixture has no full day")))?,
    };
    let day = days_from_series(&series, &[date], cfg.experiment.step_s)
        .usage()?
        .remove(0);
    let clock = match args.time_scale {
        Some(f) => ClockMode::Scaled(f),
        None => ClockMode::Virtual,
    };
    let bind = SocketAddr::from(([127, 0, 0, 1], args.port));
    let stop = interrupt_channel()?;
    let handle = match &args.hw {
        None => {
            let mut env_cfg = cfg.env_config(day.grid, day.prices.clone(), true);
            env_cfg.clock_mode = clock;
            let backend = SimBackend::new(env_cfg.battery);
            serve_env(ArbitrageEnv::new(env_cfg, backend).usage()?, bind)
        }
        Some(addr) => {
            let mut env_cfg = cfg.env_config(day.grid, day.prices.clone(), false);
            env_cfg.clock_mode = clock;
            let backend = HardwareBackend::new(cfg.hardware_config(addr).usage()?).usage()?;
            serve_env(ArbitrageEnv::new(env_cfg, backend).usage()?, bind)
        }
    }
    .env()?;
    println!("serving {date} on {}", handle.local_addr());
    let _ = stop.recv();
    handle.shutdown();
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::ServeHw(a) => cmd_serve_hw(cfg, a),
        Command::Transfer(a) => cmd_transfer(cfg, a),
        Command::FetchPrices(a) => cmd_fetch_prices(cfg, a),
        Command::ServeEnv(a) => cmd_serve_env(cfg, a),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(defaults_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Env(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Partial(e)) => {
            eprintln!("partial result: {e:#}");
            ExitCode::from(4)
        }
    }
}
