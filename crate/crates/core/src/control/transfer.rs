use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::qlearn::Day;
use super::ControlError;
use crate::domain::{format_utc, EpisodeRecord, Seed};
use crate::env::{ArbitrageEnv, Backend};

/// Result of running a policy over consecutive days on one environment.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<EpisodeRecord>,
    /// Error that stopped the run early, if any.
    pub error: Option<String>,
}

impl Evaluation {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(EpisodeRecord::total_reward).sum()
    }

    pub fn truncated(&self) -> bool {
        self.error.is_some()
    }
}

/// Runs `policy` greedily over `days`, one episode per day, carrying the
/// final SoC of each day into the next. Partial data survives a failure.
pub fn evaluate<B: Backend, P: Policy + ?Sized>(
    env: &mut ArbitrageEnv<B>,
    policy: &P,
    days: &[Day],
    seed: Seed,
) -> Evaluation {
    let mut records = Vec::with_capacity(days.len());
    let mut soc = env.config().initial_soc;
    for (d, day) in days.iter().enumerate() {
        {
            let cfg = env.config_mut();
            cfg.grid = day.grid;
            cfg.prices = day.prices.clone();
            cfg.initial_soc = soc.clamp(cfg.battery.soc_min, cfg.battery.soc_max);
        }
        let outcome = (|| {
            let mut r = env.reset(seed.derive(d as u64))?;
            while !r.terminated {
                r = env.step(policy.act(&r.observation))?;
            }
            Ok::<_, crate::env::EnvError>(())
        })();
        let record = env.take_record();
        soc = record.final_soc();
        records.push(record);
        if let Err(e) = outcome {
            env.truncate();
            return Evaluation {
                records,
                error: Some(e.to_string()),
            };
        }
    }
    Evaluation {
        records,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayBreakdown {
    pub day: usize,
    pub start: String,
    pub reward_sim: f64,
    pub reward_real: f64,
    pub steps_sim: usize,
    pub steps_real: usize,
}

#[derive(Debug, Clone)]
pub struct TransferReport {
    pub reward_sim: f64,
    pub reward_real: f64,
    pub gap_percent: f64,
    pub days: Vec<DayBreakdown>,
    pub sim: Evaluation,
    pub real: Evaluation,
}

/// `100 * (sim - real) / |sim|`; zero when both are zero.
pub fn gap_percent(reward_sim: f64, reward_real: f64) -> f64 {
    if reward_sim == reward_real {
        0.0
    } else {
        100.0 * (reward_sim - reward_real) / reward_sim.abs()
    }
}

impl TransferReport {
    pub fn from_evaluations(days: &[Day], sim: Evaluation, real: Evaluation) -> Self {
        let reward_sim = sim.total_reward();
        let reward_real = real.total_reward();
        let per_day = days
            .iter()
            .enumerate()
            .map(|(d, day)| {
                let (rs, ns) = sim
                    .records
                    .get(d)
                    .map_or((0.0, 0), |r| (r.total_reward(), r.len()));
                let (rr, nr) = real
                    .records
                    .get(d)
                    .map_or((0.0, 0), |r| (r.total_reward(), r.len()));
                DayBreakdown {
                    day: d,
                    start: format_utc(day.grid.start()),
                    reward_sim: rs,
                    reward_real: rr,
                    steps_sim: ns,
                    steps_real: nr,
                }
            })
            .collect();
        Self {
            reward_sim,
            reward_real,
            gap_percent: gap_percent(reward_sim, reward_real),
            days: per_day,
            sim,
            real,
        }
    }

    pub fn truncated(&self) -> bool {
        self.sim.truncated() || self.real.truncated()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "day  start                 reward_sim  reward_real");
        for d in &self.days {
            let _ = writeln!(
                s,
                "{:<4} {:<21} {:>10.4} {:>12.4}",
                d.day, d.start, d.reward_sim, d.reward_real
            );
        }
        let _ = writeln!(s, "reward_sim  {:.6} EUR", self.reward_sim);
        let _ = writeln!(s, "reward_real {:.6} EUR", self.reward_real);
        let _ = writeln!(s, "gap         {:.3} %", self.gap_percent);
        for (name, e) in [("sim", &self.sim), ("real", &self.real)] {
            if let Some(err) = &e.error {
                let _ = writeln!(s, "TRUNCATED ({name}): {err}");
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("day,start,reward_sim,reward_real,steps_sim,steps_real,gap_percent\n");
        for d in &self.days {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                d.day,
                d.start,
                d.reward_sim,
                d.reward_real,
                d.steps_sim,
                d.steps_real,
                gap_percent(d.reward_sim, d.reward_real)
            );
        }
        let _ = writeln!(
            s,
            "total,,{},{},{},{},{}",
            self.reward_sim,
            self.reward_real,
            self.sim
                .records
                .iter()
                .map(EpisodeRecord::len)
                .sum::<usize>(),
            self.real
                .records
                .iter()
                .map(EpisodeRecord::len)
                .sum::<usize>(),
            self.gap_percent
        );
        s
    }
}

/// Evaluates the same frozen policy on a simulated and a real environment
/// over the same days.
pub fn run_transfer<S: Backend, H: Backend, P: Policy + ?Sized>(
    policy: &P,
    sim_env: &mut ArbitrageEnv<S>,
    real_env: &mut ArbitrageEnv<H>,
    days: &[Day],
    seed: Seed,
) -> Result<TransferReport, ControlError> {
    if days.is_empty() {
        return Err(ControlError::Argument("no evaluation days".into()));
    }
    if sim_env.config().action_set_kw != real_env.config().action_set_kw {
        return Err(ControlError::Argument(
            "environments disagree on the action set".into(),
        ));
    }
    let sim = evaluate(sim_env, policy, days, seed);
    let real = evaluate(real_env, policy, days, seed);
    Ok(TransferReport::from_evaluations(days, sim, real))
}
