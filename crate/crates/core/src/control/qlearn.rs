use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::ControlError;
use crate::domain::{EnergyPrice, Seed, TimeGrid};
use crate::env::{ArbitrageEnv, Backend, ClockMode, PRICE_NORM_EUR_MWH};

pub const SOC_BINS: usize = 11;
pub const PRICE_BINS: usize = 10;
pub const HOUR_BINS: usize = 24;
pub const N_STATES: usize = SOC_BINS * PRICE_BINS * HOUR_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = self.alpha > 0.0
            && self.alpha <= 1.0
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && self.epsilon_decay_fraction > 0.0
            && self.epsilon_decay_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(ControlError::Argument(format!(
                "invalid Q-learning hyperparameters {self:?}"
            )))
        }
    }

    pub fn epsilon(&self, episode: usize, episodes: usize) -> f64 {
        let horizon = (self.epsilon_decay_fraction * episodes as f64).max(1.0);
        let t = (episode as f64 / horizon).min(1.0);
        self.epsilon_start * (1.0 - t) + self.epsilon_end * t
    }
}

/// Price decile edges; bin `b` holds prices in `[edges[b-1], edges[b])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBins {
    pub edges: Vec<f64>,
}

impl PriceBins {
    pub fn deciles(prices: &[f64]) -> Result<Self, ControlError> {
        if prices.is_empty() || prices.iter().any(|p| !p.is_finite()) {
            return Err(ControlError::Argument(
                "decile edges need finite prices".into(),
            ));
        }
        let mut sorted = prices.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let edges = (1..PRICE_BINS)
            .map(|j| sorted[(j * n / PRICE_BINS).min(n - 1)])
            .collect();
        Ok(Self { edges })
    }

    pub fn bin(&self, price: f64) -> usize {
        self.edges.iter().filter(|e| **e <= price).count()
    }
}

/// Discrete state of an arbitrage observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateIndexer {
    pub bins: PriceBins,
}

impl StateIndexer {
    pub fn index(soc_bin: usize, price_bin: usize, hour: usize) -> Result<usize, ControlError> {
        if soc_bin >= SOC_BINS || price_bin >= PRICE_BINS || hour >= HOUR_BINS {
            return Err(ControlError::Range(format!(
                "state ({soc_bin}, {price_bin}, {hour}) outside {SOC_BINS}x{PRICE_BINS}x{HOUR_BINS}"
            )));
        }
        Ok((soc_bin * PRICE_BINS + price_bin) * HOUR_BINS + hour)
    }

    pub fn components(state: usize) -> (usize, usize, usize) {
        (
            state / (PRICE_BINS * HOUR_BINS),
            (state / HOUR_BINS) % PRICE_BINS,
            state % HOUR_BINS,
        )
    }

    pub fn state(&self, observation: &[f64]) -> usize {
        let soc_bin = ((observation[0] * 10.0).round().max(0.0) as usize).min(SOC_BINS - 1);
        let price_bin = self.bins.bin(observation[1] * PRICE_NORM_EUR_MWH);
        let angle = observation[2].atan2(observation[3]);
        let hour = (angle * 24.0 / std::f64::consts::TAU).rem_euclid(24.0);
        // The time features carry rounding noise; snap before flooring.
        let hour = ((hour + 1e-6).floor() as usize) % HOUR_BINS;
        Self::index(soc_bin, price_bin, hour).expect("components clamped")
    }
}

/// Greedy argmax; ties go to `idle`, then to the lower index.
pub fn argmax_idle_first(values: &[f64], idle: usize) -> usize {
    let mut best = idle;
    for (a, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub config: QConfig,
    pub indexer: StateIndexer,
    pub n_actions: usize,
    pub idle: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(
        config: QConfig,
        bins: PriceBins,
        n_actions: usize,
        idle: usize,
    ) -> Result<Self, ControlError> {
        config.validate()?;
        if idle >= n_actions {
            return Err(ControlError::Range(format!(
                "idle action {idle} outside 0..{n_actions}"
            )));
        }
        Ok(Self {
            config,
            indexer: StateIndexer { bins },
            n_actions,
            idle,
            values: vec![0.0; N_STATES * n_actions],
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, s: usize, a: usize) -> Result<usize, ControlError> {
        if s >= N_STATES || a >= self.n_actions {
            return Err(ControlError::Range(format!(
                "(state {s}, action {a}) outside {N_STATES}x{}",
                self.n_actions
            )));
        }
        Ok(s * self.n_actions + a)
    }

    pub fn q(&self, s: usize, a: usize) -> Result<f64, ControlError> {
        Ok(self.values[self.check(s, a)?])
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_q(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Temporal-difference update toward `r + gamma * max_b Q(s_next, b)`.
    pub fn q_update(
        &mut self,
        s: usize,
        a: usize,
        r: f64,
        s_next: usize,
        done: bool,
    ) -> Result<(), ControlError> {
        let at = self.check(s, a)?;
        self.check(s_next, 0)?;
        let bootstrap = if done {
            0.0
        } else {
            self.config.gamma * self.max_q(s_next)
        };
        let q = self.values[at];
        self.values[at] = q + self.config.alpha * (r + bootstrap - q);
        Ok(())
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax_idle_first(self.row(s), self.idle)
    }

    /// Greedy action for every state.
    pub fn greedy_table(&self) -> Vec<usize> {
        (0..N_STATES).map(|s| self.greedy(s)).collect()
    }
}

impl Policy for QTable {
    fn act(&self, observation: &[f64]) -> usize {
        self.greedy(self.indexer.state(observation))
    }
}

/// One training day: grid and the prices on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Day {
    pub grid: TimeGrid,
    pub prices: Vec<EnergyPrice>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub episodes: usize,
    pub q: QConfig,
    pub seed: Seed,
    /// Start each episode at a uniformly drawn SoC instead of the
    /// environment's initial SoC.
    pub random_initial_soc: bool,
    /// Extra updates per environment step, drawn uniformly from stored
    /// transitions. 0 gives plain online Q-learning.
    pub replay_updates: usize,
    pub replay_capacity: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            episodes: 2000,
            q: QConfig::default(),
            seed: Seed(0),
            random_initial_soc: true,
            replay_updates: 16,
            replay_capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub day_index: usize,
    pub epsilon: f64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    s: usize,
    a: usize,
    reward: f64,
    s_next: usize,
    done: bool,
}

impl Transition {
    fn apply(&self, table: &mut QTable) -> Result<(), ControlError> {
        table.q_update(self.s, self.a, self.reward, self.s_next, self.done)
    }
}

/// Epsilon-greedy tabular Q-learning over `days`, with uniform replay of
/// past transitions.
pub fn train<B: Backend>(
    env: &mut ArbitrageEnv<B>,
    days: &[Day],
    bins: PriceBins,
    options: &TrainOptions,
    mut on_episode: impl FnMut(&EpisodeStats),
) -> Result<QTable, ControlError> {
    if env.config().clock_mode != ClockMode::Virtual {
        return Err(ControlError::Config(
            "training requires the virtual clock".into(),
        ));
    }
    if days.is_empty() {
        return Err(ControlError::Argument("no training days".into()));
    }
    let idle = env.config().idle_action();
    let n_actions = env.action_count();
    let mut table = QTable::new(options.q, bins, n_actions, idle)?;
    let mut rng = options.seed.rng();
    let (soc_lo, soc_hi) = (env.config().battery.soc_min, env.config().battery.soc_max);
    let base_soc = env.config().initial_soc;
    let mut replay: Vec<Transition> = Vec::with_capacity(options.replay_capacity.min(1 << 16));

    for episode in 0..options.episodes {
        let day_index = if days.len() == 1 {
            0
        } else {
            rng.gen_range(0..days.len())
        };
        let day = &days[day_index];
        {
            let cfg = env.config_mut();
            cfg.grid = day.grid;
            cfg.prices = day.prices.clone();
            cfg.initial_soc = if options.random_initial_soc {
                rng.gen_range(soc_lo..=soc_hi)
            } else {
                base_soc
            };
        }
        let epsilon = options.q.epsilon(episode, options.episodes);
        let mut r = env.reset(options.seed.derive(episode as u64))?;
        let mut s = table.indexer.state(&r.observation);
        let mut total = 0.0;
        while !r.terminated {
            let a = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..n_actions)
            } else {
                table.greedy(s)
            };
            r = env.step(a)?;
            let s_next = table.indexer.state(&r.observation);
            let t = Transition {
                s,
                a,
                reward: r.reward,
                s_next,
                done: r.terminated,
            };
            t.apply(&mut table)?;
            if options.replay_updates > 0 && options.replay_capacity > 0 {
                if replay.len() < options.replay_capacity {
                    replay.push(t);
                } else {
                    let j = rng.gen_range(0..replay.len());
                    replay[j] = t;
                }
                for _ in 0..options.replay_updates {
                    replay[rng.gen_range(0..replay.len())].apply(&mut table)?;
                }
            }
            total += r.reward;
            s = s_next;
        }
        on_episode(&EpisodeStats {
            episode,
            day_index,
            epsilon,
            total_reward: total,
        });
    }
    env.config_mut().initial_soc = base_soc;
    Ok(table)
}
