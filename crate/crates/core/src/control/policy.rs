//! Policies and the frozen policy file.
//!
//! File format (UTF-8 text, `#` starts a comment line):
//!
//! ```text
//! hemsgym-policy 1
//! config_hash <64 hex chars>
//! actions_kw -1 0 1
//! idle 1
//! price_edges <9 numbers>
//! states 2640
//! <state index> <action index>      one row per state, ascending
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::qlearn::{PriceBins, QTable, StateIndexer, N_STATES, PRICE_BINS};
use super::ControlError;
use crate::domain::EnergyPrice;
use crate::env::PRICE_NORM_EUR_MWH;

pub const POLICY_MAGIC: &str = "hemsgym-policy";
pub const POLICY_VERSION: u32 = 1;

/// Maps an observation to an action index.
pub trait Policy {
    fn act(&self, observation: &[f64]) -> usize;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, observation: &[f64]) -> usize {
        (**self).act(observation)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _: &[f64]) -> usize {
        self.0
    }
}

/// Charge below one price, discharge above another.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    pub buy_below: EnergyPrice,
    pub sell_above: EnergyPrice,
    charge: usize,
    idle: usize,
    discharge: usize,
}

/// Threshold rule over `action_set_kw`, using its most positive action to
/// charge and its most negative one to discharge.
pub fn threshold_policy(
    buy_below: EnergyPrice,
    sell_above: EnergyPrice,
    action_set_kw: &[f64],
) -> Result<ThresholdPolicy, ControlError> {
    if buy_below
        .0
        .partial_cmp(&sell_above.0)
        .is_none_or(|o| o.is_gt())
    {
        return Err(ControlError::Argument(format!(
            "buy threshold {} above sell threshold {}",
            buy_below.0, sell_above.0
        )));
    }
    let idle = action_set_kw
        .iter()
        .position(|a| *a == 0.0)
        .ok_or_else(|| ControlError::Argument("action set lacks the idle action".into()))?;
    let pick = |better: fn(f64, f64) -> bool| {
        action_set_kw.iter().enumerate().fold(idle, |best, (i, a)| {
            if better(*a, action_set_kw[best]) {
                i
            } else {
                best
            }
        })
    };
    Ok(ThresholdPolicy {
        buy_below,
        sell_above,
        charge: pick(|a, b| a > b),
        idle,
        discharge: pick(|a, b| a < b),
    })
}

impl ThresholdPolicy {
    pub fn act_on_price(&self, price: f64) -> usize {
        if price < self.buy_below.0 {
            self.charge
        } else if price > self.sell_above.0 {
            self.discharge
        } else {
            self.idle
        }
    }
}

impl Policy for ThresholdPolicy {
    fn act(&self, observation: &[f64]) -> usize {
        self.act_on_price(observation[1] * PRICE_NORM_EUR_MWH)
    }
}

/// State-to-action table detached from training, with the hash of the
/// config it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy {
    pub config_hash: String,
    pub action_set_kw: Vec<f64>,
    pub idle: usize,
    pub indexer: StateIndexer,
    pub actions: Vec<usize>,
}

impl FrozenPolicy {
    pub fn from_table(
        table: &QTable,
        action_set_kw: &[f64],
        config_hash: &str,
    ) -> Result<Self, ControlError> {
        if action_set_kw.len() != table.n_actions {
            return Err(ControlError::Argument(format!(
                "{} actions for a table of {}",
                action_set_kw.len(),
                table.n_actions
            )));
        }
        Ok(Self {
            config_hash: config_hash.to_string(),
            action_set_kw: action_set_kw.to_vec(),
            idle: table.idle,
            indexer: table.indexer.clone(),
            actions: table.greedy_table(),
        })
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut out = String::with_capacity(16 * N_STATES);
        let _ = writeln!(out, "{POLICY_MAGIC} {POLICY_VERSION}");
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        let _ = writeln!(out, "actions_kw {}", join(&self.action_set_kw));
        let _ = writeln!(out, "idle {}", self.idle);
        let _ = writeln!(out, "price_edges {}", join(&self.indexer.bins.edges));
        let _ = writeln!(out, "states {}", self.actions.len());
        for (s, a) in self.actions.iter().enumerate() {
            let _ = writeln!(out, "{s} {a}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ControlError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |key: &str| -> Result<(usize, String), ControlError> {
            let (n, l) = lines.next().ok_or_else(|| ControlError::Policy {
                line: 0,
                message: format!("missing {key}"),
            })?;
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| ControlError::Policy {
                    line: n,
                    message: format!("expected `{key} ...`, got {l:?}"),
                })?;
            Ok((n, rest.trim().to_string()))
        };
        let bad = |line: usize, message: String| ControlError::Policy { line, message };

        let (n, version) = next(POLICY_MAGIC)?;
        if version != POLICY_VERSION.to_string() {
            return Err(bad(n, format!("unsupported policy version {version}")));
        }
        let (n, config_hash) = next("config_hash")?;
        if config_hash.len() != 64 || !config_hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(bad(n, "config_hash is not a sha256 hex digest".into()));
        }
        let floats = |n: usize, s: &str| -> Result<Vec<f64>, ControlError> {
            s.split_whitespace()
                .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(n, format!("bad number list {s:?}")))
        };
        let (n, a) = next("actions_kw")?;
        let action_set_kw = floats(n, &a)?;
        let (n, idle) = next("idle")?;
        let idle: usize = idle
            .parse()
            .map_err(|_| bad(n, format!("bad idle index {idle:?}")))?;
        if action_set_kw.get(idle) != Some(&0.0) {
            return Err(bad(
                n,
                format!("idle index {idle} does not name a 0 kW action"),
            ));
        }
        let (n, e) = next("price_edges")?;
        let edges = floats(n, &e)?;
        if edges.len() != PRICE_BINS - 1 || edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad(
                n,
                format!("expected {} ascending price edges", PRICE_BINS - 1),
            ));
        }
        let (n, states) = next("states")?;
        if states != N_STATES.to_string() {
            return Err(bad(n, format!("expected {N_STATES} states, got {states}")));
        }
        let mut actions = Vec::with_capacity(N_STATES);
        for (n, l) in lines {
            let mut parts = l.split_whitespace();
            let (Some(s), Some(a), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(n, format!("expected `<state> <action>`, got {l:?}")));
            };
            let s: usize = s.parse().map_err(|_| bad(n, format!("bad state {s:?}")))?;
            let a: usize = a.parse().map_err(|_| bad(n, format!("bad action {a:?}")))?;
            if s != actions.len() {
                return Err(bad(n, format!("expected state {}, got {s}", actions.len())));
            }
            if a >= action_set_kw.len() {
                return Err(bad(n, format!("action {a} outside the action set")));
            }
            actions.push(a);
        }
        if actions.len() != N_STATES {
            return Err(bad(
                0,
                format!("{} state rows, expected {N_STATES}", actions.len()),
            ));
        }
        Ok(Self {
            config_hash,
            action_set_kw,
            idle,
            indexer: StateIndexer {
                bins: PriceBins { edges },
            },
            actions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ControlError> {
        std::fs::write(path, self.to_text())
            .map_err(|e| ControlError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ControlError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ControlError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

impl Policy for FrozenPolicy {
    fn act(&self, observation: &[f64]) -> usize {
        self.actions[self.indexer.state(observation)]
    }
}
