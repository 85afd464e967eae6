use super::ControlError;
use crate::assets::{battery_step, BatteryParams, BatteryState};
use crate::domain::{arbitrage_cash_milli, EnergyPrice, PowerKw};

pub const DEFAULT_SOC_GRID: usize = 201;

/// Deterministic arbitrage instance: the ideal battery facing known prices.
#[derive(Debug, Clone, PartialEq)]
pub struct DpProblem {
    pub prices: Vec<EnergyPrice>,
    pub dt_h: f64,
    pub battery: BatteryParams,
    pub action_set_kw: Vec<f64>,
    pub initial_soc: f64,
}

impl DpProblem {
    fn validate(&self) -> Result<usize, ControlError> {
        let arg = |m: String| Err(ControlError::Argument(m));
        if !self.battery.ideal {
            return arg("the oracle needs ideal (deterministic) battery dynamics".into());
        }
        self.battery
            .validate()
            .map_err(|e| ControlError::Argument(e.to_string()))?;
        if !(self.dt_h > 0.0 && self.dt_h.is_finite()) {
            return arg(format!("dt_h {} must be positive", self.dt_h));
        }
        let Some(idle) = self.action_set_kw.iter().position(|a| *a == 0.0) else {
            return arg("action set lacks the idle action".into());
        };
        if !(self.battery.soc_min..=self.battery.soc_max).contains(&self.initial_soc) {
            return arg(format!(
                "initial soc {} outside battery bounds",
                self.initial_soc
            ));
        }
        Ok(idle)
    }

    /// One step of the environment dynamics from `soc` under action `a`;
    /// the reward is in milli-euros.
    pub fn transition(&self, i: usize, soc: f64, a: usize) -> (f64, f64) {
        let (next, delivered) = battery_step(
            &self.battery,
            &BatteryState::at(soc),
            PowerKw(self.action_set_kw[a]),
            self.dt_h,
            0.0,
        )
        .expect("validated problem");
        (
            next.soc,
            arbitrage_cash_milli(self.prices[i], delivered, self.dt_h),
        )
    }

    /// Profit in euros of a fixed action sequence, summed from the last step
    /// backwards (the same association the value recursion uses).
    pub fn profit_of(&self, actions: &[usize]) -> f64 {
        let mut soc = self.initial_soc;
        let mut rewards = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            let (s, r) = self.transition(i, soc, a);
            soc = s;
            rewards.push(r);
        }
        rewards.iter().rev().fold(0.0, |acc, r| r + acc) / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub problem: DpProblem,
    pub soc_grid: Vec<f64>,
    /// `values[i][k]`: best profit from step `i` at `soc_grid[k]`, in
    /// milli-euros. Accumulating in these units keeps commensurate instances
    /// exact; euros come from one final division.
    pub values: Vec<Vec<f64>>,
    /// `policy[i][k]`: greedy action at step `i`, `soc_grid[k]`.
    pub policy: Vec<Vec<usize>>,
    pub optimal_profit: f64,
    idle: usize,
}

impl DpSolution {
    fn interpolate(grid: &[f64], values: &[f64], soc: f64) -> f64 {
        let n = grid.len();
        let h = (grid[n - 1] - grid[0]) / (n - 1) as f64;
        let x = ((soc - grid[0]) / h).max(0.0);
        let k = x.floor() as usize;
        if k >= n - 1 {
            return values[n - 1];
        }
        let frac = x - k as f64;
        if frac == 0.0 {
            values[k]
        } else {
            values[k] + frac * (values[k + 1] - values[k])
        }
    }

    /// Interpolated value in euros of being at `soc` before step `i`.
    pub fn value_at(&self, i: usize, soc: f64) -> f64 {
        Self::interpolate(&self.soc_grid, &self.values[i], soc) / 1000.0
    }

    /// One-step lookahead against the value table at an arbitrary SoC.
    pub fn action_at(&self, i: usize, soc: f64) -> usize {
        best_action(
            &self.problem,
            self.idle,
            i,
            soc,
            &self.soc_grid,
            &self.values[i + 1],
        )
        .0
    }

    /// Greedy action sequence from the problem's initial SoC.
    pub fn greedy_actions(&self) -> Vec<usize> {
        let mut soc = self.problem.initial_soc;
        (0..self.problem.prices.len())
            .map(|i| {
                let a = self.action_at(i, soc);
                soc = self.problem.transition(i, soc, a).0;
                a
            })
            .collect()
    }
}

fn best_action(
    p: &DpProblem,
    idle: usize,
    i: usize,
    soc: f64,
    grid: &[f64],
    next: &[f64],
) -> (usize, f64) {
    let q = |a: usize| {
        let (s, r) = p.transition(i, soc, a);
        r + DpSolution::interpolate(grid, next, s)
    };
    let mut best = (idle, q(idle));
    for a in 0..p.action_set_kw.len() {
        if a == idle {
            continue;
        }
        let v = q(a);
        if v > best.1 {
            best = (a, v);
        }
    }
    best
}

/// Backward induction over a uniform SoC grid of `n` points.
pub fn dp_solve(problem: &DpProblem, n: usize) -> Result<DpSolution, ControlError> {
    if n < 2 {
        return Err(ControlError::Argument(format!(
            "soc grid needs at least 2 points, got {n}"
        )));
    }
    let idle = problem.validate()?;
    let b = &problem.battery;
    let h = (b.soc_max - b.soc_min) / (n - 1) as f64;
    let soc_grid: Vec<f64> = (0..n)
        .map(|k| {
            if k == n - 1 {
                b.soc_max
            } else {
                b.soc_min + k as f64 * h
            }
        })
        .collect();
    let steps = problem.prices.len();
    let mut values = vec![vec![0.0; n]; steps + 1];
    let mut policy = vec![vec![idle; n]; steps];
    for i in (0..steps).rev() {
        for k in 0..n {
            let (a, v) = best_action(problem, idle, i, soc_grid[k], &soc_grid, &values[i + 1]);
            values[i][k] = v;
            policy[i][k] = a;
        }
    }
    let optimal_profit =
        DpSolution::interpolate(&soc_grid, &values[0], problem.initial_soc) / 1000.0;
    Ok(DpSolution {
        problem: problem.clone(),
        soc_grid,
        values,
        policy,
        optimal_profit,
        idle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn commensurate(prices: &[f64]) -> DpProblem {
        DpProblem {
            prices: prices.iter().copied().map(EnergyPrice).collect(),
            dt_h: 1.0,
            battery: BatteryParams {
                capacity_kwh: 2.0,
                p_max_kw: 1.0,
                eta_charge: 1.0,
                eta_discharge: 1.0,
                soc_min: 0.0,
                soc_max: 1.0,
                ..BatteryParams::ideal()
            },
            action_set_kw: vec![-1.0, 0.0, 1.0],
            initial_soc: 0.0,
        }
    }

    /// Exhaustive search over every action sequence.
    fn brute_force(p: &DpProblem) -> (f64, Vec<usize>) {
        let h = p.prices.len();
        let n_a = p.action_set_kw.len();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for code in 0..n_a.pow(h as u32) {
            let mut c = code;
            let seq: Vec<usize> = (0..h)
                .map(|_| {
                    let a = c % n_a;
                    c /= n_a;
                    a
                })
                .collect();
            let v = p.profit_of(&seq);
            if v > best.0 {
                best = (v, seq);
            }
        }
        best
    }

    #[test]
    fn reference_instance() {
        let p = commensurate(&[10.0, 10.0, 50.0, 50.0]);
        let s = dp_solve(&p, 5).unwrap();
        assert_eq!(s.optimal_profit, 0.08);
        assert_eq!(s.greedy_actions(), vec![2, 2, 0, 0]);
        assert_eq!(brute_force(&p).0, 0.08);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let h = rng.gen_range(1..=7);
            let prices: Vec<f64> = (0..h).map(|_| rng.gen_range(-50.0..250.0)).collect();
            let mut p = commensurate(&prices);
            p.initial_soc = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
            let s = dp_solve(&p, 5).unwrap();
            assert_eq!(s.optimal_profit, brute_force(&p).0, "{prices:?}");
            assert_eq!(p.profit_of(&s.greedy_actions()), s.optimal_profit);
        }
    }

    #[test]
    fn constant_prices_from_empty_stay_idle() {
        let p = DpProblem {
            prices: vec![EnergyPrice(80.0); 12],
            dt_h: 0.25,
            battery: BatteryParams::ideal(),
            action_set_kw: vec![-1.0, 0.0, 1.0],
            initial_soc: BatteryParams::ideal().soc_min,
        };
        let s = dp_solve(&p, DEFAULT_SOC_GRID).unwrap();
        assert_eq!(s.optimal_profit, 0.0);
        assert!(s.greedy_actions().iter().all(|a| *a == 1));
    }

    #[test]
    fn never_discharges_an_empty_battery_on_the_last_step() {
        let p = commensurate(&[100.0]);
        let s = dp_solve(&p, 5).unwrap();
        assert_ne!(s.action_at(0, 0.0), 0);
        assert_eq!(s.optimal_profit, 0.0);
    }

    #[test]
    fn rejects_bad_problems() {
        let mut p = commensurate(&[1.0]);
        assert!(dp_solve(&p, 1).is_err());
        p.battery.ideal = false;
        assert!(matches!(dp_solve(&p, 5), Err(ControlError::Argument(_))));
    }

    proptest! {
        #[test]
        fn scaling_prices(prices in proptest::collection::vec(-100.0f64..300.0, 1..7), k in 0i32..4) {
            let c = f64::powi(2.0, k);
            let p = commensurate(&prices);
            let scaled = commensurate(&prices.iter().map(|x| x * c).collect::<Vec<_>>());
            let a = dp_solve(&p, 5).unwrap();
            let b = dp_solve(&scaled, 5).unwrap();
            prop_assert_eq!(b.optimal_profit, a.optimal_profit * c);
            prop_assert_eq!(b.greedy_actions(), a.greedy_actions());
            prop_assert!(a.optimal_profit >= 0.0);
        }

        #[test]
        fn dominates_random_sequences(prices in proptest::collection::vec(0.0f64..200.0, 8), seq in proptest::collection::vec(0usize..3, 8)) {
            let mut p = commensurate(&prices);
            p.initial_soc = 0.5;
            let s = dp_solve(&p, 5).unwrap();
            prop_assert!(s.optimal_profit >= p.profit_of(&seq));
        }
    }
}
