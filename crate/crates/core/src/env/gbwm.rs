//! Goals-based wealth management on a lognormal wealth lattice.
//!
//! An investor starts with wealth `y_0` and, at each period
//! `t = 0, ..., T`, makes two decisions: which goal to fulfill (paying its
//! cost, earning its utility as the reward) and which of `L` frontier
//! portfolios to hold over the next period. Transitions run in two stages:
//! the goal cost comes out first, `y_{t+} = y_t - c_t(psi)`, then the
//! remainder is invested, `y_{t+1} = y_{t+} exp(r)` with
//! `r ~ Normal(mu_l, sigma_l^2)`. The lognormal update keeps wealth
//! positive; the Gaussian log-return is discretized by Gauss-Hermite
//! quadrature and each quadrature image is split proportionally between
//! its two neighboring wealth nodes.
//!
//! States enumerate `(t, wealth node)` layers plus one absorbing done
//! state entered after the final goal decision at `t = T`; that final
//! decision involves no investment, so only portfolio 0 carries a row
//! there. Wealth node 0 holds exactly zero wealth and is absorbing: no
//! priced goal is feasible from it and investing nothing returns nothing.
//!
//! Every period implicitly offers the no-goal option `psi = 0` with zero
//! cost and zero utility, so an agent that never buys a goal accrues a
//! total utility of exactly zero. A goal option is feasible only when the
//! node's wealth covers its cost before any snapping; feasibility is a
//! property of the exact node value, not of the discretized successor.

use super::{normal_quadrature, EnvError};
use crate::mdp::{Outcome, TabularMdp};
use serde::{Deserialize, Serialize};

/// Index-fund return moments: means and covariance of (U.S. bonds,
/// international stocks, U.S. stocks) annual returns.
const FUND_MEANS: [f64; 3] = [0.0493, 0.0770, 0.0886];
const FUND_COV: [[f64; 3]; 3] = [
    [0.0017, -0.0017, -0.0021],
    [-0.0017, 0.0396, 0.0309],
    [-0.0021, 0.0309, 0.0392],
];

/// Frontier portfolio weights over the three funds, ordered from most
/// conservative to most aggressive.
const PORTFOLIO_WEIGHTS: [[f64; 3]; 15] = [
    [0.9098, 0.0225, 0.0677],
    [0.8500, 0.0033, 0.1467],
    [0.7903, -0.0160, 0.2257],
    [0.7305, -0.0352, 0.3047],
    [0.6707, -0.0545, 0.3837],
    [0.6110, -0.0737, 0.4628],
    [0.5512, -0.0930, 0.5418],
    [0.4915, -0.1122, 0.6208],
    [0.4317, -0.1315, 0.6998],
    [0.3719, -0.1507, 0.7788],
    [0.3122, -0.1700, 0.8578],
    [0.2524, -0.1892, 0.9368],
    [0.1927, -0.2085, 1.0158],
    [0.1329, -0.2277, 1.0948],
    [0.0731, -0.2470, 1.1738],
];

/// The 15 frontier portfolios as `(mean, stddev)` of per-period return.
/// `horizon_scale` rescales a yearly calibration to shorter periods:
/// means divide by the scale, standard deviations by its square root
/// (e.g. scale 3 for a 30-period run over the same span as 10 yearly
/// ones).
pub fn frontier_portfolios(horizon_scale: f64) -> Vec<(f64, f64)> {
    assert!(horizon_scale > 0.0);
    PORTFOLIO_WEIGHTS
        .iter()
        .map(|w| {
            let mean: f64 = (0..3).map(|i| w[i] * FUND_MEANS[i]).sum();
            let var: f64 = (0..3)
                .map(|i| (0..3).map(|j| w[i] * FUND_COV[i][j] * w[j]).sum::<f64>())
                .sum();
            (mean / horizon_scale, var.sqrt() / horizon_scale.sqrt())
        })
        .collect()
}

/// One purchasable goal: at period `t`, paying `cost` yields `utility`.
/// Several goals may share a period; the no-goal option is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub t: usize,
    pub cost: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbwmConfig {
    /// Number of periods `T`; goal decisions happen at `t = 0..=T`.
    pub t_periods: usize,
    pub initial_wealth: f64,
    #[serde(default)]
    pub goals: Vec<GoalSpec>,
    /// `(mean, stddev)` of per-period portfolio log-returns; `None` takes
    /// the 15 frontier portfolios at `portfolio_scale`.
    #[serde(default)]
    pub portfolios: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_portfolio_scale")]
    pub portfolio_scale: f64,
    /// Explicit wealth grid (first node must be exactly 0); `None` builds
    /// the default geometric grid.
    #[serde(default)]
    pub wealth_grid: Option<Vec<f64>>,
    #[serde(default = "default_wealth_nodes")]
    pub n_wealth_nodes: usize,
    /// Top of the default grid; `None` derives it from the loudest
    /// portfolio as `y0 * exp(mu_max T + 3 sigma_max sqrt(T))`.
    #[serde(default)]
    pub y_max: Option<f64>,
    #[serde(default = "default_gh_nodes")]
    pub gh_nodes: usize,
    /// Linear terminal bonus: the last decision's reward gains
    /// `bonus * y_{T+}`. Off by default; final wealth is otherwise
    /// worthless.
    #[serde(default)]
    pub terminal_wealth_bonus: Option<f64>,
}

fn default_portfolio_scale() -> f64 {
    1.0
}

fn default_wealth_nodes() -> usize {
    301
}

fn default_gh_nodes() -> usize {
    21
}

impl GbwmConfig {
    /// Baseline two-goal problem: horizon `t_periods`, goals at `T/2`
    /// (cost 100) and `T` (cost 150), initial wealth 100.
    pub fn two_goal(t_periods: usize, u_mid: f64, u_end: f64) -> GbwmConfig {
        GbwmConfig {
            t_periods,
            initial_wealth: 100.0,
            goals: vec![
                GoalSpec { t: t_periods / 2, cost: 100.0, utility: u_mid },
                GoalSpec { t: t_periods, cost: 150.0, utility: u_end },
            ],
            portfolios: None,
            portfolio_scale: if t_periods == 30 { 3.0 } else { 1.0 },
            wealth_grid: None,
            n_wealth_nodes: default_wealth_nodes(),
            y_max: None,
            gh_nodes: default_gh_nodes(),
            terminal_wealth_bonus: None,
        }
    }
}

/// Built wealth-management model: the tabular MDP plus the decoders the
/// evaluators need to read trajectories back into `(t, wealth)` and
/// `(goal, portfolio)` terms.
#[derive(Debug, Clone)]
pub struct GbwmEnv {
    pub mdp: TabularMdp,
    pub wealth_grid: Vec<f64>,
    /// Per period `t = 0..=T`: the option menu, entry 0 always the free
    /// no-goal option.
    pub options: Vec<Vec<(f64, f64)>>,
    pub n_portfolios: usize,
    /// Width of the goal axis of the action encoding
    /// (`action = psi * n_portfolios + portfolio`).
    pub n_psi: usize,
    pub t_periods: usize,
    pub initial_node: usize,
}

impl GbwmEnv {
    pub fn state_index(&self, t: usize, w_idx: usize) -> usize {
        debug_assert!(t <= self.t_periods && w_idx < self.wealth_grid.len());
        t * self.wealth_grid.len() + w_idx
    }

    pub fn done_state(&self) -> usize {
        (self.t_periods + 1) * self.wealth_grid.len()
    }

    /// `(t, wealth node)` of a layered state; `None` for the done state.
    pub fn decode_state(&self, s: usize) -> Option<(usize, usize)> {
        if s >= self.done_state() {
            return None;
        }
        let n = self.wealth_grid.len();
        Some((s / n, s % n))
    }

    pub fn wealth_of(&self, s: usize) -> Option<f64> {
        self.decode_state(s).map(|(_, w)| self.wealth_grid[w])
    }

    pub fn action_index(&self, psi: usize, portfolio: usize) -> usize {
        debug_assert!(psi < self.n_psi && portfolio < self.n_portfolios);
        psi * self.n_portfolios + portfolio
    }

    /// `(psi, portfolio)` of an action id.
    pub fn decode_action(&self, a: usize) -> (usize, usize) {
        (a / self.n_portfolios, a % self.n_portfolios)
    }
}

/// Default grid: an exact-zero absorbing node, then `n - 1` geometric
/// nodes from `y_max / 1000` to `y_max`, with `y0` inserted exactly.
fn default_grid(y0: f64, y_max: f64, n: usize) -> Vec<f64> {
    let lo = y_max * 1e-3;
    let count = n.max(2) - 1;
    let ratio = (y_max / lo).powf(1.0 / (count - 1) as f64);
    let mut grid = Vec::with_capacity(count + 2);
    grid.push(0.0);
    let mut y = lo;
    for _ in 0..count - 1 {
        grid.push(y);
        y *= ratio;
    }
    grid.push(y_max);
    grid.push(y0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Splits mass `p` at wealth `y` proportionally between the two grid
/// neighbors bracketing it (all of it to the boundary node when outside).
fn split_mass(grid: &[f64], y: f64, p: f64, acc: &mut [f64]) {
    if y <= grid[0] {
        acc[0] += p;
        return;
    }
    let last = grid.len() - 1;
    if y >= grid[last] {
        acc[last] += p;
        return;
    }
    let hi = grid.partition_point(|&g| g <= y);
    let lo = hi - 1;
    if grid[lo] == y {
        acc[lo] += p;
        return;
    }
    let lambda = (y - grid[lo]) / (grid[hi] - grid[lo]);
    acc[lo] += p * (1.0 - lambda);
    acc[hi] += p * lambda;
}

pub fn build_gbwm(cfg: &GbwmConfig) -> Result<GbwmEnv, EnvError> {
    if cfg.t_periods == 0 {
        return Err(EnvError::BadParam("t_periods must be positive"));
    }
    if !(cfg.initial_wealth > 0.0 && cfg.initial_wealth.is_finite()) {
        return Err(EnvError::BadParam("initial wealth must be positive"));
    }
    if cfg.gh_nodes == 0 {
        return Err(EnvError::BadParam("gh_nodes must be positive"));
    }
    for g in &cfg.goals {
        if g.t > cfg.t_periods {
            return Err(EnvError::GoalBeyondHorizon { t: g.t, t_max: cfg.t_periods });
        }
        if !(g.cost >= 0.0 && g.cost.is_finite()) {
            return Err(EnvError::NegativeCost { t: g.t, cost: g.cost });
        }
        if !g.utility.is_finite() {
            return Err(EnvError::BadParam("goal utility must be finite"));
        }
    }
    let portfolios = match &cfg.portfolios {
        Some(p) => p.clone(),
        None => frontier_portfolios(cfg.portfolio_scale),
    };
    if portfolios.is_empty() {
        return Err(EnvError::BadParam("at least one portfolio required"));
    }
    if portfolios.iter().any(|&(m, s)| !(m.is_finite() && s.is_finite() && s >= 0.0)) {
        return Err(EnvError::BadParam("portfolio moments must be finite, stddev nonnegative"));
    }

    let t_max = cfg.t_periods;
    let y0 = cfg.initial_wealth;
    let grid = match &cfg.wealth_grid {
        Some(g) => {
            if g.len() < 2 || g.iter().any(|y| !y.is_finite()) {
                return Err(EnvError::GridOrder);
            }
            if g[0] != 0.0 {
                return Err(EnvError::GridMissingZero);
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EnvError::GridOrder);
            }
            g.clone()
        }
        None => {
            let y_max = cfg.y_max.unwrap_or_else(|| {
                let mu_max = portfolios.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let sg_max = portfolios.iter().map(|p| p.1).fold(0.0, f64::max);
                y0 * (mu_max.max(0.0) * t_max as f64 + 3.0 * sg_max * (t_max as f64).sqrt()).exp()
            });
            if !(y_max > y0) {
                return Err(EnvError::BadParam("y_max must exceed initial wealth"));
            }
            default_grid(y0, y_max, cfg.n_wealth_nodes)
        }
    };
    let w0 = match grid.binary_search_by(|g| g.total_cmp(&y0)) {
        Ok(i) => i,
        Err(_) => return Err(EnvError::InitialWealthOffGrid { y0 }),
    };

    // Per-period option menus; entry 0 is the implicit no-goal option.
    let mut options: Vec<Vec<(f64, f64)>> = vec![vec![(0.0, 0.0)]; t_max + 1];
    for g in &cfg.goals {
        options[g.t].push((g.cost, g.utility));
    }
    let n_psi = options.iter().map(Vec::len).max().unwrap();
    let n_portfolios = portfolios.len();
    let n_actions = n_psi * n_portfolios;

    // Per-portfolio quadrature of the log-return.
    let quads: Vec<Vec<(f64, f64)>> = portfolios
        .iter()
        .map(|&(m, s)| normal_quadrature(m, s, cfg.gh_nodes))
        .collect();

    let n_w = grid.len();
    let done = (t_max + 1) * n_w;
    let n_states = done + 1;
    let bonus = cfg.terminal_wealth_bonus.unwrap_or(0.0);
    let mut rows: Vec<Vec<Outcome>> = vec![Vec::new(); n_states * n_actions];
    let mut acc = vec![0.0f64; n_w];
    for t in 0..=t_max {
        for (w_idx, &y) in grid.iter().enumerate() {
            let state = t * n_w + w_idx;
            for (psi, &(cost, utility)) in options[t].iter().enumerate() {
                if y < cost {
                    continue;
                }
                let y_post = y - cost;
                if t == t_max {
                    // Final decision: no investment; one row on
                    // portfolio 0 keeps the action menu unambiguous.
                    rows[state * n_actions + psi * n_portfolios] = vec![Outcome {
                        next_state: done,
                        reward: utility + bonus * y_post,
                        probability: 1.0,
                    }];
                    continue;
                }
                for (l, quad) in quads.iter().enumerate() {
                    let row = &mut rows[state * n_actions + psi * n_portfolios + l];
                    if y_post == 0.0 {
                        row.push(Outcome {
                            next_state: (t + 1) * n_w,
                            reward: utility,
                            probability: 1.0,
                        });
                        continue;
                    }
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for &(r, p) in quad {
                        split_mass(&grid, y_post * r.exp(), p, &mut acc);
                    }
                    for (j, &p) in acc.iter().enumerate() {
                        if p > 0.0 {
                            row.push(Outcome {
                                next_state: (t + 1) * n_w + j,
                                reward: utility,
                                probability: p,
                            });
                        }
                    }
                    // Close the row sum exactly on its heaviest branch.
                    let total: f64 = row.iter().map(|o| o.probability).sum();
                    let k = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.probability.total_cmp(&b.1.probability))
                        .expect("quadrature produced outcomes")
                        .0;
                    row[k].probability += 1.0 - total;
                }
            }
        }
    }
    rows[done * n_actions] = vec![Outcome { next_state: done, reward: 0.0, probability: 1.0 }];

    let mdp = TabularMdp::new(n_states, n_actions, rows, Some(t_max + 1), w0)?;
    Ok(GbwmEnv {
        mdp,
        wealth_grid: grid,
        options,
        n_portfolios,
        n_psi,
        t_periods: t_max,
        initial_node: w0,
    })
}
