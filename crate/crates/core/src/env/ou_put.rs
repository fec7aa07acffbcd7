//! American put on a mean-reverting price lattice.
//!
//! The underlying follows an Ornstein-Uhlenbeck diffusion
//! `dP = kappa (zeta - P) dt + sigma dW`, discretized by the Euler step
//!
//! ```text
//! P' = P + kappa (zeta - P) dt + sigma sqrt(dt) Z
//! ```
//!
//! whose autoregression factor is `phi = 1 - kappa dt`; the step is stable
//! only for `kappa dt` in `(0, 2)`, with stationary variance
//! `sigma^2 dt / (1 - phi^2)`. Prices live on a uniform lattice spanning a
//! configurable number of stationary deviations around `zeta`, and each
//! node's successor law is a three-point kernel on nearby nodes matching
//! the Euler mean and variance exactly; if a spread produces a negative
//! mass the bracketing nodes are widened and the moments re-solved.
//! Construction verifies the per-node moments and the lattice's stationary
//! moments against the exact Euler values and refuses a lattice that
//! misses them.
//!
//! At each step the holder may exercise, collecting `max(K - P, 0)` and
//! retiring to an absorbing done state, or hold. At maturity `T` the
//! payoff is exercised automatically. Two models come out of the build:
//! the layered MDP over `(t, price)` the finite-horizon solvers consume,
//! and a stationary quotient over price alone (same kernel, no clock and
//! no forced maturity) for baselines that ignore time; `quotient_of` maps
//! layered states onto quotient states.

use super::EnvError;
use crate::mdp::{Outcome, TabularMdp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuOptionConfig {
    /// Long-term mean level of the price.
    pub zeta: f64,
    /// Mean-reversion rate.
    pub kappa: f64,
    /// Diffusion volatility.
    pub sigma: f64,
    pub initial_price: f64,
    pub strike: f64,
    /// Decision steps to maturity.
    pub t_steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Lattice spacing.
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Half-width of the lattice in stationary deviations.
    #[serde(default = "default_band_sigmas")]
    pub band_sigmas: f64,
}

fn default_dt() -> f64 {
    0.05
}

fn default_grid_step() -> f64 {
    1.0
}

fn default_band_sigmas() -> f64 {
    6.0
}

impl OuOptionConfig {
    /// The standard problem: price starts at the long-term mean, at-the-
    /// money strike, twenty decision steps.
    pub fn standard() -> OuOptionConfig {
        OuOptionConfig {
            zeta: 100.0,
            kappa: 2.0,
            sigma: 20.0,
            initial_price: 100.0,
            strike: 100.0,
            t_steps: 20,
            dt: default_dt(),
            grid_step: default_grid_step(),
            band_sigmas: default_band_sigmas(),
        }
    }
}

/// Hold / exercise, by action id.
pub const ACTION_HOLD: usize = 0;
pub const ACTION_EXERCISE: usize = 1;

/// Built option model: layered and stationary forms over one price
/// lattice.
#[derive(Debug, Clone)]
pub struct OuPutEnv {
    /// `(t, price)` layers, `t = 0..=T`, plus one done state; maturity
    /// exercises automatically.
    pub mdp: TabularMdp,
    /// Price-only quotient: same kernel and payoffs, no clock, holding
    /// forever allowed.
    pub quotient: TabularMdp,
    /// Layered state -> quotient state.
    pub quotient_of: Vec<usize>,
    pub prices: Vec<f64>,
    /// Per price node, the three-point successor kernel
    /// `(node, probability)`.
    pub kernel: Vec<Vec<(usize, f64)>>,
    pub strike: f64,
    pub t_steps: usize,
    pub initial_node: usize,
}

impl OuPutEnv {
    pub fn state_index(&self, t: usize, p_idx: usize) -> usize {
        debug_assert!(t <= self.t_steps && p_idx < self.prices.len());
        t * self.prices.len() + p_idx
    }

    pub fn done_state(&self) -> usize {
        (self.t_steps + 1) * self.prices.len()
    }

    /// `(t, price node)` of a layered state; `None` for the done state.
    pub fn decode_state(&self, s: usize) -> Option<(usize, usize)> {
        if s >= self.done_state() {
            return None;
        }
        let n = self.prices.len();
        Some((s / n, s % n))
    }

    /// Exercise payoff at a price node.
    pub fn payoff(&self, p_idx: usize) -> f64 {
        (self.strike - self.prices[p_idx]).max(0.0)
    }
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let hi = grid.partition_point(|&g| g < x);
    if hi == 0 {
        return 0;
    }
    if hi == grid.len() {
        return grid.len() - 1;
    }
    if x - grid[hi - 1] <= grid[hi] - x {
        hi - 1
    } else {
        hi
    }
}

/// Three-point kernel at one node: masses on `(a, c, b)` matching mean
/// `mu` and variance `v` exactly. Returns `None` when some mass is
/// negative for this spread.
fn three_point(d_a: f64, d_c: f64, d_b: f64, v: f64) -> Option<[f64; 3]> {
    let p_a = (v + d_c * d_b) / ((d_a - d_c) * (d_a - d_b));
    let p_c = (v + d_a * d_b) / ((d_c - d_a) * (d_c - d_b));
    let p_b = (v + d_a * d_c) / ((d_b - d_a) * (d_b - d_c));
    let ps = [p_a, p_c, p_b];
    if ps.iter().all(|p| p.is_finite() && *p >= 0.0) {
        Some(ps)
    } else {
        None
    }
}

pub fn build_ou_put(cfg: &OuOptionConfig) -> Result<OuPutEnv, EnvError> {
    if !(cfg.zeta.is_finite()
        && cfg.kappa > 0.0
        && cfg.sigma >= 0.0
        && cfg.sigma.is_finite()
        && cfg.initial_price.is_finite()
        && cfg.strike.is_finite()
        && cfg.dt > 0.0
        && cfg.grid_step > 0.0)
    {
        return Err(EnvError::BadParam("option parameters out of range"));
    }
    if cfg.t_steps == 0 {
        return Err(EnvError::BadParam("t_steps must be positive"));
    }

    let kappa_dt = cfg.kappa * cfg.dt;
    if !(kappa_dt > 0.0 && kappa_dt < 2.0) {
        return Err(EnvError::UnstableStep(kappa_dt));
    }
    let phi = 1.0 - kappa_dt;
    let v = cfg.sigma * cfg.sigma * cfg.dt;

    // Degenerate noiseless case: the price never leaves the long-term
    // mean, so the lattice is that single point.
    let (prices, kernel, p0_idx) = if cfg.sigma == 0.0 {
        if cfg.initial_price != cfg.zeta {
            return Err(EnvError::BadParam("zero volatility requires starting at the mean"));
        }
        (vec![cfg.zeta], vec![vec![(0usize, 1.0f64)]], 0usize)
    } else {
        if cfg.band_sigmas < 4.0 {
            return Err(EnvError::BandTooNarrow(cfg.band_sigmas));
        }
        let sd_st = (v / (1.0 - phi * phi)).sqrt();
        let half_steps = (cfg.band_sigmas * sd_st / cfg.grid_step).ceil() as i64;
        let prices: Vec<f64> = (-half_steps..=half_steps)
            .map(|k| cfg.zeta + k as f64 * cfg.grid_step)
            .collect();
        let n = prices.len();
        let sd = v.sqrt();

        let mut kernel: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for &p in &prices {
            let mu = p + kappa_dt * (cfg.zeta - p);
            let mut found: Option<Vec<(usize, f64)>> = None;
            for width in [2.0f64, 2.5, 3.0, 4.0] {
                let i_c = nearest_index(&prices, mu);
                let i_a = nearest_index(&prices, mu - width * sd).min(i_c.saturating_sub(1));
                let i_b = nearest_index(&prices, mu + width * sd).max((i_c + 1).min(n - 1));
                if i_a == i_c || i_b == i_c || i_a == i_b {
                    continue;
                }
                let (d_a, d_c, d_b) =
                    (prices[i_a] - mu, prices[i_c] - mu, prices[i_b] - mu);
                if let Some(ps) = three_point(d_a, d_c, d_b, v) {
                    let mut row = vec![(i_a, ps[0]), (i_c, ps[1]), (i_b, ps[2])];
                    row.retain(|&(_, q)| q > 0.0);
                    // Close the row sum exactly.
                    let total: f64 = row.iter().map(|x| x.1).sum();
                    let k = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                        .unwrap()
                        .0;
                    row[k].1 += 1.0 - total;
                    found = Some(row);
                    break;
                }
            }
            match found {
                Some(row) => kernel.push(row),
                None => {
                    return Err(EnvError::DegenerateKernel { price: p, max_width: 4.0 });
                }
            }
        }

        // Per-node moment audit: the kernel must reproduce the Euler
        // conditional mean and variance at every node.
        for (i, row) in kernel.iter().enumerate() {
            let mu = prices[i] + kappa_dt * (cfg.zeta - prices[i]);
            let mean: f64 = row.iter().map(|&(j, q)| q * prices[j]).sum();
            let var: f64 = row.iter().map(|&(j, q)| q * (prices[j] - mean).powi(2)).sum();
            let mean_rel = (mean - mu).abs() / mu.abs().max(cfg.grid_step);
            let var_rel = (var - v).abs() / v;
            if mean_rel > 0.01 {
                return Err(EnvError::LatticeTooCoarse { what: "node mean", rel: mean_rel, limit: 0.01 });
            }
            if var_rel > 0.01 {
                return Err(EnvError::LatticeTooCoarse { what: "node variance", rel: var_rel, limit: 0.01 });
            }
        }

        // Stationary audit: the chain's long-run mean and variance must
        // sit near the Euler stationary moments.
        let mut dist = vec![0.0f64; n];
        dist[nearest_index(&prices, cfg.zeta)] = 1.0;
        let mut next = vec![0.0f64; n];
        for _ in 0..200_000 {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (i, row) in kernel.iter().enumerate() {
                if dist[i] == 0.0 {
                    continue;
                }
                for &(j, q) in row {
                    next[j] += dist[i] * q;
                }
            }
            let delta: f64 = dist.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut dist, &mut next);
            if delta < 1e-13 {
                break;
            }
        }
        let st_mean: f64 = dist.iter().zip(&prices).map(|(q, p)| q * p).sum();
        let st_var: f64 = dist
            .iter()
            .zip(&prices)
            .map(|(q, p)| q * (p - st_mean) * (p - st_mean))
            .sum();
        let want_var = v / (1.0 - phi * phi);
        let mean_rel = (st_mean - cfg.zeta).abs() / cfg.zeta.abs().max(cfg.grid_step);
        let var_rel = (st_var - want_var).abs() / want_var;
        if mean_rel > 0.05 {
            return Err(EnvError::LatticeTooCoarse { what: "stationary mean", rel: mean_rel, limit: 0.05 });
        }
        if var_rel > 0.05 {
            return Err(EnvError::LatticeTooCoarse { what: "stationary variance", rel: var_rel, limit: 0.05 });
        }

        let p0_idx = nearest_index(&prices, cfg.initial_price);
        if (prices[p0_idx] - cfg.initial_price).abs() > 1e-9 * cfg.initial_price.abs().max(1.0) {
            return Err(EnvError::BadParam("initial price must sit on the lattice"));
        }
        (prices, kernel, p0_idx)
    };

    let n = prices.len();
    let t_max = cfg.t_steps;
    let payoff = |p_idx: usize| (cfg.strike - prices[p_idx]).max(0.0);

    // Layered model: decisions at t = 0..T-1, forced exercise at T.
    let done = (t_max + 1) * n;
    let n_states = done + 1;
    let mut rows: Vec<Vec<Outcome>> = vec![Vec::new(); n_states * 2];
    for t in 0..t_max {
        for p_idx in 0..n {
            let s = t * n + p_idx;
            rows[s * 2 + ACTION_HOLD] = kernel[p_idx]
                .iter()
                .map(|&(j, q)| Outcome {
                    next_state: (t + 1) * n + j,
                    reward: 0.0,
                    probability: q,
                })
                .collect();
            rows[s * 2 + ACTION_EXERCISE] = vec![Outcome {
                next_state: done,
                reward: payoff(p_idx),
                probability: 1.0,
            }];
        }
    }
    for p_idx in 0..n {
        let s = t_max * n + p_idx;
        rows[s * 2 + ACTION_EXERCISE] = vec![Outcome {
            next_state: done,
            reward: payoff(p_idx),
            probability: 1.0,
        }];
    }
    rows[done * 2 + ACTION_HOLD] =
        vec![Outcome { next_state: done, reward: 0.0, probability: 1.0 }];
    let mdp = TabularMdp::new(n_states, 2, rows, Some(t_max + 1), p0_idx)?;

    // Price-only quotient: no clock, no forced maturity.
    let q_done = n;
    let mut q_rows: Vec<Vec<Outcome>> = vec![Vec::new(); (n + 1) * 2];
    for p_idx in 0..n {
        q_rows[p_idx * 2 + ACTION_HOLD] = kernel[p_idx]
            .iter()
            .map(|&(j, q)| Outcome { next_state: j, reward: 0.0, probability: q })
            .collect();
        q_rows[p_idx * 2 + ACTION_EXERCISE] = vec![Outcome {
            next_state: q_done,
            reward: payoff(p_idx),
            probability: 1.0,
        }];
    }
    q_rows[q_done * 2 + ACTION_HOLD] =
        vec![Outcome { next_state: q_done, reward: 0.0, probability: 1.0 }];
    let quotient = TabularMdp::new(n + 1, 2, q_rows, None, p0_idx)?;

    let mut quotient_of = Vec::with_capacity(n_states);
    for t in 0..=t_max {
        let _ = t;
        quotient_of.extend(0..n);
    }
    quotient_of.push(q_done);

    Ok(OuPutEnv {
        mdp,
        quotient,
        quotient_of,
        prices,
        kernel,
        strike: cfg.strike,
        t_steps: t_max,
        initial_node: p0_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discount::{DiscountFunction, DiscountSpec};
    use crate::dp::{backward_induction, SolveConfig};
    use crate::grid::StockGrid;
    use crate::risk::OceUtility;

    #[test]
    fn builds_standard_lattice() {
        let cfg = OuOptionConfig::standard();
        let env = build_ou_put(&cfg).unwrap();
        env.mdp.validate().unwrap();
        env.quotient.validate().unwrap();
        let n = env.prices.len();
        // Band: +-6 stationary deviations at sigma_st ~ 10.26, spacing 1.
        assert!((120..=130).contains(&n), "{n}");
        assert_eq!(env.prices[env.initial_node], 100.0);
        assert_eq!(env.mdp.n_states(), 21 * n + 1);
        assert_eq!(env.mdp.horizon(), Some(21));
        assert_eq!(env.quotient.n_states(), n + 1);
        assert_eq!(env.quotient.horizon(), None);
        // Uniform spacing.
        assert!(env.prices.windows(2).all(|w| (w[1] - w[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn kernel_moments_are_exact() {
        let cfg = OuOptionConfig::standard();
        let env = build_ou_put(&cfg).unwrap();
        let kappa_dt = cfg.kappa * cfg.dt;
        let v = cfg.sigma * cfg.sigma * cfg.dt;
        for (i, row) in env.kernel.iter().enumerate() {
            let p = env.prices[i];
            let mu = p + kappa_dt * (cfg.zeta - p);
            let mean: f64 = row.iter().map(|&(j, q)| q * env.prices[j]).sum();
            let var: f64 = row.iter().map(|&(j, q)| q * (env.prices[j] - mean).powi(2)).sum();
            assert!((mean - mu).abs() < 1e-9, "node {i}: mean {mean} vs {mu}");
            assert!((var - v).abs() / v < 1e-9, "node {i}: var {var} vs {v}");
            let total: f64 = row.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layered_and_quotient_share_the_kernel() {
        let env = build_ou_put(&OuOptionConfig::standard()).unwrap();
        let n = env.prices.len();
        for p_idx in [0usize, n / 2, n - 1] {
            let s = env.state_index(3, p_idx);
            assert_eq!(env.quotient_of[s], p_idx);
            let layered = env.mdp.outcomes(s, ACTION_HOLD);
            let quot = env.quotient.outcomes(p_idx, ACTION_HOLD);
            assert_eq!(layered.len(), quot.len());
            for (a, b) in layered.iter().zip(quot) {
                assert_eq!(env.quotient_of[a.next_state], b.next_state);
                assert_eq!(a.probability, b.probability);
            }
        }
        assert_eq!(env.quotient_of[env.done_state()], n);
    }

    #[test]
    fn maturity_forces_exercise() {
        let env = build_ou_put(&OuOptionConfig::standard()).unwrap();
        let t = env.t_steps;
        for p_idx in [0usize, env.initial_node, env.prices.len() - 1] {
            let s = env.state_index(t, p_idx);
            assert!(!env.mdp.is_valid_action(s, ACTION_HOLD));
            let outs = env.mdp.outcomes(s, ACTION_EXERCISE);
            assert_eq!(outs.len(), 1);
            assert_eq!(outs[0].next_state, env.done_state());
            let want = (100.0 - env.prices[p_idx]).max(0.0);
            assert_eq!(outs[0].reward, want);
        }
        // Quotient never forces: hold is valid at every price.
        for p_idx in 0..env.prices.len() {
            assert!(env.quotient.is_valid_action(p_idx, ACTION_HOLD));
        }
    }

    #[test]
    fn noiseless_at_mean_put_is_worthless() {
        let cfg = OuOptionConfig {
            sigma: 0.0,
            strike: 90.0,
            t_steps: 6,
            ..OuOptionConfig::standard()
        };
        let env = build_ou_put(&cfg).unwrap();
        assert_eq!(env.prices, vec![100.0]);
        assert_eq!(env.mdp.reward_bounds(), (0.0, 0.0));

        let bad = OuOptionConfig { sigma: 0.0, initial_price: 95.0, ..cfg };
        assert!(matches!(build_ou_put(&bad), Err(EnvError::BadParam(_))));
    }

    #[test]
    fn undiscounted_value_dominates_immediate_exercise() {
        let cfg = OuOptionConfig {
            initial_price: 90.0,
            t_steps: 8,
            ..OuOptionConfig::standard()
        };
        let env = build_ou_put(&cfg).unwrap();
        let d = DiscountFunction::new(DiscountSpec::Exponential { gamma: 1.0 }, 10).unwrap();
        let grid = StockGrid::singleton(0.0);
        let (_, table) = backward_induction(
            &env.mdp,
            &OceUtility::Mean,
            &d,
            &grid,
            cfg.t_steps + 1,
            &SolveConfig::default(),
        );
        let (value, _) = table.oce_at_root(env.mdp.initial_state());
        assert!(value >= 10.0 - 1e-9, "{value}");
        assert!(value <= cfg.strike, "{value}");
    }

    #[test]
    fn rejects_unstable_or_narrow_configs() {
        let cfg = OuOptionConfig { dt: 1.0, ..OuOptionConfig::standard() };
        assert!(matches!(build_ou_put(&cfg), Err(EnvError::UnstableStep(_))));

        let cfg = OuOptionConfig { band_sigmas: 3.0, ..OuOptionConfig::standard() };
        assert!(matches!(build_ou_put(&cfg), Err(EnvError::BandTooNarrow(_))));

        let cfg = OuOptionConfig { initial_price: 100.31, ..OuOptionConfig::standard() };
        assert!(matches!(build_ou_put(&cfg), Err(EnvError::BadParam(_))));

        let cfg = OuOptionConfig { t_steps: 0, ..OuOptionConfig::standard() };
        assert!(matches!(build_ou_put(&cfg), Err(EnvError::BadParam(_))));
    }

    #[test]
    fn config_serde_roundtrip() {
        let cfg = OuOptionConfig::standard();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: OuOptionConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
