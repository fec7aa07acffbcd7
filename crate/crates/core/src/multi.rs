//! Multi-horizon approximation of general discount curves.
//!
//! A discount curve that admits a density over exponential factors,
//! `d_t = integral of gamma^t w(gamma) dgamma`, is approximated by a finite
//! basis of `m` heads:
//!
//! ```text
//! tilde_d_t = sum_i w_i gamma_i^t,    w_i >= 0,  tilde_d_0 = 1
//! ```
//!
//! The solver keeps one return law per head, each obeying its own
//! exponential recursion `G_i = R + gamma_i G_i'`, all conditioned on a
//! single aggregate stock driven by `tilde_d`'s one-step factor. At
//! decision time the total outcome is reconstructed as the weighted sum
//! `sum_i w_{i,t} G_i` with time-dependent weights
//! `w_{i,t} = w_i gamma_i^t / tilde_d_t`; since only the per-head marginals
//! are stored, the sum is taken under the comonotone coupling (all heads
//! driven by one uniform level), which is exact for deterministic paths and
//! the standard reconstruction otherwise.
//!
//! Unlike a general curve, whose one-step factor may approach 1, the basis
//! one-step factor converges to the largest head `gamma_m < 1`, so the same
//! machinery stays contractive in the infinite-horizon setting.
//!
//! Action selection comes in three modes: the time-consistent rule uses the
//! time-`t` weights against the time-indexed table; the time-inconsistent
//! baseline re-indexes every step to zero, mixing a stationary table with
//! the base weights; the time-aware variant looks up the time-indexed table
//! but keeps the base weights, isolating the effect of the weight schedule
//! from that of the time feature itself.

use crate::discount::{DiscountFunction, DiscountSpec};
use crate::dist::ReturnDistribution;
use crate::dp::{self, DpError, NonStationaryPolicy, PolicySlice, SolveConfig};
use crate::grid::{StockGrid, StockInterp};
use crate::mdp::TabularMdp;
use crate::risk::OceUtility;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MultiError {
    #[error("basis needs at least one positive-weight head")]
    EmptyBasis,
    #[error("head {index}: gamma {gamma} outside (0, 1)")]
    GammaRange { index: usize, gamma: f64 },
    #[error("head gammas must be strictly increasing (violated at index {index})")]
    GammaOrder { index: usize },
    #[error("head {index}: weight {weight} must be finite and non-negative")]
    BadWeight { index: usize, weight: f64 },
    #[error("hyperbolic exponent k={k} outside (0, 1)")]
    HyperbolicExponent { k: f64 },
    #[error("gamma_max {gamma_max} outside (0, 1)")]
    GammaMaxRange { gamma_max: f64 },
    #[error("basis needs at least one head, got m={m}")]
    HeadCount { m: usize },
    #[error("no base b in (0, 1) satisfies the spacing constraint")]
    SpacingSolve,
    #[error("unknown action-selection mode {mode:?}")]
    UnknownMode { mode: String },
    #[error("table slice lacks per-action laws (solve with keep_distributions)")]
    MissingDistributions,
    #[error("time-inconsistent selection needs a stationary table attached")]
    MissingStationaryTable,
    #[error("no decision epoch t={t} in the table")]
    EpochOutOfRange { t: usize },
    #[error("stationary iteration stalled at residual {residual} after {sweeps} sweeps")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Finite exponential basis `tilde_d_t = sum_i w_i gamma_i^t` with
/// normalized weights, tabulated like a discount curve up to a fixed
/// horizon.
#[derive(Debug, Clone)]
pub struct HorizonBasis {
    gammas: Vec<f64>,
    weights: Vec<f64>,
    raw_weight_sum: f64,
    max_horizon: usize,
    /// `tilde_d[t]` for `t = 0..=max_horizon + 1`, `tilde_d[0] = 1`.
    tilde_d: Vec<f64>,
}

impl HorizonBasis {
    /// Builds a basis from head factors and raw weights. Heads must be
    /// strictly increasing in `(0, 1)`; weights must be finite and
    /// non-negative, and zero-weight heads are discarded. The surviving
    /// weights are normalized to sum to one so that `tilde_d_0 = 1`; the
    /// raw sum is retained for inspection.
    pub fn new(gammas: Vec<f64>, weights: Vec<f64>, max_horizon: usize) -> Result<Self, MultiError> {
        if gammas.is_empty() || gammas.len() != weights.len() {
            return Err(MultiError::EmptyBasis);
        }
        for (i, &g) in gammas.iter().enumerate() {
            if !(g > 0.0 && g < 1.0 && g.is_finite()) {
                return Err(MultiError::GammaRange { index: i, gamma: g });
            }
            if i > 0 && g <= gammas[i - 1] {
                return Err(MultiError::GammaOrder { index: i });
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(MultiError::BadWeight { index: i, weight: w });
            }
        }
        let raw_weight_sum: f64 = weights.iter().sum();
        let kept: Vec<(f64, f64)> = gammas
            .into_iter()
            .zip(weights)
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if kept.is_empty() {
            return Err(MultiError::EmptyBasis);
        }
        let gammas: Vec<f64> = kept.iter().map(|&(g, _)| g).collect();
        let weights: Vec<f64> = kept.iter().map(|&(_, w)| w / raw_weight_sum).collect();
        let m = gammas.len();
        let mut tilde_d = Vec::with_capacity(max_horizon + 2);
        tilde_d.push(1.0);
        let mut pows = vec![1.0f64; m];
        for _ in 0..=max_horizon {
            let mut acc = 0.0;
            for i in 0..m {
                pows[i] *= gammas[i];
                acc += weights[i] * pows[i];
            }
            tilde_d.push(acc);
        }
        Ok(HorizonBasis { gammas, weights, raw_weight_sum, max_horizon, tilde_d })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Normalized base weights (`sum = 1`).
    pub fn base_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight mass before normalization, e.g. the Riemann-sum total of the
    /// generating density.
    pub fn raw_weight_sum(&self) -> f64 {
        self.raw_weight_sum
    }

    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }

    /// `tilde_d_t`. Panics if `t > max_horizon + 1`.
    #[inline]
    pub fn evaluate(&self, t: usize) -> f64 {
        self.tilde_d[t]
    }

    /// `tilde_d_{t+1} / tilde_d_t`. A single-head basis returns its gamma
    /// literally, so a degenerate basis is bit-compatible with the
    /// exponential curve. Panics if `t > max_horizon`.
    #[inline]
    pub fn one_step(&self, t: usize) -> f64 {
        if self.gammas.len() == 1 {
            let _ = self.tilde_d[t + 1];
            self.gammas[0]
        } else {
            self.tilde_d[t + 1] / self.tilde_d[t]
        }
    }

    /// Time-`t` mixing weights `w_{i,t} = w_i gamma_i^t / tilde_d_t`,
    /// normalized against the same power sum so they always add to one.
    /// Valid for any `t`.
    pub fn time_weights(&self, t: usize) -> Vec<f64> {
        let nums: Vec<f64> = self
            .gammas
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * g.powi(t as i32))
            .collect();
        let denom: f64 = nums.iter().sum();
        nums.into_iter().map(|x| x / denom).collect()
    }

    /// The basis viewed as a discount curve: a tabulated product of its
    /// one-step factors. For one head this reproduces the exponential
    /// curve bitwise; for several heads the running product tracks
    /// `tilde_d` up to rounding.
    pub fn to_discount(&self) -> DiscountFunction {
        let factors: Vec<f64> = (0..=self.max_horizon).map(|t| self.one_step(t)).collect();
        DiscountFunction::new(DiscountSpec::TabulatedProduct { factors }, self.max_horizon)
            .expect("basis one-step factors lie in (0, 1)")
    }
}

/// Serializable recipe for a [`HorizonBasis`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Power-law spacing matched to the hyperbolic curve `1 / (1 + k t)`,
    /// see [`build_hyperbolic_basis`].
    Hyperbolic { k: f64, m: usize, gamma_max: f64 },
    /// Heads and raw weights given literally.
    Explicit { gammas: Vec<f64>, weights: Vec<f64> },
}

impl BasisSpec {
    pub fn build(&self, max_horizon: usize) -> Result<HorizonBasis, MultiError> {
        match self {
            BasisSpec::Hyperbolic { k, m, gamma_max } => {
                build_hyperbolic_basis(*k, *m, *gamma_max, max_horizon)
            }
            BasisSpec::Explicit { gammas, weights } => {
                HorizonBasis::new(gammas.clone(), weights.clone(), max_horizon)
            }
        }
    }
}

/// Basis for the hyperbolic curve `d_t = 1 / (1 + k t)`, which mixes
/// exponentials with density `w(gamma) = k^{-1} gamma^{1/k - 1}` on
/// `(0, 1)`.
///
/// Power-law spacing: edges `e_i = 1 - b^i` for `i = 0..=m`, with the base
/// `b` solving `(1 - b^m)^k = gamma_max` by bisection, so the top of the
/// covered range corresponds to `gamma_max` after exponentiation. Heads sit
/// at the left edge of each cell with lower-sum weights
/// `w_i = (e_{i+1} - e_i) k^{-1} e_i^{1/k - 1}`. For `k < 1` the density
/// vanishes at zero, so the `e_0 = 0` head carries no weight and is
/// dropped; `k >= 1` would put positive or divergent mass on that head and
/// is rejected. `m = 1` degenerates to the single head `gamma_max^{1/k}`
/// with weight one.
pub fn build_hyperbolic_basis(
    k: f64,
    m: usize,
    gamma_max: f64,
    max_horizon: usize,
) -> Result<HorizonBasis, MultiError> {
    if !(k > 0.0 && k < 1.0 && k.is_finite()) {
        return Err(MultiError::HyperbolicExponent { k });
    }
    if !(gamma_max > 0.0 && gamma_max < 1.0) {
        return Err(MultiError::GammaMaxRange { gamma_max });
    }
    if m == 0 {
        return Err(MultiError::HeadCount { m });
    }
    if m == 1 {
        let g = gamma_max.powf(1.0 / k);
        return HorizonBasis::new(vec![g], vec![1.0], max_horizon);
    }
    // (1 - b^m)^k - gamma_max is strictly decreasing in b on (0, 1) with a
    // sign change, so bisection cannot miss.
    let target = |b: f64| (1.0 - b.powi(m as i32)).powf(k) - gamma_max;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        let v = target(mid);
        if !v.is_finite() {
            return Err(MultiError::SpacingSolve);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    if !(b > 0.0 && b < 1.0) {
        return Err(MultiError::SpacingSolve);
    }
    let edge = |i: usize| 1.0 - b.powi(i as i32);
    let density = |g: f64| (1.0 / k) * g.powf(1.0 / k - 1.0);
    let mut gammas = Vec::with_capacity(m - 1);
    let mut weights = Vec::with_capacity(m - 1);
    for i in 1..m {
        let g = edge(i);
        gammas.push(g);
        weights.push((edge(i + 1) - g) * density(g));
    }
    HorizonBasis::new(gammas, weights, max_horizon)
}

/// `max_t |tilde_d_t - d_t| / d_t` over `t = 0..=t_max`.
pub fn relative_curve_error(basis: &HorizonBasis, d: &DiscountFunction, t_max: usize) -> f64 {
    (0..=t_max)
        .map(|t| (basis.evaluate(t) - d.evaluate(t)).abs() / d.evaluate(t))
        .fold(0.0, f64::max)
}

/// `(head, gamma, weight)` rows for inspection.
pub fn basis_csv(basis: &HorizonBasis) -> String {
    let mut out = String::from("head,gamma,weight\n");
    for (i, (&g, &w)) in basis.gammas().iter().zip(basis.base_weights()).enumerate() {
        out.push_str(&format!("{i},{g:.16e},{w:.16e}\n"));
    }
    out
}

/// Law of `sum_i weights_i X_i` when the `X_i` are coupled comonotonically:
/// one uniform level drives every marginal's quantile function. Exact on
/// the merged level sets of the atom lists.
pub fn comonotone_sum(dists: &[&ReturnDistribution], weights: &[f64]) -> ReturnDistribution {
    assert_eq!(dists.len(), weights.len(), "one weight per marginal");
    assert!(!dists.is_empty(), "empty comonotone sum");
    if dists.len() == 1 && weights[0] == 1.0 {
        return dists[0].clone();
    }
    let m = dists.len();
    // Per-head cumulative masses with the last entry pinned to 1 so all
    // heads exhaust together.
    let cums: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| {
            let mut acc = 0.0;
            let mut v: Vec<f64> = d
                .atoms()
                .iter()
                .map(|&(_, p)| {
                    acc += p;
                    acc
                })
                .collect();
            *v.last_mut().expect("non-empty distribution") = 1.0;
            v
        })
        .collect();
    let mut idx = vec![0usize; m];
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut prev = 0.0f64;
    loop {
        let value: f64 = (0..m).map(|h| weights[h] * dists[h].atoms()[idx[h]].0).sum();
        let next = (0..m).map(|h| cums[h][idx[h]]).fold(f64::INFINITY, f64::min);
        if next > prev {
            atoms.push((value, next - prev));
        }
        if next >= 1.0 {
            break;
        }
        for h in 0..m {
            if cums[h][idx[h]] <= next {
                idx[h] += 1;
            }
        }
        prev = next;
    }
    ReturnDistribution::from_atoms(atoms).expect("level partition masses sum to one")
}

/// One time slice of the multi-horizon table: per cell, one return law per
/// head for the chosen action, plus per-action per-head laws for re-mixing
/// under other weightings when `keep_distributions` is on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSlice {
    pub t: usize,
    pub states: Vec<usize>,
    pub nodes: Vec<f64>,
    /// Head count.
    pub m: usize,
    pub n_actions: usize,
    /// Aggregate objective of the chosen action per cell, `[state][node]`.
    pub objectives: Vec<f64>,
    /// Chosen action per cell; empty in the terminal slice.
    pub actions: Vec<usize>,
    /// Chosen-action laws, `[cell][head]`, exact mode.
    pub head_dists: Vec<ReturnDistribution>,
    /// Flat quantile rows `[cell][head][quantile]`, interpolated mode.
    pub head_quantiles: Vec<f64>,
    pub quantile_n: Option<usize>,
    /// Per-action laws `[cell][action][head]`; `None` marks invalid
    /// actions. Empty at the terminal slice or when payloads are dropped.
    pub action_dists: Vec<Option<ReturnDistribution>>,
    pub clamps: usize,
    /// Max per-cell Wasserstein charge across heads (projection, atom cap,
    /// and bracket-spread lookups), mirroring the single-curve solver.
    pub epsilon: f64,
}

impl MultiSlice {
    pub fn n_cells(&self) -> usize {
        self.states.len() * self.nodes.len()
    }

    pub fn state_pos(&self, state: usize) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }

    pub fn cell(&self, state_pos: usize, node_idx: usize) -> usize {
        state_pos * self.nodes.len() + node_idx
    }

    fn node_pos_exact(&self, c: f64) -> usize {
        self.nodes
            .binary_search_by(|x| x.total_cmp(&c))
            .unwrap_or_else(|_| panic!("stock {c} not in exact node set at t={}", self.t))
    }

    /// Materializes one head's law at a cell.
    pub fn head_dist_at(&self, state_pos: usize, node_idx: usize, head: usize) -> ReturnDistribution {
        let cell = self.cell(state_pos, node_idx);
        match self.quantile_n {
            Some(n) => {
                let row = &self.head_quantiles[(cell * self.m + head) * n..][..n];
                crate::dist::QuantileRepresentation::new(row.to_vec()).to_distribution()
            }
            None => self.head_dists[cell * self.m + head].clone(),
        }
    }

    fn clear_payload(&mut self) {
        self.head_dists = Vec::new();
        self.head_quantiles = Vec::new();
        self.action_dists = Vec::new();
    }

    /// Terminal slice: every head's law is `delta_0`.
    fn terminal(
        t: usize,
        states: Vec<usize>,
        nodes: Vec<f64>,
        m: usize,
        n_actions: usize,
        f: &OceUtility,
        d_t: f64,
        quantile_n: Option<usize>,
    ) -> MultiSlice {
        let zero = ReturnDistribution::dirac(0.0);
        let cells = states.len() * nodes.len();
        let mut objectives = Vec::with_capacity(cells);
        for _ in 0..states.len() {
            for &c in &nodes {
                objectives.push(f.objective(&zero, c, d_t));
            }
        }
        let (head_dists, head_quantiles) = match quantile_n {
            Some(n) => (Vec::new(), vec![0.0; cells * m * n]),
            None => (vec![zero; cells * m], Vec::new()),
        };
        MultiSlice {
            t,
            states,
            nodes,
            m,
            n_actions,
            objectives,
            actions: Vec::new(),
            head_dists,
            head_quantiles,
            quantile_n,
            action_dists: Vec::new(),
            clamps: 0,
            epsilon: 0.0,
        }
    }
}

/// Multi-horizon backward-induction output: slices `t = 0..=T`, plus an
/// optional stationary slice serving the time-inconsistent baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiValueTable {
    pub slices: Vec<MultiSlice>,
    pub stationary: Option<MultiSlice>,
    pub interp: StockInterp,
    pub clamp_count: usize,
}

impl MultiValueTable {
    pub fn horizon(&self) -> usize {
        self.slices.len() - 1
    }

    /// Aggregate objective at `(t, state)` with nearest-node resolution.
    pub fn objective_at(&self, t: usize, state: usize, stock: f64) -> f64 {
        let slice = &self.slices[t];
        let pos = slice.state_pos(state).expect("state not in slice");
        let j = crate::grid::nearest_in(&slice.nodes, stock);
        slice.objectives[slice.cell(pos, j)]
    }

    /// `max_c { -c + objective(s0, c, t=0) }` over the time-0 nodes; ties
    /// break toward the smallest node.
    pub fn oce_at_root(&self, s0: usize) -> (f64, f64) {
        let slice = &self.slices[0];
        let pos = slice.state_pos(s0).expect("initial state not in slice 0");
        let mut best = f64::NEG_INFINITY;
        let mut best_c = slice.nodes[0];
        for (j, &c) in slice.nodes.iter().enumerate() {
            let v = -c + slice.objectives[slice.cell(pos, j)];
            if v > best {
                best = v;
                best_c = c;
            }
        }
        (best, best_c)
    }

    /// Greedy (time-consistent) policy recorded during the solve.
    pub fn policy(&self) -> NonStationaryPolicy {
        let head = self
            .slices
            .iter()
            .filter(|s| !s.actions.is_empty())
            .map(|s| PolicySlice {
                t: s.t,
                states: s.states.clone(),
                nodes: s.nodes.clone(),
                actions: s.actions.clone(),
            })
            .collect();
        NonStationaryPolicy { head, tail: None }
    }
}

/// Per-action scratch: full-fidelity per-head laws.
struct ActionLaws {
    action: usize,
    objective: f64,
    heads: Vec<ReturnDistribution>,
}

/// One backward step of the multi-horizon solver.
#[allow(clippy::too_many_arguments)]
fn multi_backup(
    mdp: &TabularMdp,
    eta_next: &MultiSlice,
    f: &OceUtility,
    basis: &HorizonBasis,
    t: usize,
    states: &[usize],
    nodes: &[f64],
    cfg: &SolveConfig,
) -> Result<MultiSlice, MultiError> {
    let m = basis.len();
    let gammas = basis.gammas();
    let w_t = basis.time_weights(t);
    let d_t = basis.evaluate(t);
    let dhat = basis.one_step(t);
    let quantile_n = eta_next.quantile_n;
    let cells = states.len() * nodes.len();
    let next_w = eta_next.nodes.len();

    let mut objectives = Vec::with_capacity(cells);
    let mut actions = Vec::with_capacity(cells);
    let mut head_dists: Vec<ReturnDistribution> = Vec::new();
    let mut head_quantiles: Vec<f64> = Vec::new();
    let mut action_dists: Vec<Option<ReturnDistribution>> = Vec::new();
    if cfg.keep_distributions {
        action_dists.reserve(cells * mdp.n_actions() * m);
    }
    let mut clamps = 0usize;
    let mut epsilon = 0.0f64;

    let mut atoms: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    for &s in states {
        for &c in nodes {
            let mut best: Option<ActionLaws> = None;
            let mut lerp_charge = 0.0f64;
            let mut cell_rows: Vec<Option<ReturnDistribution>> =
                if cfg.keep_distributions { vec![None; mdp.n_actions() * m] } else { Vec::new() };
            for a in mdp.valid_actions(s) {
                for buf in &mut atoms {
                    buf.clear();
                }
                for o in mdp.outcomes(s, a) {
                    let c_next = (c + o.reward) / dhat;
                    let spos = eta_next
                        .state_pos(o.next_state)
                        .ok_or(DpError::MissingCell { t: t + 1, state: o.next_state })?;
                    match quantile_n {
                        None => {
                            let j = eta_next.node_pos_exact(c_next);
                            for (i, buf) in atoms.iter_mut().enumerate() {
                                let dist = &eta_next.head_dists[(spos * next_w + j) * m + i];
                                for &(v, p) in dist.atoms() {
                                    buf.push((o.reward + gammas[i] * v, o.probability * p));
                                }
                            }
                        }
                        Some(n) => {
                            let (lo, hi, lambda, clamped) =
                                crate::grid::bracket_in(&eta_next.nodes, c_next);
                            if clamped {
                                clamps += 1;
                            }
                            let w = o.probability / n as f64;
                            for (i, buf) in atoms.iter_mut().enumerate() {
                                let ql = &eta_next.head_quantiles
                                    [((spos * next_w + lo) * m + i) * n..][..n];
                                let qh = &eta_next.head_quantiles
                                    [((spos * next_w + hi) * m + i) * n..][..n];
                                if lambda == 0.0 {
                                    for &v in ql {
                                        buf.push((o.reward + gammas[i] * v, w));
                                    }
                                } else {
                                    let mut spread = 0.0;
                                    for (&vl, &vh) in ql.iter().zip(qh) {
                                        let v = (1.0 - lambda) * vl + lambda * vh;
                                        buf.push((o.reward + gammas[i] * v, w));
                                        spread += (vh - vl).abs();
                                    }
                                    lerp_charge = lerp_charge
                                        .max(lambda.min(1.0 - lambda) * spread / n as f64);
                                }
                            }
                        }
                    }
                }
                let heads: Vec<ReturnDistribution> = atoms
                    .iter()
                    .map(|buf| {
                        ReturnDistribution::from_atoms(buf.clone())
                            .expect("mixture atoms form a distribution")
                    })
                    .collect();
                let aggregate = if m == 1 {
                    heads[0].clone()
                } else {
                    let refs: Vec<&ReturnDistribution> = heads.iter().collect();
                    comonotone_sum(&refs, &w_t)
                };
                let obj = f.objective(&aggregate, c, d_t);
                if cfg.keep_distributions {
                    for (i, h) in heads.iter().enumerate() {
                        cell_rows[a * m + i] = Some(store_form(h, quantile_n, cfg).0);
                    }
                }
                let better = match &best {
                    None => true,
                    Some(b) => obj > b.objective,
                };
                if better {
                    best = Some(ActionLaws { action: a, objective: obj, heads });
                }
            }
            let best = best.expect("reachable state with no valid action");
            objectives.push(best.objective);
            actions.push(best.action);
            let mut store_charge = 0.0f64;
            for h in &best.heads {
                let (stored, charge) = store_form(h, quantile_n, cfg);
                store_charge = store_charge.max(charge);
                match quantile_n {
                    None => head_dists.push(stored),
                    Some(n) => {
                        let proj = stored.project_to_quantiles(n);
                        head_quantiles.extend_from_slice(proj.values());
                    }
                }
            }
            epsilon = epsilon.max(lerp_charge.max(store_charge));
            if cfg.keep_distributions {
                action_dists.append(&mut cell_rows);
            }
        }
    }
    Ok(MultiSlice {
        t,
        states: states.to_vec(),
        nodes: nodes.to_vec(),
        m,
        n_actions: mdp.n_actions(),
        objectives,
        actions,
        head_dists,
        head_quantiles,
        quantile_n,
        action_dists,
        clamps,
        epsilon,
    })
}

/// Storage form of a per-head law (atom cap in exact mode, quantile
/// projection in interpolated mode) plus its Wasserstein charge.
fn store_form(
    dist: &ReturnDistribution,
    quantile_n: Option<usize>,
    cfg: &SolveConfig,
) -> (ReturnDistribution, f64) {
    match quantile_n {
        None => match cfg.atom_cap {
            Some(cap) if dist.len() > cap => {
                let capped = dist.clone().capped(cap);
                let charge = dist.wasserstein1(&capped);
                (capped, charge)
            }
            _ => (dist.clone(), 0.0),
        },
        Some(n) => {
            let proj = dist.project_to_quantiles(n).to_distribution();
            let charge = dist.wasserstein1(&proj);
            (proj, charge)
        }
    }
}

/// Finite-horizon multi-horizon solve: terminal `delta_0` per head at
/// `t = T`, then greedy steps to `t = 0` choosing actions by the
/// time-`t`-weighted comonotone aggregate. Returns the greedy policy and
/// the per-head table.
pub fn multi_backward_induction(
    mdp: &TabularMdp,
    f: &OceUtility,
    basis: &HorizonBasis,
    grid: &StockGrid,
    t_horizon: usize,
    cfg: &SolveConfig,
) -> Result<(NonStationaryPolicy, MultiValueTable), MultiError> {
    if let Some(h) = mdp.horizon() {
        assert!(t_horizon <= h, "solve horizon {t_horizon} exceeds mdp horizon {h}");
    }
    let layouts = dp::layouts_by(mdp, grid, &|t| basis.one_step(t), t_horizon);
    let (term_states, term_nodes) = layouts[t_horizon].clone();
    let quantile_n = match grid.interp() {
        StockInterp::Exact => None,
        StockInterp::LinearQuantile { quantiles } => Some(quantiles),
    };
    let mut slices: Vec<MultiSlice> = Vec::with_capacity(t_horizon + 1);
    slices.push(MultiSlice::terminal(
        t_horizon,
        term_states,
        term_nodes,
        basis.len(),
        mdp.n_actions(),
        f,
        basis.evaluate(t_horizon),
        quantile_n,
    ));
    for t in (0..t_horizon).rev() {
        let (states, nodes) = &layouts[t];
        let slice = multi_backup(mdp, slices.last().unwrap(), f, basis, t, states, nodes, cfg)?;
        if !cfg.keep_distributions {
            slices.last_mut().unwrap().clear_payload();
        }
        slices.push(slice);
    }
    slices.reverse();
    let clamp_count = slices.iter().map(|s| s.clamps).sum();
    let table = MultiValueTable {
        slices,
        stationary: None,
        interp: grid.interp(),
        clamp_count,
    };
    Ok((table.policy(), table))
}

/// Stationary per-head fixed point for the time-inconsistent baseline: a
/// coupled value iteration on a stationary (quotient) model in which every
/// step is treated as step zero. Per sweep, each cell's shared greedy
/// action maximizes the base-weighted comonotone aggregate at discount
/// level one, every head is updated toward `r + gamma_i G_i'` under that
/// action, and laws are held as `quantile_n`-quantile representations on
/// the grid nodes (stock transitions use the `t = 0` factor). Converges
/// when the largest per-head Wasserstein change falls to `tol`.
pub fn stationary_multi_table(
    mdp: &TabularMdp,
    f: &OceUtility,
    basis: &HorizonBasis,
    grid: &StockGrid,
    quantile_n: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<MultiSlice, MultiError> {
    assert!(quantile_n > 0 && tol > 0.0);
    let m = basis.len();
    let gammas = basis.gammas();
    let w_base = basis.base_weights();
    let dhat = basis.one_step(0);
    let states: Vec<usize> = (0..mdp.n_states()).collect();
    let nodes = grid.nodes().to_vec();
    let n = quantile_n;
    let cells = states.len() * nodes.len();
    let width = nodes.len();

    let mut q = vec![0.0f64; cells * m * n];
    let mut actions = vec![0usize; cells];
    let mut objectives = vec![0.0f64; cells];
    let mut clamps = 0usize;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut atoms: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];

    for sweep in 1..=max_sweeps {
        let mut q_new = vec![0.0f64; cells * m * n];
        residual = 0.0;
        for (spos, &s) in states.iter().enumerate() {
            for (j, &c) in nodes.iter().enumerate() {
                let cell = spos * width + j;
                let mut best: Option<ActionLaws> = None;
                for a in mdp.valid_actions(s) {
                    for buf in &mut atoms {
                        buf.clear();
                    }
                    for o in mdp.outcomes(s, a) {
                        let c_next = (c + o.reward) / dhat;
                        let (lo, hi, lambda, clamped) = crate::grid::bracket_in(&nodes, c_next);
                        if clamped {
                            clamps += 1;
                        }
                        let tpos = o.next_state;
                        let w = o.probability / n as f64;
                        for (i, buf) in atoms.iter_mut().enumerate() {
                            let ql = &q[((tpos * width + lo) * m + i) * n..][..n];
                            let qh = &q[((tpos * width + hi) * m + i) * n..][..n];
                            for (&vl, &vh) in ql.iter().zip(qh) {
                                let v = (1.0 - lambda) * vl + lambda * vh;
                                buf.push((o.reward + gammas[i] * v, w));
                            }
                        }
                    }
                    let heads: Vec<ReturnDistribution> = atoms
                        .iter()
                        .map(|buf| {
                            ReturnDistribution::from_atoms(buf.clone())
                                .expect("mixture atoms form a distribution")
                        })
                        .collect();
                    let aggregate = if m == 1 {
                        heads[0].clone()
                    } else {
                        let refs: Vec<&ReturnDistribution> = heads.iter().collect();
                        comonotone_sum(&refs, w_base)
                    };
                    let obj = f.objective(&aggregate, c, 1.0);
                    let better = match &best {
                        None => true,
                        Some(b) => obj > b.objective,
                    };
                    if better {
                        best = Some(ActionLaws { action: a, objective: obj, heads });
                    }
                }
                let best = best.expect("state with no valid action");
                actions[cell] = best.action;
                objectives[cell] = best.objective;
                for (i, h) in best.heads.iter().enumerate() {
                    let proj = h.project_to_quantiles(n);
                    let row = &mut q_new[(cell * m + i) * n..][..n];
                    row.copy_from_slice(proj.values());
                    let old = &q[(cell * m + i) * n..][..n];
                    let w1: f64 = row
                        .iter()
                        .zip(old)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                        / n as f64;
                    residual = residual.max(w1);
                }
            }
        }
        q = q_new;
        if residual <= tol {
            converged = true;
            let _ = sweep;
            break;
        }
    }
    if !converged {
        return Err(MultiError::NoConvergence { sweeps: max_sweeps, residual });
    }

    // Materialization pass: per-action laws from the converged iterate.
    let mut head_dists: Vec<ReturnDistribution> = Vec::with_capacity(cells * m);
    let mut action_dists: Vec<Option<ReturnDistribution>> =
        vec![None; cells * mdp.n_actions() * m];
    for (spos, &s) in states.iter().enumerate() {
        for (j, &c) in nodes.iter().enumerate() {
            let cell = spos * width + j;
            for a in mdp.valid_actions(s) {
                for buf in &mut atoms {
                    buf.clear();
                }
                for o in mdp.outcomes(s, a) {
                    let c_next = (c + o.reward) / dhat;
                    let (lo, hi, lambda, _) = crate::grid::bracket_in(&nodes, c_next);
                    let tpos = o.next_state;
                    let w = o.probability / n as f64;
                    for (i, buf) in atoms.iter_mut().enumerate() {
                        let ql = &q[((tpos * width + lo) * m + i) * n..][..n];
                        let qh = &q[((tpos * width + hi) * m + i) * n..][..n];
                        for (&vl, &vh) in ql.iter().zip(qh) {
                            let v = (1.0 - lambda) * vl + lambda * vh;
                            buf.push((o.reward + gammas[i] * v, w));
                        }
                    }
                }
                for (i, buf) in atoms.iter().enumerate() {
                    let dist = ReturnDistribution::from_atoms(buf.clone())
                        .expect("mixture atoms form a distribution");
                    action_dists[(cell * mdp.n_actions() + a) * m + i] =
                        Some(dist.project_to_quantiles(n).to_distribution());
                }
            }
            for i in 0..m {
                let row = &q[(cell * m + i) * n..][..n];
                head_dists.push(
                    crate::dist::QuantileRepresentation::new(row.to_vec()).to_distribution(),
                );
            }
        }
    }
    Ok(MultiSlice {
        t: 0,
        states,
        nodes,
        m,
        n_actions: mdp.n_actions(),
        objectives,
        actions,
        head_dists,
        head_quantiles: Vec::new(),
        quantile_n: None,
        action_dists,
        clamps,
        epsilon: residual,
    })
}

/// How an agent mixes its per-head laws when choosing an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Time-`t` weights against the time-indexed table: honors the
    /// committed time-0 objective.
    TimeConsistent,
    /// Base weights against the stationary table, ignoring `t`: the
    /// baseline whose local objective resets every step.
    TimeInconsistent,
    /// Base weights against the time-indexed table: isolates the weight
    /// schedule from the time feature.
    TimeAwareInconsistent,
}

impl FromStr for SelectMode {
    type Err = MultiError;

    fn from_str(s: &str) -> Result<Self, MultiError> {
        match s {
            "time_consistent" => Ok(SelectMode::TimeConsistent),
            "time_inconsistent" => Ok(SelectMode::TimeInconsistent),
            "time_aware_inconsistent" => Ok(SelectMode::TimeAwareInconsistent),
            _ => Err(MultiError::UnknownMode { mode: s.to_string() }),
        }
    }
}

impl fmt::Display for SelectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SelectMode::TimeConsistent => "time_consistent",
            SelectMode::TimeInconsistent => "time_inconsistent",
            SelectMode::TimeAwareInconsistent => "time_aware_inconsistent",
        };
        f.write_str(s)
    }
}

/// Picks an action at `(s, c, t)` by re-mixing the stored per-action
/// per-head laws under the mode's weights (nearest-node stock resolution,
/// objective evaluated at the node's stock). Time-inconsistent selection
/// reads the attached stationary slice at discount level one; the other
/// modes read `table.slices[t]`.
pub fn select_action(
    mode: SelectMode,
    table: &MultiValueTable,
    basis: &HorizonBasis,
    s: usize,
    c: f64,
    t: usize,
    f: &OceUtility,
) -> Result<usize, MultiError> {
    let slice = match mode {
        SelectMode::TimeInconsistent => {
            table.stationary.as_ref().ok_or(MultiError::MissingStationaryTable)?
        }
        _ => {
            let slice = table.slices.get(t).ok_or(MultiError::EpochOutOfRange { t })?;
            if slice.actions.is_empty() {
                return Err(MultiError::EpochOutOfRange { t });
            }
            slice
        }
    };
    if slice.action_dists.is_empty() {
        return Err(MultiError::MissingDistributions);
    }
    let pos = slice
        .state_pos(s)
        .ok_or(DpError::MissingCell { t: slice.t, state: s })?;
    let j = crate::grid::nearest_in(&slice.nodes, c);
    let cell = slice.cell(pos, j);
    let node_c = slice.nodes[j];
    let m = slice.m;
    let (weights, level) = match mode {
        SelectMode::TimeConsistent => (basis.time_weights(t), basis.evaluate(t)),
        _ => (basis.base_weights().to_vec(), 1.0),
    };
    let mut best: Option<(usize, f64)> = None;
    for a in 0..slice.n_actions {
        let row = &slice.action_dists[(cell * slice.n_actions + a) * m..][..m];
        if row.iter().any(|d| d.is_none()) {
            continue;
        }
        let refs: Vec<&ReturnDistribution> =
            row.iter().map(|d| d.as_ref().expect("checked above")).collect();
        let aggregate = if m == 1 { refs[0].clone() } else { comonotone_sum(&refs, &weights) };
        let obj = f.objective(&aggregate, node_c, level);
        let better = match best {
            None => true,
            Some((_, b)) => obj > b,
        };
        if better {
            best = Some((a, obj));
        }
    }
    best.map(|(a, _)| a)
        .ok_or(MultiError::Dp(DpError::MissingCell { t: slice.t, state: s }))
}
