//! Stock-augmented distributional backward induction.
//!
//! The solver works on the augmented state `(s, c)` where the stock `c`
//! accumulates discount-scaled rewards:
//!
//! ```text
//! c' = stock_update(c, r, d, t) = (c + r) / dhat_t
//! ```
//!
//! Each table cell holds the law of the normalized tail return `G_t`, which
//! obeys `G_t = R + dhat_t G_{t+1}` with terminal `G_T = 0`; the telescoped
//! products of `dhat` reproduce `G_0 = sum_t d_t R_{t+1}`. Action selection
//! maximizes `objective(f, law, c, d_t)` per cell, ties broken toward the
//! lowest action index so runs are bit-reproducible.
//!
//! Two stock-resolution modes, chosen by the grid's [`StockInterp`]:
//!
//! - `Exact`: per-slice node sets are the exact closure of `stock_update`
//!   over the per-step reachable reward supports, starting from the grid's
//!   nodes as time-0 candidates. No interpolation error; lookups are
//!   bitwise. Intended for small or reward-sparse instances.
//! - `LinearQuantile { quantiles: n }`: one fixed node set; each cell stores
//!   an `n`-quantile equal-weight representation, off-node lookups linearly
//!   interpolate quantile values between the bracketing nodes, and escapes
//!   clamp to the boundary while incrementing a per-run clamp counter.
//!   Projection and interpolation sizes are surfaced as per-slice `epsilon`
//!   diagnostics.

use crate::discount::DiscountFunction;
use crate::dist::ReturnDistribution;
use crate::grid::{StockGrid, StockInterp};
use crate::mdp::TabularMdp;
use crate::risk::OceUtility;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("policy chose invalid action {action} at (t={t}, state={state})")]
    InvalidPolicyAction { t: usize, state: usize, action: usize },
    #[error("state {state} has no row in the slice at t={t}")]
    MissingCell { t: usize, state: usize },
}

/// `(c + r) / dhat_t`.
#[inline]
pub fn stock_update(c: f64, r: f64, d: &DiscountFunction, t: usize) -> f64 {
    (c + r) / d.one_step(t)
}

/// `d_t (c + g)`: the time-0 outcome implied by the time-`t` pair, constant
/// along a trajectory.
#[inline]
pub fn anytime_outcome(c: f64, g: f64, d: &DiscountFunction, t: usize) -> f64 {
    d.evaluate(t) * (c + g)
}

/// Knobs for [`backward_induction`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Keep every slice's distribution payload. When false, only the t=0
    /// slice retains distributions (policies and objectives are always
    /// kept), which matters on large layered models.
    pub keep_distributions: bool,
    /// Exact-mode mixtures exceeding this atom count are projected down to
    /// it, trading exactness for memory; the incurred Wasserstein error is
    /// added to the slice epsilon diagnostic.
    pub atom_cap: Option<usize>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { keep_distributions: true, atom_cap: None }
    }
}

/// One time slice of the value table: rows for the states reachable at `t`,
/// columns for that slice's stock nodes, and per-cell objective, action,
/// and return-law payload (`dists` in exact mode, flat `quantiles` rows of
/// length `quantile_n` in interpolated mode).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slice {
    pub t: usize,
    pub states: Vec<usize>,
    pub nodes: Vec<f64>,
    /// `objective(f, law, c, d_t)` per cell, row-major `[state][node]`.
    pub objectives: Vec<f64>,
    /// Chosen action per cell; empty in the terminal slice.
    pub actions: Vec<usize>,
    pub dists: Vec<ReturnDistribution>,
    pub quantiles: Vec<f64>,
    pub quantile_n: Option<usize>,
    /// Boundary clamps performed while looking up successor cells.
    pub clamps: usize,
    /// Max per-cell Wasserstein charge of this slice's projections plus
    /// interpolated lookups (a diagnostic surrogate for the per-step error
    /// eps_t: the projection part is exact, the interpolation part is the
    /// bracket-spread heuristic min(lambda, 1-lambda) * W1(lo, hi)).
    pub epsilon: f64,
}

impl Slice {
    pub fn n_cells(&self) -> usize {
        self.states.len() * self.nodes.len()
    }

    pub fn state_pos(&self, state: usize) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }

    fn node_pos_exact(&self, c: f64) -> usize {
        self.nodes
            .binary_search_by(|x| x.total_cmp(&c))
            .unwrap_or_else(|_| panic!("stock {c} not in exact node set at t={}", self.t))
    }

    pub fn cell(&self, state_pos: usize, node_idx: usize) -> usize {
        state_pos * self.nodes.len() + node_idx
    }

    /// Materializes the cell's return law (equal-weight atoms in
    /// interpolated mode).
    pub fn dist_at(&self, state_pos: usize, node_idx: usize) -> ReturnDistribution {
        let cell = self.cell(state_pos, node_idx);
        match self.quantile_n {
            Some(n) => {
                let values = self.quantiles[cell * n..(cell + 1) * n].to_vec();
                crate::dist::QuantileRepresentation::new(values).to_distribution()
            }
            None => self.dists[cell].clone(),
        }
    }

    fn clear_payload(&mut self) {
        self.dists = Vec::new();
        self.quantiles = Vec::new();
    }

    /// Terminal slice: every law is `delta_0`, objective `f(d_t c) / d_t`.
    pub fn terminal(
        t: usize,
        states: Vec<usize>,
        nodes: Vec<f64>,
        f: &OceUtility,
        d: &DiscountFunction,
        quantile_n: Option<usize>,
    ) -> Slice {
        let zero = ReturnDistribution::dirac(0.0);
        let cells = states.len() * nodes.len();
        let d_t = d.evaluate(t);
        let mut objectives = Vec::with_capacity(cells);
        for _ in 0..states.len() {
            for &c in &nodes {
                objectives.push(f.objective(&zero, c, d_t));
            }
        }
        let (dists, quantiles) = match quantile_n {
            Some(n) => (Vec::new(), vec![0.0; cells * n]),
            None => (vec![zero; cells], Vec::new()),
        };
        Slice {
            t,
            states,
            nodes,
            objectives,
            actions: Vec::new(),
            dists,
            quantiles,
            quantile_n,
            clamps: 0,
            epsilon: 0.0,
        }
    }
}

/// Chooses an action per augmented state; `t` indexes the decision epoch.
pub trait Policy {
    fn action(&self, t: usize, state: usize, stock: f64) -> usize;
}

impl<F: Fn(usize, usize, f64) -> usize> Policy for F {
    fn action(&self, t: usize, state: usize, stock: f64) -> usize {
        self(t, state, stock)
    }
}

/// Stationary stock-dependent policy: dense `[state][node]` action table
/// with nearest-node stock resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryStockPolicy {
    pub nodes: Vec<f64>,
    /// `n_states * nodes.len()` actions.
    pub actions: Vec<usize>,
}

impl StationaryStockPolicy {
    pub fn action(&self, state: usize, stock: f64) -> usize {
        let j = crate::grid::nearest_in(&self.nodes, stock);
        self.actions[state * self.nodes.len() + j]
    }
}

/// One decision epoch of a non-stationary policy, laid out like the value
/// slice it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySlice {
    pub t: usize,
    pub states: Vec<usize>,
    pub nodes: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Head of per-epoch action tables, optionally followed by a stationary
/// tail from the switch time `head.len()` on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonStationaryPolicy {
    pub head: Vec<PolicySlice>,
    pub tail: Option<StationaryStockPolicy>,
}

impl Policy for NonStationaryPolicy {
    fn action(&self, t: usize, state: usize, stock: f64) -> usize {
        if let Some(slice) = self.head.get(t) {
            let pos = slice
                .states
                .binary_search(&state)
                .unwrap_or_else(|_| panic!("state {state} unreachable at t={t}"));
            let j = crate::grid::nearest_in(&slice.nodes, stock);
            slice.actions[pos * slice.nodes.len() + j]
        } else {
            match &self.tail {
                Some(tail) => tail.action(state, stock),
                None => panic!("policy has no epoch t={t} and no stationary tail"),
            }
        }
    }
}

/// Full backward-induction output: slices `t = 0..=T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTable {
    pub slices: Vec<Slice>,
    pub interp: StockInterp,
    pub clamp_count: usize,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.slices.len() - 1
    }

    /// Objective at `(t, state)` with nearest-node stock resolution.
    pub fn objective_at(&self, t: usize, state: usize, stock: f64) -> f64 {
        let slice = &self.slices[t];
        let pos = slice.state_pos(state).expect("state not in slice");
        let j = crate::grid::nearest_in(&slice.nodes, stock);
        slice.objectives[slice.cell(pos, j)]
    }

    /// `max_c { -c + objective(s0, c, t=0) }` over the time-0 nodes; with
    /// `d_0 = 1` the cell objective is `E[f(c + G_0)]`, so this is the OCE
    /// value of the solved problem. Ties break toward the smallest node.
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

    /// Per-slice epsilon diagnostics, index = t.
    pub fn epsilons(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.epsilon).collect()
    }

    /// Greedy policy recorded during the solve (head only, no tail).
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

    /// Flat `(t, state, stock, action, objective)` rows for CSV export;
    /// terminal cells carry no action.
    pub fn export_rows(&self) -> Vec<(usize, usize, f64, Option<usize>, f64)> {
        let mut rows = Vec::new();
        for slice in &self.slices {
            for (pos, &s) in slice.states.iter().enumerate() {
                for (j, &c) in slice.nodes.iter().enumerate() {
                    let cell = slice.cell(pos, j);
                    let a = if slice.actions.is_empty() { None } else { Some(slice.actions[cell]) };
                    rows.push((slice.t, s, c, a, slice.objectives[cell]));
                }
            }
        }
        rows
    }
}

/// Per-slice `(states, nodes)` layouts for a `T`-step solve: states from
/// forward reachability, nodes either the fixed grid (interpolated mode) or
/// the exact closure of `stock_update` over per-step reachable reward
/// supports seeded by the grid nodes (exact mode).
pub fn layouts(
    mdp: &TabularMdp,
    grid: &StockGrid,
    d: &DiscountFunction,
    t_horizon: usize,
) -> Vec<(Vec<usize>, Vec<f64>)> {
    layouts_by(mdp, grid, &|t| d.one_step(t), t_horizon)
}

/// [`layouts`] driven by a bare one-step factor function; shared with the
/// multi-horizon solver, whose factors come from a basis rather than a
/// single curve.
pub(crate) fn layouts_by(
    mdp: &TabularMdp,
    grid: &StockGrid,
    one_step: &dyn Fn(usize) -> f64,
    t_horizon: usize,
) -> Vec<(Vec<usize>, Vec<f64>)> {
    let states = mdp.reachable_states(t_horizon);
    match grid.interp() {
        StockInterp::LinearQuantile { .. } => states
            .into_iter()
            .map(|layer| (layer, grid.nodes().to_vec()))
            .collect(),
        StockInterp::Exact => {
            let mut out = Vec::with_capacity(t_horizon + 1);
            let mut nodes = grid.nodes().to_vec();
            for (t, layer) in states.iter().enumerate() {
                out.push((layer.clone(), nodes.clone()));
                if t == t_horizon {
                    break;
                }
                let mut rewards: Vec<f64> = Vec::new();
                for &s in layer {
                    for a in mdp.valid_actions(s) {
                        for o in mdp.outcomes(s, a) {
                            rewards.push(o.reward);
                        }
                    }
                }
                rewards.sort_by(f64::total_cmp);
                rewards.dedup_by(|a, b| a.total_cmp(b).is_eq());
                let mut next: Vec<f64> = Vec::with_capacity(nodes.len() * rewards.len());
                for &c in &nodes {
                    for &r in &rewards {
                        next.push((c + r) / one_step(t));
                    }
                }
                next.sort_by(f64::total_cmp);
                next.dedup_by(|a, b| a.total_cmp(b).is_eq());
                nodes = next;
            }
            out
        }
    }
}

enum BackupMode<'a> {
    Greedy,
    Fixed(&'a dyn Fn(usize, usize, f64) -> usize),
}

/// One backward step: builds the slice at `t` from the slice at `t+1`.
fn backup(
    mdp: &TabularMdp,
    eta_next: &Slice,
    f: &OceUtility,
    d: &DiscountFunction,
    t: usize,
    states: &[usize],
    nodes: &[f64],
    cfg: &SolveConfig,
    mode: BackupMode,
) -> Result<Slice, DpError> {
    let quantile_n = eta_next.quantile_n;
    let d_t = d.evaluate(t);
    let dhat = d.one_step(t);
    let cells = states.len() * nodes.len();
    let mut objectives = Vec::with_capacity(cells);
    let mut actions = Vec::with_capacity(cells);
    let mut dists: Vec<ReturnDistribution> = Vec::new();
    let mut quantiles: Vec<f64> = Vec::new();
    if quantile_n.is_none() {
        dists.reserve(cells);
    } else {
        quantiles.reserve(cells * quantile_n.unwrap());
    }
    let mut clamps = 0usize;
    let mut epsilon = 0.0f64;
    let next_w = eta_next.nodes.len();

    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &s in states {
        for &c in nodes {
            let mut best: Option<(usize, f64, ReturnDistribution)> = None;
            let mut cell_charge = 0.0f64;
            let candidates: Vec<usize> = match &mode {
                BackupMode::Greedy => mdp.valid_actions(s).collect(),
                BackupMode::Fixed(p) => {
                    let a = p(t, s, c);
                    if a >= mdp.n_actions() || !mdp.is_valid_action(s, a) {
                        return Err(DpError::InvalidPolicyAction { t, state: s, action: a });
                    }
                    vec![a]
                }
            };
            for a in candidates {
                atoms.clear();
                for o in mdp.outcomes(s, a) {
                    let c_next = stock_update(c, o.reward, d, t);
                    let spos = eta_next
                        .state_pos(o.next_state)
                        .ok_or(DpError::MissingCell { t: t + 1, state: o.next_state })?;
                    match quantile_n {
                        None => {
                            let j = eta_next.node_pos_exact(c_next);
                            for &(v, p) in eta_next.dists[spos * next_w + j].atoms() {
                                atoms.push((o.reward + dhat * v, o.probability * p));
                            }
                        }
                        Some(n) => {
                            let (lo, hi, lambda, clamped) = eta_next.bracket(c_next);
                            if clamped {
                                clamps += 1;
                            }
                            let ql = &eta_next.quantiles
                                [(spos * next_w + lo) * n..(spos * next_w + lo + 1) * n];
                            let qh = &eta_next.quantiles
                                [(spos * next_w + hi) * n..(spos * next_w + hi + 1) * n];
                            let w = o.probability / n as f64;
                            if lambda == 0.0 {
                                for &v in ql {
                                    atoms.push((o.reward + dhat * v, w));
                                }
                            } else {
                                let mut spread = 0.0;
                                for (&vl, &vh) in ql.iter().zip(qh) {
                                    let v = (1.0 - lambda) * vl + lambda * vh;
                                    atoms.push((o.reward + dhat * v, w));
                                    spread += (vh - vl).abs();
                                }
                                // Bracket-spread heuristic for the lerp error.
                                cell_charge =
                                    cell_charge.max(lambda.min(1.0 - lambda) * spread / n as f64);
                            }
                        }
                    }
                }
                let dist = ReturnDistribution::from_atoms(atoms.clone())
                    .expect("mixture atoms form a distribution");
                let obj = f.objective(&dist, c, d_t);
                let better = match &best {
                    None => true,
                    Some((_, b, _)) => obj > *b,
                };
                if better {
                    best = Some((a, obj, dist));
                }
            }
            let (a, obj, dist) = best.expect("reachable state with no valid action");
            objectives.push(obj);
            actions.push(a);
            match quantile_n {
                None => {
                    let stored = match cfg.atom_cap {
                        Some(cap) if dist.len() > cap => {
                            let capped = dist.clone().capped(cap);
                            cell_charge = cell_charge.max(dist.wasserstein1(&capped));
                            capped
                        }
                        _ => dist,
                    };
                    dists.push(stored);
                }
                Some(n) => {
                    let proj = dist.project_to_quantiles(n);
                    cell_charge = cell_charge.max(dist.wasserstein1(&proj.to_distribution()));
                    quantiles.extend_from_slice(proj.values());
                }
            }
            epsilon = epsilon.max(cell_charge);
        }
    }
    Ok(Slice {
        t,
        states: states.to_vec(),
        nodes: nodes.to_vec(),
        objectives,
        actions,
        dists,
        quantiles,
        quantile_n,
        clamps,
        epsilon,
    })
}

impl Slice {
    /// Bracketing node pair and weight for an off-node stock, clamped to
    /// the boundary.
    fn bracket(&self, c: f64) -> (usize, usize, f64, bool) {
        crate::grid::bracket_in(&self.nodes, c)
    }
}

/// Fixed-policy one-step distributional operator: evaluates `policy` at
/// every `(state, node)` cell of the target layout.
pub fn bellman_apply<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    eta_next: &Slice,
    f: &OceUtility,
    d: &DiscountFunction,
    t: usize,
    states: &[usize],
    nodes: &[f64],
    cfg: &SolveConfig,
) -> Result<Slice, DpError> {
    let choose = |t: usize, s: usize, c: f64| policy.action(t, s, c);
    backup(mdp, eta_next, f, d, t, states, nodes, cfg, BackupMode::Fixed(&choose))
}

/// Greedy one-step operator: per cell, keeps the argmax action's law and
/// objective, ties toward the lowest action index.
pub fn greedy_step(
    mdp: &TabularMdp,
    eta_next: &Slice,
    f: &OceUtility,
    d: &DiscountFunction,
    t: usize,
    states: &[usize],
    nodes: &[f64],
    cfg: &SolveConfig,
) -> Slice {
    backup(mdp, eta_next, f, d, t, states, nodes, cfg, BackupMode::Greedy)
        .expect("greedy backup cannot fail on validated mdp")
}

/// Exact finite-horizon solve: terminal `delta_0` at `t = T`, then greedy
/// steps down to `t = 0`. Returns the greedy policy and the full table.
pub fn backward_induction(
    mdp: &TabularMdp,
    f: &OceUtility,
    d: &DiscountFunction,
    grid: &StockGrid,
    t_horizon: usize,
    cfg: &SolveConfig,
) -> (NonStationaryPolicy, ValueTable) {
    backward_induction_perturbed(mdp, f, d, grid, t_horizon, cfg, &mut |_, _| {})
}

/// [`backward_induction`] with a hook applied to each finished slice before
/// it feeds the next backward step — a harness for injecting controlled
/// per-step perturbations in bound experiments. The hook must preserve the
/// slice layout; objectives are re-derived from the (possibly mutated)
/// payload so the recorded values stay consistent.
pub fn backward_induction_perturbed(
    mdp: &TabularMdp,
    f: &OceUtility,
    d: &DiscountFunction,
    grid: &StockGrid,
    t_horizon: usize,
    cfg: &SolveConfig,
    perturb: &mut dyn FnMut(usize, &mut Slice),
) -> (NonStationaryPolicy, ValueTable) {
    if let Some(h) = mdp.horizon() {
        assert!(t_horizon <= h, "solve horizon {t_horizon} exceeds mdp horizon {h}");
    }
    let layouts = layouts(mdp, grid, d, t_horizon);
    let (term_states, term_nodes) = layouts[t_horizon].clone();
    let quantile_n = match grid.interp() {
        StockInterp::Exact => None,
        StockInterp::LinearQuantile { quantiles } => Some(quantiles),
    };
    let mut slices: Vec<Slice> = Vec::with_capacity(t_horizon + 1);
    let mut current = Slice::terminal(t_horizon, term_states, term_nodes, f, d, quantile_n);
    perturb(t_horizon, &mut current);
    slices.push(current);
    for t in (0..t_horizon).rev() {
        let (states, nodes) = &layouts[t];
        let mut slice = greedy_step(mdp, slices.last().unwrap(), f, d, t, states, nodes, cfg);
        perturb(t, &mut slice);
        if !cfg.keep_distributions {
            slices.last_mut().unwrap().clear_payload();
        }
        slices.push(slice);
    }
    slices.reverse();
    let clamp_count = slices.iter().map(|s| s.clamps).sum();
    let table = ValueTable { slices, interp: grid.interp(), clamp_count };
    (table.policy(), table)
}

/// Exact finite-horizon policy evaluation: terminal `delta_0` at `t = T`,
/// then fixed-policy backups down to `t = 0`. The returned table holds
/// `eta^pi` instead of the greedy `eta^*`; its action columns echo the
/// evaluated policy's choices.
pub fn policy_evaluation<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    f: &OceUtility,
    d: &DiscountFunction,
    grid: &StockGrid,
    t_horizon: usize,
    cfg: &SolveConfig,
) -> Result<ValueTable, DpError> {
    if let Some(h) = mdp.horizon() {
        assert!(t_horizon <= h, "evaluation horizon {t_horizon} exceeds mdp horizon {h}");
    }
    let layouts = layouts(mdp, grid, d, t_horizon);
    let (term_states, term_nodes) = layouts[t_horizon].clone();
    let quantile_n = match grid.interp() {
        StockInterp::Exact => None,
        StockInterp::LinearQuantile { quantiles } => Some(quantiles),
    };
    let mut slices: Vec<Slice> = Vec::with_capacity(t_horizon + 1);
    slices.push(Slice::terminal(t_horizon, term_states, term_nodes, f, d, quantile_n));
    for t in (0..t_horizon).rev() {
        let (states, nodes) = &layouts[t];
        let slice = bellman_apply(mdp, policy, slices.last().unwrap(), f, d, t, states, nodes, cfg)?;
        if !cfg.keep_distributions {
            slices.last_mut().unwrap().clear_payload();
        }
        slices.push(slice);
    }
    slices.reverse();
    let clamp_count = slices.iter().map(|s| s.clamps).sum();
    Ok(ValueTable { slices, interp: grid.interp(), clamp_count })
}
