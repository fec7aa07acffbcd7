//! Finite tabular MDPs.
//!
//! A model is a dense `(state, action)` table of outcome lists
//! `(next_state, reward, probability)`. An empty list marks an invalid
//! action in that state, which lets environments with state-dependent
//! action sets share one rectangular action space.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("state {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("action {action} invalid in state {state}")]
    InvalidAction { state: usize, action: usize },
    #[error("state {state} has no valid action")]
    NoValidAction { state: usize },
    #[error("outgoing probabilities for ({state}, {action}) sum to {sum}")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("negative probability {probability} at ({state}, {action})")]
    NegativeProbability { state: usize, action: usize, probability: f64 },
    #[error("reward {reward} at ({state}, {action}) outside declared bounds ({lo}, {hi})")]
    RewardOutOfBounds { state: usize, action: usize, reward: f64, lo: f64, hi: f64 },
    #[error("degenerate spec: {0}")]
    Degenerate(&'static str),
}

/// One branch of a transition: probability of landing in `next_state` with
/// an immediate `reward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, f64, f64)", into = "(usize, f64, f64)")]
pub struct Outcome {
    pub next_state: usize,
    pub reward: f64,
    pub probability: f64,
}

impl From<(usize, f64, f64)> for Outcome {
    fn from((next_state, reward, probability): (usize, f64, f64)) -> Self {
        Outcome { next_state, reward, probability }
    }
}

impl From<Outcome> for (usize, f64, f64) {
    fn from(o: Outcome) -> Self {
        (o.next_state, o.reward, o.probability)
    }
}

/// Finite MDP with dense `(s, a)` outcome rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row `s * n_actions + a`; empty row = invalid action.
    transitions: Vec<Vec<Outcome>>,
    /// `Some(T)` for episodic models with decisions at `t = 0..T`, `None`
    /// for stationary unbounded ones.
    horizon: Option<usize>,
    initial_state: usize,
    reward_bounds: (f64, f64),
}

impl TabularMdp {
    /// Builds and validates a model; reward bounds are the tight envelope
    /// of the rewards present (`(0, 0)` for a rewardless model).
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<Outcome>>,
        horizon: Option<usize>,
        initial_state: usize,
    ) -> Result<Self, MdpError> {
        if n_states == 0 {
            return Err(MdpError::Degenerate("zero states"));
        }
        if n_actions == 0 {
            return Err(MdpError::Degenerate("zero actions"));
        }
        if transitions.len() != n_states * n_actions {
            return Err(MdpError::Degenerate("transition table shape mismatch"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &transitions {
            for o in row {
                lo = lo.min(o.reward);
                hi = hi.max(o.reward);
            }
        }
        if lo > hi {
            lo = 0.0;
            hi = 0.0;
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transitions,
            horizon,
            initial_state,
            reward_bounds: (lo, hi),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks row sums (1e-12), probability signs, index ranges, reward
    /// bounds, and that every state keeps at least one valid action.
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.initial_state >= self.n_states {
            return Err(MdpError::StateOutOfRange {
                state: self.initial_state,
                n_states: self.n_states,
            });
        }
        let (lo, hi) = self.reward_bounds;
        for s in 0..self.n_states {
            let mut any = false;
            for a in 0..self.n_actions {
                let row = &self.transitions[s * self.n_actions + a];
                if row.is_empty() {
                    continue;
                }
                any = true;
                let mut sum = 0.0;
                for o in row {
                    if o.probability < 0.0 {
                        return Err(MdpError::NegativeProbability {
                            state: s,
                            action: a,
                            probability: o.probability,
                        });
                    }
                    if o.next_state >= self.n_states {
                        return Err(MdpError::StateOutOfRange {
                            state: o.next_state,
                            n_states: self.n_states,
                        });
                    }
                    if o.reward < lo || o.reward > hi {
                        return Err(MdpError::RewardOutOfBounds {
                            state: s,
                            action: a,
                            reward: o.reward,
                            lo,
                            hi,
                        });
                    }
                    sum += o.probability;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(MdpError::RowSum { state: s, action: a, sum });
                }
            }
            if !any {
                return Err(MdpError::NoValidAction { state: s });
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    /// Outcome row of `(s, a)`; empty when the action is invalid there.
    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn is_valid_action(&self, s: usize, a: usize) -> bool {
        !self.transitions[s * self.n_actions + a].is_empty()
    }

    pub fn valid_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.is_valid_action(s, a))
    }

    /// Draws one transition from the exact kernel.
    pub fn sample_transition<R: Rng>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<(usize, f64), MdpError> {
        if s >= self.n_states {
            return Err(MdpError::StateOutOfRange { state: s, n_states: self.n_states });
        }
        let row = &self.transitions[s * self.n_actions + a];
        if row.is_empty() {
            return Err(MdpError::InvalidAction { state: s, action: a });
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in row {
            acc += o.probability;
            if u < acc {
                return Ok((o.next_state, o.reward));
            }
        }
        let last = row.last().unwrap();
        Ok((last.next_state, last.reward))
    }

    /// States reachable from the initial state after exactly `t` steps
    /// under any sequence of valid actions, for `t = 0..=max_t`. Each layer
    /// is sorted and deduplicated.
    pub fn reachable_states(&self, max_t: usize) -> Vec<Vec<usize>> {
        let mut layers = Vec::with_capacity(max_t + 1);
        layers.push(vec![self.initial_state]);
        for t in 0..max_t {
            let mut mask = vec![false; self.n_states];
            for &s in &layers[t] {
                for a in self.valid_actions(s) {
                    for o in self.outcomes(s, a) {
                        if o.probability > 0.0 {
                            mask[o.next_state] = true;
                        }
                    }
                }
            }
            layers.push((0..self.n_states).filter(|&s| mask[s]).collect());
        }
        layers
    }
}

/// Spec for the seeded random-chain generator used as a test substrate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Branches per `(s, a)` row.
    pub outcomes_per_action: usize,
    pub reward_range: (f64, f64),
    pub horizon: usize,
}

/// Deterministic-from-seed random MDP: every action valid everywhere,
/// successors uniform, rewards uniform over `reward_range` (degenerate
/// range pins them exactly), branch probabilities bounded away from zero
/// with the final branch closing the row sum to exactly 1.
pub fn build_chain_mdp(spec: &ChainMdpSpec, seed: u64) -> Result<TabularMdp, MdpError> {
    if spec.n_states == 0 {
        return Err(MdpError::Degenerate("zero states"));
    }
    if spec.n_actions == 0 {
        return Err(MdpError::Degenerate("zero actions"));
    }
    if spec.outcomes_per_action == 0 {
        return Err(MdpError::Degenerate("zero outcomes per action"));
    }
    if !(spec.reward_range.0 <= spec.reward_range.1) {
        return Err(MdpError::Degenerate("empty reward range"));
    }
    let mut rng = crate::rng::stream(seed, crate::rng::streams::ENV);
    let (r_lo, r_hi) = spec.reward_range;
    let mut transitions = Vec::with_capacity(spec.n_states * spec.n_actions);
    for _ in 0..spec.n_states * spec.n_actions {
        let k = spec.outcomes_per_action;
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut row: Vec<Outcome> = (0..k)
            .map(|j| Outcome {
                next_state: rng.gen_range(0..spec.n_states),
                reward: if r_lo == r_hi { r_lo } else { rng.gen_range(r_lo..r_hi) },
                probability: weights[j] / total,
            })
            .collect();
        let head: f64 = row[..k - 1].iter().map(|o| o.probability).sum();
        row[k - 1].probability = 1.0 - head;
        transitions.push(row);
    }
    TabularMdp::new(spec.n_states, spec.n_actions, transitions, Some(spec.horizon), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_state() -> TabularMdp {
        // Action 0 flips states for reward 1, action 1 stays put for 0 and
        // is only valid in state 0.
        let t = vec![
            vec![Outcome::from((1, 1.0, 1.0))],
            vec![Outcome::from((0, 0.0, 1.0))],
            vec![Outcome::from((0, 1.0, 0.5)), Outcome::from((1, 0.0, 0.5))],
            vec![],
        ];
        TabularMdp::new(2, 2, t, Some(5), 0).unwrap()
    }

    #[test]
    fn construction_and_accessors() {
        let m = two_state();
        assert_eq!(m.n_states(), 2);
        assert_eq!(m.n_actions(), 2);
        assert_eq!(m.horizon(), Some(5));
        assert_eq!(m.reward_bounds(), (0.0, 1.0));
        assert!(m.is_valid_action(0, 1));
        assert!(!m.is_valid_action(1, 1));
        assert_eq!(m.valid_actions(1).collect::<Vec<_>>(), vec![0]);
        assert_eq!(m.outcomes(1, 0)[0].next_state, 0);
    }

    #[test]
    fn validation_catches_bad_rows() {
        let bad_sum = vec![vec![Outcome::from((0, 0.0, 0.5))]];
        assert!(matches!(
            TabularMdp::new(1, 1, bad_sum, None, 0),
            Err(MdpError::RowSum { sum, .. }) if (sum - 0.5).abs() < 1e-15
        ));
        let bad_state = vec![vec![Outcome::from((3, 0.0, 1.0))]];
        assert!(matches!(
            TabularMdp::new(1, 1, bad_state, None, 0),
            Err(MdpError::StateOutOfRange { state: 3, .. })
        ));
        let no_action = vec![vec![], vec![Outcome::from((0, 0.0, 1.0))]];
        assert!(matches!(
            TabularMdp::new(2, 1, no_action, None, 0),
            Err(MdpError::NoValidAction { state: 0 })
        ));
        assert!(matches!(TabularMdp::new(1, 0, vec![], None, 0), Err(MdpError::Degenerate(_))));
    }

    #[test]
    fn deterministic_kernel_sampling() {
        let m = two_state();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..32 {
            assert_eq!(m.sample_transition(0, 0, &mut rng).unwrap(), (1, 1.0));
        }
        assert_eq!(
            m.sample_transition(1, 1, &mut rng),
            Err(MdpError::InvalidAction { state: 1, action: 1 })
        );
    }

    #[test]
    fn sampling_frequencies_match_kernel() {
        let spec = ChainMdpSpec {
            n_states: 4,
            n_actions: 2,
            outcomes_per_action: 3,
            reward_range: (-1.0, 1.0),
            horizon: 10,
        };
        let m = build_chain_mdp(&spec, 99).unwrap();
        let row = m.outcomes(2, 1).to_vec();
        let n = 1_000_000usize;
        let mut counts = vec![0usize; row.len()];
        let mut rng = crate::rng::stream(99, crate::rng::streams::EVAL_BASE);
        for _ in 0..n {
            let (s, r) = m.sample_transition(2, 1, &mut rng).unwrap();
            let j = row
                .iter()
                .position(|o| o.next_state == s && o.reward == r)
                .expect("sample off kernel support");
            counts[j] += 1;
        }
        for (j, o) in row.iter().enumerate() {
            let p = o.probability;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[j] as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 4.0 * sigma,
                "branch {j}: freq {freq} vs p {p} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn chain_generator_is_deterministic_and_valid() {
        let spec = ChainMdpSpec {
            n_states: 6,
            n_actions: 3,
            outcomes_per_action: 2,
            reward_range: (0.0, 2.0),
            horizon: 8,
        };
        let a = build_chain_mdp(&spec, 5).unwrap();
        let b = build_chain_mdp(&spec, 5).unwrap();
        assert_eq!(a, b);
        let c = build_chain_mdp(&spec, 6).unwrap();
        assert_ne!(a, c);
        a.validate().unwrap();
        for s in 0..a.n_states() {
            for act in 0..a.n_actions() {
                let sum: f64 = a.outcomes(s, act).iter().map(|o| o.probability).sum();
                assert_eq!(sum, 1.0);
            }
        }
    }

    #[test]
    fn single_state_chain_is_exact() {
        let spec = ChainMdpSpec {
            n_states: 1,
            n_actions: 1,
            outcomes_per_action: 1,
            reward_range: (1.0, 1.0),
            horizon: 3,
        };
        let m = build_chain_mdp(&spec, 0).unwrap();
        assert_eq!(m.outcomes(0, 0), &[Outcome::from((0, 1.0, 1.0))]);
        assert_eq!(m.reward_bounds(), (1.0, 1.0));
    }

    #[test]
    fn reachability_layers() {
        // 0 -> 1 -> 2 -> 2 along a line.
        let t = vec![
            vec![Outcome::from((1, 0.0, 1.0))],
            vec![Outcome::from((2, 0.0, 1.0))],
            vec![Outcome::from((2, 0.0, 1.0))],
        ];
        let m = TabularMdp::new(3, 1, t, Some(4), 0).unwrap();
        let layers = m.reachable_states(3);
        assert_eq!(layers, vec![vec![0], vec![1], vec![2], vec![2]]);
    }

    #[test]
    fn json_round_trip() {
        let m = two_state();
        let s = serde_json::to_string(&m).unwrap();
        let back: TabularMdp = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        assert!(s.contains("[1,1.0,1.0]"), "{s}");
    }
}
