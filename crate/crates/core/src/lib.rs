//! Stock-augmented distributional dynamic programming on finite MDPs.
//!
//! The library solves risk-sensitive control problems where the objective is
//! an optimized certainty equivalent (OCE) of the discounted return under a
//! general, possibly non-exponential discount curve `d_t`. The key device is
//! the *stock* `c`: an accumulator carried alongside the environment state
//! that makes the distributional Bellman recursion Markov again,
//!
//! ```text
//! C_{t+1} = (C_t + R_{t+1}) / dhat_t,   dhat_t = d_{t+1} / d_t,
//! ```
//!
//! so that `d_t (C_t + G_t)` is invariant along a trajectory and equals the
//! time-0 outcome `C_0 + G_0` in distribution.
//!
//! Modules:
//! - [`discount`]: discount curves (exponential, hyperbolic families, bond-price based, tabulated).
//! - [`dist`]: finitely supported return distributions and quantile projections.
//! - [`risk`]: OCE utilities, objectives, and suboptimality/tail bounds.
//! - [`mdp`] / [`env`]: tabular MDPs, random chains, a goals-based wealth
//!   environment, and a mean-reverting American put lattice.
//! - [`dp`]: finite-horizon stock-augmented backward induction.
//! - [`multi`]: multi-horizon (per-gamma ensemble) solver and action selection.
//! - [`infinite`]: truncated-head + risk-neutral-tail solver and bound reports.
//! - [`td`]: tabular quantile-regression TD learning on the augmented state.
//! - [`eval`]: exact and Monte-Carlo policy evaluation, reversal metrics.
//! - [`rng`]: counter-based seed splitting for reproducible parallel streams.

pub mod discount;
pub mod dist;
pub mod dp;
pub mod env;
pub mod grid;
pub mod mdp;
pub mod multi;
pub mod risk;
pub mod rng;

pub use discount::{DiscountFunction, DiscountSpec};
pub use dist::{QuantileRepresentation, ReturnDistribution};
pub use dp::{backward_induction, NonStationaryPolicy, Policy, SolveConfig, ValueTable};
pub use grid::{StockGrid, StockInterp};
pub use mdp::TabularMdp;
pub use multi::HorizonBasis;
pub use risk::OceUtility;
