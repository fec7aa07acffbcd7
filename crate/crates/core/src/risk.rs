//! Optimized-certainty-equivalent (OCE) risk objectives.
//!
//! An OCE utility is a non-decreasing concave `f` with `f(0) = 0`; the risk
//! functional is `OCE_f(G) = sup_c { -c + E[f(c + G)] }`. The supported
//! family:
//!
//! | variant        | f(x)                                        | risk measure        |
//! |----------------|---------------------------------------------|---------------------|
//! | `Mean`         | `x`                                         | expectation         |
//! | `Cvar`         | `min(x, 0) / tau`                           | CVaR at level tau   |
//! | `MeanCvar`     | `k1 max(x,0) + k2 min(x,0)`                 | mean-CVaR mixture   |
//! | `Entropic`     | `(1 - e^{-bx}) / b`                         | entropic risk       |
//! | `MeanVariance` | `x - kx^2` capped at `1/(4k)`               | mean-variance       |
//!
//! with `k2 = (1 - k1)/tau + k1`. The solvers evaluate time-`t` objectives
//! `E[f(d_t c + d_t G)] / d_t`; for positively homogeneous `f` (Mean, Cvar,
//! MeanCvar) the `d_t` factors cancel algebraically and the simplified path
//! `E[f(c + G)]` is used so the value is literally `d_t`-independent.

use crate::discount::DiscountFunction;
use crate::dist::ReturnDistribution;
use crate::grid::StockGrid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("parameter {name} = {value} outside valid range {range}")]
    Parameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Utility function of an optimized certainty equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OceUtility {
    Mean,
    Cvar { tau: f64 },
    MeanCvar { kappa1: f64, tau: f64 },
    /// `beta` of either sign denotes the same risk-averse utility with
    /// aversion `|beta|`: `(1 - e^{-|b| x}) / |b| = (e^{b x} - 1) / b` for
    /// `b < 0`.
    Entropic { beta: f64 },
    MeanVariance { kappa: f64 },
}

impl OceUtility {
    /// Validates parameter ranges.
    pub fn validated(self) -> Result<Self, RiskError> {
        let err = |name, value, range| Err(RiskError::Parameter { name, value, range });
        match self {
            OceUtility::Mean => Ok(self),
            OceUtility::Cvar { tau } => {
                if tau > 0.0 && tau <= 1.0 {
                    Ok(self)
                } else {
                    err("tau", tau, "(0, 1]")
                }
            }
            OceUtility::MeanCvar { kappa1, tau } => {
                if !(tau > 0.0 && tau <= 1.0) {
                    return err("tau", tau, "(0, 1]");
                }
                if (0.0..=1.0).contains(&kappa1) {
                    Ok(self)
                } else {
                    err("kappa1", kappa1, "[0, 1]")
                }
            }
            OceUtility::Entropic { beta } => {
                if beta != 0.0 && beta.is_finite() {
                    Ok(self)
                } else {
                    err("beta", beta, "nonzero finite")
                }
            }
            OceUtility::MeanVariance { kappa } => {
                if kappa > 0.0 && kappa.is_finite() {
                    Ok(self)
                } else {
                    err("kappa", kappa, "(0, inf)")
                }
            }
        }
    }

    /// `f(x)`.
    pub fn utility(&self, x: f64) -> f64 {
        match *self {
            OceUtility::Mean => x,
            OceUtility::Cvar { tau } => x.min(0.0) / tau,
            OceUtility::MeanCvar { kappa1, tau } => {
                kappa1 * x.max(0.0) + Self::kappa2_of(kappa1, tau) * x.min(0.0)
            }
            OceUtility::Entropic { beta } => {
                if beta > 0.0 {
                    (1.0 - (-beta * x).exp()) / beta
                } else {
                    ((beta * x).exp() - 1.0) / beta
                }
            }
            OceUtility::MeanVariance { kappa } => {
                if x <= 1.0 / (2.0 * kappa) {
                    x - kappa * x * x
                } else {
                    1.0 / (4.0 * kappa)
                }
            }
        }
    }

    fn kappa2_of(kappa1: f64, tau: f64) -> f64 {
        (1.0 - kappa1) / tau + kappa1
    }

    /// Slope on losses for the mean-CVaR mixture.
    pub fn kappa2(&self) -> Option<f64> {
        match *self {
            OceUtility::MeanCvar { kappa1, tau } => Some(Self::kappa2_of(kappa1, tau)),
            _ => None,
        }
    }

    /// Loss-aversion coefficient `(k2 - k1) / k1` of the mean-CVaR mixture;
    /// undefined when the mean weight vanishes.
    pub fn loss_aversion(&self) -> Option<f64> {
        match *self {
            OceUtility::MeanCvar { kappa1, tau } if kappa1 > 0.0 => {
                Some((Self::kappa2_of(kappa1, tau) - kappa1) / kappa1)
            }
            _ => None,
        }
    }

    /// True when the utility carries no gain-side weight (pure CVaR), which
    /// the truncated-tail solver must refuse.
    pub fn is_pure_cvar(&self) -> bool {
        matches!(*self, OceUtility::Cvar { .. })
            || matches!(*self, OceUtility::MeanCvar { kappa1, .. } if kappa1 == 0.0)
    }

    /// `f(lambda x) = lambda f(x)` for `lambda > 0`; lets the objective drop
    /// its `d_t` factors exactly.
    pub fn scale_indifferent(&self) -> bool {
        matches!(
            self,
            OceUtility::Mean | OceUtility::Cvar { .. } | OceUtility::MeanCvar { .. }
        )
    }

    /// Global Lipschitz constant where one exists.
    pub fn lipschitz(&self) -> Option<f64> {
        match *self {
            OceUtility::Mean => Some(1.0),
            OceUtility::Cvar { tau } => Some(1.0 / tau),
            OceUtility::MeanCvar { kappa1, tau } => Some(Self::kappa2_of(kappa1, tau)),
            // Slope grows without bound toward -inf.
            OceUtility::Entropic { .. } | OceUtility::MeanVariance { .. } => None,
        }
    }

    /// `sup |f'|` over `[lo, hi]`; finite for every variant on a bounded
    /// interval.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        assert!(lo <= hi);
        match *self {
            OceUtility::Mean => 1.0,
            OceUtility::Cvar { tau } => {
                if lo < 0.0 {
                    1.0 / tau
                } else {
                    0.0
                }
            }
            OceUtility::MeanCvar { kappa1, tau } => {
                if lo < 0.0 {
                    Self::kappa2_of(kappa1, tau)
                } else {
                    kappa1
                }
            }
            OceUtility::Entropic { beta } => (-beta.abs() * lo).exp(),
            OceUtility::MeanVariance { kappa } => (1.0 - 2.0 * kappa * lo).max(0.0),
        }
    }

    /// Curvature-to-slope ratio `inf |f''| / inf f'` on `[lo, hi]`, the
    /// effective risk-aversion coefficient of the tail bound. Constant and
    /// equal to `|beta|` for the entropic utility (both extrema sit at the
    /// upper endpoint, so the exponentials cancel); `None` for utilities
    /// without curvature everywhere.
    pub fn effective_risk_aversion(&self, lo: f64, hi: f64) -> Option<f64> {
        assert!(lo <= hi);
        match *self {
            OceUtility::Entropic { beta } => {
                let b = beta.abs();
                let ratio = b * (-b * hi).exp() / (-b * hi).exp();
                debug_assert!((ratio - b).abs() <= 1e-12 * b);
                Some(b)
            }
            _ => None,
        }
    }

    /// Time-`t` objective `E[f(d_t c + d_t G)] / d_t`, with the simplified
    /// `E[f(c + G)]` path for scale-indifferent `f`.
    pub fn objective(&self, nu: &ReturnDistribution, c: f64, d_t: f64) -> f64 {
        if self.scale_indifferent() {
            expectation_of_utility(nu, self, c, 1.0)
        } else {
            expectation_of_utility(nu, self, d_t * c, d_t)
        }
    }

    /// Grid search for `max_c { -c + E[f(c + G)] }`; ties break toward the
    /// smallest node. Returns `(value, c_star)`.
    pub fn oce(&self, nu: &ReturnDistribution, grid: &StockGrid) -> (f64, f64) {
        let mut best = f64::NEG_INFINITY;
        let mut best_c = grid.nodes()[0];
        for &c in grid.nodes() {
            let j = -c + nu.expect(|g| self.utility(c + g));
            if j > best {
                best = j;
                best_c = c;
            }
        }
        (best, best_c)
    }
}

/// `sum_i p_i f(pre_scale * v_i + pre_shift) / pre_scale`.
pub fn expectation_of_utility(
    nu: &ReturnDistribution,
    f: &OceUtility,
    pre_shift: f64,
    pre_scale: f64,
) -> f64 {
    assert!(pre_scale > 0.0, "pre_scale must be positive");
    nu.expect(|v| f.utility(pre_scale * v + pre_shift)) / pre_scale
}

/// End-to-end OCE suboptimality of approximate backward induction:
/// `2 L sum_t d_t eps_t + (1 + L) delta / 2`, where `eps_t` are per-step
/// Wasserstein errors and `delta` is the OCE grid spacing.
pub fn oce_suboptimality_bound(lipschitz: f64, d: &DiscountFunction, eps: &[f64], delta: f64) -> f64 {
    let dp_term: f64 = eps.iter().enumerate().map(|(t, &e)| d.evaluate(t) * e).sum();
    2.0 * lipschitz * dp_term + (1.0 + lipschitz) * delta / 2.0
}

/// Entropic tail-substitution penalty of a risk-neutral tail grafted at
/// `T'`: `d_{T'}^2 * beta_eff * delta_G^2 / 8` for returns spanning at most
/// `delta_G`.
pub fn entropic_tail_bound(d_tprime: f64, beta_eff: f64, delta_g: f64) -> f64 {
    assert!(beta_eff > 0.0);
    d_tprime * d_tprime * beta_eff * delta_g * delta_g / 8.0
}

/// Mean-CVaR analogue: `d_{T'} * lambda * E[|(c + G)_-|]` with `lambda` the
/// loss-aversion coefficient and the expectation the tail shortfall.
pub fn mean_cvar_tail_bound(d_tprime: f64, lambda: f64, expected_shortfall: f64) -> f64 {
    d_tprime * lambda * expected_shortfall
}
