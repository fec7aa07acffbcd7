//! Discount curves `d_t` with `d_0 = 1` and non-increasing positive values.
//!
//! A curve is described by a [`DiscountSpec`] and materialized into a
//! [`DiscountFunction`], which tabulates `d_t` and the one-step factors
//! `dhat_t = d_{t+1} / d_t` up to a caller-supplied horizon. Tabulating up
//! front keeps every later lookup O(1) and guarantees the product identity
//! `d_{t+1} == d_t * dhat_t` holds to float rounding, which the stock update
//! `(c + r) / dhat_t` relies on.
//!
//! The caller owns the horizon bound: solvers know their `T` (or their
//! reference horizon) and construct the curve at least that deep. Indexing
//! past the tabulated horizon is a programming error and panics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Construction errors for discount curves.
#[derive(Debug, Error, PartialEq)]
pub enum DiscountError {
    #[error("parameter {name} = {value} outside valid range {range}")]
    Parameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("tabulated one-step factor at t = {t} is {value}, outside (0, 1]")]
    FactorRange { t: usize, value: f64 },
    #[error("tabulated product needs at least {needed} factors, got {got}")]
    NotEnoughFactors { needed: usize, got: usize },
    #[error("max_horizon must be at least 1")]
    ZeroHorizon,
}

/// Parametric family of a discount curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiscountSpec {
    /// `d_t = gamma^t`.
    Exponential { gamma: f64 },
    /// `d_t = 1 / (1 + k t)`.
    Hyperbolic { k: f64 },
    /// `d_t = (1 + k t)^(-b)`.
    GeneralizedHyperbolic { k: f64, b: f64 },
    /// `d_0 = 1`, `d_t = beta * gamma^t` for `t >= 1`.
    QuasiHyperbolic { beta: f64, gamma: f64 },
    /// Zero-coupon bond prices of the square-root short-rate model:
    /// `d_t = A(0,t) exp(-B(0,t) r0)` with `h = sqrt(a^2 + 2 sigma^2)`,
    /// `A = [2h e^{(a+h)t/2} / ((a+h)(e^{ht}-1) + 2h)]^{2ab/sigma^2}` and
    /// `B = 2(e^{ht}-1) / ((a+h)(e^{ht}-1) + 2h)`.
    Cir { a: f64, b: f64, sigma: f64, r0: f64 },
    /// Hyperbolic one-step factors capped at `gamma_tail`:
    /// `dhat_t = min((1+kt)/(1+k(t+1)), gamma_tail)`.
    TruncatedHyperbolic { k: f64, gamma_tail: f64 },
    /// `d_t = gamma_tail^t / (1 + k t)`; the one-step factor rises to
    /// `gamma_tail` instead of 1, keeping the tail geometrically summable.
    ModifiedIntegralHyperbolic { k: f64, gamma_tail: f64 },
    /// Arbitrary one-step factors, each in (0, 1].
    TabulatedProduct { factors: Vec<f64> },
}

fn check(cond: bool, name: &'static str, value: f64, range: &'static str) -> Result<(), DiscountError> {
    if cond && value.is_finite() {
        Ok(())
    } else {
        Err(DiscountError::Parameter { name, value, range })
    }
}

impl DiscountSpec {
    fn validate(&self) -> Result<(), DiscountError> {
        match *self {
            DiscountSpec::Exponential { gamma } => check(gamma > 0.0 && gamma <= 1.0, "gamma", gamma, "(0, 1]"),
            DiscountSpec::Hyperbolic { k } => check(k > 0.0, "k", k, "(0, inf)"),
            DiscountSpec::GeneralizedHyperbolic { k, b } => {
                check(k > 0.0, "k", k, "(0, inf)")?;
                check(b > 0.0, "b", b, "(0, inf)")
            }
            DiscountSpec::QuasiHyperbolic { beta, gamma } => {
                check(beta > 0.0 && beta <= 1.0, "beta", beta, "(0, 1]")?;
                check(gamma > 0.0 && gamma <= 1.0, "gamma", gamma, "(0, 1]")
            }
            DiscountSpec::Cir { a, b, sigma, r0 } => {
                check(a > 0.0, "a", a, "(0, inf)")?;
                check(b >= 0.0, "b", b, "[0, inf)")?;
                check(sigma > 0.0, "sigma", sigma, "(0, inf)")?;
                check(r0 >= 0.0, "r0", r0, "[0, inf)")
            }
            DiscountSpec::TruncatedHyperbolic { k, gamma_tail }
            | DiscountSpec::ModifiedIntegralHyperbolic { k, gamma_tail } => {
                check(k > 0.0, "k", k, "(0, inf)")?;
                check(gamma_tail > 0.0 && gamma_tail < 1.0, "gamma_tail", gamma_tail, "(0, 1)")
            }
            DiscountSpec::TabulatedProduct { ref factors } => {
                for (t, &f) in factors.iter().enumerate() {
                    if !(f > 0.0 && f <= 1.0 && f.is_finite()) {
                        return Err(DiscountError::FactorRange { t, value: f });
                    }
                }
                Ok(())
            }
        }
    }
}

/// Bond price of the square-root short-rate model at maturity `t`.
fn cir_price(a: f64, b: f64, sigma: f64, r0: f64, t: f64) -> f64 {
    let h = (a * a + 2.0 * sigma * sigma).sqrt();
    let e = (h * t).exp();
    let denom = (a + h) * (e - 1.0) + 2.0 * h;
    let big_a = (2.0 * h * ((a + h) * t / 2.0).exp() / denom).powf(2.0 * a * b / (sigma * sigma));
    let big_b = 2.0 * (e - 1.0) / denom;
    big_a * (-big_b * r0).exp()
}

/// A tabulated discount curve.
///
/// Immutable after construction; all lookups are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountFunction {
    spec: DiscountSpec,
    max_horizon: usize,
    /// `d[t]` for `t in 0..=max_horizon + 1`.
    d: Vec<f64>,
    /// `dhat[t] = d[t+1] / d[t]` for `t in 0..=max_horizon`.
    dhat: Vec<f64>,
}

impl DiscountFunction {
    /// Tabulates the curve for `t` up to `max_horizon` (one-step factors
    /// included at every such `t`).
    pub fn new(spec: DiscountSpec, max_horizon: usize) -> Result<Self, DiscountError> {
        if max_horizon == 0 {
            return Err(DiscountError::ZeroHorizon);
        }
        spec.validate()?;
        let len = max_horizon + 2;
        let (d, dhat) = match spec {
            // Factor-first variants: d is the running product, so the
            // product identity is exact and the exponential factor is the
            // literal constant gamma.
            DiscountSpec::Exponential { gamma } => {
                let dhat = vec![gamma; len - 1];
                (Self::products(&dhat), dhat)
            }
            DiscountSpec::QuasiHyperbolic { beta, gamma } => {
                let mut dhat = vec![gamma; len - 1];
                dhat[0] = beta * gamma;
                (Self::products(&dhat), dhat)
            }
            DiscountSpec::TruncatedHyperbolic { k, gamma_tail } => {
                let dhat: Vec<f64> = (0..len - 1)
                    .map(|t| ((1.0 + k * t as f64) / (1.0 + k * (t as f64 + 1.0))).min(gamma_tail))
                    .collect();
                (Self::products(&dhat), dhat)
            }
            DiscountSpec::TabulatedProduct { ref factors } => {
                if factors.len() < len - 1 {
                    return Err(DiscountError::NotEnoughFactors { needed: len - 1, got: factors.len() });
                }
                let dhat = factors[..len - 1].to_vec();
                (Self::products(&dhat), dhat)
            }
            // Closed-form-first variants: d comes straight from the formula
            // and the factor is the tabulated ratio.
            DiscountSpec::Hyperbolic { k } => {
                Self::from_closed_form(len, |t| 1.0 / (1.0 + k * t))
            }
            DiscountSpec::GeneralizedHyperbolic { k, b } => {
                Self::from_closed_form(len, |t| (1.0 + k * t).powf(-b))
            }
            DiscountSpec::Cir { a, b, sigma, r0 } => {
                Self::from_closed_form(len, |t| cir_price(a, b, sigma, r0, t))
            }
            DiscountSpec::ModifiedIntegralHyperbolic { k, gamma_tail } => {
                Self::from_closed_form(len, |t| gamma_tail.powf(t) / (1.0 + k * t))
            }
        };
        for (t, &f) in dhat.iter().enumerate() {
            // Float slack only; a genuinely increasing curve is a spec bug.
            if !(f > 0.0 && f <= 1.0 + 1e-12) {
                return Err(DiscountError::FactorRange { t, value: f });
            }
        }
        Ok(Self { spec, max_horizon, d, dhat })
    }

    fn products(dhat: &[f64]) -> Vec<f64> {
        let mut d = Vec::with_capacity(dhat.len() + 1);
        let mut acc = 1.0;
        d.push(acc);
        for &f in dhat {
            acc *= f;
            d.push(acc);
        }
        d
    }

    fn from_closed_form(len: usize, f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let d: Vec<f64> = (0..len).map(|t| f(t as f64)).collect();
        let dhat: Vec<f64> = (0..len - 1).map(|t| d[t + 1] / d[t]).collect();
        (d, dhat)
    }

    /// `d_t`. Panics if `t > max_horizon + 1`.
    #[inline]
    pub fn evaluate(&self, t: usize) -> f64 {
        self.d[t]
    }

    /// `dhat_t = d_{t+1} / d_t`. Panics if `t > max_horizon`.
    #[inline]
    pub fn one_step(&self, t: usize) -> f64 {
        self.dhat[t]
    }

    /// Largest `t` the curve is tabulated for.
    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }

    pub fn spec(&self) -> &DiscountSpec {
        &self.spec
    }

    /// Caps every one-step factor at `dhat_{T'}`, so the curve beyond `T'`
    /// decays at least geometrically with ratio `dhat_{T'}`. Factors before
    /// `T'` already below the cap are unchanged.
    pub fn truncate_at_horizon(&self, t_prime: usize) -> Result<Self, DiscountError> {
        assert!(
            t_prime <= self.max_horizon,
            "truncation point {t_prime} exceeds tabulated horizon {}",
            self.max_horizon
        );
        let cap = self.dhat[t_prime];
        let factors: Vec<f64> = self.dhat.iter().map(|&f| f.min(cap)).collect();
        Self::new(DiscountSpec::TabulatedProduct { factors }, self.max_horizon)
    }

    /// Sum of `d_t` over `0..=t_prime - 1` plus a geometric tail
    /// `d_{T'} / (1 - dhat_{T'})`, i.e. the summed discounted mass of the
    /// curve truncated at `T'` (an upper bound when one-step factors are
    /// not monotone, exact otherwise). Drives return-range bounds.
    /// `f64::INFINITY` when `dhat_{T'} >= 1`.
    pub fn tail_summed(&self, t_prime: usize) -> f64 {
        let head: f64 = (0..t_prime).map(|t| self.d[t]).sum();
        let gamma_tail = self.dhat[t_prime];
        if gamma_tail >= 1.0 {
            return f64::INFINITY;
        }
        head + self.d[t_prime] / (1.0 - gamma_tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(spec: DiscountSpec) -> DiscountFunction {
        DiscountFunction::new(spec, 1000).unwrap()
    }

    fn all_variants() -> Vec<DiscountFunction> {
        vec![
            curve(DiscountSpec::Exponential { gamma: 0.97 }),
            curve(DiscountSpec::Hyperbolic { k: 0.05 }),
            curve(DiscountSpec::GeneralizedHyperbolic { k: 0.1, b: 2.0 }),
            curve(DiscountSpec::QuasiHyperbolic { beta: 0.7, gamma: 0.99 }),
            curve(DiscountSpec::Cir { a: 0.05, b: 0.01, sigma: 0.1, r0: 0.01 }),
            curve(DiscountSpec::TruncatedHyperbolic { k: 1.0, gamma_tail: 0.6 }),
            curve(DiscountSpec::ModifiedIntegralHyperbolic { k: 0.05, gamma_tail: 0.99 }),
            curve(DiscountSpec::TabulatedProduct { factors: vec![0.9; 1001] }),
        ]
    }

    #[test]
    fn d0_is_one_and_curves_non_increasing() {
        for d in all_variants() {
            assert_eq!(d.evaluate(0), 1.0, "{:?}", d.spec());
            for t in 0..=1000 {
                assert!(d.evaluate(t) > 0.0);
                assert!(d.evaluate(t + 1) <= d.evaluate(t) * (1.0 + 1e-15));
                let f = d.one_step(t);
                assert!(f > 0.0 && f <= 1.0 + 1e-12, "factor {f} at t={t}");
            }
        }
    }

    #[test]
    fn product_identity_holds_to_rounding() {
        for d in all_variants() {
            for t in 0..=1000usize {
                let lhs = d.evaluate(t + 1);
                let rhs = d.evaluate(t) * d.one_step(t);
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300),
                    "{:?} at t={t}: {lhs} vs {rhs}",
                    d.spec()
                );
            }
        }
    }

    #[test]
    fn hyperbolic_half_life() {
        let d = curve(DiscountSpec::Hyperbolic { k: 1.0 });
        assert_eq!(d.evaluate(1), 0.5);
        assert_eq!(d.evaluate(3), 0.25);
    }

    #[test]
    fn hyperbolic_matches_closed_form_deep() {
        let k = 0.05;
        let d = curve(DiscountSpec::Hyperbolic { k });
        for t in 0..=1000usize {
            let want = 1.0 / (1.0 + k * t as f64);
            assert!((d.evaluate(t) - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn exponential_one_step_is_constant_gamma() {
        let d = curve(DiscountSpec::Exponential { gamma: 0.9 });
        for t in 0..=1000 {
            assert_eq!(d.one_step(t), 0.9);
        }
        assert!((d.evaluate(10) - 0.9f64.powi(10)).abs() < 1e-14);
    }

    #[test]
    fn quasi_hyperbolic_shape() {
        let d = curve(DiscountSpec::QuasiHyperbolic { beta: 0.6, gamma: 0.9 });
        assert_eq!(d.evaluate(0), 1.0);
        assert!((d.evaluate(1) - 0.54).abs() < 1e-15);
        assert!((d.evaluate(3) - 0.6 * 0.9f64.powi(3)).abs() < 1e-15);
        assert!((d.one_step(0) - 0.54).abs() < 1e-15);
        assert_eq!(d.one_step(5), 0.9);
    }

    #[test]
    fn truncated_hyperbolic_caps_factors() {
        // Plain hyperbolic k=1 factors: 1/2, 2/3, 3/4, ... capped at 0.6.
        let d = curve(DiscountSpec::TruncatedHyperbolic { k: 1.0, gamma_tail: 0.6 });
        assert_eq!(d.one_step(0), 0.5);
        assert_eq!(d.one_step(1), 0.6);
        assert_eq!(d.one_step(50), 0.6);
    }

    #[test]
    fn modified_integral_formula_and_tail() {
        let (k, g) = (0.05, 0.97);
        let d = curve(DiscountSpec::ModifiedIntegralHyperbolic { k, gamma_tail: g });
        for t in [0usize, 1, 7, 40, 300] {
            let want = g.powf(t as f64) / (1.0 + k * t as f64);
            assert!((d.evaluate(t) - want).abs() <= 1e-12 * want);
        }
        // One-step factor rises toward gamma_tail (hyperbolically slowly,
        // ratio 1 - k/(1 + kt)) and never reaches it.
        assert!(d.one_step(1000) > g * (1.0 - k / 51.0) - 1e-12 && d.one_step(1000) < g);
        for t in 0..1000 {
            assert!(d.one_step(t) <= d.one_step(t + 1) + 1e-15);
        }
    }

    #[test]
    fn truncate_at_horizon_caps_everywhere() {
        let d = curve(DiscountSpec::Hyperbolic { k: 1.0 });
        let trunc = d.truncate_at_horizon(2).unwrap();
        // Hyperbolic factors rise toward 1; the cap is dhat_2 = 3/4.
        assert_eq!(trunc.one_step(0), 0.5);
        assert_eq!(trunc.one_step(1), 2.0 / 3.0);
        for t in 2..=1000 {
            assert_eq!(trunc.one_step(t), 0.75);
        }
        // Exponential curves are unchanged by truncation.
        let e = curve(DiscountSpec::Exponential { gamma: 0.9 });
        let etrunc = e.truncate_at_horizon(5).unwrap();
        for t in 0..=1000 {
            assert_eq!(etrunc.evaluate(t), e.evaluate(t));
        }
    }

    #[test]
    fn tail_summed_geometric() {
        let d = curve(DiscountSpec::Exponential { gamma: 0.5 });
        // Full geometric sum is 2 regardless of the split point.
        assert!((d.tail_summed(0) - 2.0).abs() < 1e-12);
        assert!((d.tail_summed(3) - 2.0).abs() < 1e-12);
        // Hyperbolic truncated at 4: head 1 + 1/2 + 1/3 + 1/4, then a
        // geometric tail at ratio dhat_4 = 5/6: (1/5) / (1/6) = 6/5.
        let h = curve(DiscountSpec::Hyperbolic { k: 1.0 });
        assert!((h.tail_summed(4) - 197.0 / 60.0).abs() < 1e-12);
        // Undamped factors at 1 make the mass infinite.
        let flat = curve(DiscountSpec::Exponential { gamma: 1.0 });
        assert_eq!(flat.tail_summed(3), f64::INFINITY);
    }

    #[test]
    fn cir_monotone_and_above_matched_exponential() {
        let d = curve(DiscountSpec::Cir { a: 0.05, b: 0.01, sigma: 0.1, r0: 0.01 });
        // Convexity pushes bond prices above exp(-r0 t) for this curve.
        for t in 1..=100usize {
            assert!(d.evaluate(t) >= 0.99f64.powi(t as i32));
            assert!(d.evaluate(t) < d.evaluate(t - 1));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DiscountFunction::new(DiscountSpec::Exponential { gamma: 0.0 }, 10).is_err());
        assert!(DiscountFunction::new(DiscountSpec::Exponential { gamma: 1.2 }, 10).is_err());
        assert!(DiscountFunction::new(DiscountSpec::Hyperbolic { k: -0.1 }, 10).is_err());
        assert!(DiscountFunction::new(DiscountSpec::QuasiHyperbolic { beta: 1.5, gamma: 0.9 }, 10).is_err());
        assert!(DiscountFunction::new(DiscountSpec::Cir { a: -1.0, b: 0.01, sigma: 0.1, r0: 0.01 }, 10).is_err());
        assert!(DiscountFunction::new(
            DiscountSpec::TabulatedProduct { factors: vec![0.9, 1.4] },
            1
        )
        .is_err());
        assert!(DiscountFunction::new(
            DiscountSpec::TabulatedProduct { factors: vec![0.9] },
            5
        )
        .is_err());
        assert_eq!(
            DiscountFunction::new(DiscountSpec::Hyperbolic { k: 1.0 }, 0),
            Err(DiscountError::ZeroHorizon)
        );
    }

    #[test]
    fn serde_round_trip() {
        let spec = DiscountSpec::TruncatedHyperbolic { k: 0.05, gamma_tail: 0.98 };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("truncated_hyperbolic"));
        let back: DiscountSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
