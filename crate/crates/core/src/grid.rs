//! Stock grids: candidate initial stocks for the OCE outer search and,
//! in interpolated mode, the fixed node set the solvers keep per time slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one node")]
    Empty,
    #[error("grid nodes must be finite and strictly increasing")]
    NotIncreasing,
    #[error("uniform grid needs max > min when count > 1")]
    DegenerateRange,
}

/// How solvers answer stock queries that fall off the node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StockInterp {
    /// Per-slice node sets are the exact closure of the stock update over
    /// the reachable reward support; lookups must hit nodes exactly.
    Exact,
    /// Fixed nodes at every slice; off-node lookups linearly interpolate
    /// the per-level values of the two bracketing nodes' distributions,
    /// each first projected to `quantiles` atoms.
    LinearQuantile { quantiles: usize },
}

/// Sorted, strictly increasing stock nodes plus the interpolation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct StockGrid {
    nodes: Vec<f64>,
    interp: StockInterp,
}

impl StockGrid {
    pub fn from_nodes(nodes: Vec<f64>, interp: StockInterp) -> Result<Self, GridError> {
        if nodes.is_empty() {
            return Err(GridError::Empty);
        }
        if nodes.iter().any(|v| !v.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::NotIncreasing);
        }
        if let StockInterp::LinearQuantile { quantiles } = interp {
            assert!(quantiles > 0, "quantile count must be positive");
        }
        Ok(Self { nodes, interp })
    }

    /// `count` evenly spaced nodes on `[min, max]`.
    pub fn uniform(min: f64, max: f64, count: usize, interp: StockInterp) -> Result<Self, GridError> {
        if count == 0 {
            return Err(GridError::Empty);
        }
        if count == 1 {
            return Self::from_nodes(vec![min], interp);
        }
        if !(max > min) {
            return Err(GridError::DegenerateRange);
        }
        let step = (max - min) / (count - 1) as f64;
        let nodes = (0..count)
            .map(|i| if i == count - 1 { max } else { min + step * i as f64 })
            .collect();
        Self::from_nodes(nodes, interp)
    }

    /// Single-node grid, for objectives whose greedy choice ignores stock.
    pub fn singleton(c: f64) -> Self {
        Self { nodes: vec![c], interp: StockInterp::Exact }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interp(&self) -> StockInterp {
        self.interp
    }

    /// Largest adjacent gap; the `delta` of the OCE grid-resolution bound.
    pub fn spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the node closest to `c` (lowest index on ties).
    pub fn nearest(&self, c: f64) -> usize {
        nearest_in(&self.nodes, c)
    }

    /// Bracketing node indices and the interpolation weight toward the
    /// upper node; clamps outside the range (weight 0 or 1, flag true).
    pub fn bracket(&self, c: f64) -> (usize, usize, f64, bool) {
        bracket_in(&self.nodes, c)
    }
}

/// [`StockGrid::nearest`] on a raw sorted node slice.
pub fn nearest_in(nodes: &[f64], c: f64) -> usize {
    match nodes.binary_search_by(|v| v.total_cmp(&c)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == nodes.len() => i - 1,
        Err(i) => {
            if c - nodes[i - 1] <= nodes[i] - c {
                i - 1
            } else {
                i
            }
        }
    }
}

/// [`StockGrid::bracket`] on a raw sorted node slice.
pub fn bracket_in(nodes: &[f64], c: f64) -> (usize, usize, f64, bool) {
    let n = nodes.len();
    if c <= nodes[0] {
        return (0, 0, 0.0, c < nodes[0]);
    }
    if c >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0, c > nodes[n - 1]);
    }
    let hi = match nodes.binary_search_by(|v| v.total_cmp(&c)) {
        Ok(i) => return (i, i, 0.0, false),
        Err(i) => i,
    };
    let lo = hi - 1;
    let lambda = (c - nodes[lo]) / (nodes[hi] - nodes[lo]);
    (lo, hi, lambda, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_endpoints_exact() {
        let g = StockGrid::uniform(-1.0, 2.0, 7, StockInterp::Exact).unwrap();
        assert_eq!(g.nodes().len(), 7);
        assert_eq!(g.nodes()[0], -1.0);
        assert_eq!(g.nodes()[6], 2.0);
        assert!((g.spacing() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nearest_and_bracket() {
        let g = StockGrid::uniform(0.0, 1.0, 3, StockInterp::Exact).unwrap();
        assert_eq!(g.nearest(0.2), 0);
        assert_eq!(g.nearest(0.25), 0); // tie toward lower index
        assert_eq!(g.nearest(0.26), 1);
        assert_eq!(g.nearest(9.0), 2);
        let (lo, hi, w, clamped) = g.bracket(0.75);
        assert_eq!((lo, hi), (1, 2));
        assert!((w - 0.5).abs() < 1e-15 && !clamped);
        let (lo, hi, w, clamped) = g.bracket(-3.0);
        assert_eq!((lo, hi, w, clamped), (0, 0, 0.0, true));
        let (_, _, _, clamped) = g.bracket(0.5);
        assert!(!clamped);
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(StockGrid::from_nodes(vec![], StockInterp::Exact), Err(GridError::Empty));
        assert!(StockGrid::from_nodes(vec![0.0, 0.0], StockInterp::Exact).is_err());
        assert!(StockGrid::uniform(1.0, 1.0, 5, StockInterp::Exact).is_err());
    }
}
