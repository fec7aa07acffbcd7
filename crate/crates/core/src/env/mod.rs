//! Environment builders: concrete finite MDPs for the solvers to chew on.
//!
//! Two families are provided, each exposing an exact tabular model (for
//! dynamic programming) whose sampler doubles as the simulator for TD and
//! Monte-Carlo evaluation:
//!
//! * [`gbwm`]: goals-based wealth management; a lognormal wealth lattice
//!   with per-period goal purchases and a menu of frontier portfolios.
//! * [`ou_put`]: an American put on a mean-reverting (Ornstein-Uhlenbeck)
//!   price lattice, in layered (time-indexed) and stationary forms.
//!
//! Both discretize a continuous shock onto a lattice. The Gaussian
//! quadrature used for the wealth environment lives here:
//! `gauss_hermite` computes nodes and weights for
//! `integral f(x) exp(-x^2) dx ~ sum_i w_i f(x_i)`, and
//! [`normal_quadrature`] rescales them into a probability-weighted atom
//! list for `Normal(mu, sigma^2)`.

use thiserror::Error;

pub mod gbwm;
pub mod ou_put;

pub use gbwm::{build_gbwm, GbwmConfig, GbwmEnv, GoalSpec};
pub use ou_put::{build_ou_put, OuOptionConfig, OuPutEnv};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("{0}")]
    BadParam(&'static str),
    #[error("goal at t={t} has negative cost {cost}")]
    NegativeCost { t: usize, cost: f64 },
    #[error("goal scheduled at t={t} beyond horizon T={t_max}")]
    GoalBeyondHorizon { t: usize, t_max: usize },
    #[error("initial wealth {y0} not on the wealth grid")]
    InitialWealthOffGrid { y0: f64 },
    #[error("wealth grid must start at the absorbing zero node")]
    GridMissingZero,
    #[error("wealth grid nodes must be strictly increasing and finite")]
    GridOrder,
    #[error("unstable price step: kappa*dt = {0} outside (0, 2)")]
    UnstableStep(f64),
    #[error("lattice band must span at least 4 stationary deviations, got {0}")]
    BandTooNarrow(f64),
    #[error("no nonnegative three-point kernel at price {price} after widening to {max_width} deviations")]
    DegenerateKernel { price: f64, max_width: f64 },
    #[error("lattice too coarse: {what} relative error {rel} exceeds {limit}")]
    LatticeTooCoarse { what: &'static str, rel: f64, limit: f64 },
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
}

/// Physicists' Gauss-Hermite rule: nodes (descending) and weights for
/// `integral f(x) exp(-x^2) dx`; weights sum to `sqrt(pi)`. Roots are found
/// by Newton iteration on the orthonormal Hermite recurrence, walking
/// inward from an asymptotic guess for the largest root.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0f64;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0f64;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        // The middle root is exactly zero by symmetry.
        nodes[m - 1] = 0.0;
    }
    (nodes, weights)
}

/// Quadrature atoms `(value, probability)` for `Normal(mu, sigma^2)`,
/// ascending in value, probabilities normalized to sum to one exactly.
/// `sigma = 0` collapses to a single atom.
pub fn normal_quadrature(mu: f64, sigma: f64, n: usize) -> Vec<(f64, f64)> {
    assert!(sigma >= 0.0 && sigma.is_finite() && mu.is_finite());
    if sigma == 0.0 {
        return vec![(mu, 1.0)];
    }
    let (nodes, weights) = gauss_hermite(n);
    let total: f64 = weights.iter().sum();
    let scale = std::f64::consts::SQRT_2 * sigma;
    let mut atoms: Vec<(f64, f64)> = nodes
        .iter()
        .rev()
        .zip(weights.iter().rev())
        .map(|(&x, &w)| (mu + scale * x, w / total))
        .collect();
    // Close the normalization on the heaviest atom.
    let sum: f64 = atoms.iter().map(|a| a.1).sum();
    let k = n / 2;
    atoms[k].1 += 1.0 - sum;
    atoms
}
