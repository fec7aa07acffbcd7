//! Finitely supported return distributions.
//!
//! A [`ReturnDistribution`] is a sorted list of `(value, probability)` atoms
//! with strictly increasing values and positive probabilities summing to one.
//! All operations are pure and value-semantic: the pushforward `affine` map,
//! probability-weighted `mixture`, the exact 1-Wasserstein distance between
//! step CDFs, and projection onto `n` equal-weight quantile atoms at midpoint
//! levels `tau_j = (2j - 1) / (2n)`.
//!
//! Serialization is a bare JSON array of `[value, probability]` pairs, which
//! keeps test fixtures diffable.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Construction and combination errors for distributions.
#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("distribution must have at least one atom")]
    Empty,
    #[error("non-finite value {0} in atom list")]
    NonFiniteValue(f64),
    #[error("negative probability {0} in atom list")]
    NegativeProbability(f64),
    #[error("probabilities sum to {0}, expected 1 within 1e-9")]
    ProbabilitySum(f64),
    #[error("mixture weights sum to {0}, expected 1 within 1e-9")]
    WeightSum(f64),
    #[error("negative mixture weight {0}")]
    NegativeWeight(f64),
}

/// A finitely supported distribution over returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct ReturnDistribution {
    /// Sorted by value, values strictly increasing, probabilities positive.
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for ReturnDistribution {
    type Error = DistError;
    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self, DistError> {
        ReturnDistribution::from_atoms(atoms)
    }
}

impl From<ReturnDistribution> for Vec<(f64, f64)> {
    fn from(d: ReturnDistribution) -> Self {
        d.atoms
    }
}

impl ReturnDistribution {
    /// Point mass at `value`.
    pub fn dirac(value: f64) -> Self {
        assert!(value.is_finite(), "dirac at non-finite value");
        Self { atoms: vec![(value, 1.0)] }
    }

    /// Builds from raw atoms: validates, sorts, merges exactly equal values,
    /// drops zero-probability atoms, and renormalizes away float drift
    /// (inputs must already sum to 1 within 1e-9).
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self, DistError> {
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() {
                return Err(DistError::NonFiniteValue(v));
            }
            if p < 0.0 || !p.is_finite() {
                return Err(DistError::NegativeProbability(p));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(DistError::ProbabilitySum(total));
        }
        let kept: Vec<(f64, f64)> = atoms.into_iter().filter(|&(_, p)| p > 0.0).collect();
        if kept.is_empty() {
            return Err(DistError::Empty);
        }
        let mut d = Self { atoms: kept };
        d.canonicalize(0.0);
        Ok(d)
    }

    /// Sorts, merges values closer than `eps_merge` (onto their
    /// probability-weighted mean), and renormalizes the total.
    fn canonicalize(&mut self, eps_merge: f64) {
        self.atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.atoms.len());
        let mut i = 0;
        while i < self.atoms.len() {
            let anchor = self.atoms[i].0;
            let mut mass = 0.0;
            let mut moment = 0.0;
            let mut j = i;
            while j < self.atoms.len() && self.atoms[j].0 - anchor <= eps_merge {
                mass += self.atoms[j].1;
                moment += self.atoms[j].0 * self.atoms[j].1;
                j += 1;
            }
            let value = if j - i == 1 { anchor } else { moment / mass };
            out.push((value, mass));
            i = j;
        }
        let total: f64 = out.iter().map(|&(_, p)| p).sum();
        debug_assert!((total - 1.0).abs() <= 1e-9, "probability drift {total}");
        if total != 1.0 {
            for a in &mut out {
                a.1 /= total;
            }
        }
        self.atoms = out;
    }

    /// Re-canonicalizes with a merge resolution, as applied after Bellman
    /// backups (`eps_merge` is absolute in value space).
    pub fn merged(mut self, eps_merge: f64) -> Self {
        self.canonicalize(eps_merge);
        self
    }

    /// Caps the support size: if more than `cap` atoms remain, re-projects
    /// onto `cap` equal-weight quantile atoms.
    pub fn capped(self, cap: usize) -> Self {
        if self.atoms.len() <= cap {
            self
        } else {
            self.project_to_quantiles(cap).to_distribution()
        }
    }

    /// Pushforward under `x -> scale * x + shift`. `scale` must be positive,
    /// so atom order is preserved.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        assert!(scale > 0.0, "affine scale must be positive, got {scale}");
        Self {
            atoms: self.atoms.iter().map(|&(v, p)| (scale * v + shift, p)).collect(),
        }
    }

    /// Probability mixture `sum_i w_i nu_i`. Weights must be non-negative
    /// and sum to 1 within 1e-9; zero-weight components are dropped.
    pub fn mixture(components: &[(f64, &ReturnDistribution)]) -> Result<Self, DistError> {
        let mut wsum = 0.0;
        for &(w, _) in components {
            if w < 0.0 || !w.is_finite() {
                return Err(DistError::NegativeWeight(w));
            }
            wsum += w;
        }
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(DistError::WeightSum(wsum));
        }
        let mut atoms = Vec::new();
        for &(w, d) in components {
            if w == 0.0 {
                continue;
            }
            atoms.extend(d.atoms.iter().map(|&(v, p)| (v, w * p)));
        }
        if atoms.is_empty() {
            return Err(DistError::Empty);
        }
        let mut out = Self { atoms };
        out.canonicalize(0.0);
        Ok(out)
    }

    /// Exact 1-Wasserstein distance: the integral of |F - F'| between the
    /// two step CDFs over the merged support.
    pub fn wasserstein1(&self, other: &ReturnDistribution) -> f64 {
        let a = &self.atoms;
        let b = &other.atoms;
        let (mut i, mut j) = (0usize, 0usize);
        let (mut fa, mut fb) = (0.0f64, 0.0f64);
        let mut prev: Option<f64> = None;
        let mut acc = 0.0;
        while i < a.len() || j < b.len() {
            let x = match (a.get(i), b.get(j)) {
                (Some(&(va, _)), Some(&(vb, _))) => va.min(vb),
                (Some(&(va, _)), None) => va,
                (None, Some(&(vb, _))) => vb,
                (None, None) => unreachable!(),
            };
            if let Some(p) = prev {
                acc += (fa - fb).abs() * (x - p);
            }
            while i < a.len() && a[i].0 == x {
                fa += a[i].1;
                i += 1;
            }
            while j < b.len() && b[j].0 == x {
                fb += b[j].1;
                j += 1;
            }
            prev = Some(x);
        }
        acc
    }

    /// Projects onto `n` equal-weight atoms at the left-continuous quantiles
    /// of levels `(2j - 1) / (2n)`; ties resolve to the smaller value.
    pub fn project_to_quantiles(&self, n: usize) -> QuantileRepresentation {
        assert!(n > 0, "quantile count must be positive");
        let mut values = Vec::with_capacity(n);
        let mut idx = 0;
        let mut cum = self.atoms[0].1;
        for j in 1..=n {
            let tau = (2 * j - 1) as f64 / (2 * n) as f64;
            while cum < tau && idx + 1 < self.atoms.len() {
                idx += 1;
                cum += self.atoms[idx].1;
            }
            values.push(self.atoms[idx].0);
        }
        QuantileRepresentation { values }
    }

    /// Expectation of `g` under the distribution.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * g(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|x| (x - m) * (x - m))
    }

    pub fn min_value(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max_value(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by invariant
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|&(_, p)| p).sum()
    }

    /// Inverse-CDF sample (left-continuous).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for &(v, p) in &self.atoms {
            cum += p;
            if u < cum {
                return v;
            }
        }
        self.max_value()
    }
}

/// `n` non-decreasing values at the midpoint quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRepresentation {
    values: Vec<f64>,
}

impl QuantileRepresentation {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty());
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]), "quantile values must be sorted");
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Midpoint level of the `j`-th atom (0-based): `(2j + 1) / (2n)`.
    pub fn level(&self, j: usize) -> f64 {
        (2 * j + 1) as f64 / (2 * self.values.len()) as f64
    }

    /// Equal-weight distribution on the quantile values.
    pub fn to_distribution(&self) -> ReturnDistribution {
        let p = 1.0 / self.values.len() as f64;
        let mut d = ReturnDistribution {
            atoms: self.values.iter().map(|&v| (v, p)).collect(),
        };
        d.canonicalize(0.0);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_point() -> ReturnDistribution {
        ReturnDistribution::from_atoms(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn from_atoms_sorts_merges_and_validates() {
        let d = ReturnDistribution::from_atoms(vec![(2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]).unwrap();
        assert_eq!(d.atoms(), &[(0.0, 0.5), (2.0, 0.5)]);
        assert!(ReturnDistribution::from_atoms(vec![(0.0, 0.7)]).is_err());
        assert!(ReturnDistribution::from_atoms(vec![(f64::NAN, 1.0)]).is_err());
        assert!(ReturnDistribution::from_atoms(vec![(0.0, -0.1), (1.0, 1.1)]).is_err());
        assert!(ReturnDistribution::from_atoms(vec![]).is_err());
    }

    #[test]
    fn affine_example() {
        let d = ReturnDistribution::from_atoms(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let got = d.affine(0.5, 1.0);
        assert_eq!(got.atoms(), &[(1.5, 0.5), (2.5, 0.5)]);
        let zero = ReturnDistribution::dirac(0.0);
        assert_eq!(zero.affine(0.25, 0.0), zero);
    }

    #[test]
    #[should_panic(expected = "affine scale must be positive")]
    fn affine_rejects_nonpositive_scale() {
        two_point().affine(0.0, 1.0);
    }

    #[test]
    fn mixture_merges_shared_values() {
        let a = ReturnDistribution::dirac(0.0);
        let b = ReturnDistribution::from_atoms(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
        let m = ReturnDistribution::mixture(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(m.atoms(), &[(0.0, 0.75), (2.0, 0.25)]);
    }

    #[test]
    fn mixture_of_diracs() {
        let a = ReturnDistribution::dirac(0.0);
        let b = ReturnDistribution::dirac(1.0);
        let m = ReturnDistribution::mixture(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(m.atoms(), &[(0.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn mixture_rejects_bad_weights() {
        let a = ReturnDistribution::dirac(0.0);
        assert!(ReturnDistribution::mixture(&[(0.4, &a)]).is_err());
        assert!(ReturnDistribution::mixture(&[(-0.2, &a), (1.2, &a)]).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let d = two_point();
        let mid = ReturnDistribution::dirac(0.5);
        assert!((d.wasserstein1(&mid) - 0.5).abs() < 1e-15);
        assert_eq!(d.wasserstein1(&d), 0.0);
        let a = ReturnDistribution::dirac(0.0);
        let b = ReturnDistribution::dirac(3.0);
        assert_eq!(a.wasserstein1(&b), 3.0);
    }

    #[test]
    fn quantile_projection_examples() {
        let d = two_point();
        assert_eq!(d.project_to_quantiles(2).values(), &[0.0, 1.0]);
        // Ties resolve toward the smaller value: F(0) = 0.5 >= tau = 0.5.
        assert_eq!(d.project_to_quantiles(1).values(), &[0.0]);
        assert_eq!(d.project_to_quantiles(4).values(), &[0.0, 0.0, 1.0, 1.0]);
        let c = ReturnDistribution::dirac(2.5);
        assert_eq!(c.project_to_quantiles(7).values(), &[2.5; 7]);
    }

    #[test]
    fn projection_beats_exhaustive_grid_candidates() {
        // Exhaustive search over equal-weight atom placements on a coarse
        // grid; the midpoint-quantile projection must weakly win.
        let d = ReturnDistribution::from_atoms(vec![(0.0, 0.35), (1.0, 0.15), (2.0, 0.3), (4.0, 0.2)]).unwrap();
        let grid: Vec<f64> = (0..=12).map(|i| i as f64 / 3.0).collect();
        for n in [1usize, 2, 3] {
            let best = d.wasserstein1(&d.project_to_quantiles(n).to_distribution());
            let mut idx = vec![0usize; n];
            loop {
                let vals: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
                if vals.windows(2).all(|w| w[0] <= w[1]) {
                    let cand = QuantileRepresentation::new(vals).to_distribution();
                    assert!(d.wasserstein1(&cand) >= best - 1e-12);
                }
                // odometer over grid^n
                let mut k = 0;
                loop {
                    if k == n {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < grid.len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
    }

    #[test]
    fn quantile_round_trip_on_equal_weights() {
        let d = ReturnDistribution::from_atoms(vec![(0.0, 0.25), (1.0, 0.25), (4.0, 0.25), (9.0, 0.25)]).unwrap();
        let back = d.project_to_quantiles(4).to_distribution();
        assert_eq!(back, d);
    }

    #[test]
    fn projection_is_w1_optimal_among_equal_weight_candidates() {
        // The midpoint-quantile projection minimizes W1 over n-atom
        // equal-weight distributions; compare against random candidates.
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let d = ReturnDistribution::from_atoms(vec![(0.0, 0.3), (1.0, 0.2), (2.5, 0.4), (7.0, 0.1)]).unwrap();
        for n in [1usize, 2, 3, 5] {
            let proj = d.project_to_quantiles(n).to_distribution();
            let best = d.wasserstein1(&proj);
            for _ in 0..200 {
                let mut vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..8.0)).collect();
                vals.sort_by(f64::total_cmp);
                let cand = QuantileRepresentation::new(vals).to_distribution();
                assert!(d.wasserstein1(&cand) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn merged_collapses_close_values() {
        let d = ReturnDistribution::from_atoms(vec![(0.0, 0.5), (1e-12, 0.25), (1.0, 0.25)]).unwrap();
        let m = d.merged(1e-9);
        assert_eq!(m.len(), 2);
        // Weighted-mean merge preserves the expectation.
        assert!((m.mean() - (0.5 * 0.0 + 0.25 * 1e-12 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn capped_reprojects() {
        let atoms: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 0.01)).collect();
        let d = ReturnDistribution::from_atoms(atoms).unwrap();
        let c = d.clone().capped(10);
        assert_eq!(c.len(), 10);
        assert!(d.wasserstein1(&c) < 5.0);
        assert_eq!(d.clone().capped(200), d);
    }

    #[test]
    fn sampling_matches_expectation() {
        use rand::SeedableRng;
        let d = ReturnDistribution::from_atoms(vec![(-1.0, 0.25), (0.5, 0.5), (2.0, 0.25)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let sigma = (d.variance() / n as f64).sqrt();
        assert!((mean - d.mean()).abs() < 3.0 * sigma, "mean {mean} vs {}", d.mean());
    }

    #[test]
    fn json_round_trip_is_pair_array() {
        let d = two_point();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, "[[0.0,0.5],[1.0,0.5]]");
        let back: ReturnDistribution = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<ReturnDistribution>("[[0.0,0.6]]").is_err());
    }

    /// Transport-plan oracle: optimal coupling of two sorted atom lists by
    /// greedy mass matching, exact for the |x - y| cost in one dimension.
    fn w1_transport_oracle(a: &ReturnDistribution, b: &ReturnDistribution) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut pa = a.atoms()[0].1;
        let mut pb = b.atoms()[0].1;
        let mut cost = 0.0;
        loop {
            let moved = pa.min(pb);
            cost += moved * (a.atoms()[i].0 - b.atoms()[j].0).abs();
            pa -= moved;
            pb -= moved;
            if pa <= 1e-15 {
                i += 1;
                if i == a.len() {
                    break;
                }
                pa = a.atoms()[i].1;
            }
            if pb <= 1e-15 {
                j += 1;
                if j == b.len() {
                    break;
                }
                pb = b.atoms()[j].1;
            }
        }
        cost
    }

    fn arb_dist(max_atoms: usize) -> impl Strategy<Value = ReturnDistribution> {
        proptest::collection::vec((-50.0f64..50.0, 0.05f64..1.0), 1..=max_atoms).prop_map(|raw| {
            let total: f64 = raw.iter().map(|&(_, p)| p).sum();
            let atoms: Vec<(f64, f64)> = raw.into_iter().map(|(v, p)| (v, p / total)).collect();
            ReturnDistribution::from_atoms(atoms).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prop_wasserstein_matches_transport_oracle(a in arb_dist(6), b in arb_dist(6)) {
            let fast = a.wasserstein1(&b);
            let oracle = w1_transport_oracle(&a, &b);
            prop_assert!((fast - oracle).abs() <= 1e-9 * (1.0 + oracle));
        }

        #[test]
        fn prop_wasserstein_is_a_metric(a in arb_dist(5), b in arb_dist(5), c in arb_dist(5)) {
            prop_assert!((a.wasserstein1(&b) - b.wasserstein1(&a)).abs() < 1e-12);
            prop_assert!(a.wasserstein1(&a) == 0.0);
            prop_assert!(a.wasserstein1(&c) <= a.wasserstein1(&b) + b.wasserstein1(&c) + 1e-12);
        }

        #[test]
        fn prop_affine_composes(d in arb_dist(5), s1 in 0.1f64..3.0, t1 in -5.0f64..5.0, s2 in 0.1f64..3.0, t2 in -5.0f64..5.0) {
            let once = d.affine(s1, t1).affine(s2, t2);
            let fused = d.affine(s1 * s2, s2 * t1 + t2);
            prop_assert_eq!(once.len(), fused.len());
            for (x, y) in once.atoms().iter().zip(fused.atoms()) {
                prop_assert!((x.0 - y.0).abs() <= 1e-12 * (1.0 + y.0.abs()));
                prop_assert!(x.1 == y.1);
            }
        }

        #[test]
        fn prop_affine_scales_mean_and_w1(d in arb_dist(5), s in 0.1f64..3.0, t in -5.0f64..5.0) {
            let a = d.affine(s, t);
            prop_assert!((a.mean() - (s * d.mean() + t)).abs() < 1e-9);
            // W1 is positively homogeneous under common affine maps.
            let e = d.affine(1.0, 1.0);
            let lhs = a.wasserstein1(&e.affine(s, t));
            prop_assert!((lhs - s * d.wasserstein1(&e)).abs() < 1e-9);
        }

        #[test]
        fn prop_mixture_mean_is_weighted(a in arb_dist(5), b in arb_dist(5), w in 0.0f64..1.0) {
            let m = ReturnDistribution::mixture(&[(w, &a), (1.0 - w, &b)]).unwrap();
            prop_assert!((m.mean() - (w * a.mean() + (1.0 - w) * b.mean())).abs() < 1e-9);
            prop_assert!((m.total_probability() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prop_equal_weight_projection_round_trips(vals in proptest::collection::vec(-20.0f64..20.0, 1..8)) {
            let mut v = vals.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let n = v.len();
            let d = QuantileRepresentation::new(v).to_distribution();
            // Projecting at its own support size reproduces it exactly, and
            // any n at least the atom count leaves W1 error at zero.
            let back = d.project_to_quantiles(n).to_distribution();
            prop_assert_eq!(&back, &d);
            let fine = d.project_to_quantiles(4 * n).to_distribution();
            prop_assert!(d.wasserstein1(&fine) <= 1e-12);
        }
    }
}
