//! The exponential race on a finite support: with i.i.d. `ε_a ~ Exp(1)`, the
//! atom minimizing `ε_a / p(a)` has law `p`, for every `p` at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag, Substream};
use crate::stats::Estimate;

/// The family `(ε_a)` of a seed; `ε_a` is a pure function of `(seed, a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceSource {
    pub seed: u64,
}

impl RaceSource {
    pub fn new(seed: u64) -> Self {
        RaceSource { seed }
    }

    /// The exponential clock of atom `a`.
    pub fn epsilon(&self, a: usize) -> f64 {
        Substream::new(self.seed, &[tag::RACE, a as u64]).exp1()
    }
}

fn check_weights(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain("empty weight vector"));
    }
    if p.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    if p.iter().all(|w| *w == 0.0) {
        return Err(Error::domain("all weights are zero"));
    }
    Ok(())
}

fn check_probability(p: &[f64]) -> Result<()> {
    check_weights(p)?;
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("probability vector sums to {s}")));
    }
    Ok(())
}

/// `argmin_a ε_a / p(a)`, zero-weight atoms excluded. `p` may be unnormalized;
/// the winner does not depend on the scale. Ties go to the smallest index.
pub fn race_sample(src: &RaceSource, p: &[f64]) -> Result<usize> {
    check_weights(p)?;
    let mut best = (f64::INFINITY, usize::MAX);
    for (a, &w) in p.iter().enumerate() {
        if w > 0.0 {
            let r = src.epsilon(a) / w;
            if r < best.0 {
                best = (r, a);
            }
        }
    }
    Ok(best.1)
}

/// Exact probability that the race picks the same atom for `p` and `q`:
/// `Σ_{a: p(a)q(a)>0} (Σ_b max(p(b)/p(a), q(b)/q(a)))⁻¹`.
pub fn race_coincidence_exact(p: &[f64], q: &[f64]) -> Result<f64> {
    check_probability(p)?;
    check_probability(q)?;
    if p.len() != q.len() {
        return Err(Error::SpaceMismatch);
    }
    let mut total = 0.0;
    for a in 0..p.len() {
        if p[a] > 0.0 && q[a] > 0.0 {
            let row: f64 = p
                .iter()
                .zip(q)
                .map(|(pb, qb)| (pb / p[a]).max(qb / q[a]))
                .sum();
            total += 1.0 / row;
        }
    }
    Ok(total.min(1.0))
}

/// Total-variation distance between two probability vectors.
pub fn tv_vectors(p: &[f64], q: &[f64]) -> Result<f64> {
    check_probability(p)?;
    check_probability(q)?;
    if p.len() != q.len() {
        return Err(Error::SpaceMismatch);
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Fraction of independent replicas on which the race agrees for `p` and `q`.
pub fn race_coincidence_mc(p: &[f64], q: &[f64], replicas: usize, seed: u64) -> Result<Estimate> {
    check_probability(p)?;
    check_probability(q)?;
    if p.len() != q.len() {
        return Err(Error::SpaceMismatch);
    }
    if replicas == 0 {
        return Err(Error::InsufficientReplicas("need at least one replica".into()));
    }
    let mut agree = 0;
    for r in 0..replicas {
        let src = RaceSource::new(derive_seed(seed, &[tag::REPLICA, r as u64]));
        if race_sample(&src, p)? == race_sample(&src, q)? {
            agree += 1;
        }
    }
    Ok(Estimate::proportion(agree, replicas))
}

/// Summary of a race experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceReport {
    pub exact: f64,
    pub mc_estimate: f64,
    pub stderr: f64,
    pub tv: f64,
    /// `(1 − d) / (1 + d)`.
    pub paper_lower_bound: f64,
}

pub fn race_report(p: &[f64], q: &[f64], replicas: usize, seed: u64) -> Result<RaceReport> {
    let tv = tv_vectors(p, q)?;
    let mc = race_coincidence_mc(p, q, replicas, seed)?;
    Ok(RaceReport {
        exact: race_coincidence_exact(p, q)?,
        mc_estimate: mc.mean,
        stderr: mc.stderr,
        tv,
        paper_lower_bound: (1.0 - tv) / (1.0 + tv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    #[test]
    fn point_mass_always_wins() {
        for s in 0..100 {
            assert_eq!(race_sample(&RaceSource::new(s), &[0.0, 1.0, 0.0]).unwrap(), 1);
            assert_ne!(race_sample(&RaceSource::new(s), &[0.5, 0.0, 0.5]).unwrap(), 1);
        }
        assert!(race_sample(&RaceSource::new(0), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn exact_coincidence_examples() {
        assert!((race_coincidence_exact(&[0.5, 0.5], &[0.7, 0.3]).unwrap() - 0.8).abs() < 1e-12);
        assert!((race_coincidence_exact(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(race_coincidence_exact(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_examples() {
        assert_eq!(race_coincidence_mc(&[0.3, 0.7], &[0.3, 0.7], 500, 3).unwrap().mean, 1.0);
        assert_eq!(race_coincidence_mc(&[1.0, 0.0], &[0.0, 1.0], 500, 3).unwrap().mean, 0.0);
        let e = race_coincidence_mc(&[0.5, 0.5], &[0.7, 0.3], 20_000, 11).unwrap();
        assert!(e.within(0.8, 4.0), "{e:?}");
    }

    #[test]
    fn marginal_law_matches_p() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0u64; 4];
        for r in 0..20_000u64 {
            counts[race_sample(&RaceSource::new(derive_seed(5, &[r])), &p).unwrap()] += 1;
        }
        assert!(stats::chi_square_gof(&counts, &p).p_value > 1e-4);
    }

    #[test]
    fn clocks_are_exponential() {
        let src = RaceSource::new(9);
        let eps: Vec<f64> = (0..20_000).map(|a| src.epsilon(a)).collect();
        assert!(stats::ks_one_sample(&eps, |x| 1.0 - (-x).exp()).p_value > 1e-4);
    }

    fn prob(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=8).prop_flat_map(|n| (prob(n), prob(n)))
    }

    proptest! {
        #[test]
        fn exact_dominates_lower_bound((p, q) in pair()) {
            let d = tv_vectors(&p, &q).unwrap();
            let c = race_coincidence_exact(&p, &q).unwrap();
            prop_assert!(c >= (1.0 - d) / (1.0 + d) - 1e-12);
            prop_assert!((c - race_coincidence_exact(&q, &p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn winner_is_scale_invariant(seed in any::<u64>(), p in prob(6), c in 1e-3f64..1e3) {
            let src = RaceSource::new(seed);
            let scaled: Vec<f64> = p.iter().map(|x| x * c).collect();
            prop_assert_eq!(race_sample(&src, &p).unwrap(), race_sample(&src, &scaled).unwrap());
        }
    }
}
