//! The global coupling `f ↦ x_f(U)`: one point process serves every density
//! on the space at once.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{subgraph_measures, tv_distance, Density, Region, State, StateSpace};
use crate::ppp::{joint_first_points, PointProcessSource, PointSet};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledSample {
    pub x: State,
    pub t: f64,
    pub region_measure: f64,
}

/// `x_f(U)` for a probability density `f`.
pub fn couple<P: PointSet + ?Sized>(src: &P, f: &Density) -> Result<CoupledSample> {
    if !f.is_probability() {
        return Err(Error::domain(format!(
            "coupling needs a probability density, mass is {}",
            f.total_mass()
        )));
    }
    let region = Region::subgraph(f)?;
    let p = src.first_point_in(&region)?;
    Ok(CoupledSample {
        x: p.x,
        t: p.t,
        region_measure: region.measure(),
    })
}

/// One seed of a two-density coupling run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub seed: u64,
    pub x_f: State,
    pub x_g: State,
    pub t_f: f64,
    pub t_g: f64,
    pub agree_t: bool,
    pub agree_x: bool,
}

/// Couples `f` and `g` on every seed of the range.
pub fn coupling_rows(
    space: &Arc<StateSpace>,
    seeds: Range<u64>,
    f: &Density,
    g: &Density,
) -> Result<Vec<CouplingRow>> {
    for d in [f, g] {
        if !d.is_probability() {
            return Err(Error::domain("coupling needs probability densities"));
        }
    }
    let regions = [Region::subgraph(f)?, Region::subgraph(g)?];
    seeds
        .map(|seed| {
            let src = PointProcessSource::new(seed, space.clone());
            let pts = joint_first_points(&src, &regions)?;
            let row = CouplingRow {
                seed,
                x_f: pts[0].x,
                x_g: pts[1].x,
                t_f: pts[0].t,
                t_g: pts[1].t,
                agree_t: pts[0].t == pts[1].t,
                agree_x: pts[0].x == pts[1].x,
            };
            if row.agree_t && !row.agree_x {
                return Err(Error::Internal(format!(
                    "seed {seed}: first times coincide but positions differ"
                )));
            }
            Ok(row)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceReport {
    pub t_rate: Estimate,
    pub x_rate: Estimate,
    pub tv: f64,
    /// `(1 − d) / (1 + d)`, the exact probability of `t_f = t_g`.
    pub exact: f64,
    /// `2d / (1 + d)`, the bound on `P[x_f ≠ x_g]`.
    pub disagreement_bound: f64,
    /// `μ(D_f ∩ D_g) / μ(D_f ∪ D_g)` from quadrature.
    pub jaccard: f64,
}

pub fn summarize(rows: &[CouplingRow], f: &Density, g: &Density) -> Result<CoincidenceReport> {
    let tv = tv_distance(f, g)?;
    let n = rows.len();
    Ok(CoincidenceReport {
        t_rate: Estimate::proportion(rows.iter().filter(|r| r.agree_t).count(), n),
        x_rate: Estimate::proportion(rows.iter().filter(|r| r.agree_x).count(), n),
        tv,
        exact: (1.0 - tv) / (1.0 + tv),
        disagreement_bound: 2.0 * tv / (1.0 + tv),
        jaccard: subgraph_measures(f, g)?.jaccard(),
    })
}

/// Empirical `P[t_f = t_g]`, `P[x_f = x_g]` over a seed range, with the exact
/// coincidence probability.
pub fn coincidence_curve(
    space: &Arc<StateSpace>,
    seeds: Range<u64>,
    f: &Density,
    g: &Density,
) -> Result<CoincidenceReport> {
    let rows = coupling_rows(space, seeds, f, g)?;
    summarize(&rows, f, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn uniform_marginal_passes_ks() {
        let s = Arc::new(StateSpace::interval(0.0, 1.0).unwrap());
        let f = Density::uniform(&s).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|i| {
                couple(&PointProcessSource::new(i, s.clone()), &f)
                    .unwrap()
                    .x
                    .as_real()
                    .unwrap()
            })
            .collect();
        assert!(stats::ks_one_sample(&xs, |x| x).p_value > 1e-4);
    }

    #[test]
    fn equal_densities_always_agree() {
        let s = Arc::new(StateSpace::counting(2).unwrap());
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let r = coincidence_curve(&s, 0..2000, &f, &f.clone()).unwrap();
        assert_eq!(r.t_rate.mean, 1.0);
        assert_eq!(r.x_rate.mean, 1.0);
    }

    #[test]
    fn two_atoms_coincidence() {
        let s = Arc::new(StateSpace::counting(2).unwrap());
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let g = Density::atoms(&s, vec![0.7, 0.3]).unwrap();
        let r = coincidence_curve(&s, 0..20_000, &f, &g).unwrap();
        assert!((r.exact - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.x_rate.mean >= r.t_rate.mean);
        assert!(r.t_rate.within(r.exact, 4.0), "{r:?}");
        assert!(1.0 - r.x_rate.mean <= r.disagreement_bound + 3.0 * r.x_rate.stderr);
    }

    #[test]
    fn interval_coincidence_matches_formula() {
        let s = Arc::new(StateSpace::interval(0.0, 1.0).unwrap());
        let f = Density::uniform(&s).unwrap();
        let g = Density::linear(&s, 0.0, 2.0).unwrap();
        let rows = coupling_rows(&s, 0..20_000, &f, &g).unwrap();
        assert!(rows.iter().all(|r| r.agree_t == r.agree_x));
        let r = summarize(&rows, &f, &g).unwrap();
        assert!((r.exact - 0.6).abs() < 1e-8);
        assert!(r.t_rate.within(0.6, 4.0), "{r:?}");
    }

    #[test]
    fn coupling_is_global() {
        let s = Arc::new(StateSpace::interval(0.0, 1.0).unwrap());
        let f = Density::uniform(&s).unwrap();
        let g = Density::linear(&s, 0.5, 1.0).unwrap();
        let src = PointProcessSource::new(42, s.clone());
        let a = couple(&src, &f).unwrap();
        let _ = couple(&src, &g).unwrap();
        assert_eq!(a, couple(&src, &f).unwrap());
        assert!(couple(&src, &f.scaled(2.0).unwrap()).is_err());
    }
}
