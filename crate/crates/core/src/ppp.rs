//! A seed-determined Poisson point process on `E × ℝ⁺ × ℝ⁺` with intensity
//! `π ⊗ λ ⊗ λ`, materialized lazily and consistently.
//!
//! Space is cut into boxes `cell × [j, j+1) × [s, s+1)` (cell of `E`, unit
//! strip in `y`, unit slab in `t`). For each strip/slab pair, the total count
//! over `E` is drawn from its own substream and pushed down the cell tree by
//! binomial splits, each split keyed by its tree node; leaf cells draw their
//! points from a leaf substream. Every quantity is a pure function of the
//! seed and its key, so any two queries touching the same box see the same
//! points, whatever else they asked for. Queries prune subtrees whose
//! envelope lies below the strip.

use std::cmp::Ordering;
use std::sync::Arc;

use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{same_space, split_point, Density, Region, State, StateSpace, ROOT};
use crate::rng::{tag, Substream};

/// Hard cap on the number of time slabs scanned by one query.
pub const MAX_SLABS: u64 = 1 << 24;

/// A point `(x, y, t)` of the process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: State,
    pub y: f64,
    pub t: f64,
}

/// The first point of a region: minimal `t` among its points.
pub type FirstPoint = Point;

impl Point {
    /// Lexicographic order on `(t, y, x)`; ties in `t` have probability zero.
    pub fn order(&self, other: &Point) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.y.total_cmp(&other.y))
            .then(self.x.total_cmp(&other.x))
    }

    fn earlier(self, other: Option<Point>) -> Point {
        match other {
            Some(o) if o.order(&self) == Ordering::Less => o,
            _ => self,
        }
    }
}

/// Anything that can answer first-point queries on a fixed point set.
pub trait PointSet {
    fn space(&self) -> &Arc<StateSpace>;

    /// The point of the region with minimal third coordinate.
    fn first_point_in(&self, region: &Region) -> Result<FirstPoint>;

    /// Shorthand for the first point under the graph of `f`.
    fn first_point_under(&self, f: &Density) -> Result<FirstPoint> {
        self.first_point_in(&Region::subgraph(f)?)
    }

    /// All points in `cells[lo..hi] × [strip, strip+1) × [slab, slab+1)`.
    fn points_in_box(&self, cells: (usize, usize), strip: u64, slab: u64) -> Vec<Point>;
}

/// Answers every region from the same underlying point set.
pub fn joint_first_points<P: PointSet + ?Sized>(src: &P, regions: &[Region]) -> Result<Vec<FirstPoint>> {
    regions.iter().map(|r| src.first_point_in(r)).collect()
}

/// The base process, fully determined by `(seed, space)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointProcessSource {
    pub seed: u64,
    space: Arc<StateSpace>,
}

impl PointProcessSource {
    pub fn new(seed: u64, space: Arc<StateSpace>) -> Self {
        PointProcessSource { seed, space }
    }

    fn check(&self, region: &Region) -> Result<()> {
        if !same_space(&self.space, region.density().space()) {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    /// Visits the points of strip `j`, slab `s` in every subtree accepted by
    /// `keep(node, lo, hi)`.
    fn visit(
        &self,
        j: u64,
        s: u64,
        keep: &impl Fn(usize, usize, usize) -> bool,
        emit: &mut impl FnMut(usize, Point),
    ) {
        let n_cells = self.space.num_cells();
        if !keep(ROOT, 0, n_cells) {
            return;
        }
        let mut rng = Substream::new(self.seed, &[tag::PPP_COUNT, j, s]);
        let n = Poisson::new(self.space.total_mass())
            .expect("positive finite space mass")
            .sample(&mut rng) as u64;
        self.descend(j, s, ROOT, 0, n_cells, n, keep, emit);
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        j: u64,
        s: u64,
        id: usize,
        lo: usize,
        hi: usize,
        n: u64,
        keep: &impl Fn(usize, usize, usize) -> bool,
        emit: &mut impl FnMut(usize, Point),
    ) {
        if n == 0 || !keep(id, lo, hi) {
            return;
        }
        if hi - lo == 1 {
            let mut rng = Substream::new(self.seed, &[tag::PPP_LEAF, j, s, lo as u64]);
            let (a, b) = self.space.cell_bounds(lo);
            for _ in 0..n {
                let (ux, uy, ut) = (rng.uniform(), rng.uniform(), rng.uniform());
                let x = if self.space.is_discrete() {
                    State::Atom(lo)
                } else {
                    State::Real(a + ux * (b - a))
                };
                emit(
                    lo,
                    Point {
                        x,
                        y: j as f64 + uy,
                        t: s as f64 + ut,
                    },
                );
            }
            return;
        }
        let mid = split_point(lo, hi);
        let p = (self.space.range_mass(lo, mid) / self.space.range_mass(lo, hi)).clamp(0.0, 1.0);
        let mut rng = Substream::new(self.seed, &[tag::PPP_SPLIT, j, s, id as u64]);
        let left = Binomial::new(n, p).expect("valid split").sample(&mut rng);
        self.descend(j, s, 2 * id, lo, mid, left, keep, emit);
        self.descend(j, s, 2 * id + 1, mid, hi, n - left, keep, emit);
    }

    /// First point of the region, skipping one given point of the base set.
    fn scan_first(&self, region: &Region, skip: Option<&Point>) -> Result<Point> {
        self.check(region)?;
        let f = region.density();
        let env = f.envelope();
        let strips = env.root_max().ceil() as u64;
        for s in 0..MAX_SLABS {
            let mut best: Option<Point> = None;
            for j in 0..strips {
                let level = j as f64;
                self.visit(
                    j,
                    s,
                    &|id, _, _| env.node_max(id) > level,
                    &mut |_, p| {
                        if region.contains(p.x, p.y) && skip != Some(&p) {
                            best = Some(p.earlier(best));
                        }
                    },
                );
            }
            if let Some(b) = best {
                return Ok(b);
            }
        }
        Err(Error::Internal(format!(
            "no point found in {MAX_SLABS} time slabs (region measure {})",
            region.measure()
        )))
    }

    fn box_points(&self, cells: (usize, usize), strip: u64, slab: u64) -> Vec<Point> {
        let (clo, chi) = cells;
        let mut out = Vec::new();
        self.visit(strip, slab, &|_, lo, hi| lo < chi && hi > clo, &mut |c, p| {
            if (clo..chi).contains(&c) {
                out.push(p)
            }
        });
        out
    }
}

impl PointSet for PointProcessSource {
    fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    fn first_point_in(&self, region: &Region) -> Result<FirstPoint> {
        self.scan_first(region, None)
    }

    fn points_in_box(&self, cells: (usize, usize), strip: u64, slab: u64) -> Vec<Point> {
        self.box_points(cells, strip, slab)
    }
}

/// A base process with one point removed and one point added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplicedSource {
    pub base: PointProcessSource,
    pub removed: Point,
    pub added: Point,
}

/// Replaces the first point of `region` in `src` by `(x, v·f(x), t_A)`, where
/// `f` is the region's density and `t_A` the time of the removed point.
pub fn splice(src: &PointProcessSource, region: &Region, x: State, v: f64) -> Result<SplicedSource> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("splice height fraction {v} outside [0, 1]")));
    }
    let fx = region.density().value(x);
    if !src.space.contains(x) || !(fx > 0.0) {
        return Err(Error::domain(
            "replacement point has zero density, it would fall outside the region",
        ));
    }
    let removed = src.first_point_in(region)?;
    Ok(SplicedSource {
        base: src.clone(),
        removed,
        added: Point {
            x,
            y: v * fx,
            t: removed.t,
        },
    })
}

impl PointSet for SplicedSource {
    fn space(&self) -> &Arc<StateSpace> {
        &self.base.space
    }

    fn first_point_in(&self, region: &Region) -> Result<FirstPoint> {
        let base = self.base.scan_first(region, Some(&self.removed))?;
        if region.contains(self.added.x, self.added.y)
            && self.added.order(&base) == Ordering::Less
        {
            return Ok(self.added);
        }
        Ok(base)
    }

    fn points_in_box(&self, cells: (usize, usize), strip: u64, slab: u64) -> Vec<Point> {
        let mut pts = self.base.box_points(cells, strip, slab);
        pts.retain(|p| *p != self.removed);
        let a = self.added;
        let in_cells = self
            .base
            .space
            .cell_of(a.x)
            .is_some_and(|c| (cells.0..cells.1).contains(&c));
        if in_cells && a.y.floor() as u64 == strip && a.t.floor() as u64 == slab {
            pts.push(a);
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::subgraph_measures;
    use crate::rng::derive_seed;
    use crate::stats::{self, Estimate};
    use proptest::prelude::*;

    fn atoms(n: usize) -> Arc<StateSpace> {
        Arc::new(StateSpace::counting(n).unwrap())
    }

    fn unit() -> Arc<StateSpace> {
        Arc::new(StateSpace::interval(0.0, 1.0).unwrap())
    }

    fn src(seed: u64, space: &Arc<StateSpace>) -> PointProcessSource {
        PointProcessSource::new(derive_seed(seed, &[77]), space.clone())
    }

    #[test]
    fn repeated_and_interleaved_queries_agree() {
        let s = unit();
        let f = Density::uniform(&s).unwrap();
        let g = Density::linear(&s, 0.0, 2.0).unwrap();
        for seed in 0..200 {
            let p = src(seed, &s);
            let a = p.first_point_under(&f).unwrap();
            let _ = p.first_point_under(&g).unwrap();
            let b = p.first_point_under(&f).unwrap();
            assert_eq!(a, b);
            assert_eq!(p.points_in_box((0, 512), 0, 0), p.points_in_box((0, 512), 0, 0));
        }
    }

    #[test]
    fn queried_points_belong_to_their_boxes() {
        let s = unit();
        let g = Density::linear(&s, 0.0, 2.0).unwrap();
        for seed in 0..200 {
            let p = src(seed, &s);
            let fp = p.first_point_under(&g).unwrap();
            let c = s.cell_of(fp.x).unwrap();
            let pts = p.points_in_box((c, c + 1), fp.y.floor() as u64, fp.t.floor() as u64);
            assert!(pts.contains(&fp));
        }
    }

    #[test]
    fn first_time_is_exponential_with_region_mass() {
        let s = atoms(2);
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let g = f.scaled(2.0).unwrap();
        let n = 20_000;
        let tf: Vec<f64> = (0..n).map(|i| src(i, &s).first_point_under(&f).unwrap().t).collect();
        let tg: Vec<f64> = (0..n).map(|i| src(i, &s).first_point_under(&g).unwrap().t).collect();
        let ef = Estimate::from_samples(&tf);
        assert!((ef.mean - 1.0).abs() < 4.0 / (n as f64).sqrt(), "{ef:?}");
        let ks = stats::ks_one_sample(&tg, |t| 1.0 - (-2.0 * t).exp());
        assert!(ks.p_value > 1e-4, "{ks:?}");
    }

    #[test]
    fn first_point_law_has_density_f() {
        let s = atoms(3);
        let f = Density::atoms(&s, vec![0.2, 0.3, 0.5]).unwrap();
        let mut counts = [0u64; 3];
        let mut scaled = [0u64; 3];
        let f7 = f.scaled(7.0).unwrap();
        for i in 0..20_000 {
            let p = src(i, &s);
            counts[p.first_point_under(&f).unwrap().x.as_atom().unwrap()] += 1;
            scaled[p.first_point_under(&f7).unwrap().x.as_atom().unwrap()] += 1;
        }
        assert!(stats::chi_square_gof(&counts, &[0.2, 0.3, 0.5]).p_value > 1e-4);
        assert!(stats::chi_square_gof(&scaled, &[0.2, 0.3, 0.5]).p_value > 1e-4);
    }

    #[test]
    fn continuous_first_point_law() {
        let s = unit();
        let g = Density::linear(&s, 0.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|i| src(i, &s).first_point_under(&g).unwrap().x.as_real().unwrap())
            .collect();
        assert!(stats::ks_one_sample(&xs, |x| x * x).p_value > 1e-4);
    }

    #[test]
    fn joint_queries_on_nested_regions() {
        let s = atoms(2);
        let a = Region::subgraph(&Density::atoms(&s, vec![0.5, 0.2]).unwrap()).unwrap();
        let b = Region::subgraph(&Density::atoms(&s, vec![0.7, 0.3]).unwrap()).unwrap();
        for seed in 0..500 {
            let p = src(seed, &s);
            let same = joint_first_points(&p, &[a.clone(), a.clone()]).unwrap();
            assert_eq!(same[0], same[1]);
            let fa = p.first_point_in(&a).unwrap();
            let fb = p.first_point_in(&b).unwrap();
            assert!(fb.t <= fa.t);
            if a.contains(fb.x, fb.y) {
                assert_eq!(fa, fb);
            }
        }
    }

    #[test]
    fn coincidence_probability_is_jaccard_ratio() {
        let s = atoms(2);
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let g = Density::atoms(&s, vec![0.7, 0.3]).unwrap();
        let (fr, gr) = (Region::subgraph(&f).unwrap(), Region::subgraph(&g).unwrap());
        let n = 20_000;
        let mut hits = 0;
        for i in 0..n {
            let pts = joint_first_points(&src(i, &s), &[fr.clone(), gr.clone()]).unwrap();
            if pts[0].t == pts[1].t {
                assert_eq!(pts[0].x, pts[1].x);
                hits += 1;
            }
        }
        let target = subgraph_measures(&f, &g).unwrap().jaccard();
        assert!((target - 2.0 / 3.0).abs() < 1e-12);
        assert!(Estimate::proportion(hits, n as usize).within(target, 4.0));
    }

    #[test]
    fn splice_replaces_the_first_point() {
        let s = unit();
        let f = Density::linear(&s, 0.5, 1.0).unwrap();
        let fr = Region::subgraph(&f).unwrap();
        let g = Density::linear(&s, 2.0, -2.0).unwrap();
        for seed in 0..200 {
            let p = src(seed, &s);
            let t_f = p.first_point_in(&fr).unwrap().t;
            let view = splice(&p, &fr, State::Real(0.25), 0.5).unwrap();
            let fp = view.first_point_in(&fr).unwrap();
            assert_eq!(fp.x, State::Real(0.25));
            assert_eq!(fp.y, 0.5 * f.value(State::Real(0.25)));
            assert_eq!(fp.t, t_f);
            // boxes away from the removed and added points are untouched
            let old = p.points_in_box((0, 1024), 3, 0);
            assert_eq!(old, view.points_in_box((0, 1024), 3, 0));
            let _ = view.first_point_under(&g).unwrap();
        }
    }

    #[test]
    fn splice_rejects_zero_density_target() {
        let s = atoms(2);
        let f = Density::atoms(&s, vec![1.0, 0.0]).unwrap();
        let p = src(1, &s);
        let r = Region::subgraph(&f).unwrap();
        assert!(splice(&p, &r, State::Atom(1), 0.5).is_err());
        assert!(splice(&p, &r, State::Atom(0), 0.5).is_ok());
    }

    #[test]
    fn mismatched_space_is_rejected() {
        let p = src(0, &atoms(2));
        let f = Density::uniform(&unit()).unwrap();
        assert_eq!(p.first_point_under(&f), Err(Error::SpaceMismatch));
    }

    #[test]
    fn box_counts_are_poisson() {
        let s = unit();
        // 8 boxes of 128 cells: mean 1/8 per box.
        let mut counts = Vec::new();
        for seed in 0..2_000 {
            let p = src(seed, &s);
            for b in 0..8 {
                counts.push(p.points_in_box((b * 128, (b + 1) * 128), 1, 2).len() as u64);
            }
        }
        let d = stats::poisson_dispersion(&counts, 0.125);
        assert!(d.p_value > 1e-4, "{d:?}");
        assert!(stats::poisson_gof(&counts, 0.125).p_value > 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn t_coincidence_implies_x_coincidence(
            seed in any::<u64>(),
            p in proptest::collection::vec(0.01f64..1.0, 3),
            q in proptest::collection::vec(0.01f64..1.0, 3),
        ) {
            let s = atoms(3);
            let f = Density::atoms(&s, p).unwrap();
            let g = Density::atoms(&s, q).unwrap();
            let src = PointProcessSource::new(seed, s.clone());
            let a = src.first_point_under(&f).unwrap();
            let b = src.first_point_under(&g).unwrap();
            if a.t == b.t {
                prop_assert_eq!(a.x, b.x);
            }
            prop_assert!(a.y <= f.value(a.x));
        }
    }
}
