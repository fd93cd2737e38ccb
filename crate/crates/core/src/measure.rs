//! Measured state spaces, densities with respect to the reference measure, and
//! total-variation computations.
//!
//! Two backends ship: a finite set of atoms with positive weights, and a
//! bounded interval whose reference measure has a piecewise-constant density
//! relative to length. Both expose the same cell decomposition (atoms, or
//! [`INTERVAL_CELLS`] equal-width cells), which is what the point-process
//! module materializes on. A new backend only has to provide cells of finite
//! measure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of equal-width cells an interval is decomposed into.
pub const INTERVAL_CELLS: usize = 1024;

/// Absolute tolerance targeted by interval quadrature.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// Tolerance on the total mass of a probability density.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// A point of the state space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum State {
    Atom(usize),
    Real(f64),
}

impl State {
    pub fn as_atom(&self) -> Option<usize> {
        match *self {
            State::Atom(a) => Some(a),
            State::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match *self {
            State::Atom(_) => None,
            State::Real(x) => Some(x),
        }
    }

    /// Total order used for tie-breaking (atoms before reals).
    pub fn total_cmp(&self, other: &State) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (State::Atom(a), State::Atom(b)) => a.cmp(b),
            (State::Real(a), State::Real(b)) => a.total_cmp(b),
            (State::Atom(_), State::Real(_)) => Ordering::Less,
            (State::Real(_), State::Atom(_)) => Ordering::Greater,
        }
    }

    /// Numeric image: the atom index, or the real value.
    pub fn numeric(&self) -> f64 {
        match *self {
            State::Atom(a) => a as f64,
            State::Real(x) => x,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Atom(a) => write!(f, "{a}"),
            State::Real(x) => write!(f, "{x:?}"),
        }
    }
}

/// Serializable description of a state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceKind {
    FiniteDiscrete {
        labels: Vec<String>,
        weights: Vec<f64>,
    },
    /// `reference` is the density of the reference measure relative to length,
    /// given on equal-width pieces; the piece count must divide
    /// [`INTERVAL_CELLS`].
    RealInterval {
        lo: f64,
        hi: f64,
        reference: Vec<f64>,
    },
}

/// A σ-finite measured space `(E, π)` with its canonical cell decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceKind", into = "SpaceKind")]
pub struct StateSpace {
    kind: SpaceKind,
    /// `prefix[c]` is the π-mass of cells `0..c`.
    prefix: Vec<f64>,
}

impl TryFrom<SpaceKind> for StateSpace {
    type Error = Error;

    fn try_from(kind: SpaceKind) -> Result<Self> {
        match &kind {
            SpaceKind::FiniteDiscrete { labels, weights } => {
                if weights.is_empty() {
                    return Err(Error::domain("a discrete space needs at least one atom"));
                }
                if labels.len() != weights.len() {
                    return Err(Error::domain("labels and weights differ in length"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::domain("atom weights must be finite and strictly positive"));
                }
            }
            SpaceKind::RealInterval { lo, hi, reference } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::domain("interval needs finite lo < hi"));
                }
                if reference.is_empty() || INTERVAL_CELLS % reference.len() != 0 {
                    return Err(Error::domain(format!(
                        "reference density needs a piece count dividing {INTERVAL_CELLS}"
                    )));
                }
                if reference.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::domain("reference density must be finite and positive"));
                }
            }
        }
        let n = match &kind {
            SpaceKind::FiniteDiscrete { weights, .. } => weights.len(),
            SpaceKind::RealInterval { .. } => INTERVAL_CELLS,
        };
        let mut space = StateSpace {
            kind,
            prefix: Vec::with_capacity(n + 1),
        };
        let mut acc = 0.0;
        space.prefix.push(0.0);
        for c in 0..n {
            acc += space.raw_cell_mass(c);
            space.prefix.push(acc);
        }
        Ok(space)
    }
}

impl From<StateSpace> for SpaceKind {
    fn from(s: StateSpace) -> Self {
        s.kind
    }
}

impl StateSpace {
    /// Finite space with the given atom weights; labels default to indices.
    pub fn discrete(weights: Vec<f64>) -> Result<Self> {
        let labels = (0..weights.len()).map(|i| i.to_string()).collect();
        SpaceKind::FiniteDiscrete { labels, weights }.try_into()
    }

    pub fn counting(atoms: usize) -> Result<Self> {
        Self::discrete(vec![1.0; atoms])
    }

    /// Finite space carrying the uniform probability.
    pub fn uniform_probability(atoms: usize) -> Result<Self> {
        Self::discrete(vec![1.0 / atoms as f64; atoms])
    }

    /// Interval with Lebesgue reference measure.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::interval_with_reference(lo, hi, vec![1.0])
    }

    pub fn interval_with_reference(lo: f64, hi: f64, reference: Vec<f64>) -> Result<Self> {
        SpaceKind::RealInterval { lo, hi, reference }.try_into()
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    /// The same space with π rescaled to a probability.
    pub fn normalized(&self) -> Self {
        let z = self.total_mass();
        let kind = match &self.kind {
            SpaceKind::FiniteDiscrete { labels, weights } => SpaceKind::FiniteDiscrete {
                labels: labels.clone(),
                weights: weights.iter().map(|w| w / z).collect(),
            },
            SpaceKind::RealInterval { lo, hi, reference } => SpaceKind::RealInterval {
                lo: *lo,
                hi: *hi,
                reference: reference.iter().map(|w| w / z).collect(),
            },
        };
        kind.try_into().expect("rescaling keeps a valid space")
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, SpaceKind::FiniteDiscrete { .. })
    }

    /// Number of atoms (discrete backend only).
    pub fn atoms(&self) -> Option<usize> {
        match &self.kind {
            SpaceKind::FiniteDiscrete { weights, .. } => Some(weights.len()),
            SpaceKind::RealInterval { .. } => None,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            SpaceKind::FiniteDiscrete { .. } => None,
            SpaceKind::RealInterval { lo, hi, .. } => Some((lo, hi)),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.prefix.len() - 1
    }

    fn raw_cell_mass(&self, c: usize) -> f64 {
        match &self.kind {
            SpaceKind::FiniteDiscrete { weights, .. } => weights[c],
            SpaceKind::RealInterval { lo, hi, reference } => {
                let w = (hi - lo) / INTERVAL_CELLS as f64;
                reference[c * reference.len() / INTERVAL_CELLS] * w
            }
        }
    }

    /// π-mass of cell `c`.
    pub fn cell_mass(&self, c: usize) -> f64 {
        self.prefix[c + 1] - self.prefix[c]
    }

    /// π-mass of cells `lo..hi`.
    pub fn range_mass(&self, lo: usize, hi: usize) -> f64 {
        self.prefix[hi] - self.prefix[lo]
    }

    /// π(E).
    pub fn total_mass(&self) -> f64 {
        *self.prefix.last().expect("non-empty prefix")
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= 1e-12
    }

    /// Weight π({a}) of an atom.
    pub fn atom_weight(&self, a: usize) -> f64 {
        match &self.kind {
            SpaceKind::FiniteDiscrete { weights, .. } => weights[a],
            SpaceKind::RealInterval { .. } => 0.0,
        }
    }

    /// `[left, right)` of interval cell `c`.
    pub fn cell_bounds(&self, c: usize) -> (f64, f64) {
        match self.kind {
            SpaceKind::FiniteDiscrete { .. } => (c as f64, c as f64 + 1.0),
            SpaceKind::RealInterval { lo, hi, .. } => {
                let w = (hi - lo) / INTERVAL_CELLS as f64;
                (lo + c as f64 * w, lo + (c + 1) as f64 * w)
            }
        }
    }

    /// Cell containing a state, if any.
    pub fn cell_of(&self, x: State) -> Option<usize> {
        match (&self.kind, x) {
            (SpaceKind::FiniteDiscrete { weights, .. }, State::Atom(a)) if a < weights.len() => {
                Some(a)
            }
            (SpaceKind::RealInterval { lo, hi, .. }, State::Real(v)) if v >= *lo && v <= *hi => {
                let c = ((v - lo) / (hi - lo) * INTERVAL_CELLS as f64) as usize;
                Some(c.min(INTERVAL_CELLS - 1))
            }
            _ => None,
        }
    }

    pub fn contains(&self, x: State) -> bool {
        self.cell_of(x).is_some()
    }

    /// Boundaries of the reference-density pieces, including both ends.
    fn reference_breaks(&self) -> Vec<f64> {
        match &self.kind {
            SpaceKind::FiniteDiscrete { .. } => Vec::new(),
            SpaceKind::RealInterval { lo, hi, reference } => {
                let k = reference.len();
                (0..=k)
                    .map(|i| lo + (hi - lo) * i as f64 / k as f64)
                    .collect()
            }
        }
    }

    fn reference_at(&self, x: f64) -> f64 {
        match &self.kind {
            SpaceKind::FiniteDiscrete { .. } => 0.0,
            SpaceKind::RealInterval { lo, hi, reference } => {
                let k = reference.len();
                let i = (((x - lo) / (hi - lo)) * k as f64) as usize;
                reference[i.min(k - 1)]
            }
        }
    }
}

pub(crate) fn same_space(a: &Arc<StateSpace>, b: &Arc<StateSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

// Cell tree: node `id` covers a cell range `lo..hi`, children `2id`, `2id+1`
// split at the midpoint. Shared by envelope maxima and point materialization.
pub(crate) const ROOT: usize = 1;

#[inline]
pub(crate) fn split_point(lo: usize, hi: usize) -> usize {
    lo + (hi - lo) / 2
}

/// Per-cell upper bound of a density, with subtree maxima.
#[derive(Debug)]
pub(crate) struct Envelope {
    cells: Vec<f64>,
    tree: Vec<f64>,
}

impl Envelope {
    fn new(cells: Vec<f64>) -> Self {
        let n = cells.len();
        let mut tree = vec![0.0; 4 * n.max(1)];
        fn build(id: usize, lo: usize, hi: usize, cells: &[f64], tree: &mut [f64]) -> f64 {
            let v = if hi - lo == 1 {
                cells[lo]
            } else {
                let mid = split_point(lo, hi);
                build(2 * id, lo, mid, cells, tree).max(build(2 * id + 1, mid, hi, cells, tree))
            };
            tree[id] = v;
            v
        }
        build(ROOT, 0, n, &cells, &mut tree);
        Envelope { cells, tree }
    }

    #[inline]
    pub(crate) fn node_max(&self, id: usize) -> f64 {
        self.tree[id]
    }

    pub(crate) fn root_max(&self) -> f64 {
        self.tree[ROOT]
    }

    pub(crate) fn cell(&self, c: usize) -> f64 {
        self.cells[c]
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Atoms(Arc<[f64]>),
    Function(RealFn),
}

/// A nonnegative function on `E`, integrable against π, with a
/// piecewise-constant envelope.
///
/// Densities are immutable and cheap to clone. The subgraph `D_f` of a density
/// is the region queried in the point process; a density need not be
/// normalized, but its total mass must be positive and finite.
#[derive(Clone)]
pub struct Density {
    space: Arc<StateSpace>,
    repr: Repr,
    envelope: Arc<Envelope>,
    /// Mandatory quadrature panel boundaries (interval backend).
    panels: Arc<[f64]>,
    total_mass: f64,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Density");
        if let Repr::Atoms(v) = &self.repr {
            d.field("values", v);
        }
        d.field("total_mass", &self.total_mass)
            .field("envelope_max", &self.envelope.root_max())
            .finish()
    }
}

impl Density {
    /// Discrete density given by its value at each atom.
    pub fn atoms(space: &Arc<StateSpace>, values: Vec<f64>) -> Result<Self> {
        let n = space
            .atoms()
            .ok_or_else(|| Error::domain("atom values need a discrete space"))?;
        if values.len() != n {
            return Err(Error::domain(format!(
                "expected {n} atom values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("density values must be finite and nonnegative"));
        }
        let total_mass = values
            .iter()
            .enumerate()
            .map(|(a, v)| v * space.atom_weight(a))
            .sum();
        let envelope = Arc::new(Envelope::new(values.clone()));
        Self::finish(Density {
            space: space.clone(),
            repr: Repr::Atoms(values.into()),
            envelope,
            panels: Arc::from(Vec::new()),
            total_mass,
        })
    }

    /// Discrete density of the law with atom probabilities `probs`,
    /// i.e. `f(a) = probs[a] / π({a})`.
    pub fn from_probabilities(space: &Arc<StateSpace>, probs: &[f64]) -> Result<Self> {
        let n = space
            .atoms()
            .ok_or_else(|| Error::domain("atom probabilities need a discrete space"))?;
        if probs.len() != n {
            return Err(Error::domain(format!(
                "expected {n} probabilities, got {}",
                probs.len()
            )));
        }
        let values = probs
            .iter()
            .enumerate()
            .map(|(a, p)| p / space.atom_weight(a))
            .collect();
        Self::atoms(space, values)
    }

    /// Interval density from an arbitrary function and a declared
    /// piecewise-constant envelope.
    ///
    /// `pieces` lists `(right_end, level)` in increasing order, the last right
    /// end being the interval's upper bound. The envelope breakpoints become
    /// mandatory quadrature panel boundaries. The function is spot-checked
    /// against the envelope at every cell midpoint.
    pub fn from_fn<F>(space: &Arc<StateSpace>, f: F, pieces: &[(f64, f64)]) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let (lo, hi) = space
            .bounds()
            .ok_or_else(|| Error::domain("function densities need an interval space"))?;
        if pieces.is_empty() {
            return Err(Error::domain("envelope needs at least one piece"));
        }
        let mut panels = vec![lo];
        let mut prev = lo;
        for &(right, level) in pieces {
            if !(right > prev && right <= hi) {
                return Err(Error::domain("envelope pieces must increase within the interval"));
            }
            if !(level.is_finite() && level >= 0.0) {
                return Err(Error::domain("envelope has an infinite or negative level"));
            }
            panels.push(right);
            prev = right;
        }
        if (prev - hi).abs() > 1e-12 * (hi - lo) {
            return Err(Error::domain("envelope pieces must cover the interval"));
        }
        *panels.last_mut().unwrap() = hi;
        let cells = (0..INTERVAL_CELLS)
            .map(|c| {
                let (a, b) = space.cell_bounds(c);
                let mut left = lo;
                let mut m: f64 = 0.0;
                for &(right, level) in pieces {
                    if right > a && left < b {
                        m = m.max(level);
                    }
                    left = right;
                }
                m
            })
            .collect::<Vec<_>>();
        for (c, &e) in cells.iter().enumerate() {
            let (a, b) = space.cell_bounds(c);
            let v = f((a + b) / 2.0);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("density is negative or not finite at {}", (a + b) / 2.0)));
            }
            if v > e * (1.0 + 1e-12) {
                return Err(Error::domain(format!(
                    "density exceeds its envelope at {}",
                    (a + b) / 2.0
                )));
            }
        }
        Self::function(space, Arc::new(f), cells, panels)
    }

    fn function(
        space: &Arc<StateSpace>,
        f: RealFn,
        cell_envelope: Vec<f64>,
        panels: Vec<f64>,
    ) -> Result<Self> {
        let mut d = Density {
            space: space.clone(),
            repr: Repr::Function(f),
            envelope: Arc::new(Envelope::new(cell_envelope)),
            panels: panels.into(),
            total_mass: 0.0,
        };
        d.total_mass = d.integrate(|v| v);
        Self::finish(d)
    }

    fn finish(d: Density) -> Result<Self> {
        if !d.total_mass.is_finite() {
            return Err(Error::domain("density has an infinite integral"));
        }
        if d.total_mass <= 0.0 {
            return Err(Error::domain("density has zero mass"));
        }
        Ok(d)
    }

    /// Constant function `level` on `E` (requires π(E) finite, which holds for
    /// both shipped backends).
    pub fn constant(space: &Arc<StateSpace>, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(Error::domain("constant level must be positive and finite"));
        }
        match space.atoms() {
            Some(n) => Self::atoms(space, vec![level; n]),
            None => {
                let (lo, hi) = space.bounds().unwrap();
                Self::function(
                    space,
                    Arc::new(move |x| if (lo..=hi).contains(&x) { level } else { 0.0 }),
                    vec![level; INTERVAL_CELLS],
                    vec![lo, hi],
                )
            }
        }
    }

    /// The probability density proportional to π.
    pub fn uniform(space: &Arc<StateSpace>) -> Result<Self> {
        Self::constant(space, 1.0 / space.total_mass())
    }

    /// `f(x) = intercept + slope * x` on an interval; must be nonnegative.
    pub fn linear(space: &Arc<StateSpace>, intercept: f64, slope: f64) -> Result<Self> {
        let (lo, hi) = space
            .bounds()
            .ok_or_else(|| Error::domain("linear densities need an interval space"))?;
        let at = move |x: f64| intercept + slope * x;
        if !(at(lo).is_finite() && at(hi).is_finite()) || at(lo) < 0.0 || at(hi) < 0.0 {
            return Err(Error::domain("linear density must be nonnegative on the interval"));
        }
        let cells = (0..INTERVAL_CELLS)
            .map(|c| {
                let (a, b) = space.cell_bounds(c);
                at(a).max(at(b))
            })
            .collect();
        Self::function(
            space,
            Arc::new(move |x| {
                if (lo..=hi).contains(&x) {
                    at(x).max(0.0)
                } else {
                    0.0
                }
            }),
            cells,
            vec![lo, hi],
        )
    }

    /// Piecewise-constant interval density; `breaks` are the interior
    /// breakpoints, `values` has one more entry than `breaks`.
    pub fn piecewise_constant(space: &Arc<StateSpace>, breaks: &[f64], values: &[f64]) -> Result<Self> {
        let (lo, hi) = space
            .bounds()
            .ok_or_else(|| Error::domain("piecewise-constant densities need an interval space"))?;
        if values.len() != breaks.len() + 1 {
            return Err(Error::domain("need exactly one more value than breakpoints"));
        }
        let mut rights: Vec<f64> = breaks.to_vec();
        rights.push(hi);
        let pieces: Vec<(f64, f64)> = rights.iter().copied().zip(values.iter().copied()).collect();
        let bks: Arc<[f64]> = breaks.into();
        let vals: Arc<[f64]> = values.into();
        Self::from_fn(
            space,
            move |x| {
                if !(lo..=hi).contains(&x) {
                    return 0.0;
                }
                let i = bks.partition_point(|&b| b <= x);
                vals[i]
            },
            &pieces,
        )
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// `∫ f dπ`, the π⊗λ-measure of the subgraph.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_probability(&self) -> bool {
        let tol = if self.space.is_discrete() {
            PROBABILITY_TOL
        } else {
            QUADRATURE_TOL
        };
        (self.total_mass - 1.0).abs() <= tol
    }

    /// Atom values, for discrete densities.
    pub fn atom_values(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Atoms(v) => Some(v),
            Repr::Function(_) => None,
        }
    }

    /// Value at a state; zero for states outside the space.
    #[inline]
    pub fn value(&self, x: State) -> f64 {
        match (&self.repr, x) {
            (Repr::Atoms(v), State::Atom(a)) => v.get(a).copied().unwrap_or(0.0),
            (Repr::Function(f), State::Real(t)) => f(t),
            _ => 0.0,
        }
    }

    /// Envelope value at a state.
    pub fn envelope_at(&self, x: State) -> f64 {
        self.space
            .cell_of(x)
            .map(|c| self.envelope.cell(c))
            .unwrap_or(0.0)
    }

    pub(crate) fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    /// Spot-checks `value <= envelope` at the given states.
    pub fn envelope_dominates(&self, xs: &[State]) -> bool {
        xs.iter()
            .all(|&x| self.value(x) <= self.envelope_at(x) * (1.0 + 1e-12))
    }

    /// `alpha * f`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::domain("scale factor must be positive and finite"));
        }
        match &self.repr {
            Repr::Atoms(v) => Self::atoms(&self.space, v.iter().map(|x| x * alpha).collect()),
            Repr::Function(f) => {
                let f = f.clone();
                Self::finish(Density {
                    space: self.space.clone(),
                    repr: Repr::Function(Arc::new(move |x| alpha * f(x))),
                    envelope: Arc::new(Envelope::new(
                        self.envelope.cells.iter().map(|e| e * alpha).collect(),
                    )),
                    panels: self.panels.clone(),
                    total_mass: self.total_mass * alpha,
                })
            }
        }
    }

    /// Re-expresses the density with respect to `π / Z`, where `target` is
    /// [`StateSpace::normalized`] of this density's space and `Z = π(E)`: the
    /// function is multiplied by `Z`, the measure it describes is unchanged.
    pub fn rebased(&self, target: &Arc<StateSpace>) -> Result<Self> {
        if **target != self.space.normalized() {
            return Err(Error::SpaceMismatch);
        }
        let z = self.space.total_mass();
        let mut d = self.scaled(z)?;
        d.space = target.clone();
        d.total_mass = self.total_mass;
        Ok(d)
    }

    /// `f / ∫ f dπ`.
    pub fn normalized(&self) -> Result<Self> {
        self.scaled(1.0 / self.total_mass)
    }

    fn combine(&self, other: &Density, op: fn(f64, f64) -> f64) -> Result<Self> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        match (&self.repr, &other.repr) {
            (Repr::Atoms(a), Repr::Atoms(b)) => {
                Self::atoms(&self.space, a.iter().zip(b.iter()).map(|(x, y)| op(*x, *y)).collect())
            }
            (Repr::Function(f), Repr::Function(g)) => {
                let (f, g) = (f.clone(), g.clone());
                let cells = self
                    .envelope
                    .cells
                    .iter()
                    .zip(&other.envelope.cells)
                    .map(|(x, y)| op(*x, *y))
                    .collect();
                Self::function(
                    &self.space,
                    Arc::new(move |x| op(f(x), g(x))),
                    cells,
                    merge_panels(&self.panels, &other.panels),
                )
            }
            _ => Err(Error::SpaceMismatch),
        }
    }

    /// `min(f, g)`, whose subgraph is `D_f ∩ D_g`.
    pub fn pointwise_min(&self, other: &Density) -> Result<Self> {
        self.combine(other, f64::min)
    }

    /// `max(f, g)`, whose subgraph is `D_f ∪ D_g`.
    pub fn pointwise_max(&self, other: &Density) -> Result<Self> {
        self.combine(other, f64::max)
    }

    /// `sup(f, level)`.
    pub fn max_with_level(&self, level: f64) -> Result<Self> {
        self.pointwise_max(&Density::constant(&self.space, level)?)
    }

    /// `∫ h(f) dπ`.
    pub fn integrate(&self, h: impl Fn(f64) -> f64) -> f64 {
        match &self.repr {
            Repr::Atoms(v) => v
                .iter()
                .enumerate()
                .map(|(a, x)| h(*x) * self.space.atom_weight(a))
                .sum(),
            Repr::Function(f) => {
                let panels = merge_panels(&self.panels, &self.space.reference_breaks());
                integrate_panels(&self.space, &panels, |x| h(f(x)))
            }
        }
    }
}


impl Density {
    /// `∫_{y ≤ x} f dπ`, the distribution function of a probability density.
    pub fn mass_below(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Atoms(v) => v
                .iter()
                .enumerate()
                .take_while(|(a, _)| (*a as f64) <= x)
                .map(|(a, y)| y * self.space.atom_weight(a))
                .sum(),
            Repr::Function(f) => {
                let (lo, hi) = self.space.bounds().expect("interval space");
                if x <= lo {
                    return 0.0;
                }
                let x = x.min(hi);
                let mut panels: Vec<f64> = merge_panels(&self.panels, &self.space.reference_breaks())
                    .into_iter()
                    .filter(|&b| b < x)
                    .collect();
                panels.push(x);
                integrate_panels(&self.space, &panels, |y| f(y))
            }
        }
    }
}

fn merge_panels(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = a.iter().chain(b).copied().collect();
    v.sort_by(|x, y| x.total_cmp(y));
    v.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));
    v
}

/// `∫ h(f, g) dπ` for two densities on the same space.
pub fn integrate_pair(f: &Density, g: &Density, h: impl Fn(f64, f64) -> f64) -> Result<f64> {
    if !same_space(&f.space, &g.space) {
        return Err(Error::SpaceMismatch);
    }
    match (&f.repr, &g.repr) {
        (Repr::Atoms(a), Repr::Atoms(b)) => Ok(a
            .iter()
            .zip(b.iter())
            .enumerate()
            .map(|(i, (x, y))| h(*x, *y) * f.space.atom_weight(i))
            .sum()),
        (Repr::Function(ff), Repr::Function(gg)) => {
            let panels = merge_panels(
                &merge_panels(&f.panels, &g.panels),
                &f.space.reference_breaks(),
            );
            Ok(integrate_panels(&f.space, &panels, |x| h(ff(x), gg(x))))
        }
        _ => Err(Error::SpaceMismatch),
    }
}

/// Adaptive Simpson over each panel; the reference density is constant on
/// every panel because its breaks are included.
fn integrate_panels(space: &StateSpace, panels: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = space.bounds().expect("interval space");
    let len = hi - lo;
    panels
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                return 0.0;
            }
            let rho = space.reference_at((a + b) / 2.0);
            rho * adaptive_simpson(&g, a, b, QUADRATURE_TOL * (b - a) / len / rho.max(1.0))
        })
        .sum()
}

fn adaptive_simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const INITIAL: usize = 8;
    let h = (b - a) / INITIAL as f64;
    (0..INITIAL)
        .map(|i| {
            let x0 = a + h * i as f64;
            let x1 = if i + 1 == INITIAL { b } else { x0 + h };
            let (f0, f1) = (g(x0), g(x1));
            let fm = g((x0 + x1) / 2.0);
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            simpson_step(g, x0, x1, f0, fm, f1, whole, tol / INITIAL as f64, 40)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    g: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = (a + b) / 2.0;
    let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
    let (flm, frm) = (g(lm), g(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(g, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(g, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Total-variation distance `½∫|f − g| dπ = ∫[f − g]₊ dπ` between two
/// probability densities.
pub fn tv_distance(f: &Density, g: &Density) -> Result<f64> {
    let half_l1 = 0.5 * integrate_pair(f, g, |a, b| (a - b).abs())?;
    Ok(half_l1.clamp(0.0, 1.0))
}

/// Measures of the intersection, union and symmetric difference of two
/// subgraphs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphMeasures {
    pub intersection: f64,
    pub union: f64,
    pub symmetric_difference: f64,
}

impl SubgraphMeasures {
    /// `μ(D_f ∩ D_g) / μ(D_f ∪ D_g)`.
    pub fn jaccard(&self) -> f64 {
        self.intersection / self.union
    }
}

pub fn subgraph_measures(f: &Density, g: &Density) -> Result<SubgraphMeasures> {
    Ok(SubgraphMeasures {
        intersection: integrate_pair(f, g, f64::min)?,
        union: integrate_pair(f, g, f64::max)?,
        symmetric_difference: integrate_pair(f, g, |a, b| (a - b).abs())?,
    })
}

/// The subgraph `D_f` of a density, a region of finite positive measure.
#[derive(Clone, Debug)]
pub struct Region {
    density: Density,
}

impl Region {
    pub fn subgraph(density: &Density) -> Result<Self> {
        let m = density.total_mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::domain("region measure must be positive and finite"));
        }
        Ok(Region {
            density: density.clone(),
        })
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    /// `μ(D_f) = ∫ f dπ`.
    pub fn measure(&self) -> f64 {
        self.density.total_mass()
    }

    #[inline]
    pub fn contains(&self, x: State, y: f64) -> bool {
        y >= 0.0 && y <= self.density.value(x)
    }
}

/// Serializable description of a density and the space it lives on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DensitySpec {
    /// A law on atoms `0..n`; the reference measure defaults to the uniform
    /// probability.
    Discrete {
        probabilities: Vec<f64>,
        #[serde(default)]
        reference: Option<Vec<f64>>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Linear {
        lo: f64,
        hi: f64,
        intercept: f64,
        slope: f64,
    },
    PiecewiseConstant {
        lo: f64,
        hi: f64,
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
}

impl DensitySpec {
    pub fn space(&self) -> Result<StateSpace> {
        match self {
            DensitySpec::Discrete {
                probabilities,
                reference,
            } => match reference {
                Some(w) if w.len() != probabilities.len() => {
                    Err(Error::domain("reference and probabilities differ in length"))
                }
                Some(w) => StateSpace::discrete(w.clone()),
                None => StateSpace::uniform_probability(probabilities.len()),
            },
            DensitySpec::Uniform { lo, hi }
            | DensitySpec::Linear { lo, hi, .. }
            | DensitySpec::PiecewiseConstant { lo, hi, .. } => StateSpace::interval(*lo, *hi),
        }
    }

    /// Builds the density on `space`, which must match [`DensitySpec::space`].
    pub fn build_on(&self, space: &Arc<StateSpace>) -> Result<Density> {
        if **space != self.space()? {
            return Err(Error::SpaceMismatch);
        }
        match self {
            DensitySpec::Discrete { probabilities, .. } => {
                Density::from_probabilities(space, probabilities)
            }
            DensitySpec::Uniform { .. } => Density::uniform(space),
            DensitySpec::Linear {
                intercept, slope, ..
            } => Density::linear(space, *intercept, *slope),
            DensitySpec::PiecewiseConstant { breaks, values, .. } => {
                Density::piecewise_constant(space, breaks, values)
            }
        }
    }

    pub fn build(&self) -> Result<Density> {
        self.build_on(&Arc::new(self.space()?))
    }
}

/// Partial sums of `∑_k ∏_{n≤k} (1 − ε_n)` up to a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSumDiagnostic {
    /// `∏_{n≤k}(1 − ε_n)` for `k = 0..=horizon`.
    pub partial_products: Vec<f64>,
    pub partial_sum: f64,
}

/// Finite-horizon diagnostic for the divergence condition on an influence
/// sequence. Uses `eps[0..=horizon]`, so `eps` needs more than `horizon`
/// entries. Divergence itself is undecidable from a prefix; only the partial
/// sum is reported.
pub fn influence_check_h(eps: &[f64], horizon: usize) -> Result<PartialSumDiagnostic> {
    if horizon >= eps.len() {
        return Err(Error::domain(format!(
            "horizon {horizon} needs {} coefficients, got {}",
            horizon + 1,
            eps.len()
        )));
    }
    if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::domain("influence coefficients must lie in [0, 1]"));
    }
    let mut prod = 1.0;
    let partial_products: Vec<f64> = eps[..=horizon]
        .iter()
        .map(|e| {
            prod *= 1.0 - e;
            prod
        })
        .collect();
    let partial_sum = partial_products.iter().sum();
    Ok(PartialSumDiagnostic {
        partial_products,
        partial_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atoms() -> Arc<StateSpace> {
        Arc::new(StateSpace::counting(2).unwrap())
    }

    fn unit() -> Arc<StateSpace> {
        Arc::new(StateSpace::interval(0.0, 1.0).unwrap())
    }

    #[test]
    fn mass_below_is_the_distribution_function() {
        let s = Arc::new(StateSpace::interval(0.0, 1.0).unwrap());
        let f = Density::linear(&s, 0.0, 2.0).unwrap();
        assert!((f.mass_below(0.5) - 0.25).abs() < 1e-9);
        assert_eq!(f.mass_below(-1.0), 0.0);
        assert!((f.mass_below(2.0) - 1.0).abs() < 1e-9);
        let d = Arc::new(StateSpace::uniform_probability(3).unwrap());
        let p = Density::from_probabilities(&d, &[0.2, 0.3, 0.5]).unwrap();
        assert!((p.mass_below(1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(StateSpace::discrete(vec![1.0, 0.0]).is_err());
        assert!(StateSpace::discrete(vec![]).is_err());
        assert!(StateSpace::interval(1.0, 1.0).is_err());
        assert!(StateSpace::interval_with_reference(0.0, 1.0, vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn tv_examples() {
        let s = two_atoms();
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let g = Density::atoms(&s, vec![0.7, 0.3]).unwrap();
        assert_eq!(tv_distance(&f, &f).unwrap(), 0.0);
        assert!((tv_distance(&f, &g).unwrap() - 0.2).abs() < 1e-12);
        let a = Density::atoms(&s, vec![1.0, 0.0]).unwrap();
        let b = Density::atoms(&s, vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn tv_rejects_mismatched_spaces() {
        let f = Density::atoms(&two_atoms(), vec![0.5, 0.5]).unwrap();
        let g = Density::uniform(&unit()).unwrap();
        assert_eq!(tv_distance(&f, &g), Err(Error::SpaceMismatch));
        let three = Arc::new(StateSpace::counting(3).unwrap());
        let h = Density::uniform(&three).unwrap();
        assert_eq!(tv_distance(&f, &h), Err(Error::SpaceMismatch));
    }

    #[test]
    fn subgraph_measures_discrete() {
        let s = two_atoms();
        let f = Density::atoms(&s, vec![0.5, 0.5]).unwrap();
        let g = Density::atoms(&s, vec![0.7, 0.3]).unwrap();
        let m = subgraph_measures(&f, &g).unwrap();
        assert!((m.intersection - 0.8).abs() < 1e-12);
        assert!((m.union - 1.2).abs() < 1e-12);
        assert!((m.symmetric_difference - 0.4).abs() < 1e-12);
        let same = subgraph_measures(&f, &f).unwrap();
        assert_eq!((same.intersection, same.union, same.symmetric_difference), (1.0, 1.0, 0.0));
    }

    #[test]
    fn subgraph_measures_uniform_vs_linear() {
        let s = unit();
        let f = Density::uniform(&s).unwrap();
        let g = Density::linear(&s, 0.0, 2.0).unwrap();
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
        let m = subgraph_measures(&f, &g).unwrap();
        assert!((m.intersection - 0.75).abs() < 1e-8, "{m:?}");
        assert!((m.union - 1.25).abs() < 1e-8, "{m:?}");
        assert!((m.symmetric_difference - 0.5).abs() < 1e-8, "{m:?}");
        assert!((tv_distance(&f, &g).unwrap() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn quadrature_respects_reference_density() {
        let s = Arc::new(StateSpace::interval_with_reference(0.0, 2.0, vec![1.0, 3.0]).unwrap());
        assert!((s.total_mass() - 4.0).abs() < 1e-12);
        let f = Density::linear(&s, 0.0, 1.0).unwrap();
        // ∫_0^1 x dx + 3∫_1^2 x dx = 0.5 + 4.5
        assert!((f.total_mass() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn piecewise_constant_breaks_are_exact() {
        let s = unit();
        let f = Density::piecewise_constant(&s, &[0.3], &[2.0, 4.0 / 7.0]).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(f.value(State::Real(0.2)), 2.0);
        assert_eq!(f.value(State::Real(0.5)), 4.0 / 7.0);
    }

    #[test]
    fn from_fn_rejects_violated_envelope() {
        let s = unit();
        assert!(Density::from_fn(&s, |x| 2.0 * x, &[(1.0, 1.5)]).is_err());
        assert!(Density::from_fn(&s, |x| 2.0 * x, &[(0.5, 1.0), (1.0, 2.0)]).is_ok());
        assert!(Density::from_fn(&s, |x| x, &[(1.0, f64::INFINITY)]).is_err());
    }

    #[test]
    fn zero_mass_is_rejected() {
        assert!(Density::atoms(&two_atoms(), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn envelope_dominates_on_samples() {
        let s = unit();
        let g = Density::linear(&s, 0.2, 1.6).unwrap();
        let xs: Vec<State> = (0..=1000).map(|i| State::Real(i as f64 / 1000.0)).collect();
        assert!(g.envelope_dominates(&xs));
        let h = g.pointwise_min(&Density::uniform(&s).unwrap()).unwrap();
        assert!(h.envelope_dominates(&xs));
    }

    #[test]
    fn density_specs_build() {
        let spec: DensitySpec =
            serde_json::from_str(r#"{"family":"linear","lo":0,"hi":1,"intercept":0,"slope":2}"#).unwrap();
        let g = spec.build().unwrap();
        assert!(g.is_probability());
        let d = DensitySpec::Discrete {
            probabilities: vec![0.25, 0.75],
            reference: None,
        }
        .build()
        .unwrap();
        assert_eq!(d.atom_values().unwrap(), &[0.5, 1.5]);
        let other = Arc::new(StateSpace::counting(2).unwrap());
        assert!(DensitySpec::Uniform { lo: 0.0, hi: 1.0 }.build_on(&other).is_err());
    }

    #[test]
    fn rebasing_preserves_the_measure() {
        let s = Arc::new(StateSpace::interval(0.0, 2.0).unwrap());
        let f = Density::uniform(&s).unwrap();
        let t = Arc::new(s.normalized());
        assert!((t.total_mass() - 1.0).abs() < 1e-15);
        let g = f.rebased(&t).unwrap();
        assert!((g.total_mass() - 1.0).abs() < 1e-9);
        assert!((g.value(State::Real(0.3)) - 1.0).abs() < 1e-15);
        let c = Arc::new(StateSpace::counting(4).unwrap());
        let d = Density::from_probabilities(&c, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = d.rebased(&Arc::new(c.normalized())).unwrap();
        assert!((e.atom_values().unwrap()[3] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn influence_partial_sums() {
        let d = influence_check_h(&[0.0; 11], 10).unwrap();
        assert_eq!(d.partial_sum, 11.0);
        let d = influence_check_h(&[1.0; 11], 10).unwrap();
        assert_eq!(d.partial_sum, 0.0);
        let d = influence_check_h(&[0.5; 4], 3).unwrap();
        assert!((d.partial_sum - 0.9375).abs() < 1e-15);
        assert!(influence_check_h(&[0.5, 1.5], 1).is_err());
        assert!(influence_check_h(&[0.5], 1).is_err());
    }

    #[test]
    fn space_round_trips_through_serde() {
        let s = StateSpace::interval_with_reference(0.0, 2.0, vec![1.0, 3.0]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: StateSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<StateSpace>(
            r#"{"kind":"finite-discrete","labels":["a"],"weights":[-1.0]}"#
        )
        .is_err());
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn tv_matches_subgraph_identities(p in prob_vec(5), q in prob_vec(5)) {
            let s = Arc::new(StateSpace::counting(5).unwrap());
            let f = Density::atoms(&s, p).unwrap();
            let g = Density::atoms(&s, q).unwrap();
            let tv = tv_distance(&f, &g).unwrap();
            let m = subgraph_measures(&f, &g).unwrap();
            prop_assert!((tv - (1.0 - m.intersection)).abs() < 1e-9);
            prop_assert!((1.0 + tv - m.union).abs() < 1e-9);
            prop_assert!((m.intersection + m.union - f.total_mass() - g.total_mass()).abs() < 1e-12);
        }

        #[test]
        fn tv_triangle_inequality(p in prob_vec(4), q in prob_vec(4), r in prob_vec(4)) {
            let s = Arc::new(StateSpace::counting(4).unwrap());
            let f = Density::atoms(&s, p).unwrap();
            let g = Density::atoms(&s, q).unwrap();
            let h = Density::atoms(&s, r).unwrap();
            let fg = tv_distance(&f, &g).unwrap();
            let gh = tv_distance(&g, &h).unwrap();
            let fh = tv_distance(&f, &h).unwrap();
            prop_assert!(fh <= fg + gh + 1e-12);
            prop_assert!((fg - tv_distance(&g, &f).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn continuous_tv_identity(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let s = unit();
            let f = Density::linear(&s, 1.0 - a / 2.0, a).unwrap();
            let g = Density::linear(&s, 1.0 - b / 2.0, b).unwrap();
            let tv = tv_distance(&f, &g).unwrap();
            let m = subgraph_measures(&f, &g).unwrap();
            prop_assert!((tv - (1.0 - m.intersection)).abs() < 1e-8);
            prop_assert!((1.0 + tv - m.union).abs() < 1e-8);
            // closed form: the lines cross at 1/2, tv = |a - b| / 8
            prop_assert!((tv - (a - b).abs() / 8.0).abs() < 1e-8);
        }
    }
}
