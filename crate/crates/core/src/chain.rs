//! Stationary chain kernels `x ↦ f(·|x)`, path simulation through the global
//! coupling, and influence coefficients.
//!
//! Pasts are finite words, oldest symbol first. For discrete models with
//! finite memory `D` (Markov chains, and the binary geometric model truncated
//! at depth [`GEOMETRIC_DEPTH`]) the kernel of a word shorter than `D` is the
//! exact conditional law computed from the stationary law of `D`-blocks, so a
//! path simulated from the empty word is exactly stationary and the
//! finite-word kernels are the true conditionals. The continuous geometric
//! model evaluates short words with the unseen symbols at their mean and is
//! simulated after a burn-in.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::coupler::couple;
use crate::error::{Error, Result};
use crate::measure::{tv_distance, Density, DensitySpec, State, StateSpace};
use crate::ppp::{PointProcessSource, PointSet};
use crate::rng::{derive_seed, tag};
use crate::stats::Estimate;

/// Kernel depth of the binary geometric model.
pub const GEOMETRIC_DEPTH: usize = 20;

/// Depth of the frozen past standing in for the infinite past.
pub const PAST_DEPTH: usize = 40;

/// Largest number of `D`-blocks a word table may enumerate.
const MAX_BLOCKS: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    Iid {
        density: DensitySpec,
    },
    /// Finite alphabet `0..alphabet`, `alphabet^order` rows indexed by the last
    /// `order` symbols read as a base-`alphabet` number, oldest digit first.
    Markov {
        alphabet: usize,
        order: usize,
        transitions: Vec<Vec<f64>>,
    },
    /// `P[X = 1 | x] = 1/2 + Σ_k c r^k (x_{-k} − 1/2)` on `{0, 1}`.
    GeometricBinary {
        c: f64,
        r: f64,
    },
    /// `f(a|x) = 1 + (2a − 1) Σ_k c r^k (x_{-k} − 1/2)` on `[0, 1]`.
    GeometricContinuous {
        c: f64,
        r: f64,
    },
}

/// Finite-memory kernel on a finite alphabet with its stationary block law.
#[derive(Debug)]
struct WordTable {
    k: usize,
    depth: usize,
    /// `kernel[row * k + b]`, rows indexed by the last `depth` symbols.
    kernel: Vec<f64>,
    /// `marginals[l][w]`: stationary probability of the word `w` of length `l`.
    marginals: Vec<Vec<f64>>,
}

impl WordTable {
    fn new(k: usize, depth: usize, kernel: Vec<f64>) -> Result<Self> {
        let states = k.pow(depth as u32);
        let mut pi = vec![1.0 / states as f64; states];
        let mut next = vec![0.0; states];
        let mut converged = false;
        for _ in 0..20_000 {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &w) in pi.iter().enumerate() {
                let base = (i * k) % states;
                for b in 0..k {
                    next[base + b] += w * kernel[i * k + b];
                }
            }
            let total: f64 = next.iter().sum();
            let mut diff = 0.0;
            for (n, p) in next.iter_mut().zip(&pi) {
                *n /= total;
                diff += (*n - p).abs();
            }
            std::mem::swap(&mut pi, &mut next);
            if diff < 1e-13 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Internal("stationary block law did not converge".into()));
        }
        let mut marginals = vec![Vec::new(); depth + 1];
        marginals[depth] = pi;
        for l in (0..depth).rev() {
            let size = k.pow(l as u32);
            let mut m = vec![0.0; size];
            for (i, p) in marginals[l + 1].iter().enumerate() {
                m[i % size] += p;
            }
            marginals[l] = m;
        }
        Ok(WordTable {
            k,
            depth,
            kernel,
            marginals,
        })
    }

    fn index(&self, word: &[usize]) -> usize {
        word.iter().fold(0, |acc, &a| acc * self.k + a)
    }

    fn next_probabilities(&self, past: &[usize]) -> Vec<f64> {
        let k = self.k;
        if past.len() >= self.depth {
            let row = self.index(&past[past.len() - self.depth..]);
            self.kernel[row * k..(row + 1) * k].to_vec()
        } else {
            let l = past.len();
            let i = self.index(past);
            let denom = self.marginals[l][i];
            (0..k).map(|b| self.marginals[l + 1][i * k + b] / denom).collect()
        }
    }
}

#[derive(Debug)]
enum Kind {
    Iid(Density),
    Table(Arc<WordTable>),
    Continuous { coeffs: Vec<f64> },
}

/// A stationary process kernel with declared memory structure.
#[derive(Clone, Debug)]
pub struct ChainModel {
    spec: ModelSpec,
    base_space: Arc<StateSpace>,
    space: Arc<StateSpace>,
    kind: Arc<Kind>,
    rebased: bool,
}

fn check_geometric(c: f64, r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::domain("geometric ratio r must lie in (0, 1)"));
    }
    if !(c >= 0.0 && c.is_finite() && c * r / (1.0 - r) < 1.0) {
        return Err(Error::domain(
            "geometric coefficients need c ≥ 0 and Σ_k c r^k < 1",
        ));
    }
    Ok(())
}

fn geometric_coeffs(c: f64, r: f64, depth: usize) -> Vec<f64> {
    (1..=depth).map(|k| c * r.powi(k as i32)).collect()
}

fn geometric_table(c: f64, r: f64) -> Result<Arc<WordTable>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<WordTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (c.to_bits(), r.to_bits());
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let d = GEOMETRIC_DEPTH;
    let a = geometric_coeffs(c, r, d);
    let mut kernel = Vec::with_capacity(2 << d);
    for row in 0..1usize << d {
        let p1 = 0.5
            + a.iter()
                .enumerate()
                .map(|(k, ak)| ak * (((row >> k) & 1) as f64 - 0.5))
                .sum::<f64>();
        kernel.push(1.0 - p1);
        kernel.push(p1);
    }
    let table = Arc::new(WordTable::new(2, d, kernel)?);
    cache.lock().unwrap().insert(key, table.clone());
    Ok(table)
}

/// Converts the symbols a table kernel actually reads.
fn atoms_of(past: &[State], depth: usize) -> Result<Vec<usize>> {
    past[past.len().saturating_sub(depth)..]
        .iter()
        .map(|s| {
            s.as_atom()
                .ok_or_else(|| Error::domain("discrete model received a real-valued past"))
        })
        .collect()
}

impl ChainModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let (space, kind) = match &spec {
            ModelSpec::Iid { density } => {
                let space = Arc::new(density.space()?);
                let d = density.build_on(&space)?;
                if !d.is_probability() {
                    return Err(Error::domain("iid marginal must be a probability density"));
                }
                (space, Kind::Iid(d))
            }
            ModelSpec::Markov {
                alphabet,
                order,
                transitions,
            } => {
                let (k, m) = (*alphabet, *order);
                if k < 2 || !(1..=4).contains(&m) {
                    return Err(Error::domain("Markov models need alphabet ≥ 2 and order in 1..=4"));
                }
                let rows = k.checked_pow(m as u32).filter(|r| *r <= MAX_BLOCKS);
                let rows = rows.ok_or_else(|| Error::domain("too many Markov states"))?;
                if transitions.len() != rows || transitions.iter().any(|t| t.len() != k) {
                    return Err(Error::domain(format!(
                        "expected {rows} transition rows of length {k}"
                    )));
                }
                let mut kernel = Vec::with_capacity(rows * k);
                for row in transitions {
                    let s: f64 = row.iter().sum();
                    if row.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (s - 1.0).abs() > 1e-9 {
                        return Err(Error::domain(
                            "transition rows must be strictly positive probability vectors",
                        ));
                    }
                    kernel.extend(row.iter().map(|p| p / s));
                }
                (
                    Arc::new(StateSpace::uniform_probability(k)?),
                    Kind::Table(Arc::new(WordTable::new(k, m, kernel)?)),
                )
            }
            ModelSpec::GeometricBinary { c, r } => {
                check_geometric(*c, *r)?;
                (
                    Arc::new(StateSpace::uniform_probability(2)?),
                    Kind::Table(geometric_table(*c, *r)?),
                )
            }
            ModelSpec::GeometricContinuous { c, r } => {
                check_geometric(*c, *r)?;
                let mut depth = 1;
                while c * r.powi(depth as i32 + 1) / (1.0 - r) >= 1e-9 && depth < 200 {
                    depth += 1;
                }
                (
                    Arc::new(StateSpace::interval(0.0, 1.0)?),
                    Kind::Continuous {
                        coeffs: geometric_coeffs(*c, *r, depth),
                    },
                )
            }
        };
        Ok(ChainModel {
            spec,
            base_space: space.clone(),
            space,
            kind: Arc::new(kind),
            rebased: false,
        })
    }

    pub fn markov(alphabet: usize, order: usize, transitions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(ModelSpec::Markov {
            alphabet,
            order,
            transitions,
        })
    }

    pub fn geometric_binary(c: f64, r: f64) -> Result<Self> {
        Self::new(ModelSpec::GeometricBinary { c, r })
    }

    pub fn geometric_continuous(c: f64, r: f64) -> Result<Self> {
        Self::new(ModelSpec::GeometricContinuous { c, r })
    }

    pub fn iid(density: DensitySpec) -> Result<Self> {
        Self::new(ModelSpec::Iid { density })
    }

    /// The same process with π rescaled to a probability; kernels become
    /// `f · π(E)` with respect to the rescaled measure.
    pub fn with_probability_reference(&self) -> Self {
        let mut m = self.clone();
        m.space = Arc::new(self.base_space.normalized());
        m.rebased = true;
        m
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn is_iid(&self) -> bool {
        matches!(*self.kind, Kind::Iid(_))
    }

    /// Number of past symbols the kernel reads.
    pub fn memory_depth(&self) -> usize {
        match &*self.kind {
            Kind::Iid(_) => 0,
            Kind::Table(t) => t.depth,
            Kind::Continuous { coeffs } => coeffs.len(),
        }
    }

    /// Declared finite order, when the kernel provably ignores older symbols.
    pub fn finite_order(&self) -> Option<usize> {
        match &self.spec {
            ModelSpec::Iid { .. } => Some(0),
            ModelSpec::Markov { order, .. } => Some(*order),
            _ => None,
        }
    }

    /// Steps discarded before a simulated path is treated as stationary.
    pub fn burn_in(&self) -> usize {
        match &*self.kind {
            Kind::Continuous { coeffs } => 3 * coeffs.len(),
            _ => 0,
        }
    }

    /// Length of the frozen past used in place of the infinite past.
    pub fn past_depth(&self) -> usize {
        PAST_DEPTH.max(self.memory_depth())
    }

    /// Sup-norm bound on the kernel error from ignoring symbols beyond
    /// [`ChainModel::memory_depth`].
    pub fn truncation_error(&self) -> f64 {
        let d = self.memory_depth() as i32;
        match self.spec {
            ModelSpec::GeometricBinary { c, r } => c * r.powi(d + 1) / (1.0 - r),
            ModelSpec::GeometricContinuous { c, r } => 0.25 * c * r.powi(d + 1) / (1.0 - r),
            _ => 0.0,
        }
    }

    fn mean_deviation(coeffs: &[f64], past: &[State]) -> Result<f64> {
        let mut s = 0.0;
        for (a, x) in coeffs.iter().zip(past.iter().rev()) {
            let v = x
                .as_real()
                .ok_or_else(|| Error::domain("continuous model received an atom"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("past value {v} outside [0, 1]")));
            }
            s += a * (v - 0.5);
        }
        Ok(s)
    }

    /// Next-symbol probabilities for discrete models.
    pub fn next_probabilities(&self, past: &[State]) -> Result<Option<Vec<f64>>> {
        Ok(match &*self.kind {
            Kind::Iid(d) => d.atom_values().map(|v| {
                v.iter()
                    .enumerate()
                    .map(|(a, x)| x * self.base_space.atom_weight(a))
                    .collect()
            }),
            Kind::Table(t) => Some(t.next_probabilities(&atoms_of(past, t.depth)?)),
            Kind::Continuous { .. } => None,
        })
    }

    /// The density `f(·|past)` of the next symbol.
    pub fn kernel(&self, past: &[State]) -> Result<Density> {
        let d = match &*self.kind {
            Kind::Iid(d) => d.clone(),
            Kind::Table(t) => {
                let p = t.next_probabilities(&atoms_of(past, t.depth)?);
                return Density::from_probabilities(&self.space, &p);
            }
            Kind::Continuous { coeffs } => {
                let s = Self::mean_deviation(coeffs, past)?;
                Density::linear(&self.base_space, 1.0 - s, 2.0 * s)?
            }
        };
        if self.rebased {
            d.rebased(&self.space)
        } else {
            Ok(d)
        }
    }

    /// `‖f(·|a) − f(·|b)‖`.
    pub fn kernel_tv(&self, a: &[State], b: &[State]) -> Result<f64> {
        match &*self.kind {
            Kind::Iid(_) => Ok(0.0),
            Kind::Table(t) => {
                let (p, q) = (
                    t.next_probabilities(&atoms_of(a, t.depth)?),
                    t.next_probabilities(&atoms_of(b, t.depth)?),
                );
                Ok(0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>())
            }
            Kind::Continuous { coeffs } => {
                let d = Self::mean_deviation(coeffs, a)? - Self::mean_deviation(coeffs, b)?;
                Ok(0.25 * d.abs())
            }
        }
    }

    /// Lower bound of the kernel density after the given past; positive values
    /// certify the priming condition at that past.
    pub fn kernel_floor(&self, past: &[State]) -> Result<f64> {
        match &*self.kind {
            Kind::Iid(d) => Ok(match d.atom_values() {
                Some(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
                None => {
                    let (lo, hi) = self.base_space.bounds().unwrap();
                    (0..=1024)
                        .map(|i| d.value(State::Real(lo + (hi - lo) * i as f64 / 1024.0)))
                        .fold(f64::INFINITY, f64::min)
                }
            }),
            Kind::Table(_) => {
                let d = self.kernel(past)?;
                Ok(d.atom_values().unwrap().iter().copied().fold(f64::INFINITY, f64::min))
            }
            Kind::Continuous { coeffs } => Ok(1.0 - Self::mean_deviation(coeffs, past)?.abs()),
        }
    }

    /// Stationary probability of a word (discrete models).
    pub fn word_probability(&self, word: &[usize]) -> Option<f64> {
        let mut p = 1.0;
        let past: Vec<State> = word.iter().map(|&a| State::Atom(a)).collect();
        for i in 0..word.len() {
            let q = self.next_probabilities(&past[..i]).ok()??;
            p *= *q.get(word[i])?;
        }
        Some(p)
    }

    /// Stationary law of words of length `len`, indexed oldest symbol first.
    pub fn word_law(&self, len: usize) -> Option<Vec<f64>> {
        let k = self.space.atoms()?;
        let total = k.checked_pow(len as u32)?;
        (0..total)
            .map(|w| self.word_probability(&decode_word(w, k, len)))
            .collect()
    }

    /// `δ_n`, the worst-case influence at distance `n`.
    pub fn delta_exact(&self, n: usize) -> Result<f64> {
        match &self.spec {
            ModelSpec::Iid { .. } => Ok(0.0),
            ModelSpec::GeometricBinary { c, r } => Ok(c * r.powi(n as i32 + 1) / (1.0 - r)),
            ModelSpec::GeometricContinuous { c, r } => {
                Ok(0.25 * c * r.powi(n as i32 + 1) / (1.0 - r))
            }
            ModelSpec::Markov { alphabet, order, .. } => {
                if n >= *order {
                    return Ok(0.0);
                }
                let Kind::Table(t) = &*self.kind else {
                    return Err(Error::Internal("Markov model without table".into()));
                };
                let (k, rows) = (*alphabet, alphabet.pow(*order as u32));
                let group = k.pow(n as u32);
                let mut worst: f64 = 0.0;
                for i in 0..rows {
                    for j in (i + 1..rows).filter(|j| j % group == i % group) {
                        let (p, q) = (&t.kernel[i * k..(i + 1) * k], &t.kernel[j * k..(j + 1) * k]);
                        let tv = 0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>();
                        worst = worst.max(tv);
                    }
                }
                Ok(worst)
            }
        }
    }

    /// `Σ_{n ≥ from} δ_n`, which dominates `Σ_{n ≥ from} η_n`.
    pub fn influence_tail_bound(&self, from: usize) -> Result<f64> {
        match &self.spec {
            ModelSpec::GeometricBinary { c, r } => {
                Ok(c * r.powi(from as i32 + 1) / ((1.0 - r) * (1.0 - r)))
            }
            ModelSpec::GeometricContinuous { c, r } => {
                Ok(0.25 * c * r.powi(from as i32 + 1) / ((1.0 - r) * (1.0 - r)))
            }
            _ => {
                let order = self.finite_order().unwrap_or(0);
                (from..order.max(from)).map(|n| self.delta_exact(n)).sum()
            }
        }
    }

    /// `δ_n` by exhaustive search over every past of length
    /// [`ChainModel::memory_depth`]; `None` for continuous models.
    pub fn delta_brute_force(&self, n: usize) -> Result<Option<f64>> {
        let t = match &*self.kind {
            Kind::Iid(d) => return Ok(d.atom_values().map(|_| 0.0)),
            Kind::Table(t) => t,
            Kind::Continuous { .. } => return Ok(None),
        };
        if n >= t.depth {
            return Ok(Some(0.0));
        }
        if t.k > 16 {
            return Err(Error::domain("brute-force influence needs at most 16 symbols"));
        }
        let k = t.k;
        let groups = k.pow(n as u32);
        let subsets = 1usize << k;
        // ‖p − q‖ = max over subsets S of p(S) − q(S)
        let mut hi = vec![f64::NEG_INFINITY; groups * subsets];
        let mut lo = vec![f64::INFINITY; groups * subsets];
        for (row, p) in t.kernel.chunks_exact(k).enumerate() {
            let g = row % groups;
            for s in 1..subsets - 1 {
                let mass: f64 = (0..k).filter(|b| s >> b & 1 == 1).map(|b| p[b]).sum();
                let i = g * subsets + s;
                hi[i] = hi[i].max(mass);
                lo[i] = lo[i].min(mass);
            }
        }
        Ok(Some(
            hi.iter()
                .zip(&lo)
                .filter(|(h, _)| h.is_finite())
                .map(|(h, l)| h - l)
                .fold(0.0, f64::max),
        ))
    }

    /// `γ_n` and `α_n`, available only where they have a closed form.
    pub fn gamma_alpha(&self, n_max: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        self.is_iid()
            .then(|| (vec![0.0; n_max + 1], vec![0.0; n_max + 1]))
    }
}

/// Word with index `w` in base `k`, oldest digit first.
pub fn decode_word(mut w: usize, k: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = w % k;
        w /= k;
    }
    out
}

pub fn encode_word(word: &[State], k: usize) -> Option<usize> {
    word.iter()
        .try_fold(0usize, |acc, s| s.as_atom().map(|a| acc * k + a))
}

/// Runs `X_n = x_{f(·|context X_{..n-1})}(U_n)` over the given sources.
pub fn simulate_path<P: PointSet>(model: &ChainModel, context: &[State], sources: &[P]) -> Result<Vec<State>> {
    let mut history = context.to_vec();
    for (i, src) in sources.iter().enumerate() {
        let f = model.kernel(&history).map_err(|e| e.at(i as i64))?;
        let x = couple(src, &f).map_err(|e| e.at(i as i64))?.x;
        history.push(x);
    }
    Ok(history.split_off(context.len()))
}

/// A stationary path of length `len` driven by fresh sources of `seed`.
pub fn stationary_path(model: &ChainModel, len: usize, seed: u64) -> Result<Vec<State>> {
    let burn = model.burn_in();
    let sources: Vec<PointProcessSource> = (0..burn + len)
        .map(|i| PointProcessSource::new(derive_seed(seed, &[tag::SIMULATE, i as u64]), model.space().clone()))
        .collect();
    let mut path = simulate_path(model, &[], &sources)?;
    Ok(path.split_off(burn))
}

/// Monte Carlo `η_0..=η_max_n`: pairs `(X, Y)` of independent stationary
/// paths, TV between the kernel after `Y`'s last `n` symbols alone and after
/// `X`'s frozen past followed by them.
pub fn eta_profile(model: &ChainModel, max_n: usize, replicas: usize, seed: u64) -> Result<Vec<Estimate>> {
    if replicas == 0 {
        return Err(Error::InsufficientReplicas("η estimation needs replicas".into()));
    }
    let mut samples = vec![Vec::with_capacity(replicas); max_n + 1];
    let depth = model.past_depth();
    for r in 0..replicas as u64 {
        let x = stationary_path(model, depth, derive_seed(seed, &[tag::PAST, r]))?;
        let y = stationary_path(model, max_n, derive_seed(seed, &[tag::WINDOW, r]))?;
        let mut joined = x.clone();
        joined.extend_from_slice(&y);
        for (n, out) in samples.iter_mut().enumerate() {
            let window = &y[max_n - n..];
            let full = &joined[..depth + max_n];
            out.push(model.kernel_tv(window, full)?);
        }
    }
    Ok(samples.iter().map(|s| Estimate::from_samples(s)).collect())
}

pub fn eta_mc(model: &ChainModel, n: usize, replicas: usize, seed: u64) -> Result<Estimate> {
    Ok(eta_profile(model, n, replicas, seed)?[n])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    pub delta: Vec<f64>,
    pub eta: Vec<Estimate>,
    pub gamma: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

pub fn influence_profile(model: &ChainModel, max_n: usize, replicas: usize, seed: u64) -> Result<InfluenceProfile> {
    let delta = (0..=max_n).map(|n| model.delta_exact(n)).collect::<Result<Vec<_>>>()?;
    let eta = eta_profile(model, max_n, replicas, seed)?;
    let (gamma, alpha) = match model.gamma_alpha(max_n) {
        Some((g, a)) => (Some(g), Some(a)),
        None => (None, None),
    };
    Ok(InfluenceProfile {
        delta,
        eta,
        gamma,
        alpha,
    })
}

/// TV between two kernels through quadrature, for cross-checking closed forms.
pub fn kernel_tv_numeric(model: &ChainModel, a: &[State], b: &[State]) -> Result<f64> {
    tv_distance(&model.kernel(a)?, &model.kernel(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    fn two_state() -> ChainModel {
        ChainModel::markov(2, 1, vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn iid_two() -> ChainModel {
        ChainModel::iid(DensitySpec::Discrete {
            probabilities: vec![0.3, 0.7],
            reference: None,
        })
        .unwrap()
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(ChainModel::geometric_binary(0.3, 1.0).is_err());
        assert!(ChainModel::geometric_binary(1.2, 0.5).is_err());
        assert!(ChainModel::markov(2, 1, vec![vec![1.0, 0.0], vec![0.5, 0.5]]).is_err());
        assert!(ChainModel::markov(2, 5, vec![]).is_err());
        assert!(ChainModel::markov(2, 1, vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn iid_path_has_the_marginal() {
        let m = iid_two();
        let path = stationary_path(&m, 10_000, 3).unwrap();
        let mut counts = [0u64; 2];
        for x in &path {
            counts[x.as_atom().unwrap()] += 1;
        }
        assert!(stats::chi_square_gof(&counts, &[0.3, 0.7]).p_value > 1e-4);
    }

    #[test]
    fn markov_stationary_frequency() {
        let m = two_state();
        assert!((m.word_probability(&[1]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let path = stationary_path(&m, 50_000, 9).unwrap();
        let ones = path.iter().filter(|x| **x == State::Atom(1)).count();
        // positively correlated chain: inflate the binomial error by the
        // asymptotic variance factor (1 + λ) / (1 − λ) with λ = 0.7.
        let se = (1.0 / 3.0 * 2.0 / 3.0 / 50_000.0 * 1.7 / 0.3f64).sqrt();
        assert!((ones as f64 / 50_000.0 - 1.0 / 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn replay_is_bit_exact() {
        for m in [two_state(), ChainModel::geometric_continuous(0.3, 0.5).unwrap()] {
            assert_eq!(stationary_path(&m, 200, 5).unwrap(), stationary_path(&m, 200, 5).unwrap());
        }
    }

    #[test]
    fn finite_order_kernel_ignores_older_symbols() {
        let m = ChainModel::markov(
            2,
            2,
            vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.5, 0.5], vec![0.1, 0.9]],
        )
        .unwrap();
        let a = [State::Atom(0), State::Atom(1), State::Atom(0)];
        let b = [State::Atom(1), State::Atom(1), State::Atom(0)];
        assert_eq!(m.next_probabilities(&a).unwrap(), m.next_probabilities(&b).unwrap());
        assert_eq!(m.next_probabilities(&a).unwrap().unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn short_words_use_stationary_conditionals() {
        let m = two_state();
        let p = m.next_probabilities(&[]).unwrap().unwrap();
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        let g = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        let p = g.next_probabilities(&[]).unwrap().unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        // word law is consistent: P(w0) + P(w1) = P(w)
        let w = [1, 0, 1];
        let s = g.word_probability(&[1, 0, 1, 0]).unwrap() + g.word_probability(&[1, 0, 1, 1]).unwrap();
        assert!((s - g.word_probability(&w).unwrap()).abs() < 1e-14);
        // and shift-invariant: P(0w) + P(1w) = P(w)
        let s = g.word_probability(&[0, 1, 0, 1]).unwrap() + g.word_probability(&[1, 1, 0, 1]).unwrap();
        assert!((s - g.word_probability(&w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        let g = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        assert!((g.delta_exact(0).unwrap() - 0.3).abs() < 1e-15);
        assert!((g.delta_exact(1).unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(iid_two().delta_exact(4).unwrap(), 0.0);
        let m = two_state();
        assert_eq!(m.delta_exact(1).unwrap(), 0.0);
        assert!((m.delta_exact(0).unwrap() - 0.7).abs() < 1e-12);
        for n in 0..12 {
            assert!(g.delta_exact(n + 1).unwrap() <= g.delta_exact(n).unwrap());
        }
        let tail: f64 = (3..200).map(|n| g.delta_exact(n).unwrap()).sum();
        assert!((tail - g.influence_tail_bound(3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_delta_matches_closed_forms() {
        let g = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        for n in 0..=12 {
            let b = g.delta_brute_force(n).unwrap().unwrap();
            assert!((b - 0.3 * 0.5f64.powi(n as i32)).abs() < 1e-6, "n={n} {b}");
        }
        let m = two_state();
        assert!((m.delta_brute_force(0).unwrap().unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(m.delta_brute_force(1).unwrap(), Some(0.0));
        assert_eq!(iid_two().delta_brute_force(0).unwrap(), Some(0.0));
    }

    #[test]
    fn continuous_delta_matches_quadrature() {
        let g = ChainModel::geometric_continuous(0.3, 0.5).unwrap();
        let n = 2;
        let common = [State::Real(0.2), State::Real(0.9)];
        let mut a: Vec<State> = vec![State::Real(1.0); 60];
        let mut b: Vec<State> = vec![State::Real(0.0); 60];
        a.extend(common);
        b.extend(common);
        let tv = kernel_tv_numeric(&g, &a, &b).unwrap();
        assert!((tv - g.delta_exact(n).unwrap()).abs() < 1e-8);
        assert!((g.kernel_tv(&a, &b).unwrap() - tv).abs() < 1e-8);
    }

    #[test]
    fn eta_vanishes_for_memoryless_and_finite_order() {
        let e = eta_profile(&iid_two(), 3, 200, 1).unwrap();
        assert!(e.iter().all(|x| x.mean == 0.0));
        let e = eta_profile(&two_state(), 3, 200, 1).unwrap();
        assert!(e[1..].iter().all(|x| x.mean == 0.0));
        assert!(e[0].mean > 0.0);
    }

    #[test]
    fn eta_is_dominated_by_delta() {
        let g = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        let e = eta_profile(&g, 6, 1_000, 2).unwrap();
        for (n, est) in e.iter().enumerate() {
            assert!(est.mean <= g.delta_exact(n).unwrap() + 3.0 * est.stderr, "n={n} {est:?}");
        }
        assert!(e[2].mean <= 0.075 + 3.0 * e[2].stderr);
    }

    #[test]
    fn reweighted_model_lives_on_a_probability_space() {
        let m = ChainModel::iid(DensitySpec::Uniform { lo: 0.0, hi: 2.0 }).unwrap();
        assert!(!m.space().is_probability());
        let p = m.with_probability_reference();
        assert!(p.space().is_probability());
        let k = p.kernel(&[]).unwrap();
        assert!(k.is_probability());
        assert!((k.value(State::Real(1.5)) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernels_are_positive_probabilities(bits in proptest::collection::vec(0usize..2, 0..30)) {
            let g = ChainModel::geometric_binary(0.3, 0.5).unwrap();
            let past: Vec<State> = bits.iter().map(|&b| State::Atom(b)).collect();
            let p = g.next_probabilities(&past).unwrap().unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(g.kernel_floor(&past).unwrap() > 0.0);
        }

        #[test]
        fn continuous_kernels_are_positive(xs in proptest::collection::vec(0.0f64..=1.0, 0..50)) {
            let g = ChainModel::geometric_continuous(0.3, 0.5).unwrap();
            let past: Vec<State> = xs.iter().map(|&x| State::Real(x)).collect();
            prop_assert!(g.kernel_floor(&past).unwrap() > 0.0);
            prop_assert!(g.kernel(&past).unwrap().is_probability());
        }
    }
}
