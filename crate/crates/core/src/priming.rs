//! Priming: from innovations alone, build a word `Z_{1:ℓ}` and an event `H_ℓ`
//! such that `Z` has the law of `X_{1:ℓ}`, `H_ℓ` is independent of `Z`, and
//! `X_{1:ℓ} = Z_{1:ℓ}` with high probability on `H_ℓ`.
//!
//! Step `k` uses constants `(m, n)`: `Z_{k+1}` is the first point of `U_{k+1}`
//! under `f(·|Z_{1:k})/m`, and the step succeeds when that point comes no later
//! than the first point under the level `M ∈ [n, n+1]` solving
//! `∫ max(f(·|Z_{1:k})/m, M) dπ = n + 1`. Each step succeeds with probability
//! `1/(m(n+1))`, independently of everything before it.
//!
//! Constants are calibrated by doubling searches on a separate population of
//! simulated paths, conditioning on the running event by rejection. The
//! target error is split as in the inductive construction: the step building
//! `Z_{k+1}` of an `ℓ`-word is calibrated at `ε / 3^{ℓ-k}`.

use serde::{Deserialize, Serialize};

use crate::chain::{encode_word, stationary_path, ChainModel};
use crate::error::{Error, Result};
use crate::governor::{extract_innovations, GoverningSequence};
use crate::measure::{integrate_pair, Density, State};
use crate::ppp::PointSet;
use crate::rng::{derive_seed, tag};
use crate::stats::{self, Estimate, TestOutcome};

/// Largest constant the doubling searches may try.
pub const MAX_CONSTANT: f64 = (1u64 << 20) as f64;

/// Bracket width at which the level bisection stops.
pub const LEVEL_TOL: f64 = 1e-12;

/// Fewest replicas on the running event needed to calibrate a step.
pub const MIN_CONDITIONED: usize = 20;

/// Largest word space for which the exact word law is tabulated.
const MAX_WORDS: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub m: f64,
    pub n: f64,
}

impl StepConstants {
    /// `P[H′] = 1/(m(n+1))`.
    pub fn success_probability(&self) -> f64 {
        1.0 / (self.m * (self.n + 1.0))
    }
}

fn check_probability_space(f: &Density) -> Result<()> {
    if !f.space().is_probability() {
        return Err(Error::domain(
            "priming needs π(E) = 1; reweight the model with `with_probability_reference`",
        ));
    }
    Ok(())
}

/// `φ(s) = ∫ max(f/m, s) dπ`.
pub fn phi(f: &Density, m: f64, s: f64) -> f64 {
    f.integrate(|v| (v / m).max(s))
}

/// The smallest `M ∈ [n, n+1]` with `φ(M) = n + 1`, and `φ(M) − (n + 1)`.
pub fn solve_level_with_residual(f: &Density, m: f64, n: f64) -> Result<(f64, f64)> {
    check_probability_space(f)?;
    if !(m >= 1.0 && n >= 1.0) {
        return Err(Error::domain("priming constants must be at least 1"));
    }
    let target = n + 1.0;
    let (mut lo, mut hi) = (n, n + 1.0);
    let (plo, phi_hi) = (phi(f, m, lo), phi(f, m, hi));
    if plo > target + 1e-9 || phi_hi < target - 1e-9 {
        return Err(Error::Internal(format!(
            "level bisection does not bracket: φ({lo}) = {plo}, φ({hi}) = {phi_hi}, target {target}"
        )));
    }
    while hi - lo > LEVEL_TOL {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(f, m, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((hi, phi(f, m, hi) - target))
}

pub fn solve_level(f: &Density, m: f64, n: f64) -> Result<f64> {
    Ok(solve_level_with_residual(f, m, n)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimingStep {
    pub h_prime: bool,
    pub level: f64,
    pub level_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimedWord {
    pub z: Vec<State>,
    pub h: bool,
    pub steps: Vec<PrimingStep>,
}

/// Appends one primed symbol to `z` using the next innovation.
fn prime_step<P: PointSet + ?Sized>(
    model: &ChainModel,
    z: &[State],
    u: &P,
    c: StepConstants,
) -> Result<(State, PrimingStep)> {
    let f = model.kernel(z)?;
    let (level, level_residual) = solve_level_with_residual(&f, c.m, c.n)?;
    let a = u.first_point_under(&f.scaled(1.0 / c.m)?)?;
    let b = u.first_point_under(&Density::constant(model.space(), level)?)?;
    Ok((
        a.x,
        PrimingStep {
            h_prime: a.t <= b.t,
            level,
            level_residual,
        },
    ))
}

/// Builds `(Z_{1:ℓ}, H_ℓ)` from `U_{1:ℓ}` only.
pub fn prime<P: PointSet>(model: &ChainModel, innovations: &[P], constants: &[StepConstants]) -> Result<PrimedWord> {
    if !model.space().is_probability() {
        return Err(Error::domain(
            "priming needs π(E) = 1; reweight the model with `with_probability_reference`",
        ));
    }
    if innovations.len() != constants.len() {
        return Err(Error::domain(format!(
            "{} innovations for {} step constants",
            innovations.len(),
            constants.len()
        )));
    }
    let mut out = PrimedWord {
        z: Vec::with_capacity(innovations.len()),
        h: true,
        steps: Vec::with_capacity(innovations.len()),
    };
    for (k, (u, &c)) in innovations.iter().zip(constants).enumerate() {
        let (x, step) = prime_step(model, &out.z, u, c).map_err(|e| e.at(k as i64 + 1))?;
        out.z.push(x);
        out.h &= step.h_prime;
        out.steps.push(step);
    }
    Ok(out)
}

/// A stationary path with its frozen past and extracted innovations; the
/// path occupies time indices `start..start + len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub past: Vec<State>,
    pub path: Vec<State>,
    pub innovations: GoverningSequence,
}

impl Scenario {
    /// The frozen past followed by the first `k` path symbols.
    pub fn history(&self, k: usize) -> Vec<State> {
        let mut h = self.past.clone();
        h.extend_from_slice(&self.path[..k]);
        h
    }
}

pub fn sample_scenario(model: &ChainModel, len: usize, start: i64, seed: u64) -> Result<Scenario> {
    let depth = model.past_depth();
    let mut past = stationary_path(model, depth + len, derive_seed(seed, &[tag::SIMULATE]))?;
    let path = past.split_off(depth);
    let innovations = extract_innovations(model, &past, &path, start, derive_seed(seed, &[tag::GOVERN_W]))?;
    Ok(Scenario {
        past,
        path,
        innovations,
    })
}

/// Outcome of one doubling search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub value: f64,
    /// `(candidate, estimate, standard error)`.
    pub trace: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub tolerance: f64,
    pub conditioned: usize,
    pub m: SearchRecord,
    pub n: SearchRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimingCertificate {
    pub epsilon: f64,
    pub length: usize,
    pub constants: Vec<StepConstants>,
    pub calibration: Vec<CalibrationStep>,
}

impl PrimingCertificate {
    /// `Π_k 1/(m_k(n_k+1))`.
    pub fn success_probability(&self) -> f64 {
        self.constants.iter().map(|c| c.success_probability()).product()
    }
}

/// Smallest power of two whose estimate clears `estimate + 2·se ≤ tolerance`.
fn doubling_search(tolerance: f64, what: &str, mut eval: impl FnMut(f64) -> Result<Estimate>) -> Result<SearchRecord> {
    let mut trace = Vec::new();
    let mut c = 1.0;
    while c <= MAX_CONSTANT {
        let e = eval(c)?;
        trace.push((c, e.mean, e.stderr));
        if e.mean + 2.0 * e.stderr <= tolerance {
            return Ok(SearchRecord { value: c, trace });
        }
        c *= 2.0;
    }
    Err(Error::SearchFailure {
        reason: format!("no {what} ≤ 2^20 meets tolerance {tolerance}"),
        trace,
    })
}

/// Per-step tolerances `ε / 3^{ℓ-k}` for `k = 0..ℓ`.
pub fn step_tolerances(epsilon: f64, length: usize) -> Vec<f64> {
    (0..length)
        .map(|k| epsilon / 3f64.powi((length - k) as i32))
        .collect()
}

/// Finds `(m, n)` for every step by conditional Monte Carlo on the running
/// event, using replicas that never enter the evaluation.
pub fn certify(model: &ChainModel, length: usize, epsilon: f64, replicas: usize, seed: u64) -> Result<PrimingCertificate> {
    if !(epsilon > 0.0) {
        return Err(Error::domain("ε must be positive"));
    }
    if !model.space().is_probability() {
        return Err(Error::domain(
            "priming needs π(E) = 1; reweight the model with `with_probability_reference`",
        ));
    }
    let scenarios = (0..replicas as u64)
        .map(|r| sample_scenario(model, length, 1, derive_seed(seed, &[tag::CALIBRATE, r])))
        .collect::<Result<Vec<_>>>()?;
    let mut z: Vec<Vec<State>> = vec![Vec::new(); replicas];
    let mut h = vec![true; replicas];
    let mut constants = Vec::with_capacity(length);
    let mut calibration = Vec::with_capacity(length);
    for (k, tol) in step_tolerances(epsilon, length).into_iter().enumerate() {
        let kept: Vec<usize> = (0..replicas).filter(|&r| h[r]).collect();
        if kept.len() < MIN_CONDITIONED {
            return Err(Error::InsufficientReplicas(format!(
                "{} calibration replicas on the running event at step {}, need {MIN_CONDITIONED}",
                kept.len(),
                k + 1
            )));
        }
        let kernels = kept
            .iter()
            .map(|&r| Ok((model.kernel(&z[r])?, model.kernel(&scenarios[r].history(k))?)))
            .collect::<Result<Vec<_>>>()?;
        let m = doubling_search(tol, "m", |m| {
            let xs = kernels
                .iter()
                .map(|(fz, fx)| integrate_pair(fz, fx, |a, b| (a - m * b).max(0.0)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Estimate::from_samples(&xs))
        })?;
        let n = doubling_search(tol, "n", |n| {
            let xs: Vec<f64> = kernels
                .iter()
                .map(|(_, fx)| fx.integrate(|b| (b - n).max(0.0)))
                .collect();
            Ok(Estimate::from_samples(&xs))
        })?;
        let c = StepConstants {
            m: m.value,
            n: n.value,
        };
        for &r in &kept {
            let u = &scenarios[r].innovations.sources[k];
            let (x, step) = prime_step(model, &z[r], u, c)?;
            z[r].push(x);
            h[r] = step.h_prime;
        }
        constants.push(c);
        calibration.push(CalibrationStep {
            tolerance: tol,
            conditioned: kept.len(),
            m,
            n,
        });
    }
    Ok(PrimingCertificate {
        epsilon,
        length,
        constants,
        calibration,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimingReport {
    pub epsilon: f64,
    pub length: usize,
    pub constants: Vec<StepConstants>,
    pub replicas: usize,
    pub h_rate: Estimate,
    pub h_predicted: f64,
    pub step_rates: Vec<Estimate>,
    pub step_predicted: Vec<f64>,
    /// `P̂[X_{1:ℓ} ≠ Z_{1:ℓ} | H_ℓ]`.
    pub mismatch_given_h: Estimate,
    /// χ² of the empirical law of `Z` against the exact word law.
    pub z_law: Option<TestOutcome>,
    /// χ² independence test of `(Z, H)`.
    pub independence: Option<TestOutcome>,
    pub levels_in_range: bool,
    pub max_level_residual: f64,
}

/// One evaluation replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimingReplica {
    pub replica: u64,
    pub h: bool,
    pub mismatch: bool,
    pub z: Vec<State>,
    pub x: Vec<State>,
    pub h_steps: Vec<bool>,
    pub levels: Vec<f64>,
}

/// Runs the priming construction on `replicas` fresh stationary paths.
pub fn evaluate_priming(
    model: &ChainModel,
    constants: &[StepConstants],
    epsilon: f64,
    replicas: usize,
    seed: u64,
) -> Result<(PrimingReport, Vec<PrimingReplica>)> {
    let length = constants.len();
    let mut rows = Vec::with_capacity(replicas);
    let mut in_range = true;
    let mut max_residual: f64 = 0.0;
    for r in 0..replicas as u64 {
        let sc = sample_scenario(model, length, 1, derive_seed(seed, &[tag::EVALUATE, r]))?;
        let pw = prime(model, &sc.innovations.sources, constants)?;
        for (s, c) in pw.steps.iter().zip(constants) {
            in_range &= s.level >= c.n && s.level <= c.n + 1.0;
            max_residual = max_residual.max(s.level_residual.abs());
        }
        rows.push(PrimingReplica {
            replica: r,
            h: pw.h,
            mismatch: pw.z != sc.path,
            h_steps: pw.steps.iter().map(|s| s.h_prime).collect(),
            levels: pw.steps.iter().map(|s| s.level).collect(),
            z: pw.z,
            x: sc.path,
        });
    }
    let hits = rows.iter().filter(|r| r.h).count();
    let mism = rows.iter().filter(|r| r.h && r.mismatch).count();
    let step_rates = (0..length)
        .map(|k| Estimate::proportion(rows.iter().filter(|r| r.h_steps[k]).count(), replicas))
        .collect();
    let (z_law, independence) = word_tests(model, &rows, length);
    let report = PrimingReport {
        epsilon,
        length,
        constants: constants.to_vec(),
        replicas,
        h_rate: Estimate::proportion(hits, replicas),
        h_predicted: constants.iter().map(|c| c.success_probability()).product(),
        step_rates,
        step_predicted: constants.iter().map(|c| c.success_probability()).collect(),
        mismatch_given_h: Estimate::proportion(mism, hits),
        z_law,
        independence,
        levels_in_range: in_range,
        max_level_residual: max_residual,
    };
    Ok((report, rows))
}

fn word_tests(model: &ChainModel, rows: &[PrimingReplica], length: usize) -> (Option<TestOutcome>, Option<TestOutcome>) {
    let Some(k) = model.space().atoms() else {
        return (None, None);
    };
    let words = match k.checked_pow(length as u32) {
        Some(w) if w <= MAX_WORDS && length > 0 => w,
        _ => return (None, None),
    };
    let mut counts = vec![0u64; words];
    let mut table = vec![vec![0u64; 2]; words];
    for r in rows {
        let w = encode_word(&r.z, k).expect("discrete word");
        counts[w] += 1;
        table[w][usize::from(r.h)] += 1;
    }
    let z_law = model
        .word_law(length)
        .map(|p| stats::chi_square_gof(&counts, &p));
    (z_law, Some(stats::chi_square_independence(&table)))
}

/// Calibrates on one seed population, then evaluates on another.
pub fn priming_experiment(
    model: &ChainModel,
    length: usize,
    epsilon: f64,
    replicas: usize,
    calibration_replicas: usize,
    seed: u64,
) -> Result<(PrimingReport, PrimingCertificate)> {
    let cert = certify(model, length, epsilon, calibration_replicas, seed)?;
    let (report, _) = evaluate_priming(model, &cert.constants, epsilon, replicas, seed)?;
    Ok((report, cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{DensitySpec, StateSpace};
    use crate::ppp::PointProcessSource;
    use std::sync::Arc;

    fn iid_two() -> ChainModel {
        ChainModel::iid(DensitySpec::Discrete {
            probabilities: vec![0.5, 0.5],
            reference: None,
        })
        .unwrap()
    }

    #[test]
    fn level_examples() {
        let s = Arc::new(StateSpace::uniform_probability(2).unwrap());
        let f = Density::uniform(&s).unwrap();
        let (m, res) = solve_level_with_residual(&f, 1.0, 1.0).unwrap();
        assert!((m - 2.0).abs() < 1e-9 && res.abs() < 1e-9);
        let u = Arc::new(StateSpace::interval(0.0, 1.0).unwrap());
        let g = Density::uniform(&u).unwrap();
        assert!((solve_level(&g, 2.0, 1.0).unwrap() - 2.0).abs() < 1e-9);
        let h = Density::from_probabilities(&s, &[0.1, 0.9]).unwrap();
        let m = solve_level(&h, 1.0, 1.0).unwrap();
        assert!((1.0..=2.0).contains(&m));
        assert!((phi(&h, 1.0, m) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn refuses_non_probability_reference() {
        let m = ChainModel::iid(DensitySpec::Uniform { lo: 0.0, hi: 2.0 }).unwrap();
        let u: Vec<PointProcessSource> = vec![];
        assert!(prime(&m, &u, &[]).is_err());
        let p = m.with_probability_reference();
        assert!(prime(&p, &u, &[]).unwrap().h);
    }

    #[test]
    fn empty_word_is_certain() {
        let m = iid_two();
        let pw = prime::<PointProcessSource>(&m, &[], &[]).unwrap();
        assert!(pw.h && pw.z.is_empty());
    }

    #[test]
    fn iid_constants_are_one() {
        let cert = certify(&iid_two(), 2, 0.3, 200, 4).unwrap();
        assert_eq!(cert.constants, vec![StepConstants { m: 1.0, n: 1.0 }; 2]);
    }

    #[test]
    fn step_rate_is_one_over_m_n_plus_one() {
        let c = [StepConstants { m: 1.0, n: 1.0 }; 2];
        let (rep, _) = evaluate_priming(&iid_two(), &c, 0.3, 8_000, 6).unwrap();
        for e in &rep.step_rates {
            assert!(e.within(0.5, 4.0), "{e:?}");
        }
        assert!(rep.h_rate.within(0.25, 4.0));
        assert!(rep.levels_in_range);
        assert!(rep.z_law.unwrap().p_value > 1e-4);
        assert!(rep.independence.unwrap().p_value > 1e-4);
        assert_eq!(rep.mismatch_given_h.mean, 0.0);
    }

    #[test]
    fn geometric_constants_and_conditional_error() {
        let m = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        let cert = certify(&m, 2, 0.3, 2_000, 1).unwrap();
        for c in &cert.constants {
            assert!(c.m <= 2.0 && c.n <= 2.0, "{cert:?}");
        }
        let (rep, _) = evaluate_priming(&m, &cert.constants, 0.3, 4_000, 2).unwrap();
        let e = rep.mismatch_given_h;
        assert!(e.mean <= 0.3 + 3.0 * e.stderr);
        assert!(rep.h_rate.within(rep.h_predicted, 4.0));
    }

    #[test]
    fn z_depends_on_innovations_only() {
        let m = ChainModel::geometric_binary(0.3, 0.5).unwrap();
        let c = [StepConstants { m: 2.0, n: 2.0 }; 3];
        let sc = sample_scenario(&m, 3, 1, 17).unwrap();
        let a = prime(&m, &sc.innovations.sources, &c).unwrap();
        let json = serde_json::to_string(&sc.innovations).unwrap();
        let back: GoverningSequence = serde_json::from_str(&json).unwrap();
        let b = prime(&m, &back.sources, &c).unwrap();
        assert_eq!(a, b);
    }
}
