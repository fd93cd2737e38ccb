//! Reconstruction of the chain from its innovations.
//!
//! A primed window `J = [s, t]` supplies `X′_J = Z_J`; afterwards
//! `X′_n = x_{f(·|X′_{s:n-1})}(U_n)`. Everything here sees innovations only;
//! the true path enters solely through the experiment drivers that score the
//! output.

use serde::{Deserialize, Serialize};

use crate::chain::{eta_profile, ChainModel};
use crate::coupler::couple;
use crate::error::{Error, Result};
use crate::measure::State;
use crate::ppp::PointSet;
use crate::priming::{certify, evaluate_priming, prime, sample_scenario, PrimingCertificate, StepConstants};
use crate::rng::{derive_seed, tag};
use crate::stats::Estimate;

/// Longest window the tail search will consider.
pub const MAX_WINDOW: usize = 10_000;

/// Default number of stages in the successive-approximation experiment.
pub const DEFAULT_STAGE_BUDGET: usize = 12;

/// Safety factor applied to `1/α̂` when choosing repetition counts.
pub const REPETITION_MARGIN: f64 = 1.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRun {
    /// First index `s` of the window.
    pub start: i64,
    pub window_len: usize,
    pub z: Vec<State>,
    pub h: bool,
    /// `X′_s, X′_{s+1}, …`.
    pub path: Vec<State>,
}

impl ReconstructionRun {
    /// Index of the first disagreement with `truth`, which starts at `s`.
    pub fn first_disagreement(&self, truth: &[State]) -> Option<i64> {
        self.path
            .iter()
            .zip(truth)
            .position(|(a, b)| a != b)
            .map(|i| self.start + i as i64)
    }

    pub fn last(&self) -> Option<State> {
        self.path.last().copied()
    }
}

/// Primes `sources[..ℓ]` as the window `[start, start+ℓ-1]` and propagates
/// through the remaining sources.
pub fn reconstruct_from_window<P: PointSet>(
    model: &ChainModel,
    sources: &[P],
    start: i64,
    constants: &[StepConstants],
) -> Result<ReconstructionRun> {
    let l = constants.len();
    if sources.len() < l {
        return Err(Error::domain(format!(
            "{} innovations cannot cover a window of length {l}",
            sources.len()
        )));
    }
    let primed = prime(model, &sources[..l], constants).map_err(|e| match e {
        Error::AtIndex { index, source } => source.at(start + index - 1),
        e => e,
    })?;
    let mut path = primed.z.clone();
    for (i, u) in sources[l..].iter().enumerate() {
        let n = start + (l + i) as i64;
        let f = model.kernel(&path).map_err(|e| e.at(n))?;
        path.push(couple(u, &f).map_err(|e| e.at(n))?.x);
    }
    Ok(ReconstructionRun {
        start,
        window_len: l,
        z: primed.z,
        h: primed.h,
        path,
    })
}

/// Smallest `L ≥ 1` whose analytic influence tail `Σ_{n≥L} δ_n` is at most `epsilon`.
pub fn window_length(model: &ChainModel, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::domain("ε must be positive"));
    }
    let mut trace = Vec::new();
    for l in 1..=MAX_WINDOW {
        let tail = model.influence_tail_bound(l)?;
        if tail <= epsilon {
            return Ok(l);
        }
        if trace.len() < 64 {
            trace.push((l as f64, tail, 0.0));
        }
    }
    Err(Error::SearchFailure {
        reason: format!("no window up to {MAX_WINDOW} has influence tail ≤ {epsilon}"),
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementStep {
    /// `n − s`.
    pub offset: usize,
    /// `P̂[X′_{s:n} ≠ X_{s:n} | H_J]`.
    pub rate: Estimate,
    /// `P̂[X′_n ≠ X_n, X′_{s:n-1} = X_{s:n-1} | H_J]`.
    pub increment: Estimate,
    pub eta: Estimate,
    /// `2η̂_{n-s} + 3σ`.
    pub increment_bound: f64,
    pub increment_ok: bool,
    /// `ε + 2 Σ_{m=ℓ}^{n-s} η̂_m + 3σ`.
    pub cumulative_bound: f64,
    pub cumulative_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub epsilon: f64,
    pub window_len: usize,
    pub horizon: usize,
    pub tail_bound: f64,
    pub replicas: usize,
    pub h_successes: usize,
    pub window_mismatch: Estimate,
    pub steps: Vec<DisagreementStep>,
    pub final_rate: Estimate,
    /// `3ε + 3σ`.
    pub final_bound: f64,
    pub final_ok: bool,
}

impl DisagreementReport {
    pub fn all_ok(&self) -> bool {
        self.final_ok && self.steps.iter().all(|s| s.increment_ok && s.cumulative_ok)
    }
}

/// Scores `replicas` reconstructions over `horizon` steps past a window
/// primed with `certificate`, against `η̂` measured on `eta_replicas` pairs.
pub fn disagreement_experiment(
    model: &ChainModel,
    certificate: &PrimingCertificate,
    horizon: usize,
    replicas: usize,
    eta_replicas: usize,
    seed: u64,
) -> Result<DisagreementReport> {
    let (l, eps) = (certificate.length, certificate.epsilon);
    let tail_bound = model.influence_tail_bound(l)?;
    if tail_bound > eps {
        return Err(Error::domain(format!(
            "window of length {l} has influence tail {tail_bound} > ε = {eps}"
        )));
    }
    let eta = eta_profile(model, l + horizon, eta_replicas, derive_seed(seed, &[tag::PAST]))?;
    // first[i]: first disagreement at offset i (window counted as offset l-1)
    let mut first = vec![0usize; horizon + 1];
    let mut hits = 0;
    for r in 0..replicas as u64 {
        let sc = sample_scenario(model, l + horizon, 1, derive_seed(seed, &[tag::EVALUATE, r]))?;
        let run = reconstruct_from_window(model, &sc.innovations.sources, 1, &certificate.constants)?;
        if !run.h {
            continue;
        }
        hits += 1;
        if let Some(n) = run.first_disagreement(&sc.path) {
            let off = (n - 1) as usize;
            first[off.saturating_sub(l - 1).min(horizon)] += 1;
        }
    }
    if hits == 0 {
        return Err(Error::InsufficientReplicas(format!(
            "no replica among {replicas} realised the priming event"
        )));
    }
    let window_mismatch = Estimate::proportion(first[0], hits);
    let mut steps = Vec::with_capacity(horizon);
    let (mut cum, mut eta_sum, mut eta_var) = (first[0], 0.0, 0.0);
    for i in 1..=horizon {
        let offset = l - 1 + i;
        cum += first[i];
        let rate = Estimate::proportion(cum, hits);
        let increment = Estimate::proportion(first[i], hits);
        let e = eta[offset];
        eta_sum += e.mean;
        eta_var += e.stderr * e.stderr;
        let inc_sigma = (increment.stderr.powi(2) + 4.0 * e.stderr.powi(2)).sqrt();
        let increment_bound = 2.0 * e.mean + 3.0 * inc_sigma;
        let cum_sigma = (rate.stderr.powi(2) + 4.0 * eta_var).sqrt();
        let cumulative_bound = eps + 2.0 * eta_sum + 3.0 * cum_sigma;
        steps.push(DisagreementStep {
            offset,
            rate,
            increment,
            eta: e,
            increment_bound,
            increment_ok: increment.mean <= increment_bound,
            cumulative_bound,
            cumulative_ok: rate.mean <= cumulative_bound,
        });
    }
    let final_rate = Estimate::proportion(cum, hits);
    let final_bound = 3.0 * eps + 3.0 * final_rate.stderr;
    Ok(DisagreementReport {
        epsilon: eps,
        window_len: l,
        horizon,
        tail_bound,
        replicas,
        h_successes: hits,
        window_mismatch,
        steps,
        final_rate,
        final_bound,
        final_ok: final_rate.mean <= final_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Accept `n` when `a_n ≤ b_n / 2^{#accepted}`.
    Greedy,
    /// Accept runs of indices with `a_n ≤ b_n / 2^j` until their `b`-mass
    /// reaches 1, then move to level `j + 1`.
    Blocks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subsequence {
    pub rule: SelectionRule,
    pub theta: Vec<usize>,
    pub sum_a: f64,
    pub sum_b: f64,
    /// `Σ_k b_{θ(k)} / 2^k` for the greedy rule, `Σ_j (1 + sup b) / 2^j` over
    /// opened blocks for the block rule.
    pub majorant: f64,
    /// Completed blocks (block rule only).
    pub blocks: usize,
}

impl Subsequence {
    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// An increasing index map along which `Σ a` stays summable.
pub fn select_subsequence(a: &[f64], b: &[f64], rule: SelectionRule) -> Result<Subsequence> {
    if a.len() != b.len() {
        return Err(Error::domain("sequences differ in length"));
    }
    if a.iter().chain(b).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("sequences must be finite and nonnegative"));
    }
    let mut out = Subsequence {
        rule,
        theta: Vec::new(),
        sum_a: 0.0,
        sum_b: 0.0,
        majorant: 0.0,
        blocks: 0,
    };
    match rule {
        SelectionRule::Greedy => {
            for (n, (&x, &y)) in a.iter().zip(b).enumerate() {
                let scale = 0.5f64.powi(out.theta.len() as i32);
                if x <= y * scale {
                    out.theta.push(n);
                    out.sum_a += x;
                    out.sum_b += y;
                    out.majorant += y * scale;
                }
            }
        }
        SelectionRule::Blocks => {
            let sup_b = b.iter().copied().fold(0.0, f64::max);
            let (mut level, mut mass) = (0i32, 0.0);
            out.majorant = 1.0 + sup_b;
            for (n, (&x, &y)) in a.iter().zip(b).enumerate() {
                if x <= y * 0.5f64.powi(level) {
                    out.theta.push(n);
                    out.sum_a += x;
                    out.sum_b += y;
                    mass += y;
                    if mass >= 1.0 {
                        out.blocks += 1;
                        level += 1;
                        mass = 0.0;
                        out.majorant += (1.0 + sup_b) * 0.5f64.powi(level);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Block `m` of the schedule: `M_m` windows of length `L_m` primed at `ε = 1/m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleBlock {
    pub m: usize,
    pub length: usize,
    pub epsilon: f64,
    pub alpha: Estimate,
    pub repetitions: usize,
    pub constants: Vec<StepConstants>,
}

/// Stage `k ≥ 1` with window `J_k = [t_k, t_{k-1} - 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageWindow {
    pub k: usize,
    pub block: usize,
    pub start: i64,
    pub end: i64,
}

impl StageWindow {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleBudget {
    pub stages: usize,
    pub calibration_replicas: usize,
    pub alpha_replicas: usize,
}

impl Default for ScheduleBudget {
    fn default() -> Self {
        ScheduleBudget {
            stages: DEFAULT_STAGE_BUDGET,
            calibration_replicas: 4_000,
            alpha_replicas: 4_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSchedule {
    pub blocks: Vec<ScheduleBlock>,
    pub stages: Vec<StageWindow>,
}

impl ReconstructionSchedule {
    fn block(model: &ChainModel, m: usize, epsilon: f64, budget: &ScheduleBudget, seed: u64) -> Result<ScheduleBlock> {
        let length = window_length(model, epsilon)?;
        let cert = certify(
            model,
            length,
            epsilon,
            budget.calibration_replicas,
            derive_seed(seed, &[tag::CALIBRATE, m as u64]),
        )?;
        let (report, _) = evaluate_priming(
            model,
            &cert.constants,
            epsilon,
            budget.alpha_replicas,
            derive_seed(seed, &[tag::EVALUATE, m as u64]),
        )?;
        if report.h_rate.mean <= 0.0 {
            return Err(Error::InsufficientReplicas(format!(
                "no priming success among {} replicas for block {m}",
                budget.alpha_replicas
            )));
        }
        Ok(ScheduleBlock {
            m,
            length,
            epsilon,
            repetitions: (REPETITION_MARGIN / report.h_rate.mean).ceil() as usize,
            alpha: report.h_rate,
            constants: cert.constants,
        })
    }

    fn lay_out(blocks: Vec<ScheduleBlock>, max_stages: usize) -> Self {
        let mut stages = Vec::new();
        let mut t = 0i64;
        'outer: for (b, block) in blocks.iter().enumerate() {
            for _ in 0..block.repetitions {
                if stages.len() == max_stages {
                    break 'outer;
                }
                let start = t - block.length as i64;
                stages.push(StageWindow {
                    k: stages.len() + 1,
                    block: b,
                    start,
                    end: t - 1,
                });
                t = start;
            }
        }
        ReconstructionSchedule { blocks, stages }
    }

    /// Blocks `m = 1, 2, …` with `ε = 1/m`, `L_m` from the analytic tail and
    /// `M_m = ⌈1.1/α̂_m⌉`, truncated to `budget.stages` stages.
    pub fn paper(model: &ChainModel, budget: &ScheduleBudget, seed: u64) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut total = 0;
        let mut m = 1;
        while total < budget.stages {
            let block = Self::block(model, m, 1.0 / m as f64, budget, seed)?;
            total += block.repetitions;
            blocks.push(block);
            m += 1;
        }
        Ok(Self::lay_out(blocks, budget.stages))
    }

    /// One stage per listed `ε`, in order away from time 0.
    pub fn explicit(model: &ChainModel, epsilons: &[f64], budget: &ScheduleBudget, seed: u64) -> Result<Self> {
        let mut blocks = epsilons
            .iter()
            .enumerate()
            .map(|(i, &e)| Self::block(model, i + 1, e, budget, seed))
            .collect::<Result<Vec<_>>>()?;
        for b in &mut blocks {
            b.repetitions = 1;
        }
        Ok(Self::lay_out(blocks, epsilons.len()))
    }

    /// `t_K`, the earliest index covered.
    pub fn earliest(&self) -> i64 {
        self.stages.last().map_or(0, |s| s.start)
    }

    pub fn stage_block(&self, stage: &StageWindow) -> &ScheduleBlock {
        &self.blocks[stage.block]
    }

    /// Stages tile `[t_K, -1]` contiguously from `t_0 = 0`.
    pub fn is_partition(&self) -> bool {
        let mut t = 0;
        self.stages.iter().enumerate().all(|(i, s)| {
            let ok = s.k == i + 1 && s.end == t - 1 && s.len() == self.blocks[s.block].length;
            t = s.start;
            ok
        })
    }

    /// `Σ_k α̂_{m(k)}` over the laid-out stages.
    pub fn expected_successes(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| self.blocks[s.block].alpha.mean)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub replica: u64,
    pub h: bool,
    pub recovered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub k: usize,
    pub start: i64,
    pub length: usize,
    pub epsilon: f64,
    pub h_rate: Estimate,
    pub alpha: f64,
    pub recovery_given_h: Option<Estimate>,
    /// `1 − 3ε_k − 3σ`.
    pub recovery_floor: Option<f64>,
    pub recovery_ok: bool,
    /// Running fraction of stages `≤ k` where `H` held, averaged over replicas.
    pub running_h_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessiveReport {
    pub replicas: usize,
    pub stages: Vec<StageSummary>,
    pub expected_successes: f64,
    pub mean_successes: Estimate,
    /// Replicas for which some stage held `H` and every such stage recovered `X_0`.
    pub all_recovered_when_hit: Estimate,
}

impl SuccessiveReport {
    pub fn all_ok(&self) -> bool {
        self.stages.iter().all(|s| s.recovery_ok)
    }
}

/// Runs every stage of `schedule` on `replicas` stationary paths ending at
/// time 0 and checks whether `X_0^k = X_0` on `H_{J_k}`.
pub fn successive_approximation(
    model: &ChainModel,
    schedule: &ReconstructionSchedule,
    replicas: usize,
    seed: u64,
) -> Result<(SuccessiveReport, Vec<StageRow>)> {
    if !schedule.is_partition() {
        return Err(Error::domain("schedule stages do not tile the negative axis"));
    }
    let t_k = schedule.earliest();
    let span = (1 - t_k) as usize;
    let k_max = schedule.stages.len();
    let mut rows = Vec::with_capacity(replicas * k_max);
    let mut successes = Vec::with_capacity(replicas);
    let mut consistent = 0;
    for r in 0..replicas as u64 {
        let sc = sample_scenario(model, span, t_k, derive_seed(seed, &[tag::STAGE, r]))?;
        let x0 = *sc.path.last().expect("nonempty path");
        let (mut wins, mut clean) = (0usize, true);
        for st in &schedule.stages {
            let block = schedule.stage_block(st);
            let sources = sc.innovations.window(st.start, (1 - st.start) as usize)?;
            let run = reconstruct_from_window(model, sources, st.start, &block.constants)?;
            let recovered = run.last() == Some(x0);
            if run.h {
                wins += 1;
                clean &= recovered;
            }
            rows.push(StageRow {
                stage: st.k,
                replica: r,
                h: run.h,
                recovered,
            });
        }
        if wins > 0 && clean {
            consistent += 1;
        }
        successes.push(wins as f64);
    }
    let mut stages = Vec::with_capacity(k_max);
    let mut running = 0.0;
    for (i, st) in schedule.stages.iter().enumerate() {
        let block = schedule.stage_block(st);
        let of_stage = rows.iter().filter(|row| row.stage == st.k);
        let (mut h, mut rec) = (0, 0);
        for row in of_stage {
            if row.h {
                h += 1;
                rec += usize::from(row.recovered);
            }
        }
        let h_rate = Estimate::proportion(h, replicas);
        running += h_rate.mean;
        let recovery = (h > 0).then(|| Estimate::proportion(rec, h));
        let floor = recovery.map(|e| 1.0 - 3.0 * block.epsilon - 3.0 * e.stderr);
        stages.push(StageSummary {
            k: st.k,
            start: st.start,
            length: st.len(),
            epsilon: block.epsilon,
            h_rate,
            alpha: block.alpha.mean,
            recovery_ok: match (recovery, floor) {
                (Some(e), Some(f)) => e.mean >= f,
                _ => true,
            },
            recovery_given_h: recovery,
            recovery_floor: floor,
            running_h_fraction: running / (i + 1) as f64,
        });
    }
    let report = SuccessiveReport {
        replicas,
        stages,
        expected_successes: schedule.expected_successes(),
        mean_successes: Estimate::from_samples(&successes),
        all_recovered_when_hit: Estimate::proportion(consistent, replicas),
    };
    Ok((report, rows))
}
