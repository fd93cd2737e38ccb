//! One runner per subcommand. Each returns its summary, its bound checks and
//! its CSV rows; nothing here touches the filesystem.

use std::sync::Arc;

use globcoup::chain::{influence_profile, stationary_path, ChainModel};
use globcoup::coupler::{couple, coupling_rows, summarize};
use globcoup::governor::{extract_innovations, replay};
use globcoup::measure::{Density, Region, State, StateSpace};
use globcoup::ppp::{splice, PointProcessSource, PointSet};
use globcoup::priming::{certify, evaluate_priming, PrimingCertificate};
use globcoup::race::{race_report, race_sample, RaceSource};
use globcoup::reconstruct::{
    disagreement_experiment, successive_approximation, window_length, ReconstructionSchedule, ScheduleBudget,
};
use globcoup::rng::{derive_seed, tag, Substream};
use globcoup::stats::{self, binomial_se, Estimate};
use serde_json::json;

use crate::config::{ExperimentConfig, Prepared, PrimeParams, ReconstructParams, ScheduleParam, Tolerances};
use crate::output::{Check, Outcome, Table};

pub const RACE_COLUMNS: &[&str] = &["replica", "x_p", "x_q", "agree"];
pub const COUPLE_COLUMNS: &[&str] = &["seed", "x_f", "x_g", "t_f", "t_g", "agree_t", "agree_x"];
pub const PPP_COLUMNS: &[&str] = &[
    "replica",
    "t_first",
    "count_base",
    "count_spliced",
    "count_spliced_next_slab",
    "count_spliced_next_strip",
];
pub const INFLUENCE_COLUMNS: &[&str] = &["n", "delta", "delta_brute_force", "eta", "eta_stderr"];
pub const GOVERN_COLUMNS: &[&str] = &["path", "length", "recursion_checks_held", "replay_exact", "first_mismatch"];
pub const PRIME_COLUMNS: &[&str] = &["replica", "h", "mismatch", "z", "x", "step_events"];
pub const RECONSTRUCT_COLUMNS: &[&str] = &["stage", "replica", "h", "recovered"];

type Run = globcoup::Result<Outcome>;

pub fn run(cfg: &ExperimentConfig) -> Run {
    let prepared = Prepared::new(cfg).map_err(|e| globcoup::Error::Domain(e.to_string()))?;
    let (n, seed, tol) = (cfg.replicas, cfg.seed, cfg.tolerances);
    match prepared {
        Prepared::Race { p, q } => race(&p, &q, n, seed, tol),
        Prepared::Couple { space, f, g } => couple_cmd(&space, &f, &g, n, seed, tol),
        Prepared::Ppp { density } => ppp_check(&density, n, seed, tol),
        Prepared::Influence { model, max_n } => influence(&model, max_n, n, seed, tol),
        Prepared::Govern { model, length } => govern(&model, length, n, seed),
        Prepared::Prime { model, params } => prime_cmd(&model, &params, n, seed, tol),
        Prepared::Reconstruct { model, params } => reconstruct_cmd(&model, &params, n, seed, tol),
    }
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn word(xs: &[State]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// `|estimate − target| ≤ k·se(target)`.
fn near(name: impl Into<String>, e: &Estimate, target: f64, tol: Tolerances) -> Check {
    Check::at_most(
        name,
        (e.mean - target).abs(),
        tol.sigmas * binomial_se(target, e.samples) + 1e-12,
        format!("estimate {} against {target}", e.mean),
    )
}

fn p_value(name: impl Into<String>, p: f64, tol: Tolerances, what: &str) -> Check {
    Check::at_least(name, p, tol.significance, what)
}

/// χ² for discrete laws, KS for continuous ones.
fn marginal_check(name: &str, xs: &[State], d: &Density, tol: Tolerances) -> Check {
    let space = d.space();
    match (space.atoms(), d.atom_values()) {
        (Some(k), Some(v)) => {
            let mut counts = vec![0u64; k];
            for x in xs {
                counts[x.as_atom().expect("discrete sample")] += 1;
            }
            let probs: Vec<f64> = (0..k).map(|a| v[a] * space.atom_weight(a)).collect();
            p_value(name, stats::chi_square_gof(&counts, &probs).p_value, tol, "chi-square p-value")
        }
        _ => {
            let reals: Vec<f64> = xs.iter().map(|x| x.numeric()).collect();
            p_value(name, stats::ks_one_sample(&reals, |x| d.mass_below(x)).p_value, tol, "KS p-value")
        }
    }
}

fn race(p: &[f64], q: &[f64], n: usize, seed: u64, tol: Tolerances) -> Run {
    let report = race_report(p, q, n, seed)?;
    let mut rows = Vec::with_capacity(n);
    for r in 0..n as u64 {
        let src = RaceSource::new(derive_seed(seed, &[tag::REPLICA, r]));
        let (a, b) = (race_sample(&src, p)?, race_sample(&src, q)?);
        rows.push(vec![r.to_string(), a.to_string(), b.to_string(), flag(a == b)]);
    }
    let checks = vec![
        Check::at_most(
            "mc_matches_exact",
            (report.mc_estimate - report.exact).abs(),
            tol.sigmas * binomial_se(report.exact, n) + 1e-12,
            "Monte Carlo coincidence against the exact value",
        ),
        Check::at_least(
            "exact_above_lower_bound",
            report.exact,
            report.paper_lower_bound - 1e-12,
            "(1-d)/(1+d)",
        ),
    ];
    Ok(Outcome {
        summary: json!(report),
        checks,
        table: Table {
            header: RACE_COLUMNS,
            rows,
        },
    })
}

fn couple_cmd(space: &Arc<StateSpace>, f: &Density, g: &Density, n: usize, seed: u64, tol: Tolerances) -> Run {
    let start = derive_seed(seed, &[tag::REPLICA]) >> 1;
    let rows = coupling_rows(space, start..start + n as u64, f, g)?;
    let report = summarize(&rows, f, g)?;
    let xf: Vec<State> = rows.iter().map(|r| r.x_f).collect();
    let xg: Vec<State> = rows.iter().map(|r| r.x_g).collect();
    let mut checks = vec![
        near("time_coincidence", &report.t_rate, report.jaccard, tol),
        Check::at_least(
            "position_agreement",
            report.x_rate.mean,
            1.0 - report.disagreement_bound - tol.sigmas * report.x_rate.stderr - 1e-12,
            "1 - 2d/(1+d)",
        ),
        marginal_check("marginal_f", &xf, f, tol),
    ];
    if f.atom_values() != g.atom_values() || f.atom_values().is_none() {
        checks.push(marginal_check("marginal_g", &xg, g, tol));
    }
    let table = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.x_f.to_string(),
                r.x_g.to_string(),
                r.t_f.to_string(),
                r.t_g.to_string(),
                flag(r.agree_t),
                flag(r.agree_x),
            ]
        })
        .collect();
    Ok(Outcome {
        summary: json!(report),
        checks,
        table: Table {
            header: COUPLE_COLUMNS,
            rows: table,
        },
    })
}

fn ppp_check(density: &Density, n: usize, seed: u64, tol: Tolerances) -> Run {
    let space = density.space().clone();
    let region = Region::subgraph(density)?;
    let law = if density.is_probability() {
        density.clone()
    } else {
        density.normalized()?
    };
    let (mu, total) = (region.measure(), space.total_mass());
    let cells = (0, space.num_cells());
    let (mut ts, mut base, mut s00, mut s01, mut s10) = (vec![], vec![], vec![], vec![], vec![]);
    let mut rows = Vec::with_capacity(n);
    for r in 0..n as u64 {
        let src = PointProcessSource::new(derive_seed(seed, &[tag::REPLICA, r]), space.clone());
        let t = src.first_point_in(&region)?.t;
        let donor = PointProcessSource::new(derive_seed(seed, &[tag::SIMULATE, r]), space.clone());
        let x = couple(&donor, &law)?.x;
        let v = Substream::new(seed, &[tag::GOVERN_V, r]).uniform();
        let sp = splice(&src, &region, x, v)?;
        let counts = [
            src.points_in_box(cells, 0, 0).len() as u64,
            sp.points_in_box(cells, 0, 0).len() as u64,
            sp.points_in_box(cells, 0, 1).len() as u64,
            sp.points_in_box(cells, 1, 0).len() as u64,
        ];
        rows.push(vec![
            r.to_string(),
            t.to_string(),
            counts[0].to_string(),
            counts[1].to_string(),
            counts[2].to_string(),
            counts[3].to_string(),
        ]);
        ts.push(t);
        base.push(counts[0]);
        s00.push(counts[1]);
        s01.push(counts[2]);
        s10.push(counts[3]);
    }
    let ks = stats::ks_one_sample(&ts, |t| 1.0 - (-mu * t).exp());
    let as_f = |v: &[u64]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let corr_slab = stats::pearson(&as_f(&s00), &as_f(&s01));
    let corr_strip = stats::pearson(&as_f(&s00), &as_f(&s10));
    let corr_bound = tol.sigmas / (n as f64).sqrt();
    let checks = vec![
        p_value("first_time_exponential", ks.p_value, tol, "KS p-value against Exp(measure)"),
        p_value(
            "base_box_counts_poisson",
            stats::poisson_dispersion(&base, total).p_value,
            tol,
            "dispersion p-value",
        ),
        p_value(
            "spliced_box_counts_poisson",
            stats::poisson_dispersion(&s00, total).p_value,
            tol,
            "dispersion p-value",
        ),
        p_value(
            "spliced_next_slab_poisson",
            stats::poisson_dispersion(&s01, total).p_value,
            tol,
            "dispersion p-value",
        ),
        Check::at_most("spliced_slab_correlation", corr_slab.abs(), corr_bound, "|Pearson r| of disjoint boxes"),
        Check::at_most("spliced_strip_correlation", corr_strip.abs(), corr_bound, "|Pearson r| of disjoint boxes"),
    ];
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
    Ok(Outcome {
        summary: json!({
            "region_measure": mu,
            "box_measure": total,
            "mean_first_time": ts.iter().sum::<f64>() / n as f64,
            "mean_base_count": mean(&base),
            "mean_spliced_count": mean(&s00),
            "slab_correlation": corr_slab,
            "strip_correlation": corr_strip,
        }),
        checks,
        table: Table {
            header: PPP_COLUMNS,
            rows,
        },
    })
}

fn influence(model: &ChainModel, max_n: usize, n: usize, seed: u64, tol: Tolerances) -> Run {
    let prof = influence_profile(model, max_n, n, seed)?;
    let brute = (0..=max_n)
        .map(|k| model.delta_brute_force(k))
        .collect::<globcoup::Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for k in 0..=max_n {
        let (d, e) = (prof.delta[k], prof.eta[k]);
        checks.push(Check::at_most(
            format!("eta_dominated_{k}"),
            e.mean,
            d + tol.sigmas * e.stderr + 1e-12,
            "eta_n <= delta_n + k se",
        ));
        if let Some(b) = brute[k] {
            checks.push(Check::at_most(
                format!("delta_brute_force_{k}"),
                (b - d).abs(),
                1e-6,
                "closed form against exhaustive search",
            ));
        }
        rows.push(vec![
            k.to_string(),
            d.to_string(),
            brute[k].map_or(String::new(), |b| b.to_string()),
            e.mean.to_string(),
            e.stderr.to_string(),
        ]);
    }
    Ok(Outcome {
        summary: json!({ "profile": prof, "delta_brute_force": brute, "truncation_error": model.truncation_error() }),
        checks,
        table: Table {
            header: INFLUENCE_COLUMNS,
            rows,
        },
    })
}

fn bit_equal(a: &State, b: &State) -> bool {
    match (a, b) {
        (State::Real(x), State::Real(y)) => x.to_bits() == y.to_bits(),
        _ => a == b,
    }
}

fn govern(model: &ChainModel, length: usize, n: usize, seed: u64) -> Run {
    let depth = model.past_depth();
    let (mut held, mut exact) = (0usize, 0usize);
    let mut rows = Vec::with_capacity(n);
    for p in 0..n as u64 {
        let full = stationary_path(model, depth + length, derive_seed(seed, &[tag::SIMULATE, p]))?;
        let (ctx, path) = full.split_at(depth);
        let g = extract_innovations(model, ctx, path, 1, derive_seed(seed, &[tag::GOVERN_W, p]))?;
        let again = replay(model, ctx, &g)?;
        let mismatch = path.iter().zip(&again).position(|(a, b)| !bit_equal(a, b));
        let ok = mismatch.is_none() && again.len() == path.len();
        held += usize::from(g.all_checks_hold());
        exact += usize::from(ok);
        rows.push(vec![
            p.to_string(),
            length.to_string(),
            flag(g.all_checks_hold()),
            flag(ok),
            mismatch.map_or(String::new(), |i| (i + 1).to_string()),
        ]);
    }
    let checks = vec![
        Check::at_least("recursion_checks", held as f64, n as f64, "paths whose every index replays"),
        Check::at_least("bit_exact_replay", exact as f64, n as f64, "paths reproduced bit for bit"),
    ];
    Ok(Outcome {
        summary: json!({ "paths": n, "length": length, "recursion_checks_held": held, "bit_exact": exact }),
        checks,
        table: Table {
            header: GOVERN_COLUMNS,
            rows,
        },
    })
}

fn prime_cmd(model: &ChainModel, params: &PrimeParams, n: usize, seed: u64, tol: Tolerances) -> Run {
    let certificate: Option<PrimingCertificate> = match &params.constants {
        Some(_) => None,
        None => Some(certify(model, params.length, params.epsilon, params.calibration_replicas, seed)?),
    };
    let constants = match (&params.constants, &certificate) {
        (Some(c), _) => c.clone(),
        (None, Some(cert)) => cert.constants.clone(),
        (None, None) => unreachable!(),
    };
    let (report, replicas) = evaluate_priming(model, &constants, params.epsilon, n, seed)?;
    let mut checks: Vec<Check> = report
        .step_rates
        .iter()
        .zip(&report.step_predicted)
        .enumerate()
        .map(|(k, (e, &p))| near(format!("step_rate_{}", k + 1), e, p, tol))
        .collect();
    checks.push(near("h_rate", &report.h_rate, report.h_predicted, tol));
    let m = report.mismatch_given_h;
    checks.push(Check::at_most(
        "mismatch_given_h",
        m.mean,
        params.epsilon + tol.sigmas * m.stderr,
        "P[X != Z | H] <= epsilon + k se",
    ));
    if let Some(z) = &report.z_law {
        checks.push(p_value("z_law", z.p_value, tol, "chi-square against the word law"));
    }
    if let Some(i) = &report.independence {
        checks.push(p_value("z_h_independence", i.p_value, tol, "chi-square independence"));
    }
    checks.push(Check::at_least(
        "levels_in_range",
        f64::from(u8::from(report.levels_in_range)),
        1.0,
        "every level M in [n, n+1]",
    ));
    checks.push(Check::at_most(
        "level_residual",
        report.max_level_residual,
        1e-7,
        "|phi(M) - (n+1)|",
    ));
    let rows = replicas
        .iter()
        .map(|r| {
            vec![
                r.replica.to_string(),
                flag(r.h),
                flag(r.mismatch),
                word(&r.z),
                word(&r.x),
                r.h_steps.iter().map(|&b| if b { '1' } else { '0' }).collect(),
            ]
        })
        .collect();
    Ok(Outcome {
        summary: json!({ "report": report, "certificate": certificate }),
        checks,
        table: Table {
            header: PRIME_COLUMNS,
            rows,
        },
    })
}

fn reconstruct_cmd(model: &ChainModel, params: &ReconstructParams, n: usize, seed: u64, tol: Tolerances) -> Run {
    let window = match params.window {
        Some(w) => w,
        None => window_length(model, params.epsilon)?,
    };
    let cert = certify(
        model,
        window,
        params.epsilon,
        params.calibration_replicas,
        derive_seed(seed, &[tag::CALIBRATE]),
    )?;
    let dis = disagreement_experiment(
        model,
        &cert,
        params.horizon,
        n,
        params.eta_replicas,
        derive_seed(seed, &[tag::EVALUATE]),
    )?;
    let budget = ScheduleBudget {
        stages: params.stages,
        calibration_replicas: params.calibration_replicas,
        alpha_replicas: params.alpha_replicas,
    };
    let schedule_seed = derive_seed(seed, &[tag::STAGE]);
    let schedule = match &params.schedule {
        ScheduleParam::Explicit(eps) => ReconstructionSchedule::explicit(model, eps, &budget, schedule_seed)?,
        ScheduleParam::Named(_) => ReconstructionSchedule::paper(model, &budget, schedule_seed)?,
    };
    let (succ, stage_rows) =
        successive_approximation(model, &schedule, params.stage_replicas, derive_seed(seed, &[tag::STAGE, 1]))?;

    let mut checks = Vec::new();
    for s in &dis.steps {
        checks.push(Check::at_most(
            format!("increment_{}", s.offset),
            s.increment.mean,
            s.increment_bound,
            "first-mismatch increment <= 2 eta + k se",
        ));
        checks.push(Check::at_most(
            format!("cumulative_{}", s.offset),
            s.rate.mean,
            s.cumulative_bound,
            "mismatch <= epsilon + 2 sum eta + k se",
        ));
    }
    let final_bound = 3.0 * dis.epsilon + tol.sigmas * dis.final_rate.stderr;
    checks.push(Check::at_most(
        "final_mismatch",
        dis.final_rate.mean,
        final_bound,
        "mismatch over the horizon <= 3 epsilon + k se",
    ));
    for s in &succ.stages {
        if let (Some(e), Some(_)) = (s.recovery_given_h, s.recovery_floor) {
            checks.push(Check::at_least(
                format!("stage_{}_recovery", s.k),
                e.mean,
                1.0 - 3.0 * s.epsilon - tol.sigmas * e.stderr,
                "P[X0 recovered | H] >= 1 - 3 epsilon_k - k se",
            ));
        }
    }
    checks.push(Check::at_least(
        "schedule_partition",
        f64::from(u8::from(schedule.is_partition())),
        1.0,
        "stages tile the negative axis",
    ));
    let measured_repetitions = matches!(params.schedule, ScheduleParam::Named(_));
    for b in schedule.blocks.iter().filter(|_| measured_repetitions) {
        checks.push(Check::at_least(
            format!("block_{}_repetitions", b.m),
            b.repetitions as f64 * b.alpha.mean,
            1.0,
            "M_m alpha_m >= 1",
        ));
    }
    let rows = stage_rows
        .iter()
        .map(|r| vec![r.stage.to_string(), r.replica.to_string(), flag(r.h), flag(r.recovered)])
        .collect();
    Ok(Outcome {
        summary: json!({
            "window": window,
            "certificate": cert,
            "disagreement": dis,
            "schedule": schedule,
            "successive": succ,
        }),
        checks,
        table: Table {
            header: RECONSTRUCT_COLUMNS,
            rows,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = include_str!("../schema/csv_columns.json");

    #[test]
    fn headers_match_the_schema() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        for (cmd, cols) in [
            ("race", RACE_COLUMNS),
            ("couple", COUPLE_COLUMNS),
            ("ppp-check", PPP_COLUMNS),
            ("influence", INFLUENCE_COLUMNS),
            ("govern", GOVERN_COLUMNS),
            ("prime", PRIME_COLUMNS),
            ("reconstruct", RECONSTRUCT_COLUMNS),
        ] {
            let listed: Vec<&str> = schema[cmd]["columns"]
                .as_array()
                .unwrap_or_else(|| panic!("{cmd} missing from schema"))
                .iter()
                .map(|c| c["name"].as_str().unwrap())
                .collect();
            assert_eq!(listed, cols, "{cmd}");
        }
    }
}
