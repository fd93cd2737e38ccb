//! Small statistical toolkit used by the Monte Carlo checks: binomial
//! estimates, chi-square and Kolmogorov-Smirnov tests, correlation and
//! Poisson dispersion.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    /// Fraction of successes with the binomial standard error.
    pub fn proportion(successes: usize, trials: usize) -> Self {
        if trials == 0 {
            return Estimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let p = successes as f64 / trials as f64;
        Estimate {
            mean: p,
            stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            samples: trials,
        }
    }

    /// Sample mean with the standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// True when `target` lies within `k` standard errors of the mean.
    ///
    /// A zero standard error only accepts an exact match.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + 1e-12
    }
}

/// Standard error of a proportion evaluated at the hypothesised value `p`.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Survival function of the chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(stat: f64, df: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, stat / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test of `observed` counts against `probs`.
///
/// Categories with zero expected probability must have zero counts (otherwise
/// the p-value is 0); they do not contribute degrees of freedom.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> TestOutcome {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mut stat = 0.0;
    let mut cats = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return TestOutcome {
                    statistic: f64::INFINITY,
                    df: 0.0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = total * p;
        stat += (o as f64 - e).powi(2) / e;
        cats += 1;
    }
    let df = cats.saturating_sub(1) as f64;
    TestOutcome {
        statistic: stat,
        df,
        p_value: if df == 0.0 { 1.0 } else { chi_square_sf(stat, df) },
    }
}

/// Pearson chi-square test of independence on a contingency table.
///
/// Empty rows and columns are dropped before counting degrees of freedom.
pub fn chi_square_independence(table: &[Vec<u64>]) -> TestOutcome {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return TestOutcome {
            statistic: 0.0,
            df: 0.0,
            p_value: 1.0,
        };
    }
    let ncol = rows[0].len();
    let col_sums: Vec<u64> = (0..ncol).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let live_cols: Vec<usize> = (0..ncol).filter(|&j| col_sums[j] > 0).collect();
    let total: f64 = col_sums.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    for r in &rows {
        let rs: f64 = r.iter().sum::<u64>() as f64;
        for &j in &live_cols {
            let e = rs * col_sums[j] as f64 / total;
            stat += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let df = ((rows.len() - 1) * live_cols.len().saturating_sub(1)) as f64;
    TestOutcome {
        statistic: stat,
        df,
        p_value: if df == 0.0 { 1.0 } else { chi_square_sf(stat, df) },
    }
}

/// Asymptotic Kolmogorov distribution tail `P[K > lambda]`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
///
/// The p-value uses the Stephens small-sample correction of the asymptotic law.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> TestOutcome {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    TestOutcome {
        statistic: d,
        df: n,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Pearson correlation coefficient; 0 when either sample is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Chi-square test that `counts` are Poisson with known `mean`.
///
/// Uses the dispersion statistic `sum (c - mean)^2 / mean`, which is
/// approximately chi-square with `counts.len()` degrees of freedom.
pub fn poisson_dispersion(counts: &[u64], mean: f64) -> TestOutcome {
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2) / mean)
        .sum();
    let df = counts.len() as f64;
    // two-sided: both over- and under-dispersion are failures
    let upper = chi_square_sf(stat, df);
    TestOutcome {
        statistic: stat,
        df,
        p_value: (2.0 * upper.min(1.0 - upper)).min(1.0),
    }
}

/// Goodness of fit of `counts` to the Poisson law with `mean`, with the tail
/// pooled into the last bin.
pub fn poisson_gof(counts: &[u64], mean: f64) -> TestOutcome {
    let maxbin = {
        // smallest k whose tail mass falls below 1e-3
        let mut k = 0usize;
        let mut cdf = 0.0;
        let mut pmf = (-mean).exp();
        while 1.0 - cdf - pmf > 1e-3 {
            cdf += pmf;
            k += 1;
            pmf *= mean / k as f64;
        }
        k + 1
    };
    let mut probs = vec![0.0; maxbin + 1];
    let mut pmf = (-mean).exp();
    let mut acc = 0.0;
    for (k, p) in probs.iter_mut().enumerate().take(maxbin) {
        if k > 0 {
            pmf *= mean / k as f64;
        }
        *p = pmf;
        acc += pmf;
    }
    probs[maxbin] = (1.0 - acc).max(0.0);
    let mut observed = vec![0u64; maxbin + 1];
    for &c in counts {
        observed[(c as usize).min(maxbin)] += 1;
    }
    chi_square_gof(&observed, &probs)
}
