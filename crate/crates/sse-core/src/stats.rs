//! Ensemble post-processing and statistical verification: means with
//! Monte-Carlo errors, martingale increment tests against conditioning
//! functionals, waiting-time and count statistics, and quadratic
//! variation checks.
//!
//! Martingale testing uses coarse conditioning functionals (constants,
//! indicators, path values at the earlier time): the martingale property
//! E[(M_t − M_s) g(F_s)] = 0 turns into a z-score per (s, t, g). Reports
//! use 3σ thresholds with a Bonferroni-adjusted pass level when many
//! scores are combined.

use crate::algebra::{c, CMatrix, DensityMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least two paths, got {0}")]
    TooFewPaths(usize),
    #[error("paths disagree on the checkpoint grid")]
    MismatchedGrids,
    #[error("conditioning set must not be empty")]
    EmptyConditioning,
}

// ---------------------------------------------------------------------------
// Ensemble means
// ---------------------------------------------------------------------------

/// Componentwise mean states and standard errors at common checkpoints.
#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub checkpoints: Vec<f64>,
    pub mean: Vec<CMatrix>,
    /// Per checkpoint, row-major (re, im) standard errors per entry.
    pub stderr: Vec<Vec<(f64, f64)>>,
    pub n: usize,
    pub seed: u64,
}

/// Entrywise mean and stderr over the ensemble; deterministic given the
/// input order.
pub fn ensemble_mean(
    paths: &[Vec<DensityMatrix>],
    checkpoints: &[f64],
    seed: u64,
) -> Result<EnsembleSummary, StatsError> {
    if paths.len() < 2 {
        return Err(StatsError::TooFewPaths(paths.len()));
    }
    if paths.iter().any(|p| p.len() != checkpoints.len()) {
        return Err(StatsError::MismatchedGrids);
    }
    let dim = paths[0][0].dim();
    let n = paths.len();
    let mut mean = Vec::with_capacity(checkpoints.len());
    let mut stderr = Vec::with_capacity(checkpoints.len());
    for k in 0..checkpoints.len() {
        let mut sum = CMatrix::zeros(dim);
        let mut sq = vec![(0.0, 0.0); dim * dim];
        for p in paths {
            let m = p[k].mat();
            sum = sum + m.clone();
            for i in 0..dim {
                for j in 0..dim {
                    let z = m.at(i, j);
                    sq[i * dim + j].0 += z.re * z.re;
                    sq[i * dim + j].1 += z.im * z.im;
                }
            }
        }
        let avg = sum.scale(c(1.0 / n as f64, 0.0));
        let mut errs = vec![(0.0, 0.0); dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let z = avg.at(i, j);
                let var_re = (sq[i * dim + j].0 / n as f64 - z.re * z.re).max(0.0);
                let var_im = (sq[i * dim + j].1 / n as f64 - z.im * z.im).max(0.0);
                errs[i * dim + j] = ((var_re / n as f64).sqrt(), (var_im / n as f64).sqrt());
            }
        }
        mean.push(avg);
        stderr.push(errs);
    }
    Ok(EnsembleSummary {
        checkpoints: checkpoints.to_vec(),
        mean,
        stderr,
        n,
        seed,
    })
}

/// Componentwise comparison of an ensemble mean against oracle states:
/// z = |mean − oracle| / stderr per (checkpoint, entry, re/im part).
#[derive(Clone, Debug)]
pub struct OracleComparison {
    pub max_abs_z: f64,
    pub max_stderr: f64,
    pub worst: String,
}

pub fn compare_to_oracle(
    summary: &EnsembleSummary,
    oracle: &[DensityMatrix],
) -> OracleComparison {
    assert_eq!(oracle.len(), summary.checkpoints.len());
    let dim = summary.mean[0].dim();
    let mut max_abs_z: f64 = 0.0;
    let mut max_stderr: f64 = 0.0;
    let mut worst = String::new();
    for k in 0..summary.checkpoints.len() {
        for i in 0..dim {
            for j in 0..dim {
                let d = summary.mean[k].at(i, j) - oracle[k].mat().at(i, j);
                let (se_re, se_im) = summary.stderr[k][i * dim + j];
                max_stderr = max_stderr.max(se_re).max(se_im);
                // a vanishing stderr forces an exact match
                for (diff, se, part) in [(d.re, se_re, "re"), (d.im, se_im, "im")] {
                    let z = if se > 0.0 {
                        diff.abs() / se
                    } else if diff.abs() < 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    if z > max_abs_z {
                        max_abs_z = z;
                        worst = format!(
                            "t={} entry=({i},{j}).{part} diff={diff:.3e} stderr={se:.3e}",
                            summary.checkpoints[k]
                        );
                    }
                }
            }
        }
    }
    OracleComparison {
        max_abs_z,
        max_stderr,
        worst,
    }
}

// ---------------------------------------------------------------------------
// Martingale tests
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MartingaleZ {
    pub s: f64,
    pub t: f64,
    pub functional: String,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct MartingaleReport {
    pub process: String,
    pub rows: Vec<MartingaleZ>,
    pub max_abs_z: f64,
    pub tests: usize,
    /// Threshold keeping the familywise false-alarm rate of the combined
    /// report at the single-test 3σ level.
    pub bonferroni_threshold: f64,
    /// True when some individual score exceeds 3 (noted, not failing).
    pub flagged_at_3sigma: bool,
    pub pass: bool,
}

/// z-scores of E[(P_t − P_s) g(s)] over all checkpoint pairs s < t and
/// conditioning functionals g (given as per-path values at each s).
pub fn martingale_test(
    process: &str,
    times: &[f64],
    values: &[Vec<f64>],
    conditioning: &[(String, Vec<Vec<f64>>)],
) -> Result<MartingaleReport, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewPaths(values.len()));
    }
    if conditioning.is_empty() {
        return Err(StatsError::EmptyConditioning);
    }
    let n = values.len();
    if values.iter().any(|v| v.len() != times.len())
        || conditioning
            .iter()
            .any(|(_, g)| g.len() != n || g.iter().any(|v| v.len() != times.len()))
    {
        return Err(StatsError::MismatchedGrids);
    }
    let mut rows = Vec::new();
    for si in 0..times.len() {
        for ti in (si + 1)..times.len() {
            for (name, g) in conditioning {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for p in 0..n {
                    let x = (values[p][ti] - values[p][si]) * g[p][si];
                    sum += x;
                    sq += x * x;
                }
                let mean = sum / n as f64;
                let var = (sq / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt();
                let z = if se > 0.0 {
                    mean / se
                } else if mean.abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                rows.push(MartingaleZ {
                    s: times[si],
                    t: times[ti],
                    functional: name.clone(),
                    z,
                });
            }
        }
    }
    let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let tests = rows.len();
    // two-sided alpha of a single 3σ test, split across all scores
    let alpha = 0.0027;
    let threshold = normal_quantile(1.0 - alpha / (2.0 * tests as f64));
    Ok(MartingaleReport {
        process: process.into(),
        rows,
        max_abs_z,
        tests,
        bonferroni_threshold: threshold,
        flagged_at_3sigma: max_abs_z > 3.0,
        pass: max_abs_z <= threshold,
    })
}

/// Standard normal quantile (Acklam's rational approximation, |err| < 1e-8).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

// ---------------------------------------------------------------------------
// Counting statistics
// ---------------------------------------------------------------------------

/// Kolmogorov–Smirnov distance between an empirical sample and a CDF;
/// `n_total` includes right-censored observations beyond the sample.
pub fn ks_distance(samples: &[f64], n_total: usize, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = n_total as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

#[derive(Clone, Debug)]
pub struct CountingStats {
    /// (bin midpoint, empirical rate, oracle rate).
    pub rate_curve: Vec<(f64, f64, f64)>,
    /// KS distance of the first-waiting-time law; none when no path jumped.
    pub waiting_ks: Option<f64>,
    pub total_jumps: u64,
    pub n_paths: usize,
}

/// Empirical jump rate per time bin against an oracle rate, and the
/// first-waiting-time distribution against an oracle CDF. Zero total
/// jumps is reported, not an error.
pub fn counting_statistics(
    jump_times: &[Vec<f64>],
    horizon: f64,
    n_bins: usize,
    oracle_rate: impl Fn(f64) -> f64,
    waiting_cdf: impl Fn(f64) -> f64,
) -> CountingStats {
    let n = jump_times.len();
    let width = horizon / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    let mut firsts = Vec::new();
    let mut total = 0u64;
    for path in jump_times {
        if let Some(&t1) = path.first() {
            firsts.push(t1);
        }
        for &t in path {
            let b = ((t / width) as usize).min(n_bins - 1);
            counts[b] += 1;
            total += 1;
        }
    }
    let rate_curve = (0..n_bins)
        .map(|b| {
            let mid = (b as f64 + 0.5) * width;
            let emp = counts[b] as f64 / (n as f64 * width);
            (mid, emp, oracle_rate(mid))
        })
        .collect();
    let waiting_ks = if firsts.is_empty() {
        None
    } else {
        Some(ks_distance(&firsts, n, waiting_cdf))
    };
    CountingStats {
        rate_curve,
        waiting_ks,
        total_jumps: total,
        n_paths: n,
    }
}
