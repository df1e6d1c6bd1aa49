//! Growth-curve fitting and policy comparison.
//!
//! The regret guarantees under study separate policies by their growth
//! order, so this module fits two competing shapes to a cumulative-regret
//! curve — `R(t) = c2·(log t)^2 + c0` and `R(t) = k·t^alpha` — and compares
//! policies across horizons under common random numbers (the shock
//! generator is keyed by day and consumer, not by policy, so both arms see
//! identical draws).

use crate::agents::SOPolicyKind;
use crate::sim::{run_ensemble, SimError, SimulationConfig};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    /// Not enough usable points for the requested fit or comparison.
    InsufficientData { detail: String },
    Sim(SimError),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::InsufficientData { detail } => {
                write!(f, "insufficient data: {detail}")
            }
            AnalysisError::Sim(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<SimError> for AnalysisError {
    fn from(e: SimError) -> Self {
        AnalysisError::Sim(e)
    }
}

/// Least-squares line through `(x, y)` pairs; returns `(slope, intercept)`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let x_mean = xs.iter().sum::<f64>() / nf;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, y_mean - slope * x_mean))
}

/// Coefficient of determination of predictions against observations,
/// evaluated on the original (untransformed) scale.
fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    if ss_tot == 0.0 {
        if ss_res.abs() < 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Fits `y = c2·(log t)^2 + c0`; returns `(c2, r2)` with `r2` on the
/// original scale. Needs at least two points.
pub fn log2_fit_points(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let xs: Vec<f64> = points.iter().map(|(t, _)| t.ln() * t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let (slope, intercept) = linear_fit(&xs, &ys)?;
    let predicted: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
    Some((slope, r_squared(&ys, &predicted)))
}

/// Fits `y = k·t^alpha` on positive points via log-log regression; returns
/// `(alpha, r2)` with `r2` on the original scale. Needs at least two
/// positive points.
pub fn power_fit_points(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let positive: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, y)| t > 0.0 && y > 0.0)
        .collect();
    let xs: Vec<f64> = positive.iter().map(|(t, _)| t.ln()).collect();
    let ls: Vec<f64> = positive.iter().map(|(_, y)| y.ln()).collect();
    let (alpha, kappa) = linear_fit(&xs, &ls)?;
    let ys: Vec<f64> = positive.iter().map(|(_, y)| *y).collect();
    let predicted: Vec<f64> = xs.iter().map(|x| (kappa + alpha * x).exp()).collect();
    Some((alpha, r_squared(&ys, &predicted)))
}

/// Both growth fits for one cumulative curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    /// Coefficient of `(log t)^2` in the polylog fit.
    pub c2: f64,
    pub log2_intercept: f64,
    pub log2_r2: f64,
    /// Exponent of the power-law fit `k·t^alpha`.
    pub alpha: f64,
    pub power_r2: f64,
    /// Number of points used by the polylog fit.
    pub n_points: usize,
}

/// Fits both growth shapes to `(ts, rs)` using only days `t >= t_min`. The
/// tail must hold at least ten points spanning a factor of ten in `t`, and
/// the power fit needs at least five positive values; shorter curves are
/// rejected rather than fitted misleadingly.
pub fn fit_growth(ts: &[usize], rs: &[f64], t_min: usize) -> Result<GrowthFit, AnalysisError> {
    if ts.len() != rs.len() {
        return Err(AnalysisError::InsufficientData {
            detail: format!("{} day indices against {} values", ts.len(), rs.len()),
        });
    }
    let tail: Vec<(f64, f64)> = ts
        .iter()
        .zip(rs)
        .filter(|(&t, _)| t >= t_min)
        .map(|(&t, &r)| (t as f64, r))
        .collect();
    if tail.len() < 10 {
        return Err(AnalysisError::InsufficientData {
            detail: format!("only {} points at t >= {t_min}, need 10", tail.len()),
        });
    }
    let t_lo = tail.first().unwrap().0;
    let t_hi = tail.last().unwrap().0;
    if t_hi < 10.0 * t_lo {
        return Err(AnalysisError::InsufficientData {
            detail: format!(
                "tail spans t in [{t_lo}, {t_hi}]; fits need a decade of range"
            ),
        });
    }
    let xs: Vec<f64> = tail.iter().map(|(t, _)| t.ln() * t.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, r)| *r).collect();
    let (c2, c0) = linear_fit(&xs, &ys).ok_or_else(|| AnalysisError::InsufficientData {
        detail: "degenerate day indices".into(),
    })?;
    let predicted: Vec<f64> = xs.iter().map(|x| c2 * x + c0).collect();
    let log2_r2 = r_squared(&ys, &predicted);

    let n_positive = tail.iter().filter(|&&(_, r)| r > 0.0).count();
    if n_positive < 5 {
        return Err(AnalysisError::InsufficientData {
            detail: format!("only {n_positive} positive values, power fit needs 5"),
        });
    }
    let (alpha, power_r2) =
        power_fit_points(&tail).ok_or_else(|| AnalysisError::InsufficientData {
            detail: "degenerate positive tail".into(),
        })?;

    Ok(GrowthFit { c2, log2_intercept: c0, log2_r2, alpha, power_r2, n_points: tail.len() })
}

/// One policy's regret across the horizon grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub policy: String,
    pub t_grid: Vec<usize>,
    /// Mean total regret across replications at each grid horizon.
    pub mean_regret: Vec<f64>,
    /// Sample standard deviation across replications at each grid horizon.
    pub sd_regret: Vec<f64>,
    /// Power-law exponent fitted through the positive grid points.
    pub alpha: Option<f64>,
}

/// Paired-versus-unpaired spread of the regret difference at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedStats {
    pub t: usize,
    pub mean_diff: f64,
    /// Sample sd of the per-replication differences (common random numbers).
    pub paired_sd: f64,
    /// Spread the same estimate would have from independent arms.
    pub unpaired_sd: f64,
    /// `paired_sd / unpaired_sd`; below 1 when pairing helps.
    pub paired_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub curves: [PolicyCurve; 2],
    /// Paired statistics at the largest grid horizon.
    pub paired: PairedStats,
    /// Smallest grid horizon from which the first policy's mean regret stays
    /// strictly below the second's through the end of the grid.
    pub crossover_t: Option<usize>,
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() >= 2 {
        (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs both policies over the horizon grid under common random numbers and
/// summarizes their regret curves. The grid is sorted and deduplicated; both
/// arms reuse `base` for everything except the operator policy.
pub fn compare_policies(
    base: &SimulationConfig,
    policies: [SOPolicyKind; 2],
    t_grid: &[usize],
) -> Result<Comparison, AnalysisError> {
    let mut grid: Vec<usize> = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(AnalysisError::InsufficientData {
            detail: "empty horizon grid".into(),
        });
    }

    let mut per_rep: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut curves: Vec<PolicyCurve> = Vec::with_capacity(2);
    for (arm, policy) in policies.iter().enumerate() {
        let mut mean_regret = Vec::with_capacity(grid.len());
        let mut sd_regret = Vec::with_capacity(grid.len());
        for &t in &grid {
            let mut cfg = base.clone();
            cfg.market.t_horizon = t;
            cfg.so_policy = policy.clone();
            let stats = run_ensemble(&cfg)?;
            let (mean, sd) = mean_sd(&stats.per_rep_regret);
            mean_regret.push(mean);
            sd_regret.push(sd);
            per_rep[arm].push(stats.per_rep_regret);
        }
        let points: Vec<(f64, f64)> = grid
            .iter()
            .zip(&mean_regret)
            .map(|(&t, &r)| (t as f64, r))
            .collect();
        let alpha = power_fit_points(&points).map(|(a, _)| a);
        curves.push(PolicyCurve {
            policy: policy.name().to_string(),
            t_grid: grid.clone(),
            mean_regret,
            sd_regret,
            alpha,
        });
    }

    let last = grid.len() - 1;
    let diffs: Vec<f64> = per_rep[0][last]
        .iter()
        .zip(&per_rep[1][last])
        .map(|(a, b)| a - b)
        .collect();
    let (mean_diff, paired_sd) = mean_sd(&diffs);
    let (_, sd0) = mean_sd(&per_rep[0][last]);
    let (_, sd1) = mean_sd(&per_rep[1][last]);
    let unpaired_sd = (sd0 * sd0 + sd1 * sd1).sqrt();
    let paired = PairedStats {
        t: grid[last],
        mean_diff,
        paired_sd,
        unpaired_sd,
        paired_fraction: if unpaired_sd > 0.0 { paired_sd / unpaired_sd } else { 0.0 },
    };

    let mut crossover_t = None;
    for (k, &t) in grid.iter().enumerate() {
        let dominates = (k..grid.len())
            .all(|j| curves[0].mean_regret[j] < curves[1].mean_regret[j]);
        if dominates {
            crossover_t = Some(t);
            break;
        }
    }

    let [c0, c1]: [PolicyCurve; 2] = curves.try_into().expect("exactly two curves");
    Ok(Comparison { curves: [c0, c1], paired, crossover_t })
}
