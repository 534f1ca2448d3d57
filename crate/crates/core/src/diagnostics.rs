//! Empirical mixing diagnostics: integrated autocorrelation times with
//! self-consistent windowing, exact total-variation decay curves at tiny
//! sizes, and sector-occupancy monitoring against the polynomial bound.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::RunStats;
use crate::oracle::TransitionMatrix;
use crate::{Error, Result};

/// A thinned observable series from one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub chain_id: u64,
    pub seed: u64,
}

impl TimeSeries {
    pub fn integrated_autocorrelation(&self, window_factor: f64) -> Result<AutocorrEstimate> {
        integrated_autocorrelation(&self.values, window_factor)
    }
}

/// τ_int estimate plus the window it was summed over.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AutocorrEstimate {
    pub tau_int: f64,
    pub window: usize,
}

/// Integrated autocorrelation time with self-consistent windowing: the
/// window grows until it exceeds `window_factor`·τ_int (6 is the usual
/// choice). τ_int ≥ 1/2 by construction; an i.i.d. series gives ≈ 1/2.
pub fn integrated_autocorrelation(values: &[f64], window_factor: f64) -> Result<AutocorrEstimate> {
    let n = values.len();
    if n < 50 {
        return Err(Error::Series(format!(
            "autocorrelation needs >= 50 points, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Series("series contains non-finite values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let c0 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Err(Error::Series("series has zero variance".into()));
    }

    let max_window = n / 3;
    let mut tau = 0.5;
    let mut window = max_window;
    for t in 1..=max_window {
        let mut c = 0.0;
        for k in 0..n - t {
            c += (values[k] - mean) * (values[k + t] - mean);
        }
        c /= (n - t) as f64;
        tau += c / c0;
        if (t as f64) >= window_factor * tau.max(0.5) {
            window = t;
            break;
        }
    }
    Ok(AutocorrEstimate {
        tau_int: tau.max(0.5),
        window,
    })
}

/// Diagnostics-driven burn-in suggestion: 20·τ_int thinned samples worth of
/// steps.
pub fn adaptive_burnin(tau_int: f64, thinning: u64) -> u64 {
    (20.0 * tau_int * thinning as f64).ceil() as u64
}

/// Normalized autocorrelation function ρ(0..=max_lag) of a series; ρ(0) = 1.
pub fn autocorrelation_function(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 50 {
        return Err(Error::Series(format!(
            "autocorrelation needs >= 50 points, got {n}"
        )));
    }
    if max_lag >= n {
        return Err(Error::Series(format!(
            "max lag {max_lag} >= series length {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let c0 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Err(Error::Series("series has zero variance".into()));
    }
    let mut rho = Vec::with_capacity(max_lag + 1);
    for t in 0..=max_lag {
        let mut c = 0.0;
        for k in 0..n - t {
            c += (values[k] - mean) * (values[k + t] - mean);
        }
        rho.push(c / ((n - t) as f64) / c0);
    }
    Ok(rho)
}

/// Exact TV(t) = ‖δ_x Pᵗ − π‖_TV for t = 0..=horizon by repeated sparse
/// matrix-vector application. Monotone nonincreasing for any chain.
pub fn empirical_tv_decay(
    p: &TransitionMatrix,
    pi: &[f64],
    initial: usize,
    horizon: usize,
) -> Vec<f64> {
    let tv = |dist: &[f64]| 0.5 * dist.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let mut dist = vec![0.0; p.dim()];
    dist[initial] = 1.0;
    let mut curve = Vec::with_capacity(horizon + 1);
    curve.push(tv(&dist));
    for _ in 0..horizon {
        dist = p.multiply_left(&dist);
        curve.push(tv(&dist));
    }
    curve
}

/// Empirical sector occupancy ratio with a Wilson confidence interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SectorRatioReport {
    /// (C2 steps)/(C0 steps).
    pub ratio: f64,
    /// Wilson interval on the ratio.
    pub lo: f64,
    pub hi: f64,
    pub c0_steps: u64,
    pub c2_steps: u64,
    /// Threshold the ratio was compared against (a multiple of M).
    pub threshold: f64,
    pub flagged: bool,
}

/// Compare the observed (C2)/(C0) occupancy against `flag_multiple`·M. The
/// stationary ratio is polynomially bounded (O(M)); a run far above that
/// multiple signals an anomaly.
pub fn sector_ratio_monitor(
    stats: &RunStats,
    m_total: u32,
    flag_multiple: f64,
    z: f64,
) -> SectorRatioReport {
    let (c0, c2) = (stats.c0_steps, stats.c2_steps);
    let n = (c0 + c2) as f64;
    let ratio = if c0 == 0 {
        f64::INFINITY
    } else {
        c2 as f64 / c0 as f64
    };
    let (lo, hi) = if n == 0.0 {
        (0.0, f64::INFINITY)
    } else {
        let phat = c2 as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (phat + z2 / (2.0 * n)) / denom;
        let half = (z / denom) * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
        let plo = (center - half).max(0.0);
        let phi = (center + half).min(1.0);
        let to_ratio = |p: f64| {
            if p >= 1.0 {
                f64::INFINITY
            } else {
                p / (1.0 - p)
            }
        };
        (to_ratio(plo), to_ratio(phi))
    };
    let threshold = flag_multiple * m_total as f64;
    SectorRatioReport {
        ratio,
        lo,
        hi,
        c0_steps: c0,
        c2_steps: c2,
        threshold,
        flagged: ratio > threshold,
    }
}

/// Write a plot-ready two-column table: `# <x_name>\t<y_name>` then rows.
pub fn write_series_tsv(
    path: &Path,
    x_name: &str,
    y_name: &str,
    rows: impl IntoIterator<Item = (f64, f64)>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {x_name}\t{y_name}")?;
    for (x, y) in rows {
        writeln!(out, "{x}\t{y}")?;
    }
    out.flush()?;
    Ok(())
}
