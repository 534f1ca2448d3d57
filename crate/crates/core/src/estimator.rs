//! Counting-to-sampling estimation of the Trotterized partition function.
//!
//! Z̃(β) is written as a telescoping product over a β grid with spacing
//! 1/‖H‖ (triangle-inequality norm bound) at *fixed* Trotter number L:
//!
//!   Z̃(β) = Z̃(0) · Π_i Z̃(β_i)/Z̃(β_{i−1}),   Z̃(0) = 2ⁿ,
//!
//! and each quotient is the expectation of the weight-ratio observable
//! W_{β_i}/W_{β_{i−1}} under the closed-sector law at β_{i−1}. Since both
//! schedules share the same operator pattern, the observable is a product
//! of per-operator factors: 1 for diagonal pair elements, β_i/β_{i−1} for
//! off-diagonal ones, (1 ∓ δ_i d)/(1 ∓ δ_{i−1} d) for field factors.
//!
//! Interior steps sample at the lower endpoint. The first step out of the
//! β = 0 anchor is the one place the two supports differ when pair
//! couplings exist (only all-diagonal configurations carry weight at δ = 0),
//! so that step samples at its *upper* endpoint and estimates the downward
//! ratio Z̃(0)/Z̃(β₁) instead, so off-diagonal configurations contribute
//! 0 rather than being silently unreachable, and the reported quotient is
//! the inverted mean. Field-only Hamiltonians keep the direct route: π at
//! β = 0 is uniform over the 2ⁿ constant worldlines and no chain is needed.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Chain, ChainParams, RunStats};
use crate::diagnostics::{adaptive_burnin, integrated_autocorrelation};
use crate::hamiltonian::{
    build_schedule, choose_trotter_number, OpKind, XYHamiltonian, DEFAULT_C_L,
};
use crate::worldline::{Geometry, Sector, WorldlineConfig};
use crate::{Error, Result, RNG_ALGORITHM};

/// Default sample-count constant c_S.
pub const DEFAULT_C_S: f64 = 8.0;
/// Default failure-probability budget.
pub const DEFAULT_FAIL_PROB: f64 = 0.1;

/// Knobs of the full estimation pipeline. `None` overrides fall back to the
/// documented defaults (burn-in 20·M steps, thinning M steps, L from the
/// Trotter rule).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub c_l: f64,
    pub c_s: f64,
    pub fail_prob: f64,
    pub laziness: f64,
    pub chains: u32,
    pub trotter_l: Option<u32>,
    pub burnin_steps: Option<u64>,
    pub thinning_steps: Option<u64>,
    /// Median-of-means robustness knob: number of groups, off by default.
    pub median_of_means_groups: Option<u32>,
    /// Accept β < 1 without rescaling.
    pub allow_small_beta: bool,
    /// Maximum steps spent waiting for a closed-sector state at one
    /// checkpoint before the sampler reports a sector anomaly.
    pub c2_patience: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            c_l: DEFAULT_C_L,
            c_s: DEFAULT_C_S,
            fail_prob: DEFAULT_FAIL_PROB,
            laziness: 0.5,
            chains: 1,
            trotter_l: None,
            burnin_steps: None,
            thinning_steps: None,
            median_of_means_groups: None,
            allow_small_beta: false,
            c2_patience: 1_000_000,
        }
    }
}

/// One telescoping step's estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// Estimate of Z̃(β_hi)/Z̃(β_lo).
    pub mean: f64,
    /// Autocorrelation-corrected standard error of `mean`.
    pub se: f64,
    /// Fraction of sampling polls that found the chain in the worm sector
    /// (the waiting steps between a thinning checkpoint and the next
    /// closed-sector state).
    pub c2_fraction: f64,
    pub samples: u64,
    /// Integrated autocorrelation time of the ratio series, when long
    /// enough to estimate.
    pub tau_int: Option<f64>,
    /// Diagnostics-driven burn-in suggestion (20·τ_int·thinning).
    pub adaptive_burnin_steps: Option<u64>,
    /// True when this step sampled at its upper endpoint (the β₀ = 0 anchor
    /// with pair couplings) and `mean` is the inverted downward estimate.
    pub anchor_reversed: bool,
    /// Chain-step tallies behind this estimate (empty for direct sampling).
    pub sector: SectorSummary,
}

/// Aggregated chain statistics across all steps and chains.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SectorSummary {
    pub steps: u64,
    pub holds: u64,
    pub accepted: u64,
    pub c0_steps: u64,
    pub c2_steps: u64,
}

impl SectorSummary {
    fn absorb(&mut self, s: &RunStats) {
        self.steps += s.steps;
        self.holds += s.holds;
        self.accepted += s.accepted;
        self.c0_steps += s.c0_steps;
        self.c2_steps += s.c2_steps;
    }
}

/// The full estimation result; serializes to the documented result schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub n: u32,
    pub beta: f64,
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: u32,
    /// Telescoping step count.
    pub k: u32,
    /// Samples per step.
    #[serde(rename = "S")]
    pub s: u64,
    pub seed: u64,
    pub rng_algorithm: String,
    pub per_step: Vec<RatioEstimate>,
    pub runtime_seconds: f64,
    pub grid: Vec<f64>,
    pub h_norm: f64,
    pub burnin_steps: u64,
    pub thinning_steps: u64,
    pub laziness: f64,
    pub chains: u32,
    pub total_samples: u64,
    pub sector: SectorSummary,
    pub warnings: Vec<String>,
}

impl EstimateResult {
    /// Zero the wall-clock field for byte-stable output.
    pub fn clear_timing(&mut self) {
        self.runtime_seconds = 0.0;
    }
}

/// The β grid: β₀ = 0, spacing 1/‖H‖, last step possibly shorter, final
/// point exactly β. A zero norm gives the single step [0, β].
pub fn beta_grid(beta: f64, h_norm: f64) -> Vec<f64> {
    let k = grid_steps(beta, h_norm);
    let mut grid = Vec::with_capacity(k as usize + 1);
    grid.push(0.0);
    for i in 1..k {
        let point = i as f64 / h_norm;
        if point >= beta {
            break;
        }
        grid.push(point);
    }
    grid.push(beta);
    grid
}

fn grid_steps(beta: f64, h_norm: f64) -> u32 {
    let product = beta * h_norm;
    if product <= 0.0 {
        1
    } else {
        (product.ceil() as u32).max(1)
    }
}

/// Telescoping step count and per-step sample budget: k = ⌈β·‖H‖⌉ and
/// S = ⌈c_S · k² · ε⁻² · ln(2k/fail_prob)⌉, the Hoeffding-style count for
/// per-ratio precision e^{±ε/k} given ratio expectations in [e⁻¹, e].
pub fn sample_budget(
    beta: f64,
    eps: f64,
    h_norm: f64,
    fail_prob: f64,
    c_s: f64,
) -> Result<(u32, u64)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !(0.0 < fail_prob && fail_prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fail_prob must be in (0, 1), got {fail_prob}"
        )));
    }
    let k = grid_steps(beta, h_norm);
    let kf = k as f64;
    let s = (c_s * kf * kf * eps.powi(-2) * (2.0 * kf / fail_prob).ln()).ceil();
    Ok((k, (s as u64).max(1)))
}

/// The weight-ratio observable W_{β_hi}(cfg)/W_{β_lo}(cfg) for a
/// configuration of the fixed-L schedule at β_lo: per operator, diagonal
/// pair elements contribute 1, off-diagonal pair elements β_hi/β_lo, and
/// field factors (1 ∓ δ_hi d)/(1 ∓ δ_lo d). Well-defined in either
/// direction as long as the configuration has nonzero weight at β_lo.
pub fn ratio_observable(cfg: &WorldlineConfig, beta_lo: f64, beta_hi: f64, l: u32) -> f64 {
    let sched = cfg.geometry().schedule();
    assert_eq!(
        sched.l, l,
        "configuration schedule must use the grid's fixed L"
    );
    assert_eq!(
        sched.beta, beta_lo,
        "configuration must be sampled at beta_lo"
    );
    let delta_lo = sched.delta;
    let delta_hi = beta_hi / (2.0 * l as f64);
    let mut ratio = 1.0;
    for (mi, op) in sched.ops.iter().enumerate() {
        let mask = cfg.op_mask(mi as u32);
        match op.kind {
            OpKind::TwoQubit { .. } => {
                if (mask & 0b11) != (mask >> 2) {
                    assert!(
                        beta_lo > 0.0,
                        "off-diagonal elements have zero weight at beta = 0"
                    );
                    ratio *= beta_hi / beta_lo;
                }
            }
            OpKind::OneQubit { d, .. } => {
                let sign = if mask & 1 == 0 { -1.0 } else { 1.0 };
                let lo = 1.0 + sign * delta_lo * d;
                assert!(lo != 0.0, "zero field element in the sampling-side weight");
                ratio *= (1.0 + sign * delta_hi * d) / lo;
            }
        }
    }
    ratio
}

/// The resolved plan of one estimation run: the fixed Trotter number, the
/// β grid, and the per-step sampling schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSchedule {
    #[serde(rename = "L")]
    pub l: u32,
    /// β₀ = 0 < β₁ < ... < β_k = β, spacing 1/‖H‖.
    pub beta_grid: Vec<f64>,
    pub h_norm: f64,
    /// Telescoping step count, ⌈β·‖H‖⌉ (1 when the norm vanishes).
    pub k: u32,
    pub samples_per_step: u64,
    pub burnin_steps: u64,
    pub thinning_steps: u64,
}

/// Resolve L, the β grid, and the sampling budget for one run.
pub fn plan(
    h: &XYHamiltonian,
    beta: f64,
    eps: f64,
    params: &EstimatorParams,
) -> Result<EstimatorSchedule> {
    let l = match params.trotter_l {
        Some(l) if l >= 1 => l,
        Some(l) => {
            return Err(Error::InvalidParameter(format!(
                "Trotter override L = {l} must be >= 1"
            )))
        }
        None => choose_trotter_number(h, beta, eps, params.c_l)?,
    };
    let h_norm = h.operator_norm_bound();
    let (k, samples_per_step) = sample_budget(beta, eps, h_norm, params.fail_prob, params.c_s)?;
    let beta_grid = beta_grid(beta, h_norm);
    debug_assert_eq!(beta_grid.len() as u32, k + 1);
    debug_assert!(beta_grid.windows(2).all(|w| w[0] < w[1]) || beta == 0.0);

    let m = 2 * l as u64 * (h.n as u64 + h.pairs.len() as u64);
    Ok(EstimatorSchedule {
        l,
        beta_grid,
        h_norm,
        k,
        samples_per_step,
        burnin_steps: params.burnin_steps.unwrap_or(20 * m),
        thinning_steps: params.thinning_steps.unwrap_or(m).max(1),
    })
}

/// Sampling knobs for a single ratio estimation.
#[derive(Debug, Clone, Copy)]
pub struct RatioSampling {
    pub samples: u64,
    pub burnin: u64,
    pub thinning: u64,
    pub laziness: f64,
    pub chains: u32,
    pub seed: u64,
    /// Base ChaCha stream; chain c uses stream_base + c.
    pub stream_base: u64,
    pub c2_patience: u64,
    pub median_of_means_groups: Option<u32>,
}

struct SeriesOutcome {
    values: Vec<f64>,
    skipped_c2: u64,
    stats: SectorSummary,
}

/// Mean, corrected SE, and diagnostics from a sample series.
fn summarize(values: &[f64], mom_groups: Option<u32>) -> (f64, f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let tau = integrated_autocorrelation(values, 6.0)
        .ok()
        .map(|e| e.tau_int);
    let se = (var / n).sqrt() * tau.map_or(1.0, |t| (2.0 * t).sqrt());

    let mean = match mom_groups {
        Some(g) if g >= 2 && (g as usize) <= values.len() => {
            let g = g as usize;
            let mut group_means: Vec<f64> = values
                .chunks(values.len().div_ceil(g))
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .collect();
            group_means.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = group_means.len() / 2;
            if group_means.len().is_multiple_of(2) {
                0.5 * (group_means[mid - 1] + group_means[mid])
            } else {
                group_means[mid]
            }
        }
        _ => mean,
    };
    (mean, se, tau)
}

/// Collect ratio samples by running worm chains at `sample_beta` and
/// evaluating the observable toward `target_beta` on closed-sector states.
///
/// The stationary law puts Θ(M) more mass on the worm sector than the
/// closed one, so waiting a full thinning stride for a closed checkpoint
/// would cost O(M²) steps per sample. Instead each sample is taken at the
/// first closed-sector state after the stride, the usual worm-algorithm
/// measurement rule: worm excursions between samples decorrelate them, and
/// the skipped worm-sector polls are tallied. (First-visit sampling weights
/// states by their closed-sector entry rate rather than occupancy; the two
/// differ by an O(1/M) correction that the oracle comparisons bound.)
fn sample_ratio_series(
    h: &XYHamiltonian,
    sample_beta: f64,
    target_beta: f64,
    l: u32,
    s: &RatioSampling,
) -> Result<SeriesOutcome> {
    let geom = Geometry::new(build_schedule(h, sample_beta, l)?)?;
    let chains = s.chains.max(1);
    let mut values = Vec::with_capacity(s.samples as usize);
    let mut skipped_c2 = 0u64;
    let mut stats = SectorSummary::default();

    for c in 0..chains {
        let quota = s.samples / chains as u64
            + if (c as u64) < s.samples % chains as u64 {
                1
            } else {
                0
            };
        if quota == 0 {
            continue;
        }
        let params = ChainParams {
            laziness: s.laziness,
            seed: s.seed,
            stream: s.stream_base + c as u64,
        };
        let mut chain = Chain::new(
            WorldlineConfig::canonical_initial(Arc::clone(&geom)),
            params,
        )?;
        let burn = chain.run(s.burnin, |_, _| {});
        stats.absorb(&burn);

        let mut collected = 0u64;
        while collected < quota {
            let run = chain.run(s.thinning.max(1), |_, _| {});
            stats.absorb(&run);
            let mut waited = 0u64;
            while chain.config().sector() != Sector::C0 {
                skipped_c2 += 1;
                waited += 1;
                if waited > s.c2_patience {
                    return Err(Error::SectorAnomaly(format!(
                        "no closed-sector state within {waited} steps at beta = \
                         {sample_beta}; the sector ratio is far above its bound"
                    )));
                }
                let run = chain.run(1, |_, _| {});
                stats.absorb(&run);
            }
            values.push(ratio_observable(
                chain.config(),
                sample_beta,
                target_beta,
                l,
            ));
            collected += 1;
        }
    }
    Ok(SeriesOutcome {
        values,
        skipped_c2,
        stats,
    })
}

/// Direct sampling at the β = 0 anchor for field-only Hamiltonians: π is
/// uniform over the 2ⁿ constant worldlines and the observable factorizes
/// per qubit.
fn sample_anchor_direct(
    h: &XYHamiltonian,
    beta_hi: f64,
    l: u32,
    s: &RatioSampling,
) -> SeriesOutcome {
    let delta_hi = beta_hi / (2.0 * l as f64);
    let d = h.field_table();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(s.stream_base);
    let mut values = Vec::with_capacity(s.samples as usize);
    for _ in 0..s.samples {
        let mut ratio = 1.0;
        for dq in &d {
            let bit = rng.gen::<bool>();
            let f = if bit {
                1.0 + delta_hi * dq
            } else {
                1.0 - delta_hi * dq
            };
            ratio *= f.powi(2 * l as i32);
        }
        values.push(ratio);
    }
    SeriesOutcome {
        values,
        skipped_c2: 0,
        stats: SectorSummary::default(),
    }
}

/// Estimate one telescoping quotient Z̃(β_hi)/Z̃(β_lo).
///
/// Interior steps (β_lo > 0) run the chain at β_lo. The anchor step runs at
/// β_hi and inverts the downward mean when pair couplings exist, or samples
/// the 2ⁿ constant worldlines directly otherwise.
pub fn estimate_ratio(
    h: &XYHamiltonian,
    beta_lo: f64,
    beta_hi: f64,
    l: u32,
    s: &RatioSampling,
) -> Result<RatioEstimate> {
    if s.samples == 0 {
        return Err(Error::InvalidParameter(
            "need at least one sample per step".into(),
        ));
    }
    if !(0.0 <= beta_lo && beta_lo <= beta_hi) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= beta_lo <= beta_hi, got {beta_lo}, {beta_hi}"
        )));
    }

    let anchor_reversed = beta_lo == 0.0 && h.has_offdiagonal_pairs();
    let outcome = if anchor_reversed {
        sample_ratio_series(h, beta_hi, beta_lo, l, s)?
    } else if beta_lo == 0.0 {
        sample_anchor_direct(h, beta_hi, l, s)
    } else {
        sample_ratio_series(h, beta_lo, beta_hi, l, s)?
    };

    let (raw_mean, raw_se, tau) = summarize(&outcome.values, s.median_of_means_groups);
    let (mean, se) = if anchor_reversed {
        if raw_mean <= 0.0 {
            return Err(Error::SectorAnomaly(format!(
                "anchor step saw no diagonal configurations at beta = {beta_hi}; \
                 cannot invert a vanishing downward mean"
            )));
        }
        (1.0 / raw_mean, raw_se / (raw_mean * raw_mean))
    } else {
        (raw_mean, raw_se)
    };

    let checkpoints = outcome.values.len() as u64 + outcome.skipped_c2;
    Ok(RatioEstimate {
        beta_lo,
        beta_hi,
        mean,
        se,
        c2_fraction: outcome.skipped_c2 as f64 / checkpoints as f64,
        samples: outcome.values.len() as u64,
        tau_int: tau,
        adaptive_burnin_steps: tau.map(|t| adaptive_burnin(t, s.thinning)),
        anchor_reversed,
        sector: outcome.stats,
    })
}

/// Estimate Z(β, H) to multiplicative precision e^{±ε}: pick L for an
/// e^{±ε/4} Trotter budget, build the β grid and the Hoeffding-style
/// sample budget, estimate every quotient, and combine
/// ln Ẑ = n ln 2 + Σ ln(ratio_i). Deterministic given the seed.
pub fn estimate_partition_function(
    h: &XYHamiltonian,
    beta: f64,
    eps: f64,
    params: &EstimatorParams,
    seed: u64,
) -> Result<EstimateResult> {
    let start = Instant::now();
    let report = h.validate();
    if !report.is_ok() {
        return Err(Error::InvalidHamiltonian(report.violations.join("; ")));
    }
    if beta < 1.0 && !params.allow_small_beta {
        return Err(Error::InvalidParameter(format!(
            "beta = {beta} < 1: rescale the Hamiltonian or allow small beta explicitly"
        )));
    }

    let schedule = plan(h, beta, eps, params)?;
    let (l, h_norm, k, samples) = (
        schedule.l,
        schedule.h_norm,
        schedule.k,
        schedule.samples_per_step,
    );
    let grid = schedule.beta_grid.clone();
    let (burnin, thinning) = (schedule.burnin_steps, schedule.thinning_steps);

    let per_step: Result<Vec<RatioEstimate>> = (1..grid.len())
        .into_par_iter()
        .map(|i| {
            let sampling = RatioSampling {
                samples,
                burnin,
                thinning,
                laziness: params.laziness,
                chains: params.chains,
                seed,
                stream_base: (i as u64) << 16,
                c2_patience: params.c2_patience,
                median_of_means_groups: params.median_of_means_groups,
            };
            estimate_ratio(h, grid[i - 1], grid[i], l, &sampling)
        })
        .collect();
    let per_step = per_step?;

    let mut sector = SectorSummary::default();
    let mut total_samples = 0;
    let mut log_z = (h.n as f64) * std::f64::consts::LN_2;
    for step in &per_step {
        log_z += step.mean.ln();
        total_samples += step.samples;
        let s = &step.sector;
        sector.steps += s.steps;
        sector.holds += s.holds;
        sector.accepted += s.accepted;
        sector.c0_steps += s.c0_steps;
        sector.c2_steps += s.c2_steps;
    }

    Ok(EstimateResult {
        log_z,
        z: log_z.exp(),
        n: h.n,
        beta,
        eps,
        l,
        k,
        s: samples,
        seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        per_step,
        runtime_seconds: start.elapsed().as_secs_f64(),
        grid,
        h_norm,
        burnin_steps: burnin,
        thinning_steps: thinning,
        laziness: params.laziness,
        chains: params.chains,
        total_samples,
        sector,
        warnings: report.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{FieldTerm, PairTerm};
    use crate::oracle::{enumerate_space, exact_trotterized_z};
    use crate::worldline::SegmentId;
    use approx::assert_relative_eq;

    fn single_field(d: f64) -> XYHamiltonian {
        XYHamiltonian {
            n: 1,
            pairs: vec![],
            fields: vec![FieldTerm { i: 0, d }],
        }
    }

    fn coupled() -> XYHamiltonian {
        XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.45,
                b: 0.15,
            }],
            fields: vec![FieldTerm { i: 0, d: 0.3 }, FieldTerm { i: 1, d: -0.2 }],
        }
    }

    fn default_sampling(samples: u64, thinning: u64, seed: u64) -> RatioSampling {
        RatioSampling {
            samples,
            burnin: 20 * thinning,
            thinning,
            laziness: 0.5,
            chains: 1,
            seed,
            stream_base: 1 << 16,
            c2_patience: 1_000_000,
            median_of_means_groups: None,
        }
    }

    #[test]
    fn grid_and_budget_examples() {
        assert_eq!(beta_grid(1.0, 0.0), vec![0.0, 1.0]);
        assert_eq!(beta_grid(2.5, 1.0), vec![0.0, 1.0, 2.0, 2.5]);
        let (k, s) = sample_budget(1.0, 0.1, 0.75, 0.1, 8.0).unwrap();
        assert_eq!((k, s), (1, 2397)); // ceil(8*1*100*ln 20)
                                       // doubling eps^-1 quadruples S (pre-rounding homogeneity)
        let (_, s_half) = sample_budget(1.0, 0.05, 0.75, 0.1, 8.0).unwrap();
        let q = s_half as f64 / s as f64;
        assert!((3.99..=4.01).contains(&q), "quadrupling, got {q}");
        assert!(sample_budget(1.0, 0.0, 1.0, 0.1, 8.0).is_err());
        assert!(sample_budget(1.0, 0.1, 1.0, 1.5, 8.0).is_err());
    }

    #[test]
    fn ratio_observable_field_line() {
        let geom = Geometry::new(build_schedule(&single_field(1.0), 0.0, 10).unwrap()).unwrap();
        let cfg = WorldlineConfig::canonical_initial(geom);
        let r = ratio_observable(&cfg, 0.0, 0.2, 10);
        assert_relative_eq!(r, 0.99f64.powi(20), max_relative = 1e-14);
        assert_relative_eq!(r, 0.8179069, max_relative = 1e-7);
    }

    #[test]
    fn ratio_observable_is_one_at_equal_betas() {
        let geom = Geometry::new(build_schedule(&coupled(), 1.0, 2).unwrap()).unwrap();
        let space = enumerate_space(&geom, 100_000).unwrap();
        for i in (0..space.len()).filter(|&i| space.is_c0(i)).take(25) {
            assert_eq!(ratio_observable(&space.config(i), 1.0, 1.0, 2), 1.0);
        }
    }

    /// A single off-diagonal pair event cannot close the worldlines on its
    /// own (each of its two columns would flip an odd number of times), so
    /// the one-event case lives in the worm sector; the two-event closed
    /// configuration carries the squared factor.
    #[test]
    fn ratio_observable_counts_offdiagonal_events() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.25,
            }],
            fields: vec![],
        };
        let geom = Geometry::new(build_schedule(&h, 1.0, 1).unwrap()).unwrap();

        // worm-sector configuration with exactly one off-diagonal event
        let mut one = WorldlineConfig::canonical_initial(Arc::clone(&geom));
        one.set_op_mask(0, 0b1100); // <00|.|11>
        let s0 = geom.leg_segment(geom.leg_id(0, 2)); // below op 0 on qubit 0
        let s1 = geom.leg_segment(geom.leg_id(0, 3)); // below op 0 on qubit 1
        one.set_heads(&[s0, s1]).unwrap();
        one.check_consistency().unwrap();
        assert!(one.weight() > 0.0);
        assert_relative_eq!(
            ratio_observable(&one, 1.0, 1.5, 1),
            1.5,
            max_relative = 1e-14
        );

        // closed configuration with two off-diagonal events
        let mut two = WorldlineConfig::canonical_initial(Arc::clone(&geom));
        two.set_op_mask(0, 0b1100);
        two.set_op_mask(1, 0b11);
        two.set_op_mask(2, 0b11);
        two.set_op_mask(3, 0b0011);
        two.check_consistency().unwrap();
        assert_relative_eq!(
            ratio_observable(&two, 1.0, 1.5, 1),
            2.25,
            max_relative = 1e-14
        );
    }

    #[test]
    fn direct_anchor_matches_scalar_expectation() {
        let h = single_field(1.0);
        let s = default_sampling(40_000, 1, 9);
        let est = estimate_ratio(&h, 0.0, 0.2, 10, &s).unwrap();
        let exact = (0.99f64.powi(20) + 1.01f64.powi(20)) / 2.0;
        // cross-check the exact value against the dense quotient
        let dense = exact_trotterized_z(&h, 0.2, 10, 10).unwrap()
            / exact_trotterized_z(&h, 0.0, 10, 10).unwrap();
        assert_relative_eq!(exact, dense, max_relative = 1e-12);
        assert_relative_eq!(exact, 1.0190485, max_relative = 1e-7);
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.se,
            "mean {} vs {exact}",
            est.mean
        );
        assert!(!est.anchor_reversed);
    }

    #[test]
    fn zero_hamiltonian_ratio_is_exact() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![],
            fields: vec![],
        };
        let est = estimate_ratio(&h, 0.0, 3.0, 4, &default_sampling(100, 1, 1)).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.se, 0.0);
        assert_eq!(est.c2_fraction, 0.0);
    }

    #[test]
    fn interior_step_matches_oracle_quotient() {
        let h = coupled();
        let l = 20;
        let m = 2 * l as u64 * 3;
        let est = estimate_ratio(&h, 0.7, 1.0, l, &default_sampling(10_000, m, 12)).unwrap();
        let exact = exact_trotterized_z(&h, 1.0, l, 10).unwrap()
            / exact_trotterized_z(&h, 0.7, l, 10).unwrap();
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.se,
            "mean {} +/- {} vs exact {exact}",
            est.mean,
            est.se
        );
        assert!(est.c2_fraction < 1.0);
    }

    /// The anchor step with pair couplings samples at the upper endpoint;
    /// the naive direct anchor would miss every off-diagonal configuration
    /// and bias the quotient by a factor cosh-scale.
    #[test]
    fn reversed_anchor_is_unbiased_for_pure_xx() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.0,
            }],
            fields: vec![],
        };
        let l = 40;
        let m = 2 * l as u64 * 3;
        let est = estimate_ratio(&h, 0.0, 1.0, l, &default_sampling(4000, m, 5)).unwrap();
        assert!(est.anchor_reversed);
        let exact = exact_trotterized_z(&h, 1.0, l, 10).unwrap() / 4.0;
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.se,
            "mean {} +/- {} vs exact {exact} (naive anchor would give 1.0)",
            est.mean,
            est.se
        );
        // the bias the reversal removes is far larger than the error bar
        assert!((1.0f64 - exact).abs() > 4.0 * est.se);
    }

    /// The telescoping identity, literally: the enumerated expectation
    /// of the ratio observable equals the dense quotient.
    #[test]
    fn telescoping_identity_exact_on_enumeration() {
        let h = coupled();
        let (beta_lo, beta_hi, l) = (0.8, 1.3, 2);
        let geom = Geometry::new(build_schedule(&h, beta_lo, l).unwrap()).unwrap();
        let space = enumerate_space(&geom, 200_000).unwrap();
        let mut expectation = 0.0;
        for i in (0..space.len()).filter(|&i| space.is_c0(i)) {
            let pi0 = space.weights()[i] / space.c0_weight_sum();
            expectation += pi0 * ratio_observable(&space.config(i), beta_lo, beta_hi, l);
        }
        let dense = exact_trotterized_z(&h, beta_hi, l, 10).unwrap()
            / exact_trotterized_z(&h, beta_lo, l, 10).unwrap();
        assert_relative_eq!(expectation, dense, max_relative = 1e-10);
    }

    #[test]
    fn zero_hamiltonian_partition_function_is_exact() {
        let h = XYHamiltonian {
            n: 3,
            pairs: vec![],
            fields: vec![],
        };
        let res =
            estimate_partition_function(&h, 2.0, 0.5, &EstimatorParams::default(), 7).unwrap();
        assert_eq!(res.log_z, 3.0 * std::f64::consts::LN_2);
        assert_relative_eq!(res.z, 8.0, max_relative = 1e-12);
        assert!(res.per_step.iter().all(|s| s.se == 0.0));
    }

    #[test]
    fn estimates_are_seed_reproducible() {
        let h = coupled();
        let params = EstimatorParams {
            trotter_l: Some(8),
            ..Default::default()
        };
        let mut a = estimate_partition_function(&h, 1.0, 0.5, &params, 99).unwrap();
        let mut b = estimate_partition_function(&h, 1.0, 0.5, &params, 99).unwrap();
        a.clear_timing();
        b.clear_timing();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut c = estimate_partition_function(&h, 1.0, 0.5, &params, 100).unwrap();
        c.clear_timing();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn small_beta_requires_explicit_override() {
        let h = single_field(0.5);
        assert!(matches!(
            estimate_partition_function(&h, 0.5, 0.5, &EstimatorParams::default(), 1),
            Err(Error::InvalidParameter(_))
        ));
        let params = EstimatorParams {
            allow_small_beta: true,
            ..Default::default()
        };
        assert!(estimate_partition_function(&h, 0.5, 0.5, &params, 1).is_ok());
    }

    #[test]
    fn single_field_estimate_hits_analytic_value() {
        let h = single_field(1.0);
        let res =
            estimate_partition_function(&h, 1.0, 0.25, &EstimatorParams::default(), 3).unwrap();
        let exact = (2.0 * 1f64.cosh()).ln();
        assert!(
            (res.log_z - exact).abs() <= 0.25,
            "log Z {} vs exact {exact}",
            res.log_z
        );
    }

    /// Ferromagnetic instances (d = 0, a >= |b|) have nondecreasing weights
    /// in δ, so every reported quotient sits above 1 within noise.
    #[test]
    fn ferromagnetic_ratios_exceed_one() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.25,
            }],
            fields: vec![],
        };
        let params = EstimatorParams {
            trotter_l: Some(24),
            ..Default::default()
        };
        let res = estimate_partition_function(&h, 1.5, 0.5, &params, 21).unwrap();
        assert!(res.k >= 2, "want an interior step, got k = {}", res.k);
        for step in &res.per_step {
            assert!(
                step.mean >= 1.0 - 3.0 * step.se,
                "step {}..{}: mean {} se {}",
                step.beta_lo,
                step.beta_hi,
                step.mean,
                step.se
            );
        }
    }

    #[test]
    fn median_of_means_is_a_robust_drop_in() {
        let h = single_field(1.0);
        let exact = (0.99f64.powi(20) + 1.01f64.powi(20)) / 2.0;
        let mut s = default_sampling(20_000, 1, 9);
        s.median_of_means_groups = Some(16);
        let est = estimate_ratio(&h, 0.0, 0.2, 10, &s).unwrap();
        assert!(
            (est.mean - exact).abs() <= 4.0 * est.se,
            "mom mean {} vs {exact}",
            est.mean
        );
        // groups larger than the sample count fall back to the plain mean
        let mut s = default_sampling(8, 1, 9);
        s.median_of_means_groups = Some(64);
        assert!(estimate_ratio(&h, 0.0, 0.2, 10, &s).is_ok());
    }

    #[test]
    fn plan_resolves_defaults_and_grid() {
        let h = coupled(); // H_norm = 0.6 + 0.5 = 1.1
        let es = plan(&h, 2.0, 0.5, &EstimatorParams::default()).unwrap();
        assert_eq!(es.k, 3); // ceil(2.0 * 1.1)
        assert_eq!(es.beta_grid.len(), 4);
        assert!(es.beta_grid.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*es.beta_grid.last().unwrap(), 2.0);
        let m = 2 * es.l as u64 * 3;
        assert_eq!(es.burnin_steps, 20 * m);
        assert_eq!(es.thinning_steps, m);
    }

    #[test]
    fn log_z_is_anchor_plus_log_ratios() {
        let h = coupled();
        let params = EstimatorParams {
            trotter_l: Some(6),
            ..Default::default()
        };
        let res = estimate_partition_function(&h, 1.2, 0.5, &params, 5).unwrap();
        let recombined = (res.n as f64) * std::f64::consts::LN_2
            + res.per_step.iter().map(|s| s.mean.ln()).sum::<f64>();
        assert_eq!(res.log_z, recombined);
        assert_eq!(res.z, res.log_z.exp());
    }

    #[test]
    fn exhausted_patience_reports_sector_anomaly() {
        // the stationary law sits in the worm sector almost always at this
        // size, so a zero-step patience window trips immediately
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.1,
            }],
            fields: vec![],
        };
        let mut s = default_sampling(50, 96, 3);
        s.c2_patience = 0;
        match estimate_ratio(&h, 0.7, 1.0, 16, &s) {
            Err(Error::SectorAnomaly(_)) => {}
            other => panic!("expected a sector anomaly, got {other:?}"),
        }
    }

    #[test]
    fn worm_sector_heads_example_setup_is_consistent() {
        // guard for the one-event construction used above
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.25,
            }],
            fields: vec![],
        };
        let geom = Geometry::new(build_schedule(&h, 1.0, 1).unwrap()).unwrap();
        let s0 = geom.leg_segment(geom.leg_id(0, 2));
        let s1 = geom.leg_segment(geom.leg_id(0, 3));
        assert_ne!(s0, s1);
        assert_ne!(SegmentId(u32::MAX), s0);
    }
}
