//! Verification studies: schedule invariance, EM stability and variance bias,
//! kernel convergence, and clip saturation.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::integrator::{em_update, exact_ou_transition, simulate, NoisePlan, SimConfig};
use crate::mechanism::{Drift, LinearDrift, TscmSpec};
use crate::pipeline::{sample_batch, BatchConfig};
use crate::rng::StreamKey;
use crate::schedule::ObservationSchedule;
use crate::stats::{energy_permutation_test, ks_one_sample, ks_p_value, ks_two_sample, mean_var, normal_cdf, EnergyTest};

/// Two uncoupled OU variables with equal `θ` and `σ` and no edges.
pub fn scalar_ou_spec(theta: f64, sigma: f64) -> TscmSpec {
    let dag = Dag::new(2, &[], 0, 1, vec![false; 2]).expect("valid two-node graph");
    let drift = Drift::Linear(LinearDrift { theta, weights: vec![] });
    TscmSpec {
        dag,
        drifts: vec![drift.clone(), drift],
        sigmas: vec![sigma, sigma],
        regimes: None,
    }
}

/// Regular schedule `0, gap, 2·gap, …, horizon`.
pub fn regular_schedule(gap: f64, horizon: f64) -> Result<ObservationSchedule> {
    let n = (horizon / gap).round() as usize;
    ObservationSchedule::from_times((0..=n).map(|i| i as f64 * gap).collect())
}

/// The gap-1.0 vs gap-0.5 OU benchmark: both schedules start at 0 and share
/// the integer checkpoints `1..=horizon`.
pub fn ou_benchmark(theta: f64, sigma: f64, horizon: usize) -> Result<(TscmSpec, ObservationSchedule, ObservationSchedule, Vec<f64>)> {
    let h = horizon as f64;
    Ok((
        scalar_ou_spec(theta, sigma),
        regular_schedule(1.0, h)?,
        regular_schedule(0.5, h)?,
        (1..=horizon).map(|k| k as f64).collect(),
    ))
}

/// Conditional variance after `steps` EM steps of size `gap / steps` on a
/// scalar OU: `σ²·dt·Σ_{j<steps} (1 − θ·dt)^{2j}`.
pub fn composed_em_variance(theta: f64, sigma: f64, gap: f64, steps: usize) -> f64 {
    let dt = gap / steps as f64;
    let a2 = (1.0 - theta * dt).powi(2);
    sigma * sigma * dt * (0..steps).map(|j| a2.powi(j as i32)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceOptions {
    pub n_mc: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for InvarianceOptions {
    fn default() -> Self {
        InvarianceOptions {
            n_mc: 2000,
            permutations: 199,
            alpha: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub checkpoint: f64,
    pub var: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub substeps: usize,
    pub checkpoints: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    pub ks: Vec<KsEntry>,
    /// Per-test level after Bonferroni over `ks`.
    pub ks_level: f64,
    pub energy: EnergyTest,
    /// Residual variance of `X(c_{k+1})` regressed on `X(c_k)`, per variable,
    /// under schedule a then b. Meaningful for equally spaced checkpoints.
    pub conditional_variance: [Vec<f64>; 2],
    pub ks_pass: bool,
    pub energy_pass: bool,
    pub pass: bool,
}

fn checkpoint_rows(sched: &ObservationSchedule, checkpoints: &[f64], label: &str) -> Result<Vec<usize>> {
    checkpoints
        .iter()
        .map(|&c| {
            sched
                .position(c)
                .ok_or_else(|| Error::contract(format!("checkpoint {c} is not a time of schedule {label}")))
        })
        .collect()
}

/// Draw `n` trajectories and stack the states at `rows` into vectors of
/// length `rows.len() · n_vars` (checkpoint-major).
fn checkpoint_sample(
    spec: &TscmSpec,
    sched: &ObservationSchedule,
    sim: &SimConfig,
    rows: &[usize],
    n: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let traj = simulate(spec, sched, sim, &NoisePlan::Streamed(key.derive(r as u64)), None)?;
            Ok(rows.iter().flat_map(|&i| traj.row(i).iter().copied()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per.concat())
}

fn residual_variance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let n = x.len() as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
    (vy - cov * cov / vx) * (n - 1.0) / (n - 2.0)
}

fn conditional_variances(sample: &[f64], n_cp: usize, n_vars: usize) -> Vec<f64> {
    let dim = n_cp * n_vars;
    (0..n_vars)
        .map(|v| {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for row in sample.chunks_exact(dim) {
                for k in 0..n_cp.saturating_sub(1) {
                    x.push(row[k * n_vars + v]);
                    y.push(row[(k + 1) * n_vars + v]);
                }
            }
            residual_variance(&x, &y)
        })
        .collect()
}

/// Compare the law of the states at `checkpoints` under two schedules.
///
/// Passes when every per-checkpoint, per-variable KS p-value exceeds the
/// Bonferroni level `alpha / m` and the joint energy distance stays below the
/// `1 − alpha` quantile of its label-permutation null.
pub fn schedule_invariance_test(
    spec: &TscmSpec,
    substeps: usize,
    schedule_a: &ObservationSchedule,
    schedule_b: &ObservationSchedule,
    checkpoints: &[f64],
    opts: &InvarianceOptions,
) -> Result<InvarianceReport> {
    if checkpoints.is_empty() || opts.n_mc < 3 {
        return Err(Error::contract("invariance test needs checkpoints and n_mc >= 3"));
    }
    let rows_a = checkpoint_rows(schedule_a, checkpoints, "a")?;
    let rows_b = checkpoint_rows(schedule_b, checkpoints, "b")?;
    let sim = SimConfig::substeps(substeps);
    let key = StreamKey::from_seed(opts.seed);
    let a = checkpoint_sample(spec, schedule_a, &sim, &rows_a, opts.n_mc, key.derive(0))?;
    let b = checkpoint_sample(spec, schedule_b, &sim, &rows_b, opts.n_mc, key.derive(1))?;

    let n_vars = spec.n();
    let dim = checkpoints.len() * n_vars;
    let column = |s: &[f64], j: usize| -> Vec<f64> { s.iter().skip(j).step_by(dim).copied().collect() };
    let ks: Vec<KsEntry> = (0..dim)
        .map(|j| {
            let d = ks_two_sample(&column(&a, j), &column(&b, j));
            KsEntry {
                checkpoint: checkpoints[j / n_vars],
                var: j % n_vars,
                statistic: d,
                p_value: ks_p_value(d, opts.n_mc, opts.n_mc),
            }
        })
        .collect();
    let ks_level = opts.alpha / ks.len() as f64;
    let ks_pass = ks.iter().all(|e| e.p_value > ks_level);
    let energy = energy_permutation_test(&a, &b, dim, opts.permutations, opts.alpha, key.derive(2));
    let energy_pass = energy.statistic < energy.threshold;
    Ok(InvarianceReport {
        substeps,
        checkpoints: checkpoints.to_vec(),
        n_a: opts.n_mc,
        n_b: opts.n_mc,
        alpha: opts.alpha,
        conditional_variance: [
            conditional_variances(&a, checkpoints.len(), n_vars),
            conditional_variances(&b, checkpoints.len(), n_vars),
        ],
        ks,
        ks_level,
        energy,
        ks_pass,
        energy_pass,
        pass: ks_pass && energy_pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub theta: f64,
    pub dt_substep: f64,
    pub theta_dt: f64,
    /// `|1 − θΔ|`.
    pub amplification: f64,
    /// `θΔ < 2`.
    pub stable: bool,
    /// EM over exact one-step variance, `2θΔ / (1 − e^{−2θΔ})`.
    pub bias_ratio: f64,
}

pub fn stability_report(theta: f64, dt: f64) -> Result<StabilityReport> {
    if !(theta > 0.0 && dt > 0.0) {
        return Err(Error::contract("stability report needs theta > 0 and dt > 0"));
    }
    let x = theta * dt;
    Ok(StabilityReport {
        theta,
        dt_substep: dt,
        theta_dt: x,
        amplification: (1.0 - x).abs(),
        stable: x < 2.0,
        bias_ratio: 2.0 * x / -(-2.0 * x).exp_m1(),
    })
}

/// Fraction of scalar-OU trajectories flagged diverged over `n_obs`
/// regular observations with `substeps` steps of `dt` per gap.
pub fn divergence_rate(
    theta: f64,
    sigma: f64,
    dt: f64,
    substeps: usize,
    n_obs: usize,
    n_traj: usize,
    seed: u64,
) -> Result<f64> {
    let spec = scalar_ou_spec(theta, sigma);
    let gap = dt * substeps as f64;
    let sched = ObservationSchedule::from_times((0..n_obs).map(|i| i as f64 * gap).collect())?;
    let sim = SimConfig::substeps(substeps);
    let key = StreamKey::from_seed(seed);
    let flags: Vec<bool> = (0..n_traj)
        .into_par_iter()
        .map(|r| Ok(simulate(&spec, &sched, &sim, &NoisePlan::Streamed(key.derive(r as u64)), None)?.diverged))
        .collect::<Result<_>>()?;
    Ok(flags.iter().filter(|&&d| d).count() as f64 / n_traj as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub dt: f64,
    pub theta_dt: f64,
    pub empirical_variance: f64,
    pub exact_variance: f64,
    /// `empirical / exact − 1`.
    pub relative_bias: f64,
}

/// One EM step from a fixed state, `n_mc` times per `dt`, against the exact
/// OU variance. All `dt` share one set of normals.
pub fn em_bias_curve(theta: f64, sigma: f64, dt_list: &[f64], n_mc: usize, seed: u64) -> Result<Vec<BiasPoint>> {
    if dt_list.iter().any(|&dt| !(dt > 0.0)) {
        return Err(Error::contract("bias curve needs every dt > 0"));
    }
    let mut rng = StreamKey::from_seed(seed).rng();
    let z: Vec<f64> = (0..n_mc).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x0 = 1.0;
    dt_list
        .iter()
        .map(|&dt| {
            let sq = dt.sqrt();
            let out: Vec<f64> = z.iter().map(|&zi| em_update(x0, -theta * x0, sigma, dt, sq, zi)).collect();
            let (_, var) = mean_var(&out);
            let exact = exact_ou_transition(theta, sigma, dt)?.variance;
            Ok(BiasPoint {
                dt,
                theta_dt: theta * dt,
                empirical_variance: var,
                exact_variance: exact,
                relative_bias: var / exact - 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPoint {
    pub substeps: usize,
    pub mean: f64,
    pub variance: f64,
    /// KS distance to the exact Gaussian transition.
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConvergence {
    pub exact_mean: f64,
    pub exact_variance: f64,
    pub points: Vec<KernelPoint>,
}

/// Scalar OU from `x0` over one `gap`, integrated with each `s` in
/// `substeps`. Paths are coupled: the Brownian increments of coarse runs are
/// sums of the finest run's increments. Every `s` must divide the largest.
pub fn kernel_convergence(
    theta: f64,
    sigma: f64,
    gap: f64,
    x0: f64,
    substeps: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<KernelConvergence> {
    let finest = substeps.iter().copied().max().ok_or_else(|| Error::contract("no substep counts"))?;
    if substeps.iter().any(|&s| s == 0 || finest % s != 0) {
        return Err(Error::contract("substep counts must divide the largest"));
    }
    let kernel = exact_ou_transition(theta, sigma, gap)?;
    let exact_mean = x0 * kernel.decay;
    let sd = kernel.variance.sqrt();
    let key = StreamKey::from_seed(seed);
    let finals: Vec<Vec<f64>> = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let mut rng = key.derive(r as u64).rng();
            let z: Vec<f64> = (0..finest).map(|_| StandardNormal.sample(&mut rng)).collect();
            substeps
                .iter()
                .map(|&s| {
                    let m = finest / s;
                    let dt = gap / s as f64;
                    let sq = dt.sqrt();
                    let norm = (m as f64).sqrt();
                    z.chunks_exact(m).fold(x0, |x, c| {
                        let zc = c.iter().sum::<f64>() / norm;
                        em_update(x, -theta * x, sigma, dt, sq, zc)
                    })
                })
                .collect()
        })
        .collect();
    let points = substeps
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let xs: Vec<f64> = finals.iter().map(|f| f[j]).collect();
            let (mean, variance) = mean_var(&xs);
            KernelPoint {
                substeps: s,
                mean,
                variance,
                ks: ks_one_sample(&xs, |x| normal_cdf((x - exact_mean) / sd)),
            }
        })
        .collect();
    Ok(KernelConvergence {
        exact_mean,
        exact_variance: kernel.variance,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub label: String,
    pub theta_range: Option<[f64; 2]>,
    pub clip: f64,
    pub substeps: usize,
    pub batches: usize,
    /// Batches with at least one saturated sample.
    pub batch_fraction: f64,
    pub sample_fraction: f64,
    pub diverged_fraction: f64,
    pub y_max: f64,
}

/// The unstable prior: `θ ~ U[0.5, 2]` with mean gaps up to 1.8, clip ±10.
pub fn unstable_prior(seed: u64) -> BatchConfig {
    let mut cfg = BatchConfig {
        seed,
        ..BatchConfig::default()
    };
    cfg.mechanism.theta_range = Some([0.5, 2.0]);
    cfg.schedule.mean_gap_range = [0.5, 1.8];
    cfg.normalization.clip = 10.0;
    cfg
}

/// The tightened prior: `θ ~ U[0.1, 0.5]`, clip ±50.
pub fn stable_prior(seed: u64) -> BatchConfig {
    let mut cfg = unstable_prior(seed);
    cfg.mechanism.theta_range = Some([0.1, 0.5]);
    cfg.normalization.clip = 50.0;
    cfg
}

/// Saturation of one configuration at one tier over `n_batches` batches.
pub fn saturation_row(label: &str, cfg: &BatchConfig, substeps: usize, n_batches: usize) -> Result<SaturationRow> {
    let mut cfg = cfg.clone();
    cfg.simulation.substeps = substeps;
    let (mut hit_batches, mut hit, mut diverged, mut total) = (0usize, 0usize, 0usize, 0usize);
    let mut y_max: f64 = 0.0;
    for b in 0..n_batches {
        let pairs = sample_batch(&cfg, b as u64)?;
        let s = pairs.iter().filter(|p| p.saturated).count();
        hit_batches += (s > 0) as usize;
        hit += s;
        diverged += pairs.iter().filter(|p| p.diverged).count();
        total += pairs.len();
        y_max = pairs.iter().map(|p| p.y_max).fold(y_max, f64::max);
    }
    Ok(SaturationRow {
        label: label.to_owned(),
        theta_range: cfg.mechanism.theta_range,
        clip: cfg.normalization.clip,
        substeps,
        batches: n_batches,
        batch_fraction: hit_batches as f64 / n_batches as f64,
        sample_fraction: hit as f64 / total as f64,
        diverged_fraction: diverged as f64 / total as f64,
        y_max,
    })
}

/// Saturation table over both configurations and every tier.
pub fn saturation_study(
    cfg_unstable: &BatchConfig,
    cfg_stable: &BatchConfig,
    tiers: &[usize],
    n_batches: usize,
) -> Result<Vec<SaturationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in [("unstable", cfg_unstable), ("stable", cfg_stable)] {
        for &s in tiers {
            rows.push(saturation_row(label, cfg, s, n_batches)?);
        }
    }
    Ok(rows)
}
