//! Euler–Maruyama simulation on a fine grid, noise plans, and the exact OU
//! transition kernel used as an oracle.
//!
//! The integrator steps every variable with
//! `x' = x + μ(x)·Δ + σ·√Δ·Z` on the grid built from the observation schedule
//! and reads the state off at observation times. One substep per gap is the
//! naive observation-grid scheme; many substeps approach the SDE law.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;
use crate::mechanism::TscmSpec;
use crate::rng::{role, RngStream, StreamKey};
use crate::schedule::{build_substep_grid, build_union_grid, FineGrid, ObservationSchedule};

/// States beyond this magnitude flag the run as diverged.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// One Euler–Maruyama update of a single coordinate.
#[inline(always)]
pub fn em_update(x: f64, mu: f64, sigma: f64, dt: f64, sqrt_dt: f64, z: f64) -> f64 {
    x + mu * dt + sigma * sqrt_dt * z
}

/// Elementwise Euler–Maruyama step.
pub fn em_step(state: &[f64], mu: &[f64], sigmas: &[f64], dt: f64, z: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::contract("time step must be positive"));
    }
    let n = state.len();
    if mu.len() != n || sigmas.len() != n || z.len() != n {
        return Err(Error::contract("em_step vectors differ in length"));
    }
    let sq = dt.sqrt();
    Ok((0..n)
        .map(|v| em_update(state[v], mu[v], sigmas[v], dt, sq, z[v]))
        .collect())
}

/// Closed-form transition of the scalar OU process `dX = -θX dt + σ dW`
/// over `dt`: `X(t+dt) | X(t) = x ~ N(decay·x, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuKernel {
    pub decay: f64,
    pub variance: f64,
}

pub fn exact_ou_transition(theta: f64, sigma: f64, dt: f64) -> Result<OuKernel> {
    if !(theta > 0.0 && dt > 0.0) {
        return Err(Error::contract("exact OU kernel needs theta > 0 and dt > 0"));
    }
    Ok(OuKernel {
        decay: (-theta * dt).exp(),
        // -expm1(-2θΔ) keeps precision for small θΔ.
        variance: sigma * sigma * (-(-2.0 * theta * dt).exp_m1()) / (2.0 * theta),
    })
}

/// Recorded noise: initial-state normals, regime uniforms, and per-step
/// increments (row-major `steps × n_vars`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTape {
    pub n_vars: usize,
    pub init: Vec<f64>,
    pub regime_uniforms: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Source of every random number a simulation consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePlan {
    /// Lazily generated from independent per-variable streams under `key`.
    Streamed(StreamKey),
    /// Replayed from a tape.
    Recorded(Arc<NoiseTape>),
}

impl NoisePlan {
    pub fn from_seed(seed: u64) -> Self {
        NoisePlan::Streamed(StreamKey::from_seed(seed))
    }

    /// Materialize the first `steps` increments, `n_obs` regime uniforms and
    /// the initial normals.
    pub fn record(&self, n_vars: usize, steps: usize, n_obs: usize) -> Result<NoiseTape> {
        let mut cursor = self.cursor(n_vars)?;
        let init = cursor.init(n_vars)?;
        let regime_uniforms = (0..n_obs).map(|_| cursor.regime_uniform()).collect::<Result<_>>()?;
        let mut increments = vec![0.0; steps * n_vars];
        for row in increments.chunks_exact_mut(n_vars.max(1)) {
            cursor.next_increments(row)?;
        }
        Ok(NoiseTape {
            n_vars,
            init,
            regime_uniforms,
            increments,
        })
    }

    fn cursor(&self, n_vars: usize) -> Result<NoiseCursor<'_>> {
        match self {
            NoisePlan::Streamed(key) => Ok(NoiseCursor::Streamed {
                init: key.derive(role::INIT).rng(),
                regime: key.derive(role::REGIME).rng(),
                per_var: (0..n_vars)
                    .map(|v| key.derive(role::NOISE).derive(v as u64).rng())
                    .collect(),
            }),
            NoisePlan::Recorded(tape) => {
                if tape.n_vars != n_vars {
                    return Err(Error::contract("noise tape width differs from variable count"));
                }
                Ok(NoiseCursor::Recorded {
                    tape,
                    step: 0,
                    regime: 0,
                })
            }
        }
    }
}

enum NoiseCursor<'a> {
    Streamed {
        init: RngStream,
        regime: RngStream,
        per_var: Vec<RngStream>,
    },
    Recorded {
        tape: &'a NoiseTape,
        step: usize,
        regime: usize,
    },
}

impl NoiseCursor<'_> {
    fn init(&mut self, n: usize) -> Result<Vec<f64>> {
        match self {
            NoiseCursor::Streamed { init, .. } => Ok((0..n).map(|_| init.sample(StandardNormal)).collect()),
            NoiseCursor::Recorded { tape, .. } => Ok(tape.init.clone()),
        }
    }

    fn regime_uniform(&mut self) -> Result<f64> {
        match self {
            NoiseCursor::Streamed { regime, .. } => Ok(regime.gen()),
            NoiseCursor::Recorded { tape, regime, .. } => {
                let u = tape
                    .regime_uniforms
                    .get(*regime)
                    .copied()
                    .ok_or_else(|| Error::contract("noise tape ran out of regime draws"))?;
                *regime += 1;
                Ok(u)
            }
        }
    }

    #[inline]
    fn next_increments(&mut self, z: &mut [f64]) -> Result<()> {
        match self {
            NoiseCursor::Streamed { per_var, .. } => {
                for (zv, r) in z.iter_mut().zip(per_var.iter_mut()) {
                    *zv = r.sample(StandardNormal);
                }
                Ok(())
            }
            NoiseCursor::Recorded { tape, step, .. } => {
                let n = tape.n_vars;
                let row = tape
                    .increments
                    .get(*step * n..(*step + 1) * n)
                    .ok_or_else(|| Error::contract("noise tape ran out of increments"))?;
                z.copy_from_slice(row);
                *step += 1;
                Ok(())
            }
        }
    }
}

/// How the fine grid is laid over the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Each observation gap split into this many equal steps.
    Substeps(usize),
    /// Global step `Δ_fine` unioned with the observation times.
    FineStep(f64),
}

impl Resolution {
    pub fn grid(&self, sched: &ObservationSchedule) -> Result<FineGrid> {
        match *self {
            Resolution::Substeps(s) => build_substep_grid(sched, s),
            Resolution::FineStep(d) => build_union_grid(sched, d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Per-variable uncoupled OU stationary marginal (linear) or N(0, 1) (neural).
    Stationary,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub resolution: Resolution,
    pub init: InitMode,
    /// Keep every fine-grid state in the trajectory (diagnostics).
    pub keep_fine: bool,
}

impl SimConfig {
    pub fn substeps(s: usize) -> Self {
        SimConfig {
            resolution: Resolution::Substeps(s),
            init: InitMode::Stationary,
            keep_fine: false,
        }
    }
}

/// Fine-grid states, row-major `grid_len × n_vars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// States at the observation times of a schedule, row-major `T × n_vars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schedule: ObservationSchedule,
    pub n_vars: usize,
    pub values: Vec<f64>,
    pub regimes: Option<Vec<usize>>,
    pub fine: Option<FinePath>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn get(&self, i: usize, v: usize) -> f64 {
        self.values[i * self.n_vars + v]
    }

    pub fn column(&self, v: usize) -> Vec<f64> {
        self.values.iter().skip(v).step_by(self.n_vars).copied().collect()
    }
}

/// Simulate `spec` on `sched`, optionally under an intervention.
///
/// Every grid step consumes one increment per variable whether or not it is
/// used, so two runs sharing a [`NoisePlan`] see identical noise at every
/// `(variable, step)`. Regimes switch at observation boundaries. A state
/// exceeding [`OVERFLOW_GUARD`] freezes the run and sets `diverged`.
pub fn simulate(
    spec: &TscmSpec,
    sched: &ObservationSchedule,
    sim: &SimConfig,
    noise: &NoisePlan,
    intervention: Option<&InterventionSpec>,
) -> Result<Trajectory> {
    let n = spec.n();
    if let Some(iv) = intervention {
        if iv.target >= n {
            return Err(Error::contract("intervention target out of range"));
        }
    }
    let grid = sim.resolution.grid(sched)?;
    let times = grid.times();
    let obs_index = grid.obs_index();
    let mut cursor = noise.cursor(n)?;

    let z0 = cursor.init(n)?;
    let mut regime_path = spec.regimes.as_ref().map(|_| Vec::with_capacity(sched.len()));
    let mut regime = match &spec.regimes {
        Some(r) => r.initial_regime(cursor.regime_uniform()?),
        None => 0,
    };
    let mut state: Vec<f64> = {
        let bank = spec.bank(regime);
        (0..n)
            .map(|v| match sim.init {
                InitMode::Stationary => bank.initial_std(v) * z0[v],
                InitMode::Zero => 0.0,
            })
            .collect()
    };

    let mut values = Vec::with_capacity(sched.len() * n);
    let mut fine = sim.keep_fine.then(|| FinePath {
        times: times.to_vec(),
        values: Vec::with_capacity(times.len() * n),
    });
    let mut mu = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut next_obs = 0;
    let mut diverged = false;

    for k in 0..times.len() {
        let t = times[k];
        if let Some(iv) = intervention {
            if !diverged {
                iv.pin_state(t, &mut state);
            }
        }
        if next_obs < obs_index.len() && obs_index[next_obs] == k {
            if let (Some(path), Some(rs)) = (regime_path.as_mut(), spec.regimes.as_ref()) {
                if next_obs > 0 {
                    regime = rs.next_regime(regime, cursor.regime_uniform()?);
                }
                path.push(regime);
            }
            values.extend_from_slice(&state);
            next_obs += 1;
        }
        if let Some(f) = fine.as_mut() {
            f.values.extend_from_slice(&state);
        }
        if k + 1 == times.len() {
            break;
        }
        cursor.next_increments(&mut z)?;
        if diverged {
            continue;
        }
        let bank = spec.bank(regime);
        bank.drift_into(&state, &mut mu);
        let pinned = match intervention {
            Some(iv) => iv.apply(t, &mut state, &mut mu).pinned.then_some(iv.target),
            None => None,
        };
        let dt = times[k + 1] - t;
        let sq = dt.sqrt();
        for v in 0..n {
            let sigma = if pinned == Some(v) { 0.0 } else { bank.sigmas[v] };
            state[v] = em_update(state[v], mu[v], sigma, dt, sq, z[v]);
        }
        if state.iter().any(|x| !(x.abs() <= OVERFLOW_GUARD)) {
            diverged = true;
        }
    }

    Ok(Trajectory {
        schedule: sched.clone(),
        n_vars: n,
        values,
        regimes: regime_path,
        fine,
        diverged,
    })
}

/// Observational and interventional runs driven by the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub observational: Trajectory,
    pub interventional: Trajectory,
    /// Intervention as applied, after any positivity clipping.
    pub intervention: InterventionSpec,
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the observational and interventional simulations on one noise plan.
///
/// With `positivity` set, a hard value is clipped to the ±3σ band of the
/// target's pre-window observational samples; with fewer than two such
/// samples clipping is skipped.
pub fn paired_simulate(
    spec: &TscmSpec,
    sched: &ObservationSchedule,
    sim: &SimConfig,
    intervention: &InterventionSpec,
    noise: &NoisePlan,
    positivity: bool,
) -> Result<PairedRun> {
    let observational = simulate(spec, sched, sim, noise, None)?;
    let mut applied = *intervention;
    if positivity {
        let onset = sched.first_at_or_after(intervention.window.0);
        if onset >= 2 {
            let pre: Vec<f64> = (0..onset).map(|i| observational.get(i, intervention.target)).collect();
            let (m, s) = mean_std(&pre);
            applied = applied.clipped(m, s);
        } else {
            log::debug!("positivity clip skipped: only {onset} pre-window observations");
        }
    }
    let interventional = simulate(spec, sched, sim, noise, Some(&applied))?;
    Ok(PairedRun {
        observational,
        interventional,
        intervention: applied,
    })
}

/// [`paired_simulate`] with a noise plan derived from `seed`.
pub fn paired_simulate_seeded(
    spec: &TscmSpec,
    sched: &ObservationSchedule,
    sim: &SimConfig,
    intervention: &InterventionSpec,
    seed: u64,
    positivity: bool,
) -> Result<PairedRun> {
    paired_simulate(spec, sched, sim, intervention, &NoisePlan::from_seed(seed), positivity)
}
