//! Observation schedules and the fine integration grids built on them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Regular,
    Jittered,
    Poisson,
    /// Caller-supplied timestamps.
    Explicit,
}

impl ScheduleKind {
    pub const SAMPLED: [ScheduleKind; 3] =
        [ScheduleKind::Regular, ScheduleKind::Jittered, ScheduleKind::Poisson];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Regular => "regular",
            ScheduleKind::Jittered => "jittered",
            ScheduleKind::Poisson => "poisson",
            ScheduleKind::Explicit => "explicit",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Strictly increasing observation times `t_1 < … < t_T`, `T ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSchedule {
    times: Vec<f64>,
    kind: ScheduleKind,
    mean_gap: f64,
    horizon: f64,
}

impl ObservationSchedule {
    /// Schedule from explicit timestamps.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        Self::with_kind(times, ScheduleKind::Explicit)
    }

    fn with_kind(times: Vec<f64>, kind: ScheduleKind) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::contract("a schedule needs at least two observations"));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("schedule times must be finite and strictly increasing"));
        }
        let span = times[times.len() - 1] - times[0];
        let mean_gap = span / (times.len() - 1) as f64;
        let horizon = times[times.len() - 1];
        Ok(ObservationSchedule {
            times,
            kind,
            mean_gap,
            horizon,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn mean_gap(&self) -> f64 {
        self.mean_gap
    }

    /// Horizon the schedule was sampled for (the last time for explicit schedules).
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps().fold(0.0, f64::max)
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps().fold(f64::INFINITY, f64::min)
    }

    /// Index of the first observation at or after `t`, or `len()` if none.
    pub fn first_at_or_after(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// Exact position of `t` in the schedule.
    pub fn position(&self, t: f64) -> Option<usize> {
        let i = self.first_at_or_after(t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }
}

const MAX_RESAMPLES: usize = 1000;

/// Sample observation times on `(0, horizon]`.
///
/// Regular: `t_i = i·Δ̄`. Jittered: gaps `Δ̄(1 + ξ)`, `ξ ~ U[-ρ, ρ]`.
/// Poisson: gaps `~ Exp(mean Δ̄)`. Draws with fewer than two points are
/// resampled.
pub fn sample_schedule(
    kind: ScheduleKind,
    horizon: f64,
    mean_gap: f64,
    jitter: f64,
    rng: &mut RngStream,
) -> Result<ObservationSchedule> {
    if !(mean_gap > 0.0 && mean_gap.is_finite()) {
        return Err(Error::config("schedule.mean_gap", "must be positive"));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::config("schedule.jitter", "must lie in [0, 1)"));
    }
    if !(horizon > mean_gap && horizon.is_finite()) {
        return Err(Error::config("schedule.horizon", "must exceed the mean gap"));
    }
    let poisson = Exp::new(1.0 / mean_gap).expect("positive rate");
    for _ in 0..MAX_RESAMPLES {
        let times: Vec<f64> = match kind {
            ScheduleKind::Regular => (1..)
                .map(|i| i as f64 * mean_gap)
                .take_while(|&t| t <= horizon)
                .collect(),
            ScheduleKind::Jittered | ScheduleKind::Poisson => {
                let mut times = Vec::new();
                let mut t = 0.0;
                loop {
                    let gap = if kind == ScheduleKind::Poisson {
                        poisson.sample(rng)
                    } else if jitter > 0.0 {
                        mean_gap * (1.0 + rng.gen_range(-jitter..jitter))
                    } else {
                        mean_gap
                    };
                    let next = if kind == ScheduleKind::Jittered && jitter == 0.0 {
                        (times.len() + 1) as f64 * mean_gap
                    } else {
                        t + gap
                    };
                    if next > horizon {
                        break;
                    }
                    if next > t {
                        times.push(next);
                        t = next;
                    }
                }
                times
            }
            ScheduleKind::Explicit => {
                return Err(Error::config("schedule.kind", "explicit schedules are not sampled"))
            }
        };
        if times.len() >= 2 {
            return Ok(ObservationSchedule {
                times,
                kind,
                mean_gap,
                horizon,
            });
        }
    }
    Err(Error::config(
        "schedule.horizon",
        "could not draw a schedule with two observations",
    ))
}

/// Integration grid covering `[t_1, t_T]` that contains every observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrid {
    times: Vec<f64>,
    obs_index: Vec<usize>,
    delta_fine: f64,
}

impl FineGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Grid position of each observation.
    pub fn obs_index(&self) -> &[usize] {
        &self.obs_index
    }

    /// Largest step on the grid.
    pub fn delta_fine(&self) -> f64 {
        self.delta_fine
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    fn finish(times: Vec<f64>, obs_index: Vec<usize>) -> Self {
        let delta_fine = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        FineGrid {
            times,
            obs_index,
            delta_fine,
        }
    }
}

/// Split every observation gap into `substeps` equal steps. One substep per
/// gap reproduces the observation grid itself.
pub fn build_substep_grid(sched: &ObservationSchedule, substeps: usize) -> Result<FineGrid> {
    if substeps == 0 {
        return Err(Error::config("simulation.substeps", "must be at least 1"));
    }
    let obs = sched.times();
    let mut times = Vec::with_capacity((obs.len() - 1) * substeps + 1);
    let mut obs_index = Vec::with_capacity(obs.len());
    for w in obs.windows(2) {
        obs_index.push(times.len());
        let h = (w[1] - w[0]) / substeps as f64;
        times.push(w[0]);
        for j in 1..substeps {
            let t = w[0] + j as f64 * h;
            if t < w[1] {
                times.push(t);
            }
        }
    }
    obs_index.push(times.len());
    times.push(obs[obs.len() - 1]);
    Ok(FineGrid::finish(times, obs_index))
}

/// Union of the arithmetic grid `{t_1 + kΔ}` on `[t_1, t_T]` with the
/// observation times. Observation times are inserted verbatim.
pub fn build_union_grid(sched: &ObservationSchedule, delta_fine: f64) -> Result<FineGrid> {
    if !(delta_fine > 0.0 && delta_fine.is_finite()) {
        return Err(Error::config("simulation.delta_fine", "must be positive"));
    }
    if delta_fine >= sched.max_gap() {
        log::warn!(
            "fine step {delta_fine} is not below the largest observation gap {}; \
             integration degenerates toward one step per gap",
            sched.max_gap()
        );
    }
    let obs = sched.times();
    let (t0, t_end) = (sched.first(), sched.last());
    let mut times = Vec::new();
    let mut obs_index = Vec::with_capacity(obs.len());
    let mut next_obs = 0;
    let mut k = 0u64;
    loop {
        let g = t0 + k as f64 * delta_fine;
        if g > t_end {
            break;
        }
        while next_obs < obs.len() && obs[next_obs] <= g {
            if obs[next_obs] < g {
                obs_index.push(times.len());
                times.push(obs[next_obs]);
            } else {
                obs_index.push(times.len());
            }
            next_obs += 1;
        }
        if times.last().map_or(true, |&last| last < g) {
            times.push(g);
        }
        k += 1;
    }
    while next_obs < obs.len() {
        obs_index.push(times.len());
        times.push(obs[next_obs]);
        next_obs += 1;
    }
    Ok(FineGrid::finish(times, obs_index))
}

/// Observation-schedule selection for batch generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    Regular,
    Jittered,
    Poisson,
    /// Uniform per-trajectory choice among the three kinds.
    Mixed,
}

impl FromStr for ScheduleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(ScheduleChoice::Regular),
            "jittered" => Ok(ScheduleChoice::Jittered),
            "poisson" => Ok(ScheduleChoice::Poisson),
            "mixed" => Ok(ScheduleChoice::Mixed),
            other => Err(Error::config("schedule.kind", format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Schedule sampling options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleChoice,
    pub horizon: f64,
    /// `Δ̄ ~ U[low, high]` per trajectory.
    pub mean_gap_range: [f64; 2],
    /// `ρ ~ U[low, high]` per trajectory (jittered only).
    pub jitter_range: [f64; 2],
    /// Mixture weights over (regular, jittered, poisson) for `mixed`.
    pub mixed_weights: [f64; 3],
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleChoice::Mixed,
            horizon: 64.0,
            mean_gap_range: [0.5, 2.0],
            jitter_range: [0.0, 0.8],
            mixed_weights: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let [glo, ghi] = self.mean_gap_range;
        if !(glo > 0.0 && glo <= ghi && ghi.is_finite()) {
            return Err(Error::config(format!("{prefix}.mean_gap_range"), "need 0 < low <= high"));
        }
        let [jlo, jhi] = self.jitter_range;
        if !(jlo >= 0.0 && jlo <= jhi && jhi < 1.0) {
            return Err(Error::config(format!("{prefix}.jitter_range"), "need 0 <= low <= high < 1"));
        }
        if !(self.horizon > ghi * 2.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("{prefix}.horizon"), "must exceed twice the largest mean gap"));
        }
        if self.mixed_weights.iter().any(|&w| !(w >= 0.0)) || self.mixed_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(format!("{prefix}.mixed_weights"), "need nonnegative weights with positive sum"));
        }
        Ok(())
    }

    /// Draw kind, mean gap and jitter, then the schedule itself.
    pub fn sample(&self, rng: &mut RngStream) -> Result<ObservationSchedule> {
        let kind = match self.kind {
            ScheduleChoice::Regular => ScheduleKind::Regular,
            ScheduleChoice::Jittered => ScheduleKind::Jittered,
            ScheduleChoice::Poisson => ScheduleKind::Poisson,
            ScheduleChoice::Mixed => {
                let total: f64 = self.mixed_weights.iter().sum();
                let u = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = ScheduleKind::Poisson;
                for (k, w) in ScheduleKind::SAMPLED.iter().zip(self.mixed_weights) {
                    acc += w;
                    if u < acc {
                        pick = *k;
                        break;
                    }
                }
                pick
            }
        };
        let gap = uniform(rng, self.mean_gap_range);
        let jitter = uniform(rng, self.jitter_range);
        sample_schedule(kind, self.horizon, gap, jitter, rng)
    }
}

pub(crate) fn uniform(rng: &mut RngStream, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn regular_unit_schedule() {
        let mut rng = StreamKey::from_seed(0).rng();
        let s = sample_schedule(ScheduleKind::Regular, 5.0, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(s.times(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn zero_jitter_is_regular() {
        let mut rng = StreamKey::from_seed(0).rng();
        let reg = sample_schedule(ScheduleKind::Regular, 20.0, 0.7, 0.0, &mut rng).unwrap();
        let jit = sample_schedule(ScheduleKind::Jittered, 20.0, 0.7, 0.0, &mut rng).unwrap();
        assert_eq!(reg.times(), jit.times());
    }

    #[test]
    fn jitter_of_one_is_rejected() {
        let mut rng = StreamKey::from_seed(0).rng();
        let err = sample_schedule(ScheduleKind::Jittered, 20.0, 1.0, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "schedule.jitter"));
    }

    #[test]
    fn poisson_mean_gap() {
        let mut rng = StreamKey::from_seed(9).rng();
        let mut gaps = Vec::new();
        while gaps.len() < 1_000_000 {
            let s = sample_schedule(ScheduleKind::Poisson, 10_000.0, 1.0, 0.0, &mut rng).unwrap();
            // Include the first gap from the origin.
            gaps.push(s.first());
            gaps.extend(s.gaps());
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 1.0).abs() < 0.005, "mean gap {mean}");
    }

    #[test]
    fn arithmetic_union_grid() {
        let s = ObservationSchedule::from_times(vec![0.0, 1.0]).unwrap();
        let g = build_union_grid(&s, 0.25).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.obs_index(), &[0, 4]);
    }

    #[test]
    fn union_grid_inserts_off_grid_observations() {
        let s = ObservationSchedule::from_times(vec![0.0, 0.3, 1.1]).unwrap();
        let g = build_union_grid(&s, 0.25).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.3, 0.5, 0.75, 1.0, 1.1]);
        for (i, &k) in g.obs_index().iter().enumerate() {
            assert_eq!(g.times()[k], s.times()[i]);
        }
        assert!(g.delta_fine() <= 0.25 * (1.0 + 1e-12));
    }

    #[test]
    fn one_substep_is_observation_grid() {
        let s = ObservationSchedule::from_times(vec![0.5, 1.25, 3.0, 3.1]).unwrap();
        let g = build_substep_grid(&s, 1).unwrap();
        assert_eq!(g.times(), s.times());
        assert_eq!(g.obs_index(), &[0, 1, 2, 3]);
        assert!(build_substep_grid(&s, 0).is_err());
    }

    #[test]
    fn substep_grid_positions() {
        let s = ObservationSchedule::from_times(vec![0.0, 1.0, 1.5]).unwrap();
        let g = build_substep_grid(&s, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0, 1.125, 1.25, 1.375, 1.5]);
        assert_eq!(g.obs_index(), &[0, 4, 8]);
    }

    #[test]
    fn explicit_schedules_must_increase() {
        assert!(ObservationSchedule::from_times(vec![0.0]).is_err());
        assert!(ObservationSchedule::from_times(vec![0.0, 0.0]).is_err());
        assert!(ObservationSchedule::from_times(vec![1.0, 0.5]).is_err());
    }
}
