//! Hard, soft and time-varying interventions on a single target over a
//! half-open time window.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::TscmSpec;
use crate::rng::RngStream;
use crate::schedule::{uniform, ObservationSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// `X_target(t) := value`.
    Hard { value: f64 },
    /// `μ_target ↦ μ_target + delta`.
    Soft { delta: f64 },
    /// `X_target(t) := amplitude·sin(2π·frequency·t + phase) + offset`.
    TimeVarying {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
}

impl InterventionKind {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionKind::Hard { .. } => "hard",
            InterventionKind::Soft { .. } => "soft",
            InterventionKind::TimeVarying { .. } => "time_varying",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub target: usize,
    /// `[start, end)` in schedule time.
    pub window: (f64, f64),
    pub kind: InterventionKind,
    /// `(mean, std)` of the target used for positivity clipping, if applied.
    pub clip: Option<(f64, f64)>,
}

/// What an active intervention did at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effect {
    pub active: bool,
    /// Target value is pinned; its diffusion must be dropped for this step.
    pub pinned: bool,
}

impl InterventionSpec {
    pub fn new(target: usize, window: (f64, f64), kind: InterventionKind) -> Result<Self> {
        if !(window.0 < window.1) {
            return Err(Error::contract("intervention window must satisfy start < end"));
        }
        Ok(InterventionSpec {
            target,
            window,
            kind,
            clip: None,
        })
    }

    #[inline]
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    /// Value the target is pinned to at `t`, for hard and time-varying kinds.
    #[inline]
    pub fn pinned_value(&self, t: f64) -> Option<f64> {
        match self.kind {
            InterventionKind::Hard { value } => Some(value),
            InterventionKind::TimeVarying {
                amplitude,
                frequency,
                phase,
                offset,
            } => Some(amplitude * (2.0 * PI * frequency * t + phase).sin() + offset),
            InterventionKind::Soft { .. } => None,
        }
    }

    /// Pin the target inside the window. Must run before the drift is evaluated
    /// so downstream variables see the intervened value.
    #[inline]
    pub fn pin_state(&self, t: f64, state: &mut [f64]) {
        if self.is_active(t) {
            if let Some(c) = self.pinned_value(t) {
                state[self.target] = c;
            }
        }
    }

    /// Apply the intervention at grid time `t` to a state and its drift.
    /// Outside the window this is the identity.
    #[inline]
    pub fn apply(&self, t: f64, state: &mut [f64], drift: &mut [f64]) -> Effect {
        if !self.is_active(t) {
            return Effect {
                active: false,
                pinned: false,
            };
        }
        match self.kind {
            InterventionKind::Soft { delta } => {
                drift[self.target] += delta;
                Effect {
                    active: true,
                    pinned: false,
                }
            }
            _ => {
                state[self.target] = self.pinned_value(t).expect("pinning kind");
                drift[self.target] = 0.0;
                Effect {
                    active: true,
                    pinned: true,
                }
            }
        }
    }

    /// Restrict a hard value to the target's `mean ± 3·std` operating band.
    /// Other kinds only record the statistics.
    pub fn clipped(mut self, mean: f64, std: f64) -> Self {
        if let InterventionKind::Hard { value } = self.kind {
            self.kind = InterventionKind::Hard {
                value: positivity_clip(value, mean, std),
            };
        }
        self.clip = Some((mean, std));
        self
    }
}

/// Clamp `value` to `[mean - 3·std, mean + 3·std]`.
pub fn positivity_clip(value: f64, mean: f64, std: f64) -> f64 {
    let std = std.max(0.0);
    value.clamp(mean - 3.0 * std, mean + 3.0 * std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    /// Probabilities of (hard, soft, time-varying).
    pub kind_probs: [f64; 3],
    /// Window duration as a fraction of the horizon, `U[low, high]`.
    pub window_frac_range: [f64; 2],
    /// Clip hard values to the observed ±3σ band of the target.
    pub positivity_clip: bool,
    /// Standard deviation of soft shifts `δ`.
    pub soft_scale: f64,
    /// Width, in decades, of the log-uniform band of time-varying frequencies
    /// centred on one cycle per window.
    pub tv_frequency_decades: f64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            kind_probs: [0.6, 0.2, 0.2],
            window_frac_range: [0.1, 0.3],
            positivity_clip: true,
            soft_scale: 1.0,
            tv_frequency_decades: 1.0,
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let total: f64 = self.kind_probs.iter().sum();
        if self.kind_probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{prefix}.kind_probs"), "must be nonnegative and sum to 1"));
        }
        let [lo, hi] = self.window_frac_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::config(format!("{prefix}.window_frac_range"), "need 0 < low <= high < 1"));
        }
        if !(self.soft_scale >= 0.0) {
            return Err(Error::config(format!("{prefix}.soft_scale"), "must be nonnegative"));
        }
        if !(self.tv_frequency_decades >= 0.0) {
            return Err(Error::config(format!("{prefix}.tv_frequency_decades"), "must be nonnegative"));
        }
        Ok(())
    }
}

const MAX_WINDOW_DRAWS: usize = 64;

/// Draw target, window and kind. The window starts after the second
/// observation so at least two pre-window observations exist.
///
/// Fails with a `schedule.horizon` configuration error when the schedule is
/// too short for any admissible window; callers resample the schedule.
pub fn sample_intervention(
    spec: &TscmSpec,
    sched: &ObservationSchedule,
    cfg: &InterventionConfig,
    rng: &mut RngStream,
) -> Result<InterventionSpec> {
    cfg.validate("intervention")?;
    let dag = &spec.dag;
    let candidates: Vec<usize> = (0..dag.n())
        .filter(|&v| v != dag.outcome() && !dag.is_hidden(v))
        .collect();

    let u: f64 = rng.gen();
    let kind_index = if u < cfg.kind_probs[0] {
        0
    } else if u < cfg.kind_probs[0] + cfg.kind_probs[1] {
        1
    } else {
        2
    };
    let target = candidates[rng.gen_range(0..candidates.len())];

    let horizon = sched.horizon();
    let duration = uniform(rng, cfg.window_frac_range) * horizon;
    let earliest = sched.times()[1];
    let latest = horizon - duration;
    if !(earliest < latest) {
        return Err(Error::config(
            "schedule.horizon",
            "schedule too short for an intervention window after two observations",
        ));
    }
    let mut start = rng.gen_range(earliest..latest);
    let mut draws = 1;
    while sched.first_at_or_after(start) < 2 && draws < MAX_WINDOW_DRAWS {
        start = rng.gen_range(earliest..latest);
        draws += 1;
    }
    if sched.first_at_or_after(start) < 2 {
        return Err(Error::config("schedule.horizon", "no admissible window start"));
    }

    let kind = match kind_index {
        0 => InterventionKind::Hard {
            value: rng.sample(StandardNormal),
        },
        1 => InterventionKind::Soft {
            delta: Normal::new(0.0, cfg.soft_scale).expect("validated").sample(rng),
        },
        _ => {
            let half = 0.5 * cfg.tv_frequency_decades;
            let decade: f64 = if half > 0.0 { rng.gen_range(-half..half) } else { 0.0 };
            InterventionKind::TimeVarying {
                amplitude: rng.sample(StandardNormal),
                offset: rng.sample(StandardNormal),
                frequency: 10f64.powf(decade) / duration,
                phase: rng.gen_range(0.0..2.0 * PI),
            }
        }
    };
    InterventionSpec::new(target, (start, start + duration), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard(c: f64) -> InterventionSpec {
        InterventionSpec::new(1, (1.0, 2.0), InterventionKind::Hard { value: c }).unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(positivity_clip(5.0, 0.0, 1.0), 3.0);
        assert_eq!(positivity_clip(-5.0, 0.0, 1.0), -3.0);
        assert_eq!(positivity_clip(1.5, 0.0, 1.0), 1.5);
        assert_eq!(positivity_clip(4.0, 2.0, 0.0), 2.0);
    }

    #[test]
    fn inactive_outside_window() {
        let iv = hard(2.0);
        let mut state = vec![0.5, 0.7];
        let mut drift = vec![0.1, 0.2];
        let e = iv.apply(0.5, &mut state, &mut drift);
        assert!(!e.active);
        assert_eq!((state, drift), (vec![0.5, 0.7], vec![0.1, 0.2]));
        let mut state = vec![0.5, 0.7];
        let mut drift = vec![0.1, 0.2];
        assert!(!iv.apply(2.0, &mut state, &mut drift).active, "window end is excluded");
    }

    #[test]
    fn hard_pins_and_zeroes_drift() {
        let iv = hard(2.0);
        let mut state = vec![0.5, 0.7];
        let mut drift = vec![0.1, 0.2];
        let e = iv.apply(1.0, &mut state, &mut drift);
        assert!(e.active && e.pinned);
        assert_eq!(state[1], 2.0);
        assert_eq!(drift[1], 0.0);
        assert_eq!(drift[0], 0.1);
    }

    #[test]
    fn soft_shifts_drift() {
        let iv = InterventionSpec::new(0, (0.0, 1.0), InterventionKind::Soft { delta: 0.25 }).unwrap();
        let mut state = vec![0.5];
        let mut drift = vec![0.1];
        let e = iv.apply(0.5, &mut state, &mut drift);
        assert!(e.active && !e.pinned);
        assert_eq!(state[0], 0.5);
        assert_eq!(drift[0], 0.35);
    }

    #[test]
    fn time_varying_follows_waveform() {
        let iv = InterventionSpec::new(
            0,
            (0.0, 10.0),
            InterventionKind::TimeVarying {
                amplitude: 2.0,
                frequency: 0.25,
                phase: 0.0,
                offset: 1.0,
            },
        )
        .unwrap();
        let mut state = vec![0.0];
        let mut drift = vec![0.0];
        iv.apply(1.0, &mut state, &mut drift);
        assert!((state[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_only_changes_hard_values() {
        let c = hard(7.0).clipped(1.0, 1.0);
        assert_eq!(c.kind, InterventionKind::Hard { value: 4.0 });
        assert_eq!(c.clip, Some((1.0, 1.0)));
        let soft = InterventionSpec::new(0, (0.0, 1.0), InterventionKind::Soft { delta: 9.0 })
            .unwrap()
            .clipped(0.0, 1.0);
        assert_eq!(soft.kind, InterventionKind::Soft { delta: 9.0 });
    }

    #[test]
    fn window_must_be_ordered() {
        assert!(InterventionSpec::new(0, (1.0, 1.0), InterventionKind::Soft { delta: 0.0 }).is_err());
    }
}
