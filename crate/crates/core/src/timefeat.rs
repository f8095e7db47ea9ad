//! Time features: a geometric Fourier bank over continuous time and the
//! `log(1 + Δt)` gap embedding.

use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    frequencies: Vec<f64>,
}

impl Default for FrequencyBank {
    fn default() -> Self {
        FrequencyBank::geometric(16, 0.01, 10.0).expect("valid defaults")
    }
}

impl FrequencyBank {
    /// `k` frequencies spaced geometrically from `f_min` to `f_max`.
    pub fn geometric(k: usize, f_min: f64, f_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("timefeat.k", "bank needs at least one frequency"));
        }
        if !(f_min > 0.0 && f_min.is_finite() && f_max.is_finite()) {
            return Err(Error::config("timefeat.f_min", "frequencies must be positive and finite"));
        }
        if k == 1 {
            return Ok(FrequencyBank { frequencies: vec![f_min] });
        }
        if !(f_max > f_min) {
            return Err(Error::config("timefeat.f_max", "must exceed f_min"));
        }
        let span = (f_max / f_min).ln();
        let mut frequencies: Vec<f64> = (0..k)
            .map(|i| f_min * (span * i as f64 / (k - 1) as f64).exp())
            .collect();
        frequencies[k - 1] = f_max;
        Ok(FrequencyBank { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// `[sin 2πf_k t, cos 2πf_k t]` for each `k`, interleaved. The phase is
/// reduced modulo one cycle before the trig call.
pub fn fourier_features(t: f64, bank: &FrequencyBank) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bank.len());
    for &f in bank.frequencies() {
        let cycles = f * t;
        let phase = TAU * (cycles - cycles.floor());
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// Time coordinate of a gap: `log(1 + dt)`.
pub fn embedded_gap(dt: f64) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(Error::contract(format!("gap must be nonnegative, got {dt}")));
    }
    Ok(dt.ln_1p())
}

pub fn gap_features(dt: f64, bank: &FrequencyBank) -> Result<Vec<f64>> {
    Ok(fourier_features(embedded_gap(dt)?, bank))
}

/// Fixed Gaussian projection of a feature vector, drawn once from a seed.
/// Not trained; a stand-in for consumers that want a dense embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededProjection {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim × in_dim`, entries `N(0, 1/in_dim)`.
    weights: Vec<f64>,
}

impl SeededProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::contract("projection dimensions must be positive"));
        }
        let normal = Normal::new(0.0, (in_dim as f64).recip().sqrt()).expect("positive scale");
        let mut rng = StreamKey::from_seed(seed).rng();
        let weights = (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(SeededProjection { in_dim, out_dim, weights })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::contract(format!("expected {} features, got {}", self.in_dim, x.len())));
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect())
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}
