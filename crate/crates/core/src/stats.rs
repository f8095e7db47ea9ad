//! Distribution tests: Kolmogorov–Smirnov and energy distance with a
//! permutation null.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::rng::StreamKey;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample KS distance `sup |F_n − F|` against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS distance `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a two-sample KS distance, with Stephens' small-sample
/// correction.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let s = ne.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` between two samples of
/// `dim`-vectors stored row-major.
pub fn energy_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let labels: Vec<bool> = (0..a.len() / dim).map(|_| true).chain((0..b.len() / dim).map(|_| false)).collect();
    PooledDistances::new(&pooled, dim).energy(&labels)
}

/// Upper-triangular pairwise distance table of a pooled sample.
pub struct PooledDistances {
    n: usize,
    /// Row `i` holds distances to `j > i`.
    rows: Vec<Vec<f64>>,
    total: f64,
}

impl PooledDistances {
    pub fn new(points: &[f64], dim: usize) -> Self {
        let n = points.len() / dim;
        let pt = |i: usize| &points[i * dim..(i + 1) * dim];
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| euclid(pt(i), pt(j))).collect())
            .collect();
        let total = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
        PooledDistances { n, rows, total }
    }

    /// Energy distance for a labelling (`true` = first sample).
    pub fn energy(&self, labels: &[bool]) -> f64 {
        let (mut saa, mut sbb) = (0.0, 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let li = labels[i];
            let mut s = 0.0;
            for (d, &lj) in row.iter().zip(&labels[i + 1..]) {
                if lj == li {
                    s += d;
                }
            }
            if li {
                saa += s;
            } else {
                sbb += s;
            }
        }
        let sab = self.total - saa - sbb;
        let na = labels.iter().filter(|&&l| l).count() as f64;
        let nb = self.n as f64 - na;
        2.0 * sab / (na * nb) - 2.0 * saa / (na * na) - 2.0 * sbb / (nb * nb)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    /// Null quantile at `1 − alpha`.
    pub threshold: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Energy-distance test with a label-permutation null. Each permutation draws
/// from its own stream under `key`, so the result does not depend on thread
/// scheduling.
pub fn energy_permutation_test(
    a: &[f64],
    b: &[f64],
    dim: usize,
    permutations: usize,
    alpha: f64,
    key: StreamKey,
) -> EnergyTest {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let table = PooledDistances::new(&pooled, dim);
    let labels: Vec<bool> = (0..na).map(|_| true).chain((0..nb).map(|_| false)).collect();
    let statistic = table.energy(&labels);
    let mut null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut l = labels.clone();
            l.shuffle(&mut key.derive(p as u64).rng());
            table.energy(&l)
        })
        .collect();
    let exceed = null.iter().filter(|&&e| e >= statistic).count();
    null.sort_by(f64::total_cmp);
    let rank = (((1.0 - alpha) * (permutations + 1) as f64).ceil() as usize).clamp(1, permutations);
    EnergyTest {
        statistic,
        threshold: null[rank - 1],
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = StreamKey::from_seed(seed).rng();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect()
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-14);
    }

    #[test]
    fn kolmogorov_reference_points() {
        assert!((kolmogorov_sf(1.3580986393225505) - 0.05).abs() < 1e-6);
        assert!((kolmogorov_sf(1.6276236115189502) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn ks_two_sample_small_case() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_one_sample_detects_shift() {
        let same = normals(1, 20_000, 0.0);
        let moved = normals(1, 20_000, 0.2);
        assert!(ks_one_sample(&same, normal_cdf) < 0.015);
        assert!(ks_one_sample(&moved, normal_cdf) > 0.06);
    }

    #[test]
    fn energy_matches_direct_formula() {
        let a = [0.0, 1.0];
        let b = [3.0];
        let exy = (3.0 + 2.0) / 2.0;
        let exx = (0.0 + 1.0 + 1.0 + 0.0) / 4.0;
        assert!((energy_distance(&a, &b, 1) - (2.0 * exy - exx)).abs() < 1e-12);
    }

    #[test]
    fn permutation_test_separates() {
        let key = StreamKey::from_seed(4);
        let a = normals(2, 400, 0.0);
        let b = normals(3, 400, 0.0);
        let c = normals(5, 400, 0.5);
        let null = energy_permutation_test(&a, &b, 2, 199, 0.01, key);
        let alt = energy_permutation_test(&a, &c, 2, 199, 0.01, key);
        assert!(null.statistic >= 0.0);
        assert!(alt.statistic > alt.threshold && alt.p_value <= 0.01);
        assert!(null.p_value > 0.01);
    }
}
