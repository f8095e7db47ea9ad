//! Per-variable drift mechanisms, diffusion scales, and regime switching.
//!
//! Linear variables follow an Ornstein–Uhlenbeck drift
//! `-θ_v x_v + Σ_u w_vu x_u`; neural variables replace the parental sum with a
//! bounded two-layer tanh network, `-θ_v x_v + s_v · tanh(W₂ tanh(W₁ z + b₁) + b₂)`
//! on `z = [x_v, x_parents…]`. The `-θ_v x_v` term stays outside the network.

use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDrift {
    pub theta: f64,
    /// `(parent, coefficient)` pairs, parents in increasing order.
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralDrift {
    pub theta: f64,
    pub gain: f64,
    pub parents: Vec<usize>,
    /// Row-major `width × (1 + parents.len())`.
    pub layer1_weights: Vec<f64>,
    pub layer1_bias: Vec<f64>,
    pub layer2_weights: Vec<f64>,
    pub layer2_bias: f64,
}

impl NeuralDrift {
    pub fn width(&self) -> usize {
        self.layer1_bias.len()
    }

    /// The bounded network output `g_v(z) ∈ [-1, 1]`, before the gain.
    pub fn network(&self, own: f64, state: &[f64]) -> f64 {
        let inputs = 1 + self.parents.len();
        let mut out = self.layer2_bias;
        for (j, (row, b)) in self
            .layer1_weights
            .chunks_exact(inputs)
            .zip(&self.layer1_bias)
            .enumerate()
        {
            let mut pre = b + row[0] * own;
            for (w, &u) in row[1..].iter().zip(&self.parents) {
                pre += w * state[u];
            }
            out += self.layer2_weights[j] * pre.tanh();
        }
        out.tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Drift {
    Linear(LinearDrift),
    Neural(NeuralDrift),
}

impl Drift {
    pub fn theta(&self) -> f64 {
        match self {
            Drift::Linear(d) => d.theta,
            Drift::Neural(d) => d.theta,
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, Drift::Neural(_))
    }

    /// Drift of variable `v` at `state`.
    #[inline]
    pub fn eval(&self, v: usize, state: &[f64]) -> f64 {
        let x = state[v];
        match self {
            Drift::Linear(d) => {
                let mut mu = -d.theta * x;
                for &(u, w) in &d.weights {
                    mu += w * state[u];
                }
                mu
            }
            Drift::Neural(d) => -d.theta * x + d.gain * d.network(x, state),
        }
    }
}

/// One complete set of per-variable drifts and diffusion scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismBank {
    pub drifts: Vec<Drift>,
    pub sigmas: Vec<f64>,
}

/// Markov arbitration among several banks sharing one graph. Switches happen
/// at observation boundaries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub systems: Vec<MechanismBank>,
    /// Row-stochastic `r × r`.
    pub transition: Vec<Vec<f64>>,
}

impl RegimeSpec {
    pub fn count(&self) -> usize {
        self.systems.len()
    }

    /// Next regime from `current` given a uniform draw `u ∈ [0, 1)`.
    pub fn next_regime(&self, current: usize, u: f64) -> usize {
        let row = &self.transition[current];
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.len() - 1
    }

    /// Initial regime from a uniform draw: uniform over regimes.
    pub fn initial_regime(&self, u: f64) -> usize {
        ((u * self.count() as f64) as usize).min(self.count() - 1)
    }
}

/// A complete temporal SCM: graph, mechanisms, optional regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TscmSpec {
    pub dag: Dag,
    pub drifts: Vec<Drift>,
    pub sigmas: Vec<f64>,
    pub regimes: Option<RegimeSpec>,
}

impl TscmSpec {
    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.as_ref().map_or(1, RegimeSpec::count)
    }

    /// Mechanism bank active in `regime`. Regime 0 is the base bank when no
    /// regimes are configured.
    pub fn bank(&self, regime: usize) -> BankRef<'_> {
        match &self.regimes {
            Some(r) => BankRef {
                drifts: &r.systems[regime].drifts,
                sigmas: &r.systems[regime].sigmas,
            },
            None => {
                assert_eq!(regime, 0, "regime index without a regime spec");
                BankRef {
                    drifts: &self.drifts,
                    sigmas: &self.sigmas,
                }
            }
        }
    }

    /// Drift vector `μ(state)` under `regime`.
    pub fn drift(&self, state: &[f64], regime: usize) -> Result<Vec<f64>> {
        if state.len() != self.n() {
            return Err(Error::contract(format!(
                "state has length {}, spec has {} variables",
                state.len(),
                self.n()
            )));
        }
        if regime >= self.regime_count() {
            return Err(Error::contract(format!("regime {regime} out of range")));
        }
        let mut out = vec![0.0; self.n()];
        self.bank(regime).drift_into(state, &mut out);
        Ok(out)
    }
}

/// Borrowed view of one bank.
#[derive(Debug, Clone, Copy)]
pub struct BankRef<'a> {
    pub drifts: &'a [Drift],
    pub sigmas: &'a [f64],
}

impl BankRef<'_> {
    #[inline]
    pub fn drift_into(&self, state: &[f64], out: &mut [f64]) {
        for (v, (d, o)) in self.drifts.iter().zip(out.iter_mut()).enumerate() {
            *o = d.eval(v, state);
        }
    }

    pub fn initial_std(&self, v: usize) -> f64 {
        match &self.drifts[v] {
            Drift::Linear(d) => self.sigmas[v] / (2.0 * d.theta).sqrt(),
            Drift::Neural(_) => 1.0,
        }
    }
}

/// Sampling distributions for mechanisms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    /// Log-normal location/scale for `θ_v`, used unless `theta_range` is set.
    pub theta_log_mu: f64,
    pub theta_log_sigma: f64,
    /// Uniform `[low, high]` override for `θ_v`.
    pub theta_range: Option<[f64; 2]>,
    pub sigma_log_mu: f64,
    pub sigma_log_sigma: f64,
    pub weight_std: f64,
    pub p_neural: f64,
    pub mlp_width: usize,
    pub gain_range: [f64; 2],
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            theta_log_mu: 0.0,
            theta_log_sigma: 0.5,
            theta_range: None,
            sigma_log_mu: -1.0,
            sigma_log_sigma: 0.5,
            weight_std: 0.5,
            p_neural: 0.0,
            mlp_width: 8,
            gain_range: [0.5, 2.0],
        }
    }
}

fn check_range(path: String, r: [f64; 2]) -> Result<()> {
    if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
        return Err(Error::config(path, format!("need 0 < low <= high, got {r:?}")));
    }
    Ok(())
}

impl MechanismConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if let Some(r) = self.theta_range {
            check_range(format!("{prefix}.theta_range"), r)?;
        }
        if !(self.theta_log_sigma >= 0.0) {
            return Err(Error::config(format!("{prefix}.theta_log_sigma"), "must be nonnegative"));
        }
        if !(self.sigma_log_sigma >= 0.0) {
            return Err(Error::config(format!("{prefix}.sigma_log_sigma"), "must be nonnegative"));
        }
        if !(self.weight_std >= 0.0) {
            return Err(Error::config(format!("{prefix}.weight_std"), "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.p_neural) {
            return Err(Error::config(format!("{prefix}.p_neural"), "must lie in [0, 1]"));
        }
        if self.mlp_width == 0 {
            return Err(Error::config(format!("{prefix}.mlp_width"), "must be positive"));
        }
        check_range(format!("{prefix}.gain_range"), self.gain_range)
    }

    fn sample_theta(&self, rng: &mut RngStream) -> f64 {
        match self.theta_range {
            Some([lo, hi]) if lo < hi => rng.gen_range(lo..hi),
            Some([lo, _]) => lo,
            None => LogNormal::new(self.theta_log_mu, self.theta_log_sigma)
                .expect("validated")
                .sample(rng),
        }
    }
}

/// Regime-switching options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    /// Fraction of sampled TSCMs that switch regimes.
    pub fraction: f64,
    /// Candidate regime counts, drawn uniformly.
    pub counts: Vec<usize>,
    pub self_transition: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            fraction: 0.15,
            counts: vec![2, 3],
            self_transition: 0.9,
        }
    }
}

impl RegimeConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config(format!("{prefix}.fraction"), "must lie in [0, 1]"));
        }
        if self.counts.is_empty() || self.counts.iter().any(|&r| !(2..=3).contains(&r)) {
            return Err(Error::config(format!("{prefix}.counts"), "regime counts must be 2 or 3"));
        }
        if !(self.self_transition > 0.0 && self.self_transition < 1.0) {
            return Err(Error::config(format!("{prefix}.self_transition"), "must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn sample_bank(dag: &Dag, cfg: &MechanismConfig, rng: &mut RngStream) -> MechanismBank {
    let weight = Normal::new(0.0, cfg.weight_std).expect("validated");
    let sigma_dist = LogNormal::new(cfg.sigma_log_mu, cfg.sigma_log_sigma).expect("validated");
    let mut drifts = Vec::with_capacity(dag.n());
    let mut sigmas = Vec::with_capacity(dag.n());
    for v in 0..dag.n() {
        let parents = dag.parents(v);
        let neural = rng.gen::<f64>() < cfg.p_neural;
        let theta = cfg.sample_theta(rng);
        sigmas.push(sigma_dist.sample(rng));
        let drift = if neural {
            let inputs = 1 + parents.len();
            let width = cfg.mlp_width;
            let w1 = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).unwrap();
            let w2 = Normal::new(0.0, (1.0 / width as f64).sqrt()).unwrap();
            let bias = Normal::new(0.0, 0.1).unwrap();
            let [glo, ghi] = cfg.gain_range;
            let gain = if glo < ghi { rng.gen_range(glo..ghi) } else { glo };
            Drift::Neural(NeuralDrift {
                theta,
                gain,
                layer1_weights: (0..width * inputs).map(|_| w1.sample(rng)).collect(),
                layer1_bias: (0..width).map(|_| bias.sample(rng)).collect(),
                layer2_weights: (0..width).map(|_| w2.sample(rng)).collect(),
                layer2_bias: bias.sample(rng),
                parents,
            })
        } else {
            Drift::Linear(LinearDrift {
                theta,
                weights: parents.into_iter().map(|u| (u, weight.sample(rng))).collect(),
            })
        };
        drifts.push(drift);
    }
    MechanismBank { drifts, sigmas }
}

/// Sample drifts and diffusion scales for every variable of `dag`.
pub fn sample_tscm(dag: &Dag, cfg: &MechanismConfig, rng: &mut RngStream) -> Result<TscmSpec> {
    cfg.validate("mechanism")?;
    let bank = sample_bank(dag, cfg, rng);
    Ok(TscmSpec {
        dag: dag.clone(),
        drifts: bank.drifts,
        sigmas: bank.sigmas,
        regimes: None,
    })
}

/// Sample `r` independent banks and a sticky transition matrix. Each row is
/// `p_stay · e_r + (1 - p_stay) · d` with `d ~ Dirichlet(1, …, 1)` spread over
/// the off-diagonal entries.
pub fn sample_regime_spec(
    dag: &Dag,
    r: usize,
    mech: &MechanismConfig,
    regime: &RegimeConfig,
    rng: &mut RngStream,
) -> Result<RegimeSpec> {
    if !(2..=3).contains(&r) {
        return Err(Error::config("regime.counts", format!("regime count {r} not in {{2, 3}}")));
    }
    mech.validate("mechanism")?;
    regime.validate("regime")?;
    let systems = (0..r).map(|_| sample_bank(dag, mech, rng)).collect();
    let stay = regime.self_transition;
    let transition = (0..r)
        .map(|i| {
            let raw: Vec<f64> = (0..r - 1).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = raw.iter().sum();
            let mut off = raw.into_iter().map(|g| g / total);
            (0..r)
                .map(|j| {
                    if i == j {
                        stay
                    } else {
                        (1.0 - stay) * off.next().expect("r-1 off-diagonal weights")
                    }
                })
                .collect()
        })
        .collect();
    Ok(RegimeSpec {
        systems,
        transition,
    })
}

/// Sample a TSCM that switches among `r` regimes. The base drifts mirror
/// regime 0.
pub fn sample_switching_tscm(
    dag: &Dag,
    r: usize,
    mech: &MechanismConfig,
    regime: &RegimeConfig,
    rng: &mut RngStream,
) -> Result<TscmSpec> {
    let spec = sample_regime_spec(dag, r, mech, regime, rng)?;
    Ok(TscmSpec {
        dag: dag.clone(),
        drifts: spec.systems[0].drifts.clone(),
        sigmas: spec.systems[0].sigmas.clone(),
        regimes: Some(spec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphConfig, StructureKind, sample_random_dag};
    use crate::rng::StreamKey;

    fn linear_spec(theta: f64, weights: Vec<(usize, f64)>, n: usize) -> TscmSpec {
        let dag = Dag::new(n, &weights.iter().map(|&(u, _)| (u, n - 1)).collect::<Vec<_>>(), 0, n - 1, vec![false; n]).unwrap();
        let mut drifts: Vec<Drift> = (0..n)
            .map(|_| Drift::Linear(LinearDrift { theta, weights: vec![] }))
            .collect();
        drifts[n - 1] = Drift::Linear(LinearDrift { theta, weights });
        TscmSpec {
            dag,
            drifts,
            sigmas: vec![1.0; n],
            regimes: None,
        }
    }

    #[test]
    fn linear_drift_direct_substitution() {
        let spec = linear_spec(0.5, vec![], 2);
        assert_eq!(spec.drift(&[0.0, 1.0], 0).unwrap()[1], -0.5);
        let spec = linear_spec(0.5, vec![(0, 0.3)], 2);
        let mu = spec.drift(&[2.0, 1.0], 0).unwrap()[1];
        assert!((mu - 0.1).abs() < 1e-15);
    }

    #[test]
    fn drift_rejects_wrong_dimension() {
        let spec = linear_spec(0.5, vec![], 2);
        assert!(matches!(spec.drift(&[1.0], 0), Err(Error::Contract(_))));
        assert!(spec.drift(&[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn zero_neural_probability_gives_linear() {
        let mut rng = StreamKey::from_seed(1).rng();
        let cfg = MechanismConfig::default();
        for _ in 0..200 {
            let dag = sample_random_dag(&GraphConfig::default(), &mut rng).unwrap();
            let spec = sample_tscm(&dag, &cfg, &mut rng).unwrap();
            assert!(spec.drifts.iter().all(|d| !d.is_neural()));
        }
    }

    #[test]
    fn neural_fraction_and_weight_scale() {
        let mut rng = StreamKey::from_seed(2).rng();
        let cfg = MechanismConfig {
            p_neural: 0.5,
            ..MechanismConfig::default()
        };
        let dag = StructureKind::Bivariate.template();
        let (mut neural, mut total) = (0usize, 0usize);
        while total < 100_000 {
            let spec = sample_tscm(&dag, &cfg, &mut rng).unwrap();
            neural += spec.drifts.iter().filter(|d| d.is_neural()).count();
            total += spec.drifts.len();
        }
        assert!((neural as f64 / total as f64 - 0.5).abs() < 0.01);

        let linear = MechanismConfig::default();
        let mut ws = Vec::new();
        while ws.len() < 100_000 {
            let spec = sample_tscm(&dag, &linear, &mut rng).unwrap();
            if let Drift::Linear(d) = &spec.drifts[1] {
                ws.extend(d.weights.iter().map(|&(_, w)| w));
            }
        }
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<f64>() / n;
        let sd = (ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.5).abs() < 0.01, "weight sd {sd}");
    }

    #[test]
    fn theta_range_override() {
        let mut rng = StreamKey::from_seed(3).rng();
        let cfg = MechanismConfig {
            theta_range: Some([0.1, 0.5]),
            p_neural: 0.5,
            ..MechanismConfig::default()
        };
        let dag = StructureKind::BackDoor.template();
        for _ in 0..1000 {
            let spec = sample_tscm(&dag, &cfg, &mut rng).unwrap();
            assert!(spec.drifts.iter().all(|d| (0.1..0.5).contains(&d.theta())));
        }
        let bad = MechanismConfig {
            theta_range: Some([-0.1, 0.5]),
            ..MechanismConfig::default()
        };
        match bad.validate("mechanism") {
            Err(Error::Config { path, .. }) => assert_eq!(path, "mechanism.theta_range"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regime_rows_and_diagonal() {
        let mut rng = StreamKey::from_seed(4).rng();
        let dag = StructureKind::Mediator.template();
        let mech = MechanismConfig::default();
        let reg = RegimeConfig::default();
        let mut diag = 0.0;
        let mut count = 0.0;
        for i in 0..10_000 {
            let r = 2 + i % 2;
            let spec = sample_regime_spec(&dag, r, &mech, &reg, &mut rng).unwrap();
            for (k, row) in spec.transition.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
                diag += row[k];
                count += 1.0;
            }
        }
        assert!((diag / count - 0.9).abs() < 0.01);
        assert!(sample_regime_spec(&dag, 4, &mech, &reg, &mut rng).is_err());
    }

    #[test]
    fn regime_sojourn_is_about_ten_steps() {
        let mut rng = StreamKey::from_seed(5).rng();
        let dag = StructureKind::Bivariate.template();
        let mech = MechanismConfig::default();
        let reg = RegimeConfig::default();
        let (mut runs, mut steps) = (0usize, 0usize);
        for i in 0..2000 {
            let spec = sample_regime_spec(&dag, 2 + i % 2, &mech, &reg, &mut rng).unwrap();
            let mut cur = spec.initial_regime(rng.gen());
            let mut len = 1;
            for _ in 0..500 {
                let next = spec.next_regime(cur, rng.gen());
                if next == cur {
                    len += 1;
                } else {
                    runs += 1;
                    steps += len;
                    len = 1;
                    cur = next;
                }
            }
        }
        let mean = steps as f64 / runs as f64;
        assert!((mean - 10.0).abs() < 0.5, "mean sojourn {mean}");
    }

    #[test]
    fn neural_network_layout() {
        let mut rng = StreamKey::from_seed(6).rng();
        let cfg = MechanismConfig {
            p_neural: 1.0,
            ..MechanismConfig::default()
        };
        let dag = StructureKind::ConfounderMediator.template();
        let spec = sample_tscm(&dag, &cfg, &mut rng).unwrap();
        for (v, d) in spec.drifts.iter().enumerate() {
            let Drift::Neural(nd) = d else { panic!("expected neural") };
            assert_eq!(nd.parents, dag.parents(v));
            assert_eq!(nd.width(), 8);
            assert_eq!(nd.layer1_weights.len(), 8 * (1 + nd.parents.len()));
            assert!((0.5..2.0).contains(&nd.gain));
        }
    }
}
