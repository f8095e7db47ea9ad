//! End-to-end batch sampling: graph, mechanisms, schedule and intervention are
//! drawn per item, simulated as a counterfactual pair, and normalized against
//! the pre-intervention window.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{sample_any_named_structure, sample_random_dag, GraphConfig, StructureKind};
use crate::integrator::{paired_simulate, InitMode, NoisePlan, Resolution, SimConfig, Trajectory};
use crate::intervention::{sample_intervention, InterventionConfig, InterventionSpec};
use crate::mechanism::{sample_switching_tscm, sample_tscm, MechanismConfig, RegimeConfig, TscmSpec};
use crate::record::SampleRecord;
use crate::rng::{role, StreamKey};
use crate::schedule::ScheduleConfig;

/// Which graph sampler feeds the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Random,
    /// One named structure (`graph.structure`), or a uniform choice over all
    /// eight when unset.
    Named,
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(GraphMode::Random),
            "named" => Ok(GraphMode::Named),
            other => Err(Error::config("graph.mode", format!("unknown graph mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub mode: GraphMode,
    pub structure: Option<StructureKind>,
    pub n_max: usize,
    pub edge_prob_alpha: f64,
    pub edge_prob_beta: f64,
    pub hidden_prob: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        let g = GraphConfig::default();
        GraphSection {
            mode: GraphMode::Random,
            structure: None,
            n_max: g.n_max,
            edge_prob_alpha: g.edge_prob_alpha,
            edge_prob_beta: g.edge_prob_beta,
            hidden_prob: g.hidden_prob,
        }
    }
}

impl GraphSection {
    pub fn random_config(&self) -> GraphConfig {
        GraphConfig {
            n_max: self.n_max,
            edge_prob_alpha: self.edge_prob_alpha,
            edge_prob_beta: self.edge_prob_beta,
            hidden_prob: self.hidden_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Fine steps per observation gap (1 = naive observation-grid integration).
    pub substeps: usize,
    pub init: InitMode,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            substeps: 8,
            init: InitMode::Stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSection {
    /// Normalized values are clamped to `±clip`.
    pub clip: f64,
}

impl Default for NormalizationSection {
    fn default() -> Self {
        NormalizationSection { clip: 10.0 }
    }
}

/// Everything needed to generate batches deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub graph: GraphSection,
    pub mechanism: MechanismConfig,
    pub regime: RegimeConfig,
    pub schedule: ScheduleConfig,
    pub intervention: InterventionConfig,
    pub simulation: SimulationSection,
    pub normalization: NormalizationSection,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            seed: 0,
            batch_size: 32,
            graph: GraphSection::default(),
            mechanism: MechanismConfig::default(),
            regime: RegimeConfig::default(),
            schedule: ScheduleConfig::default(),
            intervention: InterventionConfig::default(),
            simulation: SimulationSection::default(),
            normalization: NormalizationSection::default(),
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.graph.random_config().validate("graph")?;
        self.mechanism.validate("mechanism")?;
        self.regime.validate("regime")?;
        self.schedule.validate("schedule")?;
        self.intervention.validate("intervention")?;
        if self.simulation.substeps == 0 {
            return Err(Error::config("simulation.substeps", "must be at least 1"));
        }
        if !(self.normalization.clip > 0.0) {
            return Err(Error::config("normalization.clip", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            resolution: Resolution::Substeps(self.simulation.substeps),
            init: self.simulation.init,
            keep_fine: false,
        }
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest identifying a sampled TSCM.
pub fn spec_digest(spec: &TscmSpec) -> String {
    hex_digest(&serde_json::to_vec(spec).expect("spec serializes"))
}

/// Per-variable z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStat {
    pub mean: f64,
    pub std: f64,
}

/// A z-scored and clamped trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    /// Row-major `T × n_vars`.
    pub values: Vec<f64>,
    pub stats: Vec<NormStat>,
    /// Per variable: did any value hit the clip.
    pub clamped: Vec<bool>,
    pub saturated: bool,
}

/// Floor applied to pre-window standard deviations.
pub fn std_floor(mean: f64, std: f64) -> f64 {
    std.max(1e-6 * (1.0 + mean.abs()))
}

/// Pre-window z-score statistics from observations `0..onset`.
pub fn pre_window_stats(traj: &Trajectory, onset: usize) -> Result<Vec<NormStat>> {
    if onset < 2 || onset > traj.len() {
        return Err(Error::EmptyPreWindow { onset });
    }
    Ok((0..traj.n_vars)
        .map(|v| {
            let pre: Vec<f64> = (0..onset).map(|i| traj.get(i, v)).collect();
            let (mean, std) = crate::integrator::mean_std(&pre);
            NormStat {
                mean,
                std: std_floor(mean, std),
            }
        })
        .collect())
}

/// z-score `traj` with fixed `stats` and clamp to `±clip`.
pub fn normalize_with(traj: &Trajectory, stats: &[NormStat], clip: f64) -> Normalized {
    let n = traj.n_vars;
    let mut clamped = vec![false; n];
    let values = traj
        .values
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let v = k % n;
            let z = (x - stats[v].mean) / stats[v].std;
            if !(z.abs() < clip) {
                clamped[v] = true;
            }
            z.clamp(-clip, clip)
        })
        .collect();
    Normalized {
        values,
        stats: stats.to_vec(),
        saturated: clamped.iter().any(|&c| c),
        clamped,
    }
}

/// z-score every variable with its mean and standard deviation over the
/// pre-intervention observations `0..onset`, then clamp to `±clip`.
pub fn normalize(traj: &Trajectory, onset: usize, clip: f64) -> Result<Normalized> {
    let stats = pre_window_stats(traj, onset)?;
    Ok(normalize_with(traj, &stats, clip))
}

/// One training example: a counterfactual pair plus its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub batch_index: u64,
    pub item_index: u32,
    pub spec: TscmSpec,
    pub spec_digest: String,
    pub observational: Trajectory,
    pub interventional: Trajectory,
    pub intervention: InterventionSpec,
    /// First observation at or after the window start.
    pub onset_index: usize,
    pub norm_stats: Vec<NormStat>,
    pub norm_clip: f64,
    pub diverged: bool,
    /// A normalized interventional outcome value at or after onset hit the clip.
    pub saturated: bool,
    /// Largest normalized `|Y|` in the interventional run at or after onset,
    /// before clamping.
    pub y_max: f64,
}

const MAX_SCHEDULE_DRAWS: usize = 100;

/// Key of the stream tree for one batch item.
pub fn item_key(seed: u64, batch_index: u64, item: u32) -> StreamKey {
    StreamKey::from_seed(seed).derive(batch_index).derive(item as u64)
}

/// Generate a single batch item.
pub fn sample_item(cfg: &BatchConfig, batch_index: u64, item: u32) -> Result<SamplePair> {
    let key = item_key(cfg.seed, batch_index, item);

    let mut srng = key.derive(role::STRUCTURE).rng();
    let dag = match cfg.graph.mode {
        GraphMode::Random => sample_random_dag(&cfg.graph.random_config(), &mut srng)?,
        GraphMode::Named => match cfg.graph.structure {
            Some(kind) => kind.template(),
            None => sample_any_named_structure(&mut srng),
        },
    };
    let switching = srng.gen::<f64>() < cfg.regime.fraction;
    let spec = if switching {
        let r = cfg.regime.counts[srng.gen_range(0..cfg.regime.counts.len())];
        sample_switching_tscm(&dag, r, &cfg.mechanism, &cfg.regime, &mut srng)?
    } else {
        sample_tscm(&dag, &cfg.mechanism, &mut srng)?
    };

    let mut sched_rng = key.derive(role::SCHEDULE).rng();
    let mut iv_rng = key.derive(role::INTERVENTION).rng();
    let mut drawn = None;
    for _ in 0..MAX_SCHEDULE_DRAWS {
        let sched = cfg.schedule.sample(&mut sched_rng)?;
        match sample_intervention(&spec, &sched, &cfg.intervention, &mut iv_rng) {
            Ok(iv) => {
                drawn = Some((sched, iv));
                break;
            }
            Err(Error::Config { path, .. }) if path == "schedule.horizon" => continue,
            Err(e) => return Err(e),
        }
    }
    let (sched, iv) = drawn.ok_or_else(|| {
        Error::config("schedule.horizon", "no schedule admitted an intervention window")
    })?;

    let noise = NoisePlan::Streamed(key.derive(role::NOISE));
    let run = paired_simulate(
        &spec,
        &sched,
        &cfg.sim_config(),
        &iv,
        &noise,
        cfg.intervention.positivity_clip,
    )?;

    let onset = sched.first_at_or_after(run.intervention.window.0);
    let clip = cfg.normalization.clip;
    let stats = pre_window_stats(&run.observational, onset)?;
    let y = spec.dag.outcome();
    let ys = stats[y];
    let mut y_max: f64 = 0.0;
    for i in onset..sched.len() {
        let z = (run.interventional.get(i, y) - ys.mean) / ys.std;
        y_max = if z.is_nan() { f64::INFINITY } else { y_max.max(z.abs()) };
    }
    let saturated = y_max >= clip;

    Ok(SamplePair {
        batch_index,
        item_index: item,
        spec_digest: spec_digest(&spec),
        diverged: run.observational.diverged || run.interventional.diverged,
        observational: run.observational,
        interventional: run.interventional,
        intervention: run.intervention,
        onset_index: onset,
        norm_stats: stats,
        norm_clip: clip,
        saturated,
        y_max,
        spec,
    })
}

/// `batch_size` independent items for `batch_index`, in item order. Items
/// run in parallel on the current rayon pool; output does not depend on the
/// pool size.
pub fn sample_batch(cfg: &BatchConfig, batch_index: u64) -> Result<Vec<SamplePair>> {
    cfg.validate()?;
    (0..cfg.batch_size as u32)
        .into_par_iter()
        .map(|item| sample_item(cfg, batch_index, item))
        .collect()
}

/// Infinite, restartable stream of exported batches. This is the surface
/// language bindings wrap; batch `k` equals batch `k` of a CLI export with
/// the same configuration.
#[derive(Debug)]
pub struct PriorStream {
    cfg: BatchConfig,
    next: u64,
    include_oracle: bool,
    open: bool,
}

impl PriorStream {
    pub fn open(cfg: BatchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PriorStream {
            cfg,
            next: 0,
            include_oracle: true,
            open: true,
        })
    }

    pub fn without_oracle(mut self) -> Self {
        self.include_oracle = false;
        self
    }

    pub fn config(&self) -> &BatchConfig {
        &self.cfg
    }

    pub fn batch_index(&self) -> u64 {
        self.next
    }

    pub fn next_batch(&mut self) -> Result<Vec<SampleRecord>> {
        if !self.open {
            return Err(Error::Closed);
        }
        let pairs = sample_batch(&self.cfg, self.next)?;
        self.next += 1;
        Ok(pairs
            .iter()
            .map(|p| SampleRecord::from_pair(p, self.include_oracle))
            .collect())
    }

    pub fn close(&mut self) {
        self.open = false;
    }
}
