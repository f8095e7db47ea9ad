//! Continuous-time temporal SCM prior.
//!
//! Random causal graphs carry Itô SDE mechanisms, are integrated with
//! Euler–Maruyama on a fine grid, and are read out on irregular observation
//! schedules. Each sample is a counterfactual pair: an observational run and
//! an intervened run sharing one noise realization.
//!
//! ```
//! use tscm::{sample_batch, BatchConfig};
//!
//! let cfg = BatchConfig { seed: 7, batch_size: 2, ..BatchConfig::default() };
//! let batch = sample_batch(&cfg, 0).unwrap();
//! assert_eq!(batch.len(), 2);
//! ```

pub mod analysis;
pub mod error;
pub mod graph;
pub mod integrator;
pub mod intervention;
pub mod mechanism;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod timefeat;

pub use error::{Error, Result};
pub use graph::{Dag, GraphConfig, NodeRole, StructureKind};
pub use integrator::{
    em_step, exact_ou_transition, paired_simulate, simulate, InitMode, NoisePlan, NoiseTape, OuKernel, PairedRun,
    Resolution, SimConfig, Trajectory,
};
pub use intervention::{InterventionConfig, InterventionKind, InterventionSpec};
pub use mechanism::{Drift, LinearDrift, MechanismConfig, NeuralDrift, RegimeConfig, RegimeSpec, TscmSpec};
pub use pipeline::{sample_batch, sample_item, BatchConfig, PriorStream, SamplePair};
pub use record::{Dataset, Format, Header, RecordWriter, SampleRecord};
pub use rng::StreamKey;
pub use schedule::{FineGrid, ObservationSchedule, ScheduleChoice, ScheduleConfig, ScheduleKind};
