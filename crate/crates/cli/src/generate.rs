use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use tscm::record::FORMAT_VERSION;
use tscm::{sample_batch, Format, Header, RecordWriter, SampleRecord, ScheduleChoice};

use crate::config::{load_run_config, RunConfig, UsageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Ndjson,
    Binary,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ndjson => Format::Ndjson,
            FormatArg::Binary => Format::Binary,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Flat `key.path = value` TOML configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed. Required unless the config sets `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batches: Option<u64>,
    /// Output directory.
    #[arg(long, env = "TSCM_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// regular, jittered, poisson or mixed.
    #[arg(long)]
    pub schedule: Option<String>,
    /// EM steps per observation gap.
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Worker threads. Output bytes do not depend on this.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Drop hidden columns, spec digest and regime path from records.
    #[arg(long)]
    pub no_oracle: bool,
}

pub struct Plan {
    pub cfg: tscm::BatchConfig,
    pub batches: u64,
    pub format: Format,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub oracle: bool,
}

pub fn plan(args: &GenerateArgs) -> Result<Plan> {
    let rc = match &args.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = rc.batch;
    match (args.seed, rc.seed_given) {
        (Some(s), _) => cfg.seed = s,
        (None, true) => {}
        (None, false) => {
            return Err(UsageError("no seed given: pass --seed or set `seed` in the config".into()).into());
        }
    }
    if let Some(kind) = &args.schedule {
        cfg.schedule.kind = kind.parse::<ScheduleChoice>()?;
    }
    if let Some(s) = args.substeps {
        cfg.simulation.substeps = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let batches = args.batches.or(rc.run.batches).unwrap_or(1);
    if batches == 0 {
        return Err(UsageError("--batches must be at least 1".into()).into());
    }
    let jobs = args.jobs.or(rc.run.jobs);
    if jobs == Some(0) {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    Ok(Plan {
        cfg,
        batches,
        format: args.format.map(Format::from).or(rc.run.format).unwrap_or(Format::Ndjson),
        out_dir: args.out.clone().or(rc.run.out_dir).unwrap_or_else(|| PathBuf::from("out")),
        jobs,
        oracle: !args.no_oracle && rc.run.oracle.unwrap_or(true),
    })
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let plan = plan(&args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = plan.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("building worker pool")?;

    fs::create_dir_all(&plan.out_dir).with_context(|| format!("creating {}", plan.out_dir.display()))?;
    let path = plan.out_dir.join(format!("records.{}", plan.format.extension()));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let header = Header {
        format_version: FORMAT_VERSION,
        config_digest: plan.cfg.digest(),
        seed: plan.cfg.seed,
    };
    let mut writer = RecordWriter::new(BufWriter::new(file), plan.format, &header)?;

    let (mut samples, mut saturated, mut saturated_batches, mut diverged) = (0usize, 0usize, 0u64, 0usize);
    for b in 0..plan.batches {
        let pairs = pool.install(|| sample_batch(&plan.cfg, b))?;
        let sat = pairs.iter().filter(|p| p.saturated).count();
        saturated += sat;
        saturated_batches += (sat > 0) as u64;
        diverged += pairs.iter().filter(|p| p.diverged).count();
        samples += pairs.len();
        for p in &pairs {
            writer.write(&SampleRecord::from_pair(p, plan.oracle))?;
        }
        log::info!("batch {b} written");
    }
    writer.finish()?;

    println!("wrote {}", path.display());
    println!("config digest      {}", header.config_digest);
    println!("seed               {}", plan.cfg.seed);
    println!("batches            {}", plan.batches);
    println!("samples            {samples}");
    println!(
        "saturated          {saturated} samples ({:.4}), {saturated_batches} batches ({:.4})",
        saturated as f64 / samples as f64,
        saturated_batches as f64 / plan.batches as f64
    );
    println!("diverged           {diverged}");
    Ok(())
}
