use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use tscm::record::{check_record, decode};

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A `records.ndjson` or `records.bin` file.
    pub path: PathBuf,
}

pub fn run(args: InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&args.path).with_context(|| format!("reading {}", args.path.display()))?;
    let ds = decode(&bytes).with_context(|| format!("integrity check of {}", args.path.display()))?;
    for (i, rec) in ds.records.iter().enumerate() {
        if let Err(msg) = check_record(rec) {
            bail!("record {i} (batch {}, item {}) is invalid: {msg}", rec.batch_index, rec.item_index);
        }
    }
    let batches: BTreeSet<u64> = ds.records.iter().map(|r| r.batch_index).collect();
    let observed: Vec<usize> = ds.records.iter().map(|r| r.n_observed()).collect();
    let hidden: usize = ds.records.iter().map(|r| r.n_vars - r.n_observed()).sum();
    let with_oracle = ds.records.iter().filter(|r| r.oracle.is_some()).count();
    let diverged = ds.records.iter().filter(|r| r.flags.diverged).count();
    let saturated = ds.records.iter().filter(|r| r.flags.saturated).count();

    println!("file               {}", args.path.display());
    println!("format             {:?}", ds.format);
    println!("format version     {}", ds.header.format_version);
    println!("config digest      {}", ds.header.config_digest);
    println!("seed               {}", ds.header.seed);
    println!("batches            {}", batches.len());
    println!("samples            {}", ds.records.len());
    if let (Some(lo), Some(hi)) = (observed.iter().min(), observed.iter().max()) {
        println!("observed vars      {lo}..={hi} per sample (hidden excluded)");
    }
    println!("hidden vars        {hidden} total");
    println!("oracle sections    {with_oracle}");
    println!("diverged           {diverged}");
    println!("saturated          {saturated}");
    println!("status             all records valid");
    Ok(())
}
