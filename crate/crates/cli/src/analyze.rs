use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use serde::Serialize;
use tscm::analysis::{
    composed_em_variance, em_bias_curve, ou_benchmark, saturation_study, schedule_invariance_test, stability_report,
    stable_prior, unstable_prior, InvarianceOptions,
};
use tscm::exact_ou_transition;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    study: Study,
    /// Write the machine-readable record here instead of stdout.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Study {
    /// Gap-1.0 vs gap-0.5 scalar OU schedule-invariance test.
    Invariance {
        #[arg(long, default_value_t = 64)]
        substeps: usize,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Number of unit checkpoints.
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = 2000)]
        n_mc: usize,
        #[arg(long, default_value_t = 199)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// EM mean-square stability and one-step variance ratio.
    Stability {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        dt: f64,
    },
    /// Empirical one-step EM variance bias against the exact OU kernel.
    Bias {
        #[arg(long)]
        theta: f64,
        /// One or more step sizes.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        dt: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Clip saturation of the unstable and tightened priors per tier.
    Saturation {
        #[arg(long, default_value_t = 100)]
        batches: usize,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "1,8")]
        tiers: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn emit<T: Serialize>(record: &T, path: Option<&PathBuf>) -> Result<()> {
    let json = serde_json::to_string_pretty(record)?;
    match path {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn run(args: AnalyzeArgs) -> Result<()> {
    match args.study {
        Study::Invariance {
            substeps,
            theta,
            sigma,
            horizon,
            n_mc,
            permutations,
            seed,
        } => {
            let (spec, a, b, cps) = ou_benchmark(theta, sigma, horizon)?;
            let opts = InvarianceOptions {
                n_mc,
                permutations,
                alpha: 0.01,
                seed,
            };
            let r = schedule_invariance_test(&spec, substeps, &a, &b, &cps, &opts)?;
            let min_p = r.ks.iter().map(|e| e.p_value).fold(1.0, f64::min);
            println!("schedule invariance, scalar OU theta={theta} sigma={sigma}, gap 1.0 vs 0.5, s={substeps}");
            println!("  checkpoints          1..={horizon}, n={n_mc} per schedule");
            println!("  KS min p-value       {min_p:.3e} (level {:.3e})  {}", r.ks_level, verdict(r.ks_pass));
            println!(
                "  energy distance      {:.5} (null {:.0}% quantile {:.5}, p={:.3})  {}",
                r.energy.statistic,
                100.0 * (1.0 - r.alpha),
                r.energy.threshold,
                r.energy.p_value,
                verdict(r.energy_pass)
            );
            let exact = exact_ou_transition(theta, sigma, 1.0)?.variance;
            println!(
                "  cond. variance gap 1 {:.4} (gap-1.0 schedule, EM oracle {:.4})",
                r.conditional_variance[0][0],
                composed_em_variance(theta, sigma, 1.0, substeps)
            );
            println!(
                "                       {:.4} (gap-0.5 schedule, EM oracle {:.4}); exact {exact:.4}",
                r.conditional_variance[1][0],
                composed_em_variance(theta, sigma, 1.0, 2 * substeps)
            );
            println!("  verdict              {}", verdict(r.pass));
            emit(&r, args.record.as_ref())
        }
        Study::Stability { theta, dt } => {
            let r = stability_report(theta, dt)?;
            println!("EM stability, theta={theta} dt={dt}");
            println!("  theta*dt             {:.4}", r.theta_dt);
            println!("  amplification        {:.4}", r.amplification);
            println!("  mean-square stable   {}", if r.stable { "yes" } else { "no (unstable)" });
            println!("  variance ratio       {:.4}", r.bias_ratio);
            emit(&r, args.record.as_ref())
        }
        Study::Bias {
            theta,
            dt,
            sigma,
            n_mc,
            seed,
        } => {
            if dt.is_empty() {
                return Err(crate::config::UsageError("--dt needs at least one value".into()).into());
            }
            let pts = em_bias_curve(theta, sigma, &dt, n_mc, seed)?;
            println!("EM one-step variance bias, theta={theta} sigma={sigma}, n={n_mc}");
            println!("  {:>10} {:>14} {:>14}", "theta*dt", "relative bias", "closed form");
            for p in &pts {
                let closed = stability_report(theta, p.dt)?.bias_ratio - 1.0;
                println!("  {:>10.4} {:>14.5} {:>14.5}", p.theta_dt, p.relative_bias, closed);
            }
            emit(&pts, args.record.as_ref())
        }
        Study::Saturation { batches, tiers, seed } => {
            let rows = saturation_study(&unstable_prior(seed), &stable_prior(seed), &tiers, batches)?;
            println!("clip saturation over {batches} batches");
            println!(
                "  {:<9} {:>12} {:>6} {:>4} {:>10} {:>10} {:>10} {:>10}",
                "prior", "theta", "clip", "s", "batches", "samples", "diverged", "y_max"
            );
            for r in &rows {
                let th = r.theta_range.map_or("lognormal".to_string(), |[a, b]| format!("[{a}, {b}]"));
                println!(
                    "  {:<9} {:>12} {:>6} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.3e}",
                    r.label, th, r.clip, r.substeps, r.batch_fraction, r.sample_fraction, r.diverged_fraction, r.y_max
                );
            }
            emit(&rows, args.record.as_ref())
        }
    }
}
