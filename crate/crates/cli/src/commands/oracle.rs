//! `oracle`: exact constant-input firing-pattern table, optionally
//! cross-validated against direct simulation.

use clap::Args;
use snncodec_core::oracle::{boundaries_csv, boundaries_table, enumerate_boundaries, verify_boundaries};
use snncodec_core::Result;

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Time steps.
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    /// Membrane decay constant in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    /// Firing threshold.
    #[arg(long, default_value_t = 1.0)]
    pub vth: f64,
    /// Output layout.
    #[arg(long, value_parser = ["table", "csv"], default_value = "table")]
    pub format: String,
    /// Additionally sample this many inputs and check simulation agreement.
    #[arg(long)]
    pub verify: Option<usize>,
    /// Sampling seed for --verify.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &OracleArgs) -> Result<i32> {
    let boundaries = enumerate_boundaries(args.t, args.decay, args.vth)?;
    let rendered = match args.format.as_str() {
        "csv" => boundaries_csv(&boundaries),
        _ => boundaries_table(&boundaries),
    };
    print!("{rendered}");

    if let Some(samples) = args.verify {
        let report = verify_boundaries(args.t, args.decay, args.vth, samples, args.seed)?;
        println!(
            "verify: samples={} agreements={} disagreements={}",
            report.samples,
            report.agreements,
            report.disagreements.len()
        );
        if !report.is_clean() {
            for d in &report.disagreements {
                eprintln!(
                    "disagreement at X={}: predicted {} simulated {}",
                    d.input, d.predicted, d.simulated
                );
            }
            return Ok(1);
        }
    }
    Ok(0)
}
