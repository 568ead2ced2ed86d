//! `shuffle-eval`: accuracy before and after temporally shuffling the spike
//! train at the encoder output.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use snncodec_core::network::{evaluate, evaluate_shuffled, load_checkpoint};
use snncodec_core::{Error, Result};

use crate::config::parse_dataset_spec;

#[derive(Debug, Args)]
pub struct ShuffleArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset spec, e.g. `synth-digits,n=500,seed=7`.
    #[arg(long)]
    pub dataset: String,
    /// Number of shuffle seeds (0..n).
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &ShuffleArgs) -> Result<i32> {
    if args.seeds == 0 {
        return Err(Error::Config("need at least one shuffle seed".into()));
    }
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = parse_dataset_spec(&args.dataset)?;
    if ds.class_count() != model.config().class_count {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes, dataset provides {}",
            model.config().class_count,
            ds.class_count()
        )));
    }
    let before = evaluate(&model, &ds)?;
    let mut out = String::from("shuffle_seed,acc_before,acc_after\n");
    for seed in 0..args.seeds as u64 {
        let after = evaluate_shuffled(&model, &ds, seed)?;
        out.push_str(&format!("{seed},{before:.4},{after:.4}\n"));
        eprintln!("shuffle seed {seed}: {before:.4} -> {after:.4}");
    }
    match &args.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(0)
}
