//! `eval`: accuracy of a checkpoint on a dataset.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use snncodec_core::network::{evaluate, load_checkpoint};
use snncodec_core::{Error, Result};

use crate::config::parse_dataset_spec;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset spec, e.g. `synth-digits,n=500,seed=7`.
    #[arg(long)]
    pub dataset: String,
}

pub fn run(args: &EvalArgs) -> Result<i32> {
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = parse_dataset_spec(&args.dataset)?;
    if ds.class_count() != model.config().class_count {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes, dataset provides {}",
            model.config().class_count,
            ds.class_count()
        )));
    }
    let accuracy = evaluate(&model, &ds)?;
    println!("{}", json!({ "accuracy": accuracy }));
    Ok(0)
}
