//! `train`: one full training run with JSONL metrics and a checkpoint.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use snncodec_core::network::{build_model, save_checkpoint, train};
use snncodec_core::Result;

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (key=value lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for metrics.jsonl and model.ckpt.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let cfg = RunConfig::from_file(&args.config)?;
    let (train_ds, eval_ds) = cfg.load_datasets()?;
    let mut model = build_model(cfg.model_config(&train_ds))?;

    fs::create_dir_all(&args.out_dir)?;
    let metrics_path = args.out_dir.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)?;
    writeln!(metrics, "{}", json!({ "config": cfg.resolved() }))?;

    let history = train(&mut model, &train_ds, &eval_ds, cfg.train_options())?;
    for m in &history {
        writeln!(
            metrics,
            "{}",
            json!({ "epoch": m.epoch, "train_loss": m.train_loss, "eval_acc": m.eval_acc })
        )?;
        eprintln!(
            "epoch {}: train_loss {:.4} eval_acc {:.4}",
            m.epoch, m.train_loss, m.eval_acc
        );
    }
    let final_acc = history.last().map(|m| m.eval_acc).unwrap_or(0.0);
    writeln!(metrics, "{}", json!({ "final_acc": final_acc }))?;

    let ckpt_path = args.out_dir.join("model.ckpt");
    save_checkpoint(&model, &ckpt_path)?;

    println!("{}", json!({ "final_acc": final_acc, "checkpoint": ckpt_path }));
    Ok(0)
}
