//! `ablate`: cumulative toggle ladder (e.g. base / +LT / +LT+LC / +LT+LC+SG)
//! trained across seeds, reported as a CSV of per-cell mean accuracies.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use snncodec_core::data::Dataset;
use snncodec_core::network::{build_model, evaluate, train, AblationFlags};
use snncodec_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run configuration (key=value lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Cumulative ladder of toggles.
    #[arg(long, default_value = "lt,lc,sg")]
    pub grid: String,
    /// Seeds (comma list); defaults to the config's `seeds`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Rerun the ladder with this front-end width as an extra CSV block.
    #[arg(long)]
    pub front_channels: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One ladder row aggregated over seeds.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub method: String,
    pub flags: AblationFlags,
    pub front_channels: usize,
    pub accuracies: Vec<f64>,
}

impl GridRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.accuracies.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The cumulative flag ladder named after the encoder mode, base row first.
pub fn ladder(mode_label: &str, grid: &[&str]) -> Result<Vec<(String, AblationFlags)>> {
    let mut rows = vec![(mode_label.to_uppercase(), AblationFlags::default())];
    let mut flags = AblationFlags::default();
    let mut label = mode_label.to_uppercase();
    for entry in grid {
        match *entry {
            "lt" if !flags.lt => flags.lt = true,
            "lc" if !flags.lc => flags.lc = true,
            "sg" if !flags.sg => flags.sg = true,
            "lt" | "lc" | "sg" => {
                return Err(Error::Config(format!("duplicate grid entry {entry:?}")))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown grid entry {other:?} (expected lt|lc|sg)"
                )))
            }
        }
        label = format!("{label}+{}", entry.to_uppercase());
        rows.push((label.clone(), flags));
    }
    Ok(rows)
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("SNNCODEC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    cap.min(jobs).max(1)
}

/// Train and evaluate every (ladder row, seed) cell; rows keep ladder order,
/// accuracies keep seed order. Cells run on parallel workers, each with its
/// own model and RNG stream.
pub fn run_grid(
    cfg: &RunConfig,
    rows: &[(String, AblationFlags)],
    seeds: &[u64],
    front_channels: usize,
    train_ds: &Dataset,
    test_ds: &Dataset,
) -> Result<Vec<GridRow>> {
    let jobs: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<f64>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next_job = AtomicUsize::new(0);
    let workers = worker_count(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next_job.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() {
                    break;
                }
                let (ri, si) = jobs[j];
                let (label, flags) = &rows[ri];
                let seed = seeds[si];
                let outcome = (|| {
                    let mut run_cfg = cfg.clone();
                    run_cfg.flags = *flags;
                    run_cfg.front_channels = front_channels;
                    run_cfg.seed = seed;
                    let mut model = build_model(run_cfg.model_config(train_ds))?;
                    train(&mut model, train_ds, test_ds, run_cfg.train_options())?;
                    evaluate(&model, test_ds)
                })();
                if let Ok(acc) = &outcome {
                    eprintln!("cell {label} seed {seed} front {front_channels}: acc {acc:.4}");
                }
                results.lock().expect("no poisoned lock")[j] = Some(outcome);
            });
        }
    });

    let collected = results.into_inner().expect("no poisoned lock");
    let mut out = Vec::with_capacity(rows.len());
    for (ri, (label, flags)) in rows.iter().enumerate() {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for si in 0..seeds.len() {
            let slot = collected[ri * seeds.len() + si]
                .as_ref()
                .expect("every job ran");
            match slot {
                Ok(acc) => accuracies.push(*acc),
                Err(e) => return Err(Error::Train(format!("cell {label} seed {}: {e}", seeds[si]))),
            }
        }
        out.push(GridRow {
            method: label.clone(),
            flags: *flags,
            front_channels,
            accuracies,
        });
    }
    Ok(out)
}

pub fn rows_to_csv(rows: &[GridRow], seeds: &[u64], include_header: bool) -> String {
    let mut out = String::new();
    if include_header {
        out.push_str("method,lt,lc,sg,front_channels,seeds,acc_mean,acc_min,acc_max\n");
    }
    let seed_list = seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(";");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4}\n",
            row.method,
            row.flags.lt,
            row.flags.lc,
            row.flags.sg,
            row.front_channels,
            seed_list,
            row.mean(),
            row.min(),
            row.max()
        ));
    }
    out
}

pub fn run(args: &AblateArgs) -> Result<i32> {
    let cfg = RunConfig::from_file(&args.config)?;
    let grid: Vec<&str> = args
        .grid
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let seeds: Vec<u64> = match &args.seeds {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => cfg.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let rows = ladder(&cfg.mode.to_string(), &grid)?;
    let (train_ds, test_ds) = cfg.load_datasets()?;

    let main_rows = run_grid(&cfg, &rows, &seeds, cfg.front_channels, &train_ds, &test_ds)?;
    let mut out = rows_to_csv(&main_rows, &seeds, true);
    if let Some(fc) = args.front_channels {
        let extra = run_grid(&cfg, &rows, &seeds, fc, &train_ds, &test_ds)?;
        out.push_str(&format!("# front_channels={fc}\n"));
        out.push_str(&rows_to_csv(&extra, &seeds, false));
    }

    match &args.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(0)
}
