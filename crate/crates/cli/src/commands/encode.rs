//! `encode`: dump the spike train of one feature tensor as CSV.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use snncodec_core::encoder::{
    encode, encode_rate_bernoulli, encode_with_schedule, write_spike_csv, EncoderMode,
    EncoderParams,
};
use snncodec_core::tensor::SpikeBackward;
use snncodec_core::{Error, Result, Tensor};

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Encoding mode: direct|rate|phase|ttfs.
    #[arg(long)]
    pub mode: String,
    /// Input CSV with a `value` header and one number per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Time steps.
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    /// Initial threshold for the frozen halving schedule.
    #[arg(long, default_value_t = 1.0)]
    pub theta0: f64,
    /// Explicit per-step thresholds (comma list), overriding the schedule.
    #[arg(long)]
    pub thetas: Option<String>,
    /// Input shape `CxHxW`; defaults to one channel per value.
    #[arg(long)]
    pub shape: Option<String>,
    /// Seeded Bernoulli sampling instead of deterministic thresholding
    /// (rate mode only, comparison tool).
    #[arg(long)]
    pub bernoulli_seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_values(path: &PathBuf) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read input {path:?}: {e}")))?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("value") => {}
        other => {
            return Err(Error::Format(format!(
                "input must start with a `value` header, found {other:?}"
            )))
        }
    }
    lines
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad input value {l:?}")))
        })
        .collect()
}

fn parse_shape(spec: &str, numel: usize) -> Result<Vec<usize>> {
    let dims = spec
        .split('x')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad shape component {d:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    if dims.len() != 3 {
        return Err(Error::Config(format!(
            "shape must be CxHxW, got {spec:?}"
        )));
    }
    if dims.iter().product::<usize>() != numel {
        return Err(Error::Config(format!(
            "shape {spec} holds {} values, input has {numel}",
            dims.iter().product::<usize>()
        )));
    }
    Ok(dims)
}

pub fn run(args: &EncodeArgs) -> Result<i32> {
    let mode: EncoderMode = args.mode.parse()?;
    let values = read_values(&args.input)?;
    let shape = match &args.shape {
        Some(s) => parse_shape(s, values.len())?,
        None => vec![values.len(), 1, 1],
    };
    let input = Tensor::new(shape, values)?;
    let channels = input.shape()[input.channel_axis()];

    let train = if let Some(seed) = args.bernoulli_seed {
        if mode != EncoderMode::Rate {
            return Err(Error::Config(
                "--bernoulli-seed applies to rate mode only".into(),
            ));
        }
        encode_rate_bernoulli(&input, args.t, seed)?
    } else if let Some(thetas) = &args.thetas {
        let schedule = thetas
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad threshold {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if schedule.len() != args.t {
            return Err(Error::Config(format!(
                "--thetas lists {} values for t={}",
                schedule.len(),
                args.t
            )));
        }
        encode_with_schedule(&input, &schedule, mode, SpikeBackward::ExactZero)?
    } else {
        let mut params = EncoderParams::frozen(args.t, channels);
        params.initial_threshold = args.theta0;
        encode(&input, &params, mode, SpikeBackward::ExactZero)?
    };

    let kind = if mode == EncoderMode::Direct {
        "real"
    } else {
        "binary"
    };
    let mut out = format!("# mode={mode} values={kind}\n");
    out.push_str(&write_spike_csv(&train)?);

    match &args.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(0)
}
