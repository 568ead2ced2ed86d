//! Toy-scale spiking classifier: optional learnable convolution front-end,
//! temporal encoder, two spiking convolution stages, a spiking hidden layer,
//! and a readout that averages the head's input currents over time.
//!
//! The three ablation toggles map onto concrete mechanics here: `lt` makes
//! the encoder's threshold-decay logits gradient targets, `lc` prepends the
//! convolution front-end, and `sg` switches the spike backward rule between
//! the sigmoid surrogate and the exact (all-zero) step derivative.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::{batches, Batch, Dataset};
use crate::encoder::{encode_on_tape, temporal_shuffle, EncoderMode};
use crate::error::{Error, Result};
use crate::neuron::{lif_step, LifDynamics, LifState};
use crate::tape::{Tape, TensorId};
use crate::tensor::{logit, SpikeBackward, Tensor};

const CHECKPOINT_MAGIC: &[u8; 8] = b"SNNCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

/// The three toggles of the encoding ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    /// Learnable threshold decay (encoder logits trainable).
    pub lt: bool,
    /// Learnable convolution front-end present.
    pub lc: bool,
    /// Surrogate gradient instead of the exact zero step derivative.
    pub sg: bool,
}

impl AblationFlags {
    pub fn all() -> Self {
        Self {
            lt: true,
            lc: true,
            sg: true,
        }
    }
}

/// Standard fixed-decay LIF cells or the learnable per-step variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronVariant {
    Standard,
    Learnable,
}

impl fmt::Display for NeuronVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeuronVariant::Standard => write!(f, "standard"),
            NeuronVariant::Learnable => write!(f, "learnable"),
        }
    }
}

impl FromStr for NeuronVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(NeuronVariant::Standard),
            "learnable" => Ok(NeuronVariant::Learnable),
            other => Err(Error::Config(format!(
                "unknown neuron variant {other:?} (expected standard|learnable)"
            ))),
        }
    }
}

/// Complete architecture description; two identical configs build
/// bit-identical models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: EncoderMode,
    pub flags: AblationFlags,
    pub steps: usize,
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub front_channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub fc_width: usize,
    pub neuron_variant: NeuronVariant,
    pub class_count: usize,
    pub seed: u64,
    pub decay: f64,
    pub v_threshold: f64,
    pub initial_threshold: f64,
    pub alpha: f64,
}

impl ModelConfig {
    /// Defaults for a dataset shape: four steps, halving thresholds from 1,
    /// decay one half, sigmoid surrogate steepness four.
    pub fn new(
        mode: EncoderMode,
        flags: AblationFlags,
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        class_count: usize,
        seed: u64,
    ) -> Self {
        Self {
            mode,
            flags,
            steps: 4,
            in_channels,
            in_height,
            in_width,
            front_channels: 16,
            conv1_channels: 32,
            conv2_channels: 32,
            fc_width: 128,
            neuron_variant: NeuronVariant::Standard,
            class_count,
            seed,
            decay: 0.5,
            v_threshold: 1.0,
            initial_threshold: 1.0,
            alpha: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == EncoderMode::Direct && !self.flags.lc {
            return Err(Error::Config(
                "direct encoding replicates convolutional features; it requires the front-end (lc)"
                    .into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if !(self.v_threshold > 0.0) || !(self.initial_threshold > 0.0) {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("surrogate steepness must be positive".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let min_side = self.in_height.min(self.in_width);
        if min_side < 4 {
            return Err(Error::Config(
                "input must be at least 4x4 for two pooling stages".into(),
            ));
        }
        Ok(())
    }

    /// Spike backward rule induced by the `sg` toggle.
    pub fn backward_mode(&self) -> SpikeBackward {
        if self.flags.sg {
            SpikeBackward::Surrogate { alpha: self.alpha }
        } else {
            SpikeBackward::ExactZero
        }
    }

    /// Channels entering the encoder: front-end output or raw input.
    pub fn encoder_channels(&self) -> usize {
        if self.flags.lc {
            self.front_channels
        } else {
            self.in_channels
        }
    }

    fn pooled_flat(&self) -> usize {
        let h = self.in_height / 2 / 2;
        let w = self.in_width / 2 / 2;
        self.conv2_channels * h * w
    }

    /// Canonical `key=value` rendering; the checkpoint format embeds this
    /// text and stores its digest.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("mode", self.mode.to_string());
        push("lt", self.flags.lt.to_string());
        push("lc", self.flags.lc.to_string());
        push("sg", self.flags.sg.to_string());
        push("steps", self.steps.to_string());
        push("in_channels", self.in_channels.to_string());
        push("in_height", self.in_height.to_string());
        push("in_width", self.in_width.to_string());
        push("front_channels", self.front_channels.to_string());
        push("conv1_channels", self.conv1_channels.to_string());
        push("conv2_channels", self.conv2_channels.to_string());
        push("fc_width", self.fc_width.to_string());
        push("neuron", self.neuron_variant.to_string());
        push("class_count", self.class_count.to_string());
        push("seed", self.seed.to_string());
        push("decay", format!("{:?}", self.decay));
        push("v_threshold", format!("{:?}", self.v_threshold));
        push("initial_threshold", format!("{:?}", self.initial_threshold));
        push("alpha", format!("{:?}", self.alpha));
        out
    }

    /// Parse the canonical rendering back; every key is required and no
    /// unknown key is accepted.
    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(
            EncoderMode::Ttfs,
            AblationFlags::default(),
            1,
            28,
            28,
            10,
            0,
        );
        let mut seen = std::collections::BTreeSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line without '=': {line:?}")))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Format(format!("duplicate config key {key:?}")));
            }
            macro_rules! parse {
                ($value:expr) => {
                    $value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))?
                };
            }
            match key {
                "mode" => cfg.mode = EncoderMode::from_str(value)?,
                "lt" => cfg.flags.lt = parse!(value),
                "lc" => cfg.flags.lc = parse!(value),
                "sg" => cfg.flags.sg = parse!(value),
                "steps" => cfg.steps = parse!(value),
                "in_channels" => cfg.in_channels = parse!(value),
                "in_height" => cfg.in_height = parse!(value),
                "in_width" => cfg.in_width = parse!(value),
                "front_channels" => cfg.front_channels = parse!(value),
                "conv1_channels" => cfg.conv1_channels = parse!(value),
                "conv2_channels" => cfg.conv2_channels = parse!(value),
                "fc_width" => cfg.fc_width = parse!(value),
                "neuron" => cfg.neuron_variant = NeuronVariant::from_str(value)?,
                "class_count" => cfg.class_count = parse!(value),
                "seed" => cfg.seed = parse!(value),
                "decay" => cfg.decay = parse!(value),
                "v_threshold" => cfg.v_threshold = parse!(value),
                "initial_threshold" => cfg.initial_threshold = parse!(value),
                "alpha" => cfg.alpha = parse!(value),
                other => {
                    return Err(Error::Format(format!("unknown config key {other:?}")));
                }
            }
        }
        let expected = 19;
        if seen.len() != expected {
            return Err(Error::Format(format!(
                "config text has {} of {expected} required keys",
                seen.len()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_acc: f64,
}

/// A built classifier: config snapshot, named parameters, training state.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

/// Weight gain for layers feeding spiking cells; sparse binary inputs need
/// substantially larger fan-in scaling than real-valued activations to keep
/// membrane potentials near the firing threshold.
const SPIKING_GAIN: f64 = 8.0;
/// Weight gain for the convolution front-end feeding the encoder.
const FRONT_GAIN: f64 = 2.0;

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    // Uniform with bound gain * sqrt(3 / fan_in), std gain / sqrt(fan_in).
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("valid shape")
}

/// Instantiate parameters for a config, seeded deterministically.
pub fn build_model(config: ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: Vec<(String, Tensor)> = Vec::new();
    let mut push = |name: &str, tensor: Tensor, trainable: bool| {
        params.push((
            name.to_string(),
            if trainable { tensor.with_grad() } else { tensor },
        ));
    };

    if config.flags.lc {
        let shape = [config.front_channels, config.in_channels, 3, 3];
        let w = uniform_fan_in(&mut rng, &shape, config.in_channels * 9, FRONT_GAIN);
        push("front.weight", w, true);
        push("front.bias", Tensor::zeros([config.front_channels]), true);
    }
    if config.mode != EncoderMode::Direct {
        push(
            "encoder.logits",
            Tensor::zeros([config.steps, config.encoder_channels()]),
            config.flags.lt,
        );
    }

    let enc_c = config.encoder_channels();
    let c1 = [config.conv1_channels, enc_c, 3, 3];
    push(
        "conv1.weight",
        uniform_fan_in(&mut rng, &c1, enc_c * 9, SPIKING_GAIN),
        true,
    );
    push("conv1.bias", Tensor::zeros([config.conv1_channels]), true);
    let c2 = [config.conv2_channels, config.conv1_channels, 3, 3];
    push(
        "conv2.weight",
        uniform_fan_in(&mut rng, &c2, config.conv1_channels * 9, SPIKING_GAIN),
        true,
    );
    push("conv2.bias", Tensor::zeros([config.conv2_channels]), true);

    let flat = config.pooled_flat();
    let f1 = [config.fc_width, flat];
    push("fc1.weight", uniform_fan_in(&mut rng, &f1, flat, SPIKING_GAIN), true);
    push("fc1.bias", Tensor::zeros([config.fc_width]), true);
    let head = [config.class_count, config.fc_width];
    push(
        "head.weight",
        uniform_fan_in(&mut rng, &head, config.fc_width, 1.0),
        true,
    );
    push("head.bias", Tensor::zeros([config.class_count]), true);

    if config.neuron_variant == NeuronVariant::Learnable {
        for (name, channels) in [
            ("lif1", config.conv1_channels),
            ("lif2", config.conv2_channels),
            ("lif3", config.fc_width),
        ] {
            push(
                &format!("{name}.decay_logits"),
                Tensor::full([config.steps, channels], logit(config.decay)),
                true,
            );
            push(
                &format!("{name}.input_gains"),
                Tensor::full([config.steps, channels], 1.0 - config.decay),
                true,
            );
        }
    }

    Ok(Model {
        config,
        params,
        epoch: 0,
        history: Vec::new(),
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }
}

/// Tape-side view of a model's parameters.
struct GraphLeaves {
    ids: Vec<TensorId>,
}

impl GraphLeaves {
    fn register(tape: &mut Tape, model: &Model) -> Self {
        let ids = model.params.iter().map(|(_, t)| tape.leaf(t)).collect();
        Self { ids }
    }

    fn get(&self, model: &Model, name: &str) -> TensorId {
        self.ids[model.param_index(name)]
    }
}

/// Front-end features: the learnable convolution when present, else the
/// raw pixels.
fn front_features(
    tape: &mut Tape,
    model: &Model,
    leaves: &GraphLeaves,
    images: TensorId,
) -> Result<TensorId> {
    if !model.config.flags.lc {
        return Ok(images);
    }
    let w = leaves.get(model, "front.weight");
    let b = leaves.get(model, "front.bias");
    let conv = tape.conv2d(images, w, 1, 1)?;
    tape.add_channel(conv, b)
}

/// Per-step encoder output frames for the configured mode.
fn encode_frames(
    tape: &mut Tape,
    model: &Model,
    leaves: &GraphLeaves,
    features: TensorId,
    bw: SpikeBackward,
) -> Result<Vec<TensorId>> {
    let cfg = &model.config;
    if cfg.mode == EncoderMode::Direct {
        return Ok(vec![features; cfg.steps]);
    }
    let logits = leaves.get(model, "encoder.logits");
    let train = encode_on_tape(
        tape,
        features,
        logits,
        cfg.mode,
        cfg.initial_threshold,
        cfg.steps,
        bw,
    )?;
    (0..cfg.steps).map(|t| tape.step_slice(train, t)).collect()
}

fn lif_dynamics(model: &Model, leaves: &GraphLeaves, layer: &str) -> LifDynamics {
    match model.config.neuron_variant {
        NeuronVariant::Standard => LifDynamics::Standard {
            decay: model.config.decay,
        },
        NeuronVariant::Learnable => LifDynamics::Learnable {
            decay_logits: leaves.get(model, &format!("{layer}.decay_logits")),
            input_gains: leaves.get(model, &format!("{layer}.input_gains")),
        },
    }
}

/// Spiking body over the per-step frames; the readout averages the head's
/// input currents across time.
fn body_logits(
    tape: &mut Tape,
    model: &Model,
    leaves: &GraphLeaves,
    frames: &[TensorId],
    bw: SpikeBackward,
) -> Result<TensorId> {
    let cfg = &model.config;
    let batch = tape.shape(frames[0])[0];
    let vth = cfg.v_threshold;

    let d1 = lif_dynamics(model, leaves, "lif1");
    let d2 = lif_dynamics(model, leaves, "lif2");
    let d3 = lif_dynamics(model, leaves, "lif3");

    let mut lif1: Option<LifState> = None;
    let mut lif2: Option<LifState> = None;
    let mut lif3: Option<LifState> = None;
    let mut logit_sum: Option<TensorId> = None;

    for (t, &frame) in frames.iter().enumerate() {
        let w1 = leaves.get(model, "conv1.weight");
        let b1 = leaves.get(model, "conv1.bias");
        let c1 = tape.conv2d(frame, w1, 1, 1)?;
        let c1 = tape.add_channel(c1, b1)?;
        let state = match lif1 {
            Some(s) => s,
            None => LifState::rest(tape, tape.shape(c1).to_vec().as_slice()),
        };
        let (s1, next1) = lif_step(tape, state, c1, d1, vth, t, bw)?;
        lif1 = Some(next1);
        let p1 = tape.avg_pool2(s1)?;

        let w2 = leaves.get(model, "conv2.weight");
        let b2 = leaves.get(model, "conv2.bias");
        let c2 = tape.conv2d(p1, w2, 1, 1)?;
        let c2 = tape.add_channel(c2, b2)?;
        let state = match lif2 {
            Some(s) => s,
            None => LifState::rest(tape, tape.shape(c2).to_vec().as_slice()),
        };
        let (s2, next2) = lif_step(tape, state, c2, d2, vth, t, bw)?;
        lif2 = Some(next2);
        let p2 = tape.avg_pool2(s2)?;

        let flat = tape.reshape(p2, [batch, cfg.pooled_flat()])?;
        let wf = leaves.get(model, "fc1.weight");
        let bf = leaves.get(model, "fc1.bias");
        let h = tape.linear(flat, wf, bf)?;
        let state = match lif3 {
            Some(s) => s,
            None => LifState::rest(tape, tape.shape(h).to_vec().as_slice()),
        };
        let (s3, next3) = lif_step(tape, state, h, d3, vth, t, bw)?;
        lif3 = Some(next3);

        let wh = leaves.get(model, "head.weight");
        let bh = leaves.get(model, "head.bias");
        let step_logits = tape.linear(s3, wh, bh)?;
        logit_sum = Some(match logit_sum {
            None => step_logits,
            Some(acc) => tape.add(acc, step_logits)?,
        });
    }

    Ok(tape.scale(logit_sum.expect("steps >= 1"), 1.0 / cfg.steps as f64))
}

fn check_input_shape(model: &Model, images: &Tensor) -> Result<()> {
    let cfg = &model.config;
    let s = images.shape();
    if s.len() != 4 || s[1] != cfg.in_channels || s[2] != cfg.in_height || s[3] != cfg.in_width {
        return Err(Error::Dimension(format!(
            "images {s:?} do not match configured input {}x{}x{}",
            cfg.in_channels, cfg.in_height, cfg.in_width
        )));
    }
    Ok(())
}

/// Full forward pass; returns the class logits.
pub fn forward(model: &Model, images: &Tensor, bw: SpikeBackward) -> Result<Tensor> {
    check_input_shape(model, images)?;
    let mut tape = Tape::new();
    let input = {
        let plain = Tensor::new(images.shape().to_vec(), images.values().to_vec())?;
        tape.leaf(&plain)
    };
    let leaves = GraphLeaves::register(&mut tape, model);
    let features = front_features(&mut tape, model, &leaves, input)?;
    let frames = encode_frames(&mut tape, model, &leaves, features, bw)?;
    let logits = body_logits(&mut tape, model, &leaves, &frames, bw)?;
    Ok(tape.tensor(logits))
}

/// Encoder output summed over time per neuron: the spike-count diagnostic
/// readout. Identity under any time permutation of the train.
pub fn encoder_spike_counts(model: &Model, images: &Tensor) -> Result<Vec<f64>> {
    check_input_shape(model, images)?;
    let mut tape = Tape::new();
    let input = tape.leaf(images);
    let leaves = GraphLeaves::register(&mut tape, model);
    let features = front_features(&mut tape, model, &leaves, input)?;
    let frames = encode_frames(&mut tape, model, &leaves, features, SpikeBackward::ExactZero)?;
    let frame_len = tape.values(frames[0]).len();
    let mut counts = vec![0.0; frame_len];
    for &f in &frames {
        for (acc, &v) in counts.iter_mut().zip(tape.values(f)) {
            *acc += v;
        }
    }
    Ok(counts)
}

/// Accuracy of logit rows against labels; ties resolve to the lowest index.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.values()[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

const EVAL_BATCH: usize = 32;

/// Mean top-1 accuracy over a dataset.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<f64> {
    let bw = model.config.backward_mode();
    let mut hits = 0.0;
    for batch in batches(ds, EVAL_BATCH, None)? {
        let logits = forward(model, &batch.images, bw)?;
        hits += accuracy_from_logits(&logits, &batch.labels) * batch.labels.len() as f64;
    }
    Ok(hits / ds.len() as f64)
}

/// The stacked `[steps, batch, ...]` encoder output for a batch of images,
/// values only.
pub fn encoder_train(model: &Model, images: &Tensor, bw: SpikeBackward) -> Result<Tensor> {
    check_input_shape(model, images)?;
    let mut tape = Tape::new();
    let input = tape.leaf(images);
    let leaves = GraphLeaves::register(&mut tape, model);
    let features = front_features(&mut tape, model, &leaves, input)?;
    let frames = encode_frames(&mut tape, model, &leaves, features, bw)?;
    let stacked = tape.stack(&frames)?;
    Ok(tape.tensor(stacked))
}

/// Accuracy with the encoder output temporally shuffled (one seeded
/// permutation applied to every batch) before entering the body.
pub fn evaluate_shuffled(model: &Model, ds: &Dataset, shuffle_seed: u64) -> Result<f64> {
    let bw = model.config.backward_mode();
    let mut hits = 0.0;
    for batch in batches(ds, EVAL_BATCH, None)? {
        let train = encoder_train(model, &batch.images, bw)?;
        let shuffled = temporal_shuffle(&train, shuffle_seed);

        // Body pass over the shuffled frames.
        let mut tape = Tape::new();
        let leaves = GraphLeaves::register(&mut tape, model);
        let stacked = tape.leaf(&shuffled);
        let frames: Vec<TensorId> = (0..model.config.steps)
            .map(|t| tape.step_slice(stacked, t))
            .collect::<Result<_>>()?;
        let logits = body_logits(&mut tape, model, &leaves, &frames, bw)?;
        let logits = tape.tensor(logits);
        hits += accuracy_from_logits(&logits, &batch.labels) * batch.labels.len() as f64;
    }
    Ok(hits / ds.len() as f64)
}

/// Knobs of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Seed for epoch shuffling, independent of the model seed.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

fn batch_loss(model: &Model, batch: &Batch, bw: SpikeBackward) -> Result<(Tape, Vec<TensorId>, f64)> {
    let mut tape = Tape::new();
    let input = {
        let plain = Tensor::new(batch.images.shape().to_vec(), batch.images.values().to_vec())?;
        tape.leaf(&plain)
    };
    let leaves = GraphLeaves::register(&mut tape, model);
    let features = front_features(&mut tape, model, &leaves, input)?;
    let frames = encode_frames(&mut tape, model, &leaves, features, bw)?;
    let logits = body_logits(&mut tape, model, &leaves, &frames, bw)?;
    let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
    let loss_value = tape.tensor(loss).item()?;
    tape.backward(loss)?;
    Ok((tape, leaves.ids, loss_value))
}

/// Stochastic gradient descent with momentum under the configured spike
/// backward rule. Deterministic given config, data, and options.
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    options: TrainOptions,
) -> Result<Vec<EpochMetrics>> {
    if train_ds.class_count() != model.config.class_count
        || eval_ds.class_count() != model.config.class_count
    {
        return Err(Error::Config(format!(
            "model expects {} classes, datasets provide {}/{}",
            model.config.class_count,
            train_ds.class_count(),
            eval_ds.class_count()
        )));
    }
    let bw = model.config.backward_mode();
    let mut velocity: Vec<Vec<f64>> = model
        .params
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();

    let mut run_history = Vec::with_capacity(options.epochs);
    for e in 0..options.epochs {
        let epoch_seed = options.seed.wrapping_add(e as u64);
        let mut loss_sum = 0.0;
        let mut batch_count = 0usize;
        for (bi, batch) in batches(train_ds, options.batch_size, Some(epoch_seed))?
            .iter()
            .enumerate()
        {
            let (tape, ids, loss_value) = batch_loss(model, batch, bw)?;
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss_value} at epoch {} batch {bi}",
                    e + 1
                )));
            }
            loss_sum += loss_value;
            batch_count += 1;
            for (pi, (_, param)) in model.params.iter_mut().enumerate() {
                if !param.requires_grad() {
                    continue;
                }
                let grad = tape.grad(ids[pi]).expect("trainable leaf has grad");
                param.set_grad(Some(grad.to_vec()));
                let vel = &mut velocity[pi];
                let values = param.values_mut();
                for ((w, v), &g) in values.iter_mut().zip(vel.iter_mut()).zip(grad) {
                    *v = options.momentum * *v + g;
                    *w -= options.learning_rate * *v;
                }
            }
        }
        let eval_acc = evaluate(model, eval_ds)?;
        let metrics = EpochMetrics {
            epoch: model.epoch + 1,
            train_loss: loss_sum / batch_count.max(1) as f64,
            eval_acc,
        };
        model.epoch += 1;
        model.history.push(metrics);
        run_history.push(metrics);
    }
    Ok(run_history)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Format("checkpoint: truncated file".into()))?;
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Serialize a model: versioned header, config snapshot with digest, epoch,
/// metric history, then named little-endian f64 parameter blocks.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let config_text = model.config.canonical_text();
    put_u32(&mut out, config_text.len() as u32);
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&Sha256::digest(config_text.as_bytes()));
    put_u64(&mut out, model.epoch as u64);
    put_u32(&mut out, model.history.len() as u32);
    for m in &model.history {
        put_u64(&mut out, m.epoch as u64);
        put_f64(&mut out, m.train_loss);
        put_f64(&mut out, m.eval_acc);
    }
    put_u32(&mut out, model.params.len() as u32);
    for (name, tensor) in &model.params {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, tensor.numel() as u64);
        for &v in tensor.values() {
            put_f64(&mut out, v);
        }
    }
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&out)?;
    Ok(())
}

/// Rebuild a model from a checkpoint file, bit-exactly.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint: unsupported version {version}"
        )));
    }
    let config_len = r.u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| Error::Format("checkpoint: config is not utf-8".into()))?
        .to_string();
    let stored_digest = r.take(32)?.to_vec();
    let digest = Sha256::digest(config_text.as_bytes());
    if digest.as_slice() != stored_digest.as_slice() {
        return Err(Error::Format(
            "checkpoint: config digest mismatch (corrupt or tampered file)".into(),
        ));
    }
    let config = ModelConfig::from_canonical_text(&config_text)?;
    let mut model = build_model(config)?;
    model.epoch = r.u64()? as usize;
    let history_len = r.u32()? as usize;
    for _ in 0..history_len {
        let epoch = r.u64()? as usize;
        let train_loss = r.f64()?;
        let eval_acc = r.f64()?;
        model.history.push(EpochMetrics {
            epoch,
            train_loss,
            eval_acc,
        });
    }
    let param_count = r.u32()? as usize;
    if param_count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint: {param_count} parameter blocks, model defines {}",
            model.params.len()
        )));
    }
    for i in 0..param_count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("checkpoint: parameter name is not utf-8".into()))?;
        if name != model.params[i].0 {
            return Err(Error::Format(format!(
                "checkpoint: parameter {i} named {name:?}, expected {:?}",
                model.params[i].0
            )));
        }
        let numel = r.u64()? as usize;
        if numel != model.params[i].1.numel() {
            return Err(Error::Format(format!(
                "checkpoint: parameter {name} holds {numel} values, expected {}",
                model.params[i].1.numel()
            )));
        }
        for slot in model.params[i].1.values_mut() {
            *slot = r.f64()?;
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Format("checkpoint: trailing bytes".into()));
    }
    Ok(model)
}


#[cfg(test)]
mod probes {
    use super::*;
    use crate::data::synth_blobs;

    /// Dev-only activity probe; run with
    /// `cargo test -p snncodec-core probe_layer_activity -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn probe_layer_activity() {
        for mode in [EncoderMode::Phase, EncoderMode::Ttfs, EncoderMode::Rate] {
            let mut cfg = ModelConfig::new(mode, AblationFlags::all(), 1, 12, 12, 4, 9);
            cfg.front_channels = 8;
            cfg.conv1_channels = 8;
            cfg.conv2_channels = 8;
            cfg.fc_width = 32;
            let model = build_model(cfg).unwrap();
            let ds = synth_blobs(16, 4, 12, 5).unwrap();
            let bw = model.config().backward_mode();

            let mut tape = Tape::new();
            let input = tape.leaf(ds.images());
            let leaves = GraphLeaves::register(&mut tape, &model);
            let features = front_features(&mut tape, &model, &leaves, input).unwrap();
            let fvals = tape.values(features);
            let fmean = fvals.iter().sum::<f64>() / fvals.len() as f64;
            let fstd = (fvals.iter().map(|v| (v - fmean).powi(2)).sum::<f64>()
                / fvals.len() as f64)
                .sqrt();
            let frames = encode_frames(&mut tape, &model, &leaves, features, bw).unwrap();
            let enc_rate: f64 = frames
                .iter()
                .map(|&f| {
                    let v = tape.values(f);
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .sum::<f64>()
                / frames.len() as f64;

            // Re-run the body manually to record spike rates.
            let cfg = model.config();
            let vth = cfg.v_threshold;
            let d = LifDynamics::Standard { decay: cfg.decay };
            let mut states: [Option<LifState>; 3] = [None, None, None];
            let mut rates = [0.0f64; 3];
            for &frame in &frames {
                let w1 = leaves.get(&model, "conv1.weight");
                let b1 = leaves.get(&model, "conv1.bias");
                let c1 = tape.conv2d(frame, w1, 1, 1).unwrap();
                let c1 = tape.add_channel(c1, b1).unwrap();
                let shape1 = tape.shape(c1).to_vec();
                let st = states[0].unwrap_or_else(|| LifState::rest(&mut tape, &shape1));
                let (s1, n1) = lif_step(&mut tape, st, c1, d, vth, 0, bw).unwrap();
                states[0] = Some(n1);
                rates[0] += tape.values(s1).iter().sum::<f64>() / tape.values(s1).len() as f64;
                let p1 = tape.avg_pool2(s1).unwrap();

                let w2 = leaves.get(&model, "conv2.weight");
                let b2 = leaves.get(&model, "conv2.bias");
                let c2 = tape.conv2d(p1, w2, 1, 1).unwrap();
                let c2 = tape.add_channel(c2, b2).unwrap();
                let shape2 = tape.shape(c2).to_vec();
                let st = states[1].unwrap_or_else(|| LifState::rest(&mut tape, &shape2));
                let (s2, n2) = lif_step(&mut tape, st, c2, d, vth, 0, bw).unwrap();
                states[1] = Some(n2);
                rates[1] += tape.values(s2).iter().sum::<f64>() / tape.values(s2).len() as f64;
                let p2 = tape.avg_pool2(s2).unwrap();

                let flat = tape.reshape(p2, [16, cfg.pooled_flat()]).unwrap();
                let wf = leaves.get(&model, "fc1.weight");
                let bf = leaves.get(&model, "fc1.bias");
                let h = tape.linear(flat, wf, bf).unwrap();
                let shape3 = tape.shape(h).to_vec();
                let st = states[2].unwrap_or_else(|| LifState::rest(&mut tape, &shape3));
                let (s3, n3) = lif_step(&mut tape, st, h, d, vth, 0, bw).unwrap();
                states[2] = Some(n3);
                rates[2] += tape.values(s3).iter().sum::<f64>() / tape.values(s3).len() as f64;
            }
            for r in &mut rates {
                *r /= frames.len() as f64;
            }
            println!(
                "{mode}: front mean {fmean:.3} std {fstd:.3} | encoder rate {enc_rate:.3} | body rates {:.3} {:.3} {:.3}",
                rates[0], rates[1], rates[2]
            );
        }
    }
}

#[cfg(test)]
mod grad_probe {
    use super::*;
    use crate::data::synth_blobs;
    use crate::tape::eval_scalar;

    #[test]
    #[ignore]
    fn probe_miniature_grad_errors() {
        let mut cfg = ModelConfig::new(EncoderMode::Phase, AblationFlags::all(), 1, 4, 4, 3, 13);
        cfg.steps = 2;
        cfg.front_channels = 2;
        cfg.conv1_channels = 3;
        cfg.conv2_channels = 3;
        cfg.fc_width = 6;
        cfg.neuron_variant = NeuronVariant::Learnable;
        let model = build_model(cfg).unwrap();
        let images = synth_blobs(3, 3, 4, 8).unwrap();
        let labels = images.labels().to_vec();
        let pixels = Tensor::new(
            images.images().shape().to_vec(),
            images.images().values().to_vec(),
        )
        .unwrap();
        let params: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
        let names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
        let shadow = model.clone();
        let bw = SpikeBackward::Relaxed { alpha: 4.0 };
        let f = move |tape: &mut Tape, ids: &[TensorId]| -> crate::error::Result<TensorId> {
            let input = tape.leaf(&pixels);
            let leaves = GraphLeaves { ids: ids.to_vec() };
            let features = front_features(tape, &shadow, &leaves, input)?;
            let frames = encode_frames(tape, &shadow, &leaves, features, bw)?;
            let logits = body_logits(tape, &shadow, &leaves, &frames, bw)?;
            tape.softmax_cross_entropy(logits, &labels)
        };

        let mut tape = Tape::new();
        let ids: Vec<TensorId> = params.iter().map(|p| tape.leaf(&p.clone().with_grad())).collect();
        let loss = f(&mut tape, &ids).unwrap();
        tape.backward(loss).unwrap();
        let eps = 1e-4;
        let mut probe = params.clone();
        for (pi, name) in names.iter().enumerate() {
            let mut worst = 0.0f64;
            let mut worst_pair = (0.0, 0.0);
            for ci in 0..params[pi].numel() {
                let orig = params[pi].values()[ci];
                probe[pi].values_mut()[ci] = orig + eps;
                let plus = eval_scalar(&f, &probe).unwrap();
                probe[pi].values_mut()[ci] = orig - eps;
                let minus = eval_scalar(&f, &probe).unwrap();
                probe[pi].values_mut()[ci] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let a = tape.grad(ids[pi]).unwrap()[ci];
                let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
                if rel > worst {
                    worst = rel;
                    worst_pair = (a, fd);
                }
            }
            println!("{name}: worst rel {worst:.2e} (analytic {:+.3e}, fd {:+.3e})", worst_pair.0, worst_pair.1);
        }
    }
}
