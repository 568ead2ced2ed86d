//! Flat `key=value` run configuration and dataset assembly.
//!
//! Every key has a default; unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use snncodec_core::data::{
    load_cifar10, load_mnist, synth_blobs, synth_digits, Dataset,
};
use snncodec_core::encoder::EncoderMode;
use snncodec_core::network::{AblationFlags, ModelConfig, NeuronVariant, TrainOptions};
use snncodec_core::{Error, Result};

/// Which corpus a run trains and evaluates on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    SynthDigits,
    SynthBlobs,
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth-digits" => Ok(DatasetKind::SynthDigits),
            "synth-blobs" => Ok(DatasetKind::SynthBlobs),
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?} (expected synth-digits|synth-blobs|mnist|cifar10)"
            ))),
        }
    }
}

impl DatasetKind {
    fn name(&self) -> &'static str {
        match self {
            DatasetKind::SynthDigits => "synth-digits",
            DatasetKind::SynthBlobs => "synth-blobs",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub train_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    pub blob_classes: usize,
    pub blob_side: usize,
    pub mnist_train_images: Option<PathBuf>,
    pub mnist_train_labels: Option<PathBuf>,
    pub mnist_test_images: Option<PathBuf>,
    pub mnist_test_labels: Option<PathBuf>,
    pub cifar_train_bins: Vec<PathBuf>,
    pub cifar_test_bins: Vec<PathBuf>,

    pub mode: EncoderMode,
    pub flags: AblationFlags,
    pub steps: usize,
    pub front_channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub fc_width: usize,
    pub neuron: NeuronVariant,
    pub decay: f64,
    pub v_threshold: f64,
    pub initial_threshold: f64,
    pub alpha: f64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::SynthDigits,
            train_size: 2000,
            test_size: 1000,
            data_seed: 7,
            blob_classes: 4,
            blob_side: 12,
            mnist_train_images: None,
            mnist_train_labels: None,
            mnist_test_images: None,
            mnist_test_labels: None,
            cifar_train_bins: Vec::new(),
            cifar_test_bins: Vec::new(),
            mode: EncoderMode::Ttfs,
            flags: AblationFlags::all(),
            steps: 4,
            front_channels: 16,
            conv1_channels: 32,
            conv2_channels: 32,
            fc_width: 128,
            neuron: NeuronVariant::Standard,
            decay: 0.5,
            v_threshold: 1.0,
            initial_threshold: 1.0,
            alpha: 4.0,
            epochs: 3,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            seeds: vec![35, 1000, 0],
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_field(key, s.trim()))
        .collect()
}

impl RunConfig {
    /// Parse a `key=value` file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read config {:?}: {e}", path.as_ref())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => cfg.dataset = value.parse()?,
                "train_size" => cfg.train_size = parse_field(key, value)?,
                "test_size" => cfg.test_size = parse_field(key, value)?,
                "data_seed" => cfg.data_seed = parse_field(key, value)?,
                "blob_classes" => cfg.blob_classes = parse_field(key, value)?,
                "blob_side" => cfg.blob_side = parse_field(key, value)?,
                "mnist_train_images" => cfg.mnist_train_images = Some(PathBuf::from(value)),
                "mnist_train_labels" => cfg.mnist_train_labels = Some(PathBuf::from(value)),
                "mnist_test_images" => cfg.mnist_test_images = Some(PathBuf::from(value)),
                "mnist_test_labels" => cfg.mnist_test_labels = Some(PathBuf::from(value)),
                "cifar_train_bins" => {
                    cfg.cifar_train_bins = value.split(';').map(PathBuf::from).collect()
                }
                "cifar_test_bins" => {
                    cfg.cifar_test_bins = value.split(';').map(PathBuf::from).collect()
                }
                "mode" => cfg.mode = value.parse()?,
                "lt" => cfg.flags.lt = parse_field(key, value)?,
                "lc" => cfg.flags.lc = parse_field(key, value)?,
                "sg" => cfg.flags.sg = parse_field(key, value)?,
                "t" | "steps" => cfg.steps = parse_field(key, value)?,
                "front_channels" => cfg.front_channels = parse_field(key, value)?,
                "conv1_channels" => cfg.conv1_channels = parse_field(key, value)?,
                "conv2_channels" => cfg.conv2_channels = parse_field(key, value)?,
                "fc_width" => cfg.fc_width = parse_field(key, value)?,
                "neuron" => cfg.neuron = value.parse()?,
                "decay" => cfg.decay = parse_field(key, value)?,
                "vth" => cfg.v_threshold = parse_field(key, value)?,
                "theta0" => cfg.initial_threshold = parse_field(key, value)?,
                "alpha" => cfg.alpha = parse_field(key, value)?,
                "epochs" => cfg.epochs = parse_field(key, value)?,
                "lr" => cfg.learning_rate = parse_field(key, value)?,
                "momentum" => cfg.momentum = parse_field(key, value)?,
                "batch_size" => cfg.batch_size = parse_field(key, value)?,
                "seed" => cfg.seed = parse_field(key, value)?,
                "seeds" => cfg.seeds = parse_list(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    /// Resolved settings as a sorted map, for the run-header echo.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("dataset", self.dataset.name().to_string());
        put("train_size", self.train_size.to_string());
        put("test_size", self.test_size.to_string());
        put("data_seed", self.data_seed.to_string());
        put("blob_classes", self.blob_classes.to_string());
        put("blob_side", self.blob_side.to_string());
        put("mode", self.mode.to_string());
        put("lt", self.flags.lt.to_string());
        put("lc", self.flags.lc.to_string());
        put("sg", self.flags.sg.to_string());
        put("t", self.steps.to_string());
        put("front_channels", self.front_channels.to_string());
        put("conv1_channels", self.conv1_channels.to_string());
        put("conv2_channels", self.conv2_channels.to_string());
        put("fc_width", self.fc_width.to_string());
        put("neuron", self.neuron.to_string());
        put("decay", format!("{:?}", self.decay));
        put("vth", format!("{:?}", self.v_threshold));
        put("theta0", format!("{:?}", self.initial_threshold));
        put("alpha", format!("{:?}", self.alpha));
        put("epochs", self.epochs.to_string());
        put("lr", format!("{:?}", self.learning_rate));
        put("momentum", format!("{:?}", self.momentum));
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put(
            "seeds",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map
    }

    /// Load the train/test split this config describes.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetKind::SynthDigits => {
                let all = synth_digits(self.train_size + self.test_size, self.data_seed)?;
                Ok((
                    all.slice(0, self.train_size)?,
                    all.slice(self.train_size, self.test_size)?,
                ))
            }
            DatasetKind::SynthBlobs => {
                let all = synth_blobs(
                    self.train_size + self.test_size,
                    self.blob_classes,
                    self.blob_side,
                    self.data_seed,
                )?;
                Ok((
                    all.slice(0, self.train_size)?,
                    all.slice(self.train_size, self.test_size)?,
                ))
            }
            DatasetKind::Mnist => {
                let (ti, tl, ei, el) = match (
                    &self.mnist_train_images,
                    &self.mnist_train_labels,
                    &self.mnist_test_images,
                    &self.mnist_test_labels,
                ) {
                    (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                    _ => {
                        return Err(Error::Config(
                            "mnist dataset needs mnist_{train,test}_{images,labels} paths".into(),
                        ))
                    }
                };
                let train = load_mnist(ti, tl)?.take(self.train_size)?;
                let test = load_mnist(ei, el)?.take(self.test_size)?;
                Ok((train, test))
            }
            DatasetKind::Cifar10 => {
                if self.cifar_train_bins.is_empty() || self.cifar_test_bins.is_empty() {
                    return Err(Error::Config(
                        "cifar10 dataset needs cifar_{train,test}_bins paths".into(),
                    ));
                }
                let train = load_cifar10(&self.cifar_train_bins)?.take(self.train_size)?;
                let test = load_cifar10(&self.cifar_test_bins)?.take(self.test_size)?;
                Ok((train, test))
            }
        }
    }

    /// Model configuration for a dataset shape, with this config's toggles.
    pub fn model_config(&self, train: &Dataset) -> ModelConfig {
        let (c, h, w) = train.sample_shape();
        let mut cfg = ModelConfig::new(
            self.mode,
            self.flags,
            c,
            h,
            w,
            train.class_count(),
            self.seed,
        );
        cfg.steps = self.steps;
        cfg.front_channels = self.front_channels;
        cfg.conv1_channels = self.conv1_channels;
        cfg.conv2_channels = self.conv2_channels;
        cfg.fc_width = self.fc_width;
        cfg.neuron_variant = self.neuron;
        cfg.decay = self.decay;
        cfg.v_threshold = self.v_threshold;
        cfg.initial_threshold = self.initial_threshold;
        cfg.alpha = self.alpha;
        cfg
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Compact dataset description for `eval` and `shuffle-eval`:
/// `name[,key=value]*`, e.g. `synth-digits,n=500,seed=9` or
/// `mnist,images=i.idx,labels=l.idx,take=1000`.
pub fn parse_dataset_spec(spec: &str) -> Result<Dataset> {
    let mut parts = spec.split(',');
    let kind: DatasetKind = parts
        .next()
        .ok_or_else(|| Error::Config("empty dataset spec".into()))?
        .trim()
        .parse()?;
    let mut opts = BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .trim()
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("dataset spec entry {p:?} is not key=value")))?;
        opts.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get_usize = |opts: &BTreeMap<String, String>, key: &str, default: usize| -> Result<usize> {
        match opts.get(key) {
            Some(v) => parse_field(key, v),
            None => Ok(default),
        }
    };
    let get_u64 = |opts: &BTreeMap<String, String>, key: &str, default: u64| -> Result<u64> {
        match opts.get(key) {
            Some(v) => parse_field(key, v),
            None => Ok(default),
        }
    };
    let known = |opts: &BTreeMap<String, String>, allowed: &[&str]| -> Result<()> {
        for k in opts.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown dataset spec key {k:?}")));
            }
        }
        Ok(())
    };
    match kind {
        DatasetKind::SynthDigits => {
            known(&opts, &["n", "seed"])?;
            synth_digits(get_usize(&opts, "n", 1000)?, get_u64(&opts, "seed", 7)?)
        }
        DatasetKind::SynthBlobs => {
            known(&opts, &["n", "classes", "side", "seed"])?;
            synth_blobs(
                get_usize(&opts, "n", 1000)?,
                get_usize(&opts, "classes", 4)?,
                get_usize(&opts, "side", 12)?,
                get_u64(&opts, "seed", 7)?,
            )
        }
        DatasetKind::Mnist => {
            known(&opts, &["images", "labels", "take"])?;
            let images = opts
                .get("images")
                .ok_or_else(|| Error::Config("mnist spec needs images=PATH".into()))?;
            let labels = opts
                .get("labels")
                .ok_or_else(|| Error::Config("mnist spec needs labels=PATH".into()))?;
            let ds = load_mnist(images, labels)?;
            match opts.get("take") {
                Some(v) => ds.take(parse_field("take", v)?),
                None => Ok(ds),
            }
        }
        DatasetKind::Cifar10 => {
            known(&opts, &["bins", "take"])?;
            let bins: Vec<PathBuf> = opts
                .get("bins")
                .ok_or_else(|| Error::Config("cifar10 spec needs bins=PATH[;PATH]".into()))?
                .split(';')
                .map(PathBuf::from)
                .collect();
            let ds = load_cifar10(&bins)?;
            match opts.get("take") {
                Some(v) => ds.take(parse_field("take", v)?),
                None => Ok(ds),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_when_keys_missing() {
        let cfg = RunConfig::from_text("mode=phase\n").unwrap();
        assert_eq!(cfg.mode, EncoderMode::Phase);
        assert_eq!(cfg.steps, 4);
        assert_eq!(cfg.seeds, vec![35, 1000, 0]);
        assert_eq!(cfg.initial_threshold, 1.0);
        assert_eq!(cfg.decay, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_text("modee=phase\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::from_text("# comment\n\nlt = false\n").unwrap();
        assert!(!cfg.flags.lt);
    }

    #[test]
    fn bad_mode_is_config_error() {
        assert!(matches!(
            RunConfig::from_text("mode=spiky\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeds_parse_as_list() {
        let cfg = RunConfig::from_text("seeds=1,2,3\n").unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn blob_split_is_loadable() {
        let cfg = RunConfig::from_text(
            "dataset=synth-blobs\ntrain_size=40\ntest_size=20\nblob_side=8\n",
        )
        .unwrap();
        let (train, test) = cfg.load_datasets().unwrap();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 20);
    }

    #[test]
    fn dataset_spec_parses_synth_variants() {
        let ds = parse_dataset_spec("synth-blobs,n=12,classes=3,side=8,seed=2").unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.class_count(), 3);
        assert!(matches!(
            parse_dataset_spec("synth-blobs,unknown=1"),
            Err(Error::Config(_))
        ));
    }
}
