//! Subarea-to-grid predictor: a small convolutional network trained from
//! scratch with the per-cell cross-entropy objective and Adam.

mod adam;
mod baseline;
pub mod checkpoint;
mod loss;
mod network;
mod oracle;
mod sampling;
mod train;

use std::fmt;
use std::str::FromStr;

pub use adam::{Adam, AdamMoments};
pub use baseline::{CenterFill, PatchCenterClassifier};
pub use loss::{loss, logit_gradient, PROB_FLOOR};
pub use network::{Network, ParamBlock};
pub use oracle::{ModelPredictor, OraclePredictor};
pub use sampling::{center_samples, retina_samples, sample_sites, PatchSite};
pub use train::{loss_gradient, train, Divergence, EpochRecord, Model, ModelState, TrainOutcome, TrainingSample};

use crate::error::{Error, Result};
use crate::grid::{cell_count, RetinaGrid};

/// Reference desk-scale backbone: three stages of two 3x3 convolutions and a
/// 2x max-pool, widths 16/32/64, then a 128-unit dense layer.
pub const DEFAULT_ARCHITECTURE: &str = "c16,c16,p,c32,c32,p,c64,c64,p,f128";

/// Ten-convolution VGG-style variant with two 1024-unit dense layers.
/// Expressible, but far too slow for CPU training at desk scale.
pub const VGG10_ARCHITECTURE: &str = "c64,c64,p,c128,c128,p,c256,c256,c256,p,c512,c512,c512,p,f1024,f1024";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 same-padded convolution followed by ReLU.
    Conv { out_channels: usize },
    MaxPool,
    AvgPool,
    /// Fully connected layer followed by ReLU.
    Dense { units: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out_channels } => write!(f, "c{out_channels}"),
            LayerSpec::MaxPool => f.write_str("p"),
            LayerSpec::AvgPool => f.write_str("a"),
            LayerSpec::Dense { units } => write!(f, "f{units}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |rest: &str| {
            rest.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::config(format!("bad layer width in {s:?}")))
        };
        match s.split_at_checked(1) {
            Some(("c", rest)) => Ok(LayerSpec::Conv { out_channels: num(rest)? }),
            Some(("f", rest)) => Ok(LayerSpec::Dense { units: num(rest)? }),
            Some(("p", "")) => Ok(LayerSpec::MaxPool),
            Some(("a", "")) => Ok(LayerSpec::AvgPool),
            _ => Err(Error::config(format!("unknown layer spec {s:?}"))),
        }
    }
}

pub fn parse_architecture(s: &str) -> Result<Vec<LayerSpec>> {
    let specs = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::config("architecture has no layers"));
    }
    Ok(specs)
}

pub fn format_architecture(specs: &[LayerSpec]) -> String {
    specs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// What the output layer predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// One K-way soft-max per retina grid cell.
    Retina,
    /// A single K-way soft-max for the class of the center pixel.
    PatchCenter,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Retina => "retina",
            Head::PatchCenter => "patch-center",
        })
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retina" => Ok(Head::Retina),
            "patch-center" => Ok(Head::PatchCenter),
            _ => Err(Error::config(format!("unknown head {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub input_size: usize,
    pub level: u32,
    pub classes: usize,
    pub channels: usize,
    pub architecture: Vec<LayerSpec>,
    pub head: Head,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl PredictorConfig {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
    pub const DEFAULT_BATCH_SIZE: usize = 16;
    pub const DEFAULT_EPOCHS: usize = 20;

    pub fn new(input_size: usize, level: u32, classes: usize) -> Self {
        PredictorConfig {
            input_size,
            level,
            classes,
            channels: 3,
            architecture: parse_architecture(DEFAULT_ARCHITECTURE).expect("default architecture parses"),
            head: Head::Retina,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            epochs: Self::DEFAULT_EPOCHS,
            seed: 0,
        }
    }

    pub fn head_cells(&self) -> usize {
        match self.head {
            Head::Retina => cell_count(self.level),
            Head::PatchCenter => 1,
        }
    }

    /// Width of the output layer, `cells * K`.
    pub fn head_width(&self) -> usize {
        self.head_cells() * self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.head == Head::Retina {
            RetinaGrid::new(self.input_size, self.level)?;
        } else if self.input_size < 2 {
            return Err(Error::config("input size must be at least 2"));
        }
        if self.classes < 2 || self.classes > usize::from(u8::MAX) {
            return Err(Error::config(format!("class count must be in 2..=254, got {}", self.classes)));
        }
        if self.channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Network::new(self).map(|_| ())
    }

    /// Canonical `key=value` text; its hash identifies a checkpoint's configuration.
    pub fn to_text(&self) -> String {
        format!(
            "input_size={}\nlevel={}\nclasses={}\nchannels={}\narchitecture={}\nhead={}\nlearning_rate={:?}\nbatch_size={}\nepochs={}\nseed={}\n",
            self.input_size,
            self.level,
            self.classes,
            self.channels,
            format_architecture(&self.architecture),
            self.head,
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PredictorConfig::new(0, 1, 2);
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("bad config line {line:?}")))?;
            let bad = || Error::data(format!("bad value for {k}: {v:?}"));
            match k {
                "input_size" => cfg.input_size = v.parse().map_err(|_| bad())?,
                "level" => cfg.level = v.parse().map_err(|_| bad())?,
                "classes" => cfg.classes = v.parse().map_err(|_| bad())?,
                "channels" => cfg.channels = v.parse().map_err(|_| bad())?,
                "architecture" => cfg.architecture = parse_architecture(v)?,
                "head" => cfg.head = v.parse()?,
                "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| bad())?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::data(format!("unknown config key {k:?}"))),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(Error::data("incomplete predictor configuration"));
        }
        Ok(cfg)
    }
}
