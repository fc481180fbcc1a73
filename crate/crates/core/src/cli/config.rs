//! Run configuration: a flat TOML key-value file, with a command-line flag
//! overriding each key.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::ScanParams;
use crate::error::{Error, Result};
use crate::grid::RetinaGrid;
use crate::predictor::{checkpoint, parse_architecture, CenterFill, Head, PredictorConfig, DEFAULT_ARCHITECTURE};

/// Every tunable of every command. Keys missing from the file keep their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subarea_size: usize,
    pub level: u32,
    pub classes: usize,
    pub channels: usize,
    pub sigma: f64,
    pub vertical_stride: usize,
    pub min_step: usize,
    pub architecture: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patches_per_image: usize,
    pub boundary_ratio: f64,
    pub baseline_stride: usize,
    pub baseline_fill: String,
    pub folds: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subarea_size: 64,
            level: 3,
            classes: 3,
            channels: 3,
            sigma: ScanParams::DEFAULT_SIGMA,
            vertical_stride: ScanParams::DEFAULT_VERTICAL_STRIDE,
            min_step: 1,
            architecture: DEFAULT_ARCHITECTURE.to_string(),
            learning_rate: PredictorConfig::DEFAULT_LEARNING_RATE,
            batch_size: PredictorConfig::DEFAULT_BATCH_SIZE,
            epochs: PredictorConfig::DEFAULT_EPOCHS,
            patches_per_image: 200,
            boundary_ratio: 0.5,
            baseline_stride: 4,
            baseline_fill: "block".to_string(),
            folds: 5,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Canonical TOML text; hashed into run metadata.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn hash(&self) -> String {
        checkpoint::hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks every module precondition before any work starts.
    pub fn validate(&self) -> Result<()> {
        RetinaGrid::new(self.subarea_size, self.level)?;
        self.scan_params().validate()?;
        self.predictor_config(Head::Retina)?.validate()?;
        self.center_fill()?;
        if self.patches_per_image == 0 {
            return Err(Error::config("patches_per_image must be positive"));
        }
        if !(0.0..=1.0).contains(&self.boundary_ratio) {
            return Err(Error::config(format!("boundary_ratio must be in [0, 1], got {}", self.boundary_ratio)));
        }
        if self.baseline_stride == 0 {
            return Err(Error::config("baseline_stride must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        Ok(())
    }

    pub fn scan_params(&self) -> ScanParams {
        ScanParams {
            subarea_size: self.subarea_size,
            sigma: self.sigma,
            vertical_stride: self.vertical_stride,
            min_step: self.min_step,
            classes: self.classes,
        }
    }

    pub fn predictor_config(&self, head: Head) -> Result<PredictorConfig> {
        Ok(PredictorConfig {
            input_size: self.subarea_size,
            level: self.level,
            classes: self.classes,
            channels: self.channels,
            architecture: parse_architecture(&self.architecture)?,
            head,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        })
    }

    pub fn center_fill(&self) -> Result<CenterFill> {
        self.baseline_fill.parse()
    }
}

/// Flags mirroring every [`RunConfig`] key. A flag wins over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any subset of the keys below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Subarea side d in pixels.
    #[arg(long, short = 'd')]
    pub subarea_size: Option<usize>,
    /// Resolution level r.
    #[arg(long, short = 'r')]
    pub level: Option<u32>,
    /// Number of classes K.
    #[arg(long, short = 'k')]
    pub classes: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Width of the step Gaussian.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub vertical_stride: Option<usize>,
    #[arg(long)]
    pub min_step: Option<usize>,
    /// Layer list, e.g. "c16,c16,p,c32,c32,p,f128".
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patches_per_image: Option<usize>,
    /// Share of training draws forced onto class boundaries.
    #[arg(long)]
    pub boundary_ratio: Option<f64>,
    #[arg(long)]
    pub baseline_stride: Option<usize>,
    /// "block" or "bilinear".
    #[arg(long)]
    pub baseline_fill: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// File values (or defaults) with flags applied on top, validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        set!(
            subarea_size,
            level,
            classes,
            channels,
            sigma,
            vertical_stride,
            min_step,
            architecture,
            learning_rate,
            batch_size,
            epochs,
            patches_per_image,
            boundary_ratio,
            baseline_stride,
            baseline_fill,
            folds,
            seed
        );
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "subarea_size = 128\nlevel = 2\nsigma = 0.3\n").unwrap();
        let args = ConfigArgs {
            config: Some(p),
            level: Some(4),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!((c.subarea_size, c.level, c.sigma), (128, 4, 0.3));
        assert_eq!(c.vertical_stride, 10);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "subarea = 64\n").unwrap();
        let e = RunConfig::load(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn indivisible_grid_is_rejected_before_work() {
        let args = ConfigArgs {
            subarea_size: Some(96),
            level: Some(5),
            ..Default::default()
        };
        assert_eq!(args.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn text_round_trip_keeps_hash() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back.hash(), c.hash());
    }
}
