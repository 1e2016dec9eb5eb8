//! The `train` run file: dataset manifests, output directory, training
//! settings and an optional network description.

use std::fs;
use std::path::{Path, PathBuf};

use segadapt::data::DEFAULT_TOLERANCE;
use segadapt::model::ArchConfig;
use segadapt::trainer::TrainConfig;
use segadapt::{Error, Result};
use serde::Deserialize;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Where checkpoints, logs and reports go; `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Dataset manifests, relative to the run file's directory.
    pub manifests: Vec<PathBuf>,
    /// Per-channel tolerance when decoding color masks.
    #[serde(default = "default_tolerance")]
    pub mask_tolerance: u8,
    #[serde(default)]
    pub train: TrainConfig,
    /// Omitted: default widths, with input size and class count taken from
    /// the first dataset.
    #[serde(default)]
    pub model: Option<ArchConfig>,
}

fn default_tolerance() -> u8 {
    DEFAULT_TOLERANCE
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if cfg.manifests.is_empty() {
            return Err(Error::Config("manifests must list at least one dataset".into()));
        }
        cfg.train.validate()?;
        if let Some(m) = &cfg.model {
            m.validate()?;
        }
        Ok(cfg)
    }

    /// Reads and validates a run file, resolving relative paths against
    /// its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut cfg.manifests {
            *m = base.join(&*m);
        }
        cfg.out_dir = cfg.out_dir.map(|d| base.join(d));
        Ok(cfg)
    }
}
