//! Flat `key=value` run configuration shared by `train`, `eval` and `battery`.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys are errors. Command-line flags override the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qualgauss_core::{AffineMap, HeadConfig, TrainConfig, Variant, QUALITY_DIMS};

pub const KEYS: &[&str] = &[
    "train",
    "val",
    "checkpoint",
    "trace",
    "report_dir",
    "variant",
    "hidden_dims",
    "dropout",
    "seed",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "epochs",
    "batch_size",
    "no_affine",
    "strict",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub trace: Option<PathBuf>,
    pub report_dir: PathBuf,
    pub variant: Variant,
    /// Whether `variant` came from a file or a flag rather than the default.
    pub variant_explicit: bool,
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub no_affine: bool,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train: None,
            val: None,
            checkpoint: PathBuf::from("model.ckpt"),
            trace: None,
            report_dir: PathBuf::from("reports"),
            variant: Variant::Full,
            variant_explicit: false,
            hidden_dims: vec![256, 64],
            dropout: 0.0,
            seed: 0,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            no_affine: false,
            strict: false,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("`{other}` is not a boolean"),
    }
}

pub fn parse_dims(v: &str) -> Result<Vec<usize>> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|d| d.trim().parse::<usize>().with_context(|| format!("`{d}` is not a layer width")))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config file {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", i + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |what: &str| format!("invalid value `{value}` for {what}");
        match key {
            "train" => self.train = Some(PathBuf::from(value)),
            "val" => self.val = (!value.is_empty()).then(|| PathBuf::from(value)),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "report_dir" => self.report_dir = PathBuf::from(value),
            "variant" => {
                self.variant = value.parse()?;
                self.variant_explicit = true;
            }
            "hidden_dims" => self.hidden_dims = parse_dims(value)?,
            "dropout" => self.dropout = value.parse().with_context(|| num(key))?,
            "seed" => self.seed = value.parse().with_context(|| num(key))?,
            "learning_rate" => self.learning_rate = value.parse().with_context(|| num(key))?,
            "beta1" => self.beta1 = value.parse().with_context(|| num(key))?,
            "beta2" => self.beta2 = value.parse().with_context(|| num(key))?,
            "epsilon" => self.epsilon = value.parse().with_context(|| num(key))?,
            "epochs" => self.epochs = value.parse().with_context(|| num(key))?,
            "batch_size" => self.batch_size = value.parse().with_context(|| num(key))?,
            "no_affine" => self.no_affine = parse_bool(value)?,
            "strict" => self.strict = parse_bool(value)?,
            other => bail!("unknown config key `{other}` (known keys: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    pub fn affine(&self) -> AffineMap {
        if self.no_affine {
            AffineMap::identity(QUALITY_DIMS)
        } else {
            AffineMap::quality_scale(QUALITY_DIMS)
        }
    }

    pub fn head_config(&self, input_dim: usize) -> HeadConfig {
        HeadConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            variant: self.variant,
            dropout_rate: self.dropout,
            seed: self.seed,
            label_dims: QUALITY_DIMS,
        }
    }

    /// Shuffling and dropout use a stream derived from `seed`, separate from
    /// the initialisation stream.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
            variant: self.variant,
            affine: self.affine(),
        }
    }

    pub fn trace_path(&self) -> PathBuf {
        self.trace.clone().unwrap_or_else(|| {
            let mut p = self.checkpoint.clone().into_os_string();
            p.push(".trace.tsv");
            PathBuf::from(p)
        })
    }

    /// Checks numeric ranges and that input files exist.
    pub fn validate(&self, needs_train: bool) -> Result<()> {
        self.head_config(1).validate()?;
        self.train_config().validate()?;
        if needs_train {
            match &self.train {
                None => bail!("no training set configured (set `train` or pass --train)"),
                Some(p) if !p.is_file() => bail!("training set {} does not exist", p.display()),
                _ => {}
            }
        }
        if let Some(v) = &self.val {
            if !v.is_file() {
                bail!("validation set {} does not exist", v.display());
            }
        }
        Ok(())
    }
}
