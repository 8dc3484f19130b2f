//! Run configuration: command-line flags layered over an optional JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use augsearch::eval::{ChildProtocol, CIFAR_HOLDOUT};
use augsearch::ops::MagnitudeLevel;
use augsearch::search::SearchConfig;
use augsearch::selection::DEFAULT_ALPHA;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::formats::{parse_size, DatasetSource};

pub const DEFAULT_FACTOR: f64 = 2.0;
pub const BASELINE_EVALUATIONS: u64 = 15_000;
pub const BASELINE_EPOCHS: u64 = 120;

/// Flags shared by the dataset-driven commands. Every value can also come
/// from `--config`; flags win.
#[derive(Args, Clone, Debug, Default)]
pub struct RunFlags {
    /// Dataset as <format>:<path>; format is cifar10-bin, idx or image-dir
    #[arg(long)]
    pub dataset: Option<String>,
    /// JSON file with any of these settings (snake_case keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bilinear resize applied after loading, e.g. 32x32
    #[arg(long)]
    pub resize: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub fixed_level: Option<u8>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    /// Child-network training epochs per evaluation
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Held-out images used to score each child network
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Expansion factor (output size / input size)
    #[arg(long)]
    pub factor: Option<f64>,
    /// Pareto exponent for chain selection
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub baseline_evals: Option<u64>,
    #[arg(long)]
    pub baseline_epochs: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<String>,
    pub resize: Option<String>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub fixed_level: Option<u8>,
    pub max_layers: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub holdout: Option<usize>,
    pub factor: Option<f64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub baseline_evals: Option<u64>,
    pub baseline_epochs: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_slice(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: Option<DatasetSource>,
    pub search: SearchConfig,
    pub protocol: ChildProtocol,
    pub factor: f64,
    pub alpha: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub baseline_evals: u64,
    pub baseline_epochs: u64,
}

impl RunConfig {
    /// Layers `flags` over the `--config` file over defaults and validates
    /// everything that can be checked without touching the dataset.
    pub fn resolve(flags: &RunFlags, threads: Option<usize>) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        macro_rules! pick {
            ($field:ident) => {
                flags.$field.clone().or(file.$field.clone())
            };
        }
        let seed = pick!(seed).unwrap_or(0);

        let mut search = SearchConfig { seed, ..SearchConfig::default() };
        if let Some(n) = pick!(iterations) {
            search.iterations = n;
        }
        if let Some(l) = pick!(fixed_level) {
            search.fixed_level = MagnitudeLevel::new(l).map_err(|e| anyhow::anyhow!("--fixed-level: {e}"))?;
        }
        if let Some(m) = pick!(max_layers) {
            search.max_layers = m;
        }
        search.validate()?;

        let defaults = ChildProtocol::default();
        let protocol = ChildProtocol {
            epochs: pick!(epochs).unwrap_or(defaults.epochs),
            holdout_size: pick!(holdout).unwrap_or(CIFAR_HOLDOUT),
            learning_rate: pick!(lr).unwrap_or(defaults.learning_rate),
            batch_size: pick!(batch_size).unwrap_or(defaults.batch_size),
            seed,
        };
        if protocol.epochs == 0 || protocol.batch_size == 0 || !(protocol.learning_rate.is_finite() && protocol.learning_rate > 0.0) {
            bail!("epochs and batch size must be >= 1 and the learning rate positive");
        }

        let factor = pick!(factor).unwrap_or(DEFAULT_FACTOR);
        if !(factor.is_finite() && factor >= 1.0) {
            bail!("--factor must be a finite number >= 1, got {factor}");
        }
        let alpha = pick!(alpha).unwrap_or(DEFAULT_ALPHA);
        if !(alpha.is_finite() && alpha > 0.0) {
            bail!("--alpha must be positive, got {alpha}");
        }

        let dataset = match pick!(dataset) {
            Some(arg) => {
                let mut src: DatasetSource = arg.parse()?;
                src.resize = pick!(resize).as_deref().map(parse_size).transpose()?;
                Some(src)
            }
            None => None,
        };
        let threads = threads.or(file.threads);
        if threads == Some(0) {
            bail!("--threads must be >= 1");
        }
        let baseline_evals = pick!(baseline_evals).unwrap_or(BASELINE_EVALUATIONS);
        let baseline_epochs = pick!(baseline_epochs).unwrap_or(BASELINE_EPOCHS);
        if baseline_evals == 0 || baseline_epochs == 0 {
            bail!("baseline evaluations and epochs must be >= 1");
        }
        Ok(Self {
            dataset,
            search,
            protocol,
            factor,
            alpha,
            out: pick!(out).unwrap_or_else(|| PathBuf::from("out")),
            seed,
            threads,
            baseline_evals,
            baseline_epochs,
        })
    }

    pub fn dataset(&self) -> Result<&DatasetSource> {
        self.dataset.as_ref().context("no dataset given (use --dataset <format>:<path>)")
    }
}
