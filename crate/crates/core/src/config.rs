//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line overrides. Relative paths in a file resolve against the
//! file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::densecrf::{InferenceMode, KernelParams};
use crate::depth::{BinSpace, DepthBinning};
use crate::error::{Error, Result};
use crate::synth::{Layout, SceneSpec};
use crate::tinynet::{Head, HeadKind, NetworkSpec, TrainConfig};

/// Synthetic data settings, used when no manifest is given.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub count: usize,
    pub test_count: usize,
    pub width: usize,
    pub height: usize,
    pub layouts: Vec<Layout>,
    pub noise_sigma: f64,
    pub missing_fraction: f64,
    pub seed: u64,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            test_manifest: None,
            count: 256,
            test_count: 32,
            width: 48,
            height: 48,
            layouts: Layout::ALL.to_vec(),
            noise_sigma: 0.0,
            missing_fraction: 0.02,
            seed: 1,
            test_seed: 100_000,
        }
    }
}

impl DataConfig {
    /// Scene template for the training (`test = false`) or held-out split.
    pub fn scene(&self, test: bool, d_min: f64, d_max: f64) -> SceneSpec {
        SceneSpec {
            d_min,
            d_max,
            noise_sigma: self.noise_sigma,
            missing_fraction: self.missing_fraction,
            ..SceneSpec::new(
                if test { self.test_seed } else { self.seed },
                self.width,
                self.height,
                self.layouts[0],
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfConfig {
    pub params: KernelParams,
    pub iterations: usize,
    pub tol: f64,
    pub mode: InferenceMode,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            params: KernelParams::default(),
            iterations: 10,
            tol: 1e-3,
            mode: InferenceMode::Filtered,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub space: BinSpace,
    pub head: HeadKind,
    pub net: NetworkSpec,
    /// Classification settings; regression swaps in `regression_lr`.
    pub train: TrainConfig,
    pub regression_lr: f64,
    pub crf: CrfConfig,
    pub data: DataConfig,
    pub compare_bins: Vec<usize>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bins: 100,
            d_min: 0.7,
            d_max: 10.0,
            space: BinSpace::Log,
            head: HeadKind::Classification,
            net: NetworkSpec::default(),
            train: TrainConfig {
                iterations: 2000,
                ..TrainConfig::default()
            },
            regression_lr: 3e-4,
            crf: CrfConfig::default(),
            data: DataConfig::default(),
            compare_bins: vec![30, 50],
            output: PathBuf::from("out"),
        }
    }
}

/// Every recognised key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "bins",
    "d_min",
    "d_max",
    "space",
    "alpha",
    "head",
    "seed",
    "train.lr",
    "train.regression_lr",
    "train.momentum",
    "train.iterations",
    "train.batch_size",
    "net.stem",
    "net.blocks",
    "net.channels",
    "net.head_channels",
    "crf.w1",
    "crf.w2",
    "crf.sigma_alpha",
    "crf.sigma_beta",
    "crf.sigma_gamma",
    "crf.iterations",
    "crf.tol",
    "crf.mode",
    "data.manifest",
    "data.test_manifest",
    "data.count",
    "data.test_count",
    "data.width",
    "data.height",
    "data.layouts",
    "data.noise_sigma",
    "data.missing_fraction",
    "data.seed",
    "data.test_seed",
    "compare.bins",
    "output",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{raw}'")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|t| value(key, t.trim())).collect()
}

fn array<const N: usize>(key: &str, raw: &str) -> Result<[usize; N]> {
    list(key, raw)?.try_into().map_err(|_| {
        Error::Config(format!(
            "{key}: expected {N} comma-separated integers, got '{raw}'"
        ))
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path(raw: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(raw);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

fn mode_name(mode: InferenceMode) -> &'static str {
    match mode {
        InferenceMode::Exact => "exact",
        InferenceMode::Filtered => "filtered",
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` (`key=value` strings).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", file.display()))
            })?;
            cfg.apply_text(&text, file.parent())?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            cfg.set(k.trim(), v.trim(), None)?;
        }
        Ok(cfg)
    }

    /// Applies the `key = value` lines of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got '{line}'",
                    n + 1
                ))
            })?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    n + 1
                )));
            }
            seen.push(k);
            self.set(k, v.trim(), base).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("configuration error: ")
                ))
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, raw: &str, base: Option<&Path>) -> Result<()> {
        match key {
            "bins" => self.bins = value(key, raw)?,
            "d_min" => self.d_min = value(key, raw)?,
            "d_max" => self.d_max = value(key, raw)?,
            "space" => self.space = raw.parse()?,
            "alpha" => self.train.alpha = value(key, raw)?,
            "head" => {
                self.head = raw
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "seed" => self.train.seed = value(key, raw)?,
            "train.lr" => self.train.learning_rate = value(key, raw)?,
            "train.regression_lr" => self.regression_lr = value(key, raw)?,
            "train.momentum" => self.train.momentum = value(key, raw)?,
            "train.iterations" => self.train.iterations = value(key, raw)?,
            "train.batch_size" => self.train.batch_size = value(key, raw)?,
            "net.stem" => self.net.stem_channels = value(key, raw)?,
            "net.blocks" => self.net.blocks = array(key, raw)?,
            "net.channels" => self.net.channels = array(key, raw)?,
            "net.head_channels" => self.net.head_channels = array(key, raw)?,
            "crf.w1" => self.crf.params.w1 = value(key, raw)?,
            "crf.w2" => self.crf.params.w2 = value(key, raw)?,
            "crf.sigma_alpha" => self.crf.params.sigma_alpha = value(key, raw)?,
            "crf.sigma_beta" => self.crf.params.sigma_beta = value(key, raw)?,
            "crf.sigma_gamma" => self.crf.params.sigma_gamma = value(key, raw)?,
            "crf.iterations" => self.crf.iterations = value(key, raw)?,
            "crf.tol" => self.crf.tol = value(key, raw)?,
            "crf.mode" => {
                self.crf.mode = match raw {
                    "exact" => InferenceMode::Exact,
                    "filtered" => InferenceMode::Filtered,
                    _ => {
                        return Err(Error::Config(format!(
                            "crf.mode: expected exact or filtered, got '{raw}'"
                        )))
                    }
                }
            }
            "data.manifest" => self.data.manifest = (!raw.is_empty()).then(|| path(raw, base)),
            "data.test_manifest" => {
                self.data.test_manifest = (!raw.is_empty()).then(|| path(raw, base))
            }
            "data.count" => self.data.count = value(key, raw)?,
            "data.test_count" => self.data.test_count = value(key, raw)?,
            "data.width" => self.data.width = value(key, raw)?,
            "data.height" => self.data.height = value(key, raw)?,
            "data.layouts" => {
                self.data.layouts = raw
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse()
                            .map_err(|e: Error| Error::Config(e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "data.noise_sigma" => self.data.noise_sigma = value(key, raw)?,
            "data.missing_fraction" => self.data.missing_fraction = value(key, raw)?,
            "data.seed" => self.data.seed = value(key, raw)?,
            "data.test_seed" => self.data.test_seed = value(key, raw)?,
            "compare.bins" => self.compare_bins = list(key, raw)?,
            "output" => self.output = path(raw, base),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Effective configuration in the file format, one line per key.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let values = [
            self.bins.to_string(),
            self.d_min.to_string(),
            self.d_max.to_string(),
            self.space.to_string(),
            self.train.alpha.to_string(),
            self.head.to_string(),
            self.train.seed.to_string(),
            self.train.learning_rate.to_string(),
            self.regression_lr.to_string(),
            self.train.momentum.to_string(),
            self.train.iterations.to_string(),
            self.train.batch_size.to_string(),
            self.net.stem_channels.to_string(),
            join(&self.net.blocks),
            join(&self.net.channels),
            join(&self.net.head_channels),
            self.crf.params.w1.to_string(),
            self.crf.params.w2.to_string(),
            self.crf.params.sigma_alpha.to_string(),
            self.crf.params.sigma_beta.to_string(),
            self.crf.params.sigma_gamma.to_string(),
            self.crf.iterations.to_string(),
            self.crf.tol.to_string(),
            mode_name(self.crf.mode).to_string(),
            opt(&self.data.manifest),
            opt(&self.data.test_manifest),
            self.data.count.to_string(),
            self.data.test_count.to_string(),
            self.data.width.to_string(),
            self.data.height.to_string(),
            join(&self.data.layouts),
            self.data.noise_sigma.to_string(),
            self.data.missing_fraction.to_string(),
            self.data.seed.to_string(),
            self.data.test_seed.to_string(),
            join(&self.compare_bins),
            self.output.display().to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn binning(&self) -> Result<DepthBinning> {
        self.binning_with(self.bins)
    }

    pub fn binning_with(&self, bins: usize) -> Result<DepthBinning> {
        DepthBinning::new(bins, self.d_min, self.d_max, self.space)
    }

    /// The configured head, using `bins` for classification.
    pub fn head(&self) -> Result<Head> {
        Ok(match self.head {
            HeadKind::Classification => Head::Classification(self.binning()?),
            HeadKind::Regression => Head::Regression {
                d_min: self.d_min,
                d_max: self.d_max,
            },
        })
    }

    /// Training settings for a head of the given kind.
    pub fn train_config(&self, kind: HeadKind) -> TrainConfig {
        match kind {
            HeadKind::Classification => self.train.clone(),
            HeadKind::Regression => TrainConfig {
                learning_rate: self.regression_lr,
                ..self.train.clone()
            },
        }
    }

    /// Checks every value against the preconditions of the module that
    /// consumes it, and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        self.binning().map_err(config)?;
        for &b in &self.compare_bins {
            self.binning_with(b).map_err(config)?;
        }
        if self.compare_bins.is_empty() {
            return Err(Error::Config("compare.bins is empty".into()));
        }
        self.net.validate().map_err(config)?;
        self.train_config(HeadKind::Classification)
            .validate()
            .map_err(config)?;
        self.train_config(HeadKind::Regression)
            .validate()
            .map_err(config)?;
        self.crf.params.validate().map_err(config)?;
        if self.crf.iterations == 0 || self.crf.tol.is_nan() || self.crf.tol < 0.0 {
            return Err(Error::Config(
                "crf.iterations must be >= 1 and crf.tol >= 0".into(),
            ));
        }
        if self.data.layouts.is_empty() || self.data.count == 0 || self.data.test_count == 0 {
            return Err(Error::Config(
                "data.layouts, data.count and data.test_count must be nonempty".into(),
            ));
        }
        self.data
            .scene(false, self.d_min, self.d_max)
            .validate()
            .map_err(config)?;
        for p in [&self.data.manifest, &self.data.test_manifest]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "manifest {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
