//! Experiment configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use classunlearn::experiment::Settings;
use classunlearn::model_io;
use classunlearn::pipeline::UnlearnMethod;
use classunlearn::privacy;
use classunlearn::softmax::TrainConfig;
use classunlearn::tfidf::PipelineConfig;
use classunlearn::unlearn::CgConfig;

use crate::CliError;

/// Names the config file when `--config` is not given.
pub const CONFIG_ENV: &str = "CLASSUNLEARN_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    /// Guessed from the file extension when absent.
    pub format: Option<Format>,
    /// Output directory name; the file stem when absent.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Class names or numeric ids; empty means every class.
    pub classes: Vec<String>,
    pub methods: Vec<UnlearnMethod>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            classes: Vec::new(),
            methods: UnlearnMethod::ALL.to_vec(),
            seeds: (0..5).collect(),
            test_fraction: 0.2,
            val_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub shadows: usize,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { shadows: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub method: UnlearnMethod,
    pub c_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub noise_seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            method: UnlearnMethod::Hessian,
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            tau_grid: vec![0.5, 0.55, 0.6, 0.65],
            sigma_grid: privacy::default_sigma_grid(),
            noise_seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub cg: CgConfig,
    pub experiment: RunConfig,
    pub mia: MiaConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            cg: CgConfig::default(),
            experiment: RunConfig::default(),
            mia: MiaConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; each one replaces the config's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub classes: Option<Vec<String>>,
    pub methods: Option<Vec<UnlearnMethod>>,
    pub shadows: Option<usize>,
    pub c: Option<f64>,
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults when `None`). Relative paths inside the
    /// file are resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                cfg.dataset.path = Some(base.join(p));
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.dataset {
            self.dataset.path = Some(v.clone());
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        if let Some(v) = &o.seeds {
            self.experiment.seeds = v.clone();
        }
        if let Some(v) = &o.classes {
            self.experiment.classes = v.clone();
        }
        if let Some(v) = &o.methods {
            self.experiment.methods = v.clone();
        }
        if let Some(v) = o.shadows {
            self.mia.shadows = v;
        }
        if let Some(v) = o.c {
            self.train.c = v;
        }
    }

    /// Every problem with the config, one `key: reason` per entry.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.dataset.path {
            None => out.push("dataset.path: missing".to_string()),
            Some(p) if !p.is_file() => out.push(format!("dataset.path: {} does not exist", p.display())),
            Some(p) => {
                if self.dataset.format.is_none() && guess_format(p).is_none() {
                    out.push(format!(
                        "dataset.format: cannot tell the format of {}; set \"jsonl\" or \"csv\"",
                        p.display()
                    ));
                }
            }
        }
        if self.experiment.methods.is_empty() {
            out.push("experiment.methods: need at least one method".into());
        }
        if self.experiment.seeds.is_empty() {
            out.push("experiment.seeds: need at least one seed".into());
        }
        let (t, v) = (self.experiment.test_fraction, self.experiment.val_fraction);
        if !(t > 0.0 && t < 1.0) {
            out.push(format!("experiment.test_fraction: must lie in (0, 1), got {t}"));
        }
        if !(0.0..1.0).contains(&v) || t + v >= 1.0 {
            out.push(format!("experiment.val_fraction: must be ≥ 0 with test + val < 1, got {v}"));
        }
        if !(self.train.c > 0.0 && self.train.c.is_finite()) {
            out.push(format!("train.c: must be positive, got {}", self.train.c));
        }
        if !(self.train.grad_tol > 0.0) {
            out.push(format!("train.grad_tol: must be positive, got {}", self.train.grad_tol));
        }
        if self.train.max_epochs == 0 {
            out.push("train.max_epochs: must be positive".into());
        }
        if self.train.memory == 0 {
            out.push("train.memory: must be positive".into());
        }
        if !(self.cg.tol > 0.0) {
            out.push(format!("cg.tol: must be positive, got {}", self.cg.tol));
        }
        if self.cg.max_iter == 0 {
            out.push("cg.max_iter: must be positive".into());
        }
        if self.pipeline.min_df == 0 {
            out.push("pipeline.min_df: must be at least 1".into());
        }
        if self.pipeline.max_features == 0 {
            out.push("pipeline.max_features: must be positive".into());
        }
        if self.mia.shadows < 2 {
            out.push(format!("mia.shadows: need at least 2, got {}", self.mia.shadows));
        }
        if self.sweep.c_grid.is_empty() || self.sweep.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            out.push("sweep.c_grid: need positive finite values".into());
        }
        if self.sweep.tau_grid.is_empty() {
            out.push("sweep.tau_grid: must be non-empty".into());
        }
        let s = &self.sweep.sigma_grid;
        if s.is_empty() || s[0] < 0.0 || s.windows(2).any(|w| w[0] >= w[1]) {
            out.push("sweep.sigma_grid: must be non-empty, non-negative and strictly ascending".into());
        }
        if self.sweep.noise_seeds == 0 {
            out.push("sweep.noise_seeds: must be positive".into());
        }
        if self.bench.repeats == 0 {
            out.push("bench.repeats: must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("invalid config:\n  {}", p.join("\n  "))))
        }
    }

    pub fn dataset_path(&self) -> &Path {
        self.dataset.path.as_deref().expect("validated")
    }

    pub fn format(&self) -> Format {
        self.dataset
            .format
            .or_else(|| guess_format(self.dataset_path()))
            .expect("validated")
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.name.clone().unwrap_or_else(|| {
            self.dataset_path()
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn settings(&self) -> Settings {
        Settings {
            pipeline: self.pipeline.clone(),
            train: self.train.clone(),
            cg: self.cg,
            test_fraction: self.experiment.test_fraction,
            val_fraction: self.experiment.val_fraction,
            shadows: self.mia.shadows,
        }
    }

    /// SHA-256 of the effective config as canonical JSON. File locations are
    /// left out; the dataset is identified by its own content hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.dataset.path = None;
        c.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        model_io::bytes_hash(&json)
    }
}

fn guess_format(p: &Path) -> Option<Format> {
    match p.extension()?.to_str()? {
        "jsonl" | "json" => Some(Format::Jsonl),
        "csv" => Some(Format::Csv),
        _ => None,
    }
}
