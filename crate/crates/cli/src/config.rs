use std::fs;
use std::path::{Path, PathBuf};

use asopf_core::grid::{generate_synthetic_grid, Grid, WindProfile};
use asopf_core::mlp::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{at, CliError, CliResult, Stage};

/// Where the network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSource {
    File { path: PathBuf },
    Synthetic { n_buses: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_improvement")]
    pub min_improvement: f64,
}

fn default_epochs() -> usize {
    1000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_patience() -> usize {
    50
}
fn default_min_improvement() -> f64 {
    1e-6
}
fn default_threshold() -> f64 {
    0.5
}
fn default_bench_samples() -> usize {
    100
}
fn default_profile() -> WindProfile {
    WindProfile::Base
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            patience: default_patience(),
            min_improvement: default_min_improvement(),
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            patience: self.patience,
            min_improvement: self.min_improvement,
        }
    }
}

/// One pipeline run: a grid, a noise sweep and where to put the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSource,
    #[serde(default = "default_profile")]
    pub wind_profile: WindProfile,
    pub etas: Vec<f64>,
    pub n_samples: usize,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub output_dir: PathBuf,
    /// External id of the reference bus; the grid's own choice when absent.
    #[serde(default)]
    pub reference_bus: Option<usize>,
    /// Test samples timed per case.
    #[serde(default = "default_bench_samples")]
    pub bench_samples: usize,
}

impl RunConfig {
    /// Parse a TOML file. Relative paths are taken relative to the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> CliResult<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let GridSource::File { path: p } = &mut config.grid {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.etas.is_empty() {
            return bad("at least one noise level is required".into());
        }
        if let Some(eta) = self.etas.iter().find(|e| !(**e >= 0.0 && **e < 1.0)) {
            return bad(format!("noise level {eta} is outside [0, 1)"));
        }
        if self.n_samples == 0 || !self.n_samples.is_multiple_of(2) {
            return bad(format!(
                "sample count must be positive and even, got {}",
                self.n_samples
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} is outside (0, 1)", self.threshold));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.learning_rate > 0.0)
        {
            return bad("epochs, batch size and learning rate must be positive".into());
        }
        match &self.grid {
            GridSource::File { path } if !path.is_file() => {
                return bad(format!("grid file {} does not exist", path.display()))
            }
            GridSource::Synthetic { n_buses } if *n_buses < 2 => {
                return bad(format!(
                    "a synthetic grid needs at least 2 buses, got {n_buses}"
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Load or generate the grid and apply the reference-bus override.
    pub fn load_grid(&self) -> CliResult<Grid> {
        let grid = match &self.grid {
            GridSource::File { path } => at(Stage::GridGen, Grid::load(path))?,
            GridSource::Synthetic { n_buses } => at(
                Stage::GridGen,
                generate_synthetic_grid(*n_buses, self.seed, self.wind_profile),
            )?,
        };
        match self.reference_bus {
            None => Ok(grid),
            Some(id) => {
                let mut file = grid.to_file();
                file.slack_bus = id;
                at(Stage::GridGen, file.into_grid())
            }
        }
    }

    pub fn case_name(&self, grid: &Grid) -> String {
        let source = match &self.grid {
            GridSource::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "grid".into()),
            GridSource::Synthetic { .. } => format!("syn{}", grid.n_buses()),
        };
        let wind = match self.wind_profile {
            WindProfile::Base => "B",
            WindProfile::High => "H",
        };
        format!("{source}{wind}")
    }
}
