//! Experiment configuration shared by every subcommand.
//!
//! A JSON file supplies defaults; command-line flags override individual
//! fields. Everything is validated before a command touches the filesystem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shiftscope::data::{NasCategory, SynthConfig};
use shiftscope::hyperparam::{SweepGrid, DEFAULT_ACCURACY_FLOOR};
use shiftscope::losses::LossConfig;
use shiftscope::metrics::Metric;
use shiftscope::net::{Activation, DenseNet};
use shiftscope::scorers::{DetectorConfig, OdinConfig, ScorerKind};
use shiftscope::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: String,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            hidden: vec![16; 4],
            activation: "relu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    /// One of `ce`, `ce+dist`, `ce+entropy`, `full`.
    pub kind: String,
    pub w_dist: f64,
    pub lambda_var: f64,
    pub lambda_corr: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: "ce".into(),
            w_dist: 0.1,
            lambda_var: 0.1,
            lambda_corr: 0.001,
        }
    }
}

impl LossSpec {
    pub fn to_loss_config(&self) -> Result<LossConfig, CliError> {
        let cfg = match self.kind.as_str() {
            "ce" => LossConfig::ce_only(),
            "ce+dist" => LossConfig::ce_dist(self.w_dist),
            "ce+entropy" => LossConfig::ce_entropy(self.lambda_var, self.lambda_corr),
            "full" => LossConfig::full(self.w_dist, self.lambda_var, self.lambda_corr),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown loss '{other}' (valid: ce, ce+dist, ce+entropy, full)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Side of the equilateral triangle of class centres.
    pub side: f64,
    pub spread: f64,
    pub n_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            side: 6.0,
            spread: 1.0,
            n_per_class: 200,
        }
    }
}

impl SynthSpec {
    pub fn to_synth_config(&self, seed: u64) -> Result<SynthConfig, CliError> {
        if !(self.side > 0.0 && self.side.is_finite()) {
            return Err(CliError::Usage(format!("triangle side must be positive, got {}", self.side)));
        }
        let cfg = SynthConfig::triangle(self.side, self.spread, self.n_per_class, seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSpec {
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub energy_temperature: f64,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        let odin = OdinConfig::default();
        ScorerSpec {
            odin_temperature: odin.temperature,
            odin_epsilon: odin.epsilon,
            energy_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub lambda_var: Vec<f64>,
    pub lambda_corr: Vec<f64>,
    pub accuracy_floor: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let g = SweepGrid::default();
        SweepSpec {
            lambda_var: g.lambda_var,
            lambda_corr: g.lambda_corr,
            accuracy_floor: DEFAULT_ACCURACY_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub net: NetSpec,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub category: u8,
    pub deltas: Vec<f64>,
    /// Samples per shifted set.
    pub n_nas: usize,
    pub scorers: Vec<String>,
    pub metrics: Vec<String>,
    pub scorer_params: ScorerSpec,
    pub sweep: SweepSpec,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            net: NetSpec::default(),
            loss: LossSpec::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            category: 1,
            deltas: vec![0.25, 0.5, 0.75, 1.0],
            n_nas: 600,
            scorers: ScorerKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            metrics: Metric::ALL.iter().map(|m| m.name().to_string()).collect(),
            scorer_params: ScorerSpec::default(),
            sweep: SweepSpec::default(),
            seeds: (0..5).collect(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn activation(&self) -> Result<Activation, CliError> {
        Ok(self.net.activation.parse()?)
    }

    pub fn layer_sizes(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.net.hidden);
        sizes.push(num_classes);
        sizes
    }

    /// Checks the architecture without needing data.
    pub fn validate_net(&self) -> Result<Activation, CliError> {
        let act = self.activation()?;
        if self.net.hidden.is_empty() {
            return Err(CliError::Usage("the net needs at least one hidden layer".into()));
        }
        DenseNet::new(&self.layer_sizes(2, 3), act, 0)?;
        Ok(act)
    }

    pub fn validate_train(&self) -> Result<(), CliError> {
        Ok(self.train.validate()?)
    }

    pub fn category(&self) -> Result<NasCategory, CliError> {
        Ok(NasCategory::from_number(self.category)?)
    }

    pub fn scorer_kinds(&self) -> Result<Vec<ScorerKind>, CliError> {
        if self.scorers.is_empty() {
            return Err(CliError::Usage("scorer list is empty".into()));
        }
        let kinds = self
            .scorers
            .iter()
            .map(|s| s.parse::<ScorerKind>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(dedup(kinds))
    }

    pub fn metric_kinds(&self) -> Result<Vec<Metric>, CliError> {
        if self.metrics.is_empty() {
            return Err(CliError::Usage("metric list is empty".into()));
        }
        let kinds = self
            .metrics
            .iter()
            .map(|s| s.parse::<Metric>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(dedup(kinds))
    }

    pub fn detector_config(&self) -> Result<DetectorConfig, CliError> {
        let p = &self.scorer_params;
        let odin = OdinConfig {
            temperature: p.odin_temperature,
            epsilon: p.odin_epsilon,
        };
        odin.validate()?;
        if !(p.energy_temperature > 0.0 && p.energy_temperature.is_finite()) {
            return Err(CliError::Usage("energy temperature must be positive".into()));
        }
        Ok(DetectorConfig {
            odin,
            energy_temperature: p.energy_temperature,
            ..DetectorConfig::default()
        })
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid, CliError> {
        let grid = SweepGrid {
            lambda_var: self.sweep.lambda_var.clone(),
            lambda_corr: self.sweep.lambda_corr.clone(),
            w_dist: self.loss.w_dist,
        };
        grid.validate()?;
        if !self.sweep.accuracy_floor.is_finite() {
            return Err(CliError::Usage("accuracy floor must be finite".into()));
        }
        Ok(grid)
    }

    pub fn first_seed(&self) -> Result<u64, CliError> {
        self.seeds
            .first()
            .copied()
            .ok_or_else(|| CliError::Usage("seed list is empty".into()))
    }

    pub fn out_path(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output path given (use --out or the config's \"out\")".into()))
    }
}

fn dedup<T: PartialEq>(items: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}
