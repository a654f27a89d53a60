//! Experiment configuration: a preset, optionally overlaid by a JSON file and then
//! by command-line flags.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use trl_core::train::{ObjectiveKind, SchemeKind, SyntheticSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 25x25x25 weight, rank 15, 10 000 samples, 500 epochs.
    Paper,
    /// 10x10x10 weight, rank 5, 2 000 samples, 150 epochs.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Stochastic,
    Deterministic,
    Both,
}

impl ObjectiveArg {
    pub fn kinds(self) -> Vec<ObjectiveKind> {
        match self {
            ObjectiveArg::Stochastic => vec![ObjectiveKind::Stochastic],
            ObjectiveArg::Deterministic => vec![ObjectiveKind::Deterministic],
            ObjectiveArg::Both => vec![ObjectiveKind::Stochastic, ObjectiveKind::Deterministic],
        }
    }
}

/// Keys accepted in a config file. Every key is optional; unknown keys are errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub thetas: Option<Vec<f64>>,
    pub objectives: Option<Vec<ObjectiveKind>>,
    pub data: Option<DataOverrides>,
    pub train: Option<TrainOverrides>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOverrides {
    pub weight_shape: Option<Vec<usize>>,
    pub output_dim: Option<usize>,
    pub true_rank: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub scheme: Option<SchemeKind>,
    pub model_rank: Option<usize>,
}

/// Fully resolved settings, echoed next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub preset: Preset,
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub objectives: Vec<ObjectiveKind>,
    pub data: SyntheticSpec,
    /// Template for every cell; `theta`, `objective` and `seed` are set per cell.
    pub train: TrainConfig,
}

/// Command-line overrides, applied last.
#[derive(Debug, Default)]
pub struct Flags {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub objective: Option<ObjectiveArg>,
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

pub fn resolve(file: ConfigFile, flags: &Flags) -> Result<Resolved, String> {
    let preset = flags.preset.or(file.preset).unwrap_or(Preset::Desk);
    let (mut data, mut train) = match preset {
        Preset::Paper => (SyntheticSpec::default(), TrainConfig::default()),
        Preset::Desk => (SyntheticSpec::desk(), TrainConfig::desk()),
    };
    if let Some(d) = file.data {
        set(&mut data.weight_shape, d.weight_shape);
        set(&mut data.output_dim, d.output_dim);
        set(&mut data.true_rank, d.true_rank);
        set(&mut data.n_train, d.n_train);
        set(&mut data.n_test, d.n_test);
    }
    if let Some(t) = file.train {
        set(&mut train.epochs, t.epochs);
        set(&mut train.batch_size, t.batch_size);
        set(&mut train.lr_initial, t.lr_initial);
        set(&mut train.lr_decay_factor, t.lr_decay_factor);
        set(&mut train.lr_decay_epochs, t.lr_decay_epochs);
        set(&mut train.scheme, t.scheme);
        set(&mut train.model_rank, t.model_rank);
    }
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let thetas = match flags.theta {
        Some(t) => vec![t],
        None => file.thetas.unwrap_or_else(|| vec![1.0, 0.7, 0.4, 0.1]),
    };
    let objectives = match flags.objective {
        Some(o) => o.kinds(),
        None => file
            .objectives
            .unwrap_or_else(|| vec![ObjectiveKind::Stochastic, ObjectiveKind::Deterministic]),
    };
    data.seed = seed;
    train.seed = seed;

    if thetas.is_empty() || objectives.is_empty() {
        return Err("at least one theta and one objective are required".into());
    }
    data.validate().map_err(|e| e.to_string())?;
    for &theta in &thetas {
        TrainConfig { theta, ..train.clone() }.validate().map_err(|e| e.to_string())?;
    }
    Ok(Resolved {
        preset,
        seed,
        thetas,
        objectives,
        data,
        train,
    })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
