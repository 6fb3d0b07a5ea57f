//! Experiment configuration: a flat TOML key-value file merged with CLI
//! flags (flags win). All randomness flows from seeds named here; the only
//! environment override is `LMM_OUT_DIR` for the output directory.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use toml::Table;

use lmm_core::data::GaussianMixtureSpec;
use lmm_core::model::{Architecture, OptimizerKind};
use lmm_core::refurbish::EvidenceMode;
use lmm_core::startup::StartupConfig;
use lmm_core::train::{TrainConfig, TrainMode};

/// Where the dataset comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Csv { path: PathBuf, classes: usize },
    Synth {
        spec: GaussianMixtureSpec,
        n_per_class: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct NoiseSettings {
    /// Noise rates to inject; one battery entry per rate.
    pub gammas: Vec<f64>,
    pub seed: u64,
    /// Whether the validation split is corrupted along with train.
    pub inject_val: bool,
    /// Skip injection entirely (data is already noisy or meant clean).
    pub enabled: bool,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub split: SplitSettings,
    pub noise: NoiseSettings,
    pub modes: Vec<TrainMode>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub window_width: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub evidence: EvidenceMode,
    pub arch: Architecture,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub relaxation_factor: f64,
    pub loss_lower: f64,
    pub out_dir: PathBuf,
    pub tag: String,
}

impl ExperimentConfig {
    /// Builds the per-run training config for one (mode, seed, gamma) cell.
    pub fn train_config(&self, mode: TrainMode, seed: u64, gamma: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            gamma,
            window_width: self.window_width,
            epsilon: self.epsilon,
            eta: self.eta,
            evidence: self.evidence,
            startup: StartupConfig {
                warmup_epochs: self.warmup_epochs,
                relaxation_factor: self.relaxation_factor,
                loss_lower: self.loss_lower,
                noise_rate: gamma,
            },
            mode,
            seed,
            arch: self.arch.clone(),
            optimizer: self.optimizer.clone(),
            learning_rate: self.learning_rate,
        }
    }
}

/// Raw option bag prior to resolution; every field mirrors either a config
/// key or a CLI flag.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub csv: Option<PathBuf>,
    pub classes: Option<usize>,
    pub synth_preset: Option<String>,
    pub synth_means: Option<String>,
    pub synth_std: Option<f64>,
    pub synth_n_per_class: Option<usize>,
    pub synth_seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
    pub split_seed: Option<u64>,
    pub gamma: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub noise_seed: Option<u64>,
    pub inject_val: Option<bool>,
    pub no_inject: Option<bool>,
    pub modes: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window_width: Option<usize>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub evidence: Option<String>,
    pub arch: Option<String>,
    pub hidden_units: Option<usize>,
    pub optimizer: Option<String>,
    pub learning_rate: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub relaxation_factor: Option<f64>,
    pub loss_lower: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub tag: Option<String>,
}

fn get_f64(table: &Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .map(Some)
            .ok_or_else(|| anyhow!("config key {key:?} must be a number, got {v}")),
    }
}

fn get_usize(table: &Table, key: &str) -> Result<Option<usize>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_integer()
            .filter(|&i| i >= 0)
            .map(|i| Some(i as usize))
            .ok_or_else(|| anyhow!("config key {key:?} must be a nonnegative integer, got {v}")),
    }
}

fn get_u64(table: &Table, key: &str) -> Result<Option<u64>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_integer()
            .filter(|&i| i >= 0)
            .map(|i| Some(i as u64))
            .ok_or_else(|| anyhow!("config key {key:?} must be a nonnegative integer, got {v}")),
    }
}

fn get_bool(table: &Table, key: &str) -> Result<Option<bool>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_bool()
            .map(Some)
            .ok_or_else(|| anyhow!("config key {key:?} must be a boolean, got {v}")),
    }
}

fn get_string(table: &Table, key: &str) -> Result<Option<String>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_str()
            .map(|s| Some(s.to_string()))
            .ok_or_else(|| anyhow!("config key {key:?} must be a string, got {v}")),
    }
}

fn get_u64_list(table: &Table, key: &str) -> Result<Option<Vec<u64>>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_integer()
                    .filter(|&i| i >= 0)
                    .map(|i| i as u64)
                    .ok_or_else(|| anyhow!("config key {key:?} must hold nonnegative integers"))
            })
            .collect::<Result<Vec<u64>>>()
            .map(Some),
        Some(toml::Value::String(s)) => parse_u64_list(s).map(Some),
        Some(v) => bail!("config key {key:?} must be an array or list string, got {v}"),
    }
}

fn get_f64_list(table: &Table, key: &str) -> Result<Option<Vec<f64>>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| anyhow!("config key {key:?} must hold numbers"))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some),
        Some(toml::Value::String(s)) => parse_f64_list(s).map(Some),
        Some(v) => bail!("config key {key:?} must be an array or list string, got {v}"),
    }
}

pub fn parse_u64_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().with_context(|| format!("bad integer {s:?}")))
        .collect()
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad number {s:?}")))
        .collect()
}

pub fn parse_mode(text: &str) -> Result<TrainMode> {
    match text {
        "default" => Ok(TrainMode::Default),
        "lmm" => Ok(TrainMode::Lmm),
        "uniform-vote-ablation" => Ok(TrainMode::UniformVoteAblation),
        other => bail!("unknown mode {other:?} (default | lmm | uniform-vote-ablation)"),
    }
}

fn parse_means(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_f64_list)
        .collect()
}

/// Merges config-file values under CLI overrides and fills defaults.
pub fn resolve(file: Option<&Table>, cli: &Overrides) -> Result<ExperimentConfig> {
    let empty = Table::new();
    let table = file.unwrap_or(&empty);

    let pick = |flag: Option<f64>, key: &str| -> Result<Option<f64>> {
        Ok(flag.or(get_f64(table, key)?))
    };

    // dataset source
    let csv = cli.csv.clone().or(get_string(table, "csv")?.map(PathBuf::from));
    let classes = cli.classes.or(get_usize(table, "classes")?);
    let synth_preset = cli.synth_preset.clone().or(get_string(table, "synth_preset")?);
    let synth_means = cli.synth_means.clone().or(get_string(table, "synth_means")?);
    let synth_std = cli.synth_std.or(get_f64(table, "synth_std")?);
    let synth_n = cli
        .synth_n_per_class
        .or(get_usize(table, "synth_n_per_class")?);
    let synth_seed = cli.synth_seed.or(get_u64(table, "synth_seed")?).unwrap_or(11);

    let source = if let Some(path) = csv {
        let classes =
            classes.ok_or_else(|| anyhow!("a csv source needs `classes` (number of labels)"))?;
        DataSource::Csv { path, classes }
    } else {
        let mut spec = match synth_preset.as_deref() {
            Some("two-cluster") | None => GaussianMixtureSpec::two_cluster(),
            Some("pentagon") => GaussianMixtureSpec::pentagon(4.0),
            Some(other) => bail!("unknown synth_preset {other:?} (two-cluster | pentagon)"),
        };
        if let Some(means) = synth_means {
            spec.class_means = parse_means(&means)?;
        }
        if let Some(std_dev) = synth_std {
            spec.std_dev = std_dev;
        }
        DataSource::Synth {
            spec,
            n_per_class: synth_n.unwrap_or(500),
            seed: synth_seed,
        }
    };

    let split = SplitSettings {
        train_fraction: pick(cli.train_fraction, "train_fraction")?.unwrap_or(0.8),
        val_fraction: pick(cli.val_fraction, "val_fraction")?.unwrap_or(0.1),
        test_fraction: pick(cli.test_fraction, "test_fraction")?.unwrap_or(0.1),
        seed: cli.split_seed.or(get_u64(table, "split_seed")?).unwrap_or(22),
    };

    let gammas = match (&cli.gammas, cli.gamma) {
        (Some(list), _) => list.clone(),
        (None, Some(g)) => vec![g],
        (None, None) => match get_f64_list(table, "gammas")? {
            Some(list) => list,
            None => vec![get_f64(table, "gamma")?.unwrap_or(0.0)],
        },
    };
    if gammas.is_empty() {
        bail!("need at least one noise rate");
    }
    let noise = NoiseSettings {
        gammas,
        seed: cli.noise_seed.or(get_u64(table, "noise_seed")?).unwrap_or(33),
        inject_val: cli
            .inject_val
            .or(get_bool(table, "inject_val")?)
            .unwrap_or(false),
        enabled: !cli
            .no_inject
            .or(get_bool(table, "no_inject")?)
            .unwrap_or(false),
    };

    let mode_names = match &cli.modes {
        Some(list) => list.clone(),
        None => match table.get("modes") {
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| anyhow!("`modes` must hold strings"))
                })
                .collect::<Result<Vec<_>>>()?,
            Some(toml::Value::String(s)) => {
                s.split(',').map(|p| p.trim().to_string()).collect()
            }
            Some(v) => bail!("`modes` must be an array of strings, got {v}"),
            None => vec![get_string(table, "mode")?.unwrap_or_else(|| "lmm".into())],
        },
    };
    let modes = mode_names
        .iter()
        .map(|s| parse_mode(s))
        .collect::<Result<Vec<_>>>()?;

    let seeds = cli
        .seeds
        .clone()
        .or(get_u64_list(table, "seeds")?)
        .unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
    if seeds.is_empty() {
        bail!("seed list must be nonempty");
    }

    let evidence = match cli
        .evidence
        .clone()
        .or(get_string(table, "evidence")?)
        .unwrap_or_else(|| "soft".into())
        .as_str()
    {
        "soft" => EvidenceMode::SoftProbability,
        "hard" => EvidenceMode::HardIndicator,
        other => bail!("unknown evidence mode {other:?} (soft | hard)"),
    };

    let hidden_units = cli
        .hidden_units
        .or(get_usize(table, "hidden_units")?)
        .unwrap_or(16);
    let arch = match cli
        .arch
        .clone()
        .or(get_string(table, "arch")?)
        .unwrap_or_else(|| "softmax-linear".into())
        .as_str()
    {
        "softmax-linear" => Architecture::SoftmaxLinear,
        "mlp" => Architecture::MlpOneHidden { hidden_units },
        other => bail!("unknown arch {other:?} (softmax-linear | mlp)"),
    };

    let optimizer = match cli
        .optimizer
        .clone()
        .or(get_string(table, "optimizer")?)
        .unwrap_or_else(|| "adam".into())
        .as_str()
    {
        "adam" => OptimizerKind::adam_default(),
        "sgd" => OptimizerKind::Sgd,
        other => bail!("unknown optimizer {other:?} (adam | sgd)"),
    };

    let out_dir = std::env::var_os("LMM_OUT_DIR")
        .map(PathBuf::from)
        .or(cli.out_dir.clone())
        .or(get_string(table, "out_dir")?.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    Ok(ExperimentConfig {
        source,
        split,
        noise,
        modes,
        seeds,
        epochs: cli.epochs.or(get_usize(table, "epochs")?).unwrap_or(60),
        batch_size: cli
            .batch_size
            .or(get_usize(table, "batch_size")?)
            .unwrap_or(32),
        window_width: cli
            .window_width
            .or(get_usize(table, "window_width")?)
            .unwrap_or(5),
        epsilon: pick(cli.epsilon, "epsilon")?.unwrap_or(0.4),
        eta: pick(cli.eta, "eta")?.unwrap_or(2.0),
        evidence,
        arch,
        optimizer,
        learning_rate: pick(cli.learning_rate, "learning_rate")?.unwrap_or(1e-4),
        warmup_epochs: cli
            .warmup_epochs
            .or(get_usize(table, "warmup_epochs")?)
            .unwrap_or(10),
        relaxation_factor: pick(cli.relaxation_factor, "relaxation_factor")?.unwrap_or(0.0),
        loss_lower: pick(cli.loss_lower, "loss_lower")?.unwrap_or(0.0),
        out_dir,
        tag: cli
            .tag
            .clone()
            .or(get_string(table, "tag")?)
            .unwrap_or_else(|| "run".into()),
    })
}

pub fn load_table(path: &std::path::Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("cannot parse config {}", path.display()))
}
