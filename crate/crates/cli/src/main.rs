//! `lmm` — experiment harness for training classifiers on noisy labels.
//!
//! Subcommands: `inject` corrupts a dataset CSV with symmetric label noise,
//! `train` runs seed batteries across modes and noise rates, `sweep` grids
//! over window width / uncertainty threshold / eta, `selftrain` runs the
//! three-arm pseudo-label comparison, and `eval` audits a labeled CSV
//! against its truth column.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;
use lmm_core::train::TrainError;

#[derive(Parser)]
#[command(name = "lmm", version, about = "Label-noise training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt the labels of a dataset CSV with symmetric noise.
    Inject {
        /// Input dataset CSV (header f0..fD, label, optional truth_label).
        #[arg(long)]
        input: PathBuf,
        /// Number of classes M.
        #[arg(long)]
        classes: usize,
        /// Noise rate in [0, 1].
        #[arg(long)]
        gamma: f64,
        /// RNG seed for the flips.
        #[arg(long, default_value_t = 33)]
        seed: u64,
        /// Output CSV path; the truth_label column is always filled.
        #[arg(long)]
        output: PathBuf,
        /// Optional flip-log CSV (id,old_label,new_label).
        #[arg(long)]
        flip_log: Option<PathBuf>,
    },
    /// Train one or more modes over a seed battery and write reports.
    Train(ExperimentArgs),
    /// Grid-search window width, uncertainty threshold, and eta.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Window widths to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 15])]
        window_widths: Vec<usize>,
        /// Uncertainty thresholds to sweep.
        #[arg(
            long,
            value_delimiter = ',',
            default_values_t = [0.3f64, 0.325, 0.35, 0.375, 0.4, 0.425, 0.45]
        )]
        epsilons: Vec<f64>,
        /// Eta values to sweep (defaults to the configured eta).
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
    },
    /// Compare control / self-training / self-training+refurbishment.
    Selftrain {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Labeled fractions of the training pool.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1f64])]
        fractions: Vec<f64>,
    },
    /// Audit a labeled CSV (current vs truth labels).
    Eval {
        /// Dataset CSV with a truth_label column.
        #[arg(long)]
        data: PathBuf,
        /// Number of classes M.
        #[arg(long)]
        classes: usize,
        /// Optional refurbished-set CSV whose labels replace the observed ones.
        #[arg(long)]
        psi: Option<PathBuf>,
        /// Optional output file for the audit text.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Flat TOML config file; every flag below overrides its key.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dataset CSV path (alternative: synthetic source).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Number of classes for a CSV source.
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic preset: two-cluster | pentagon.
    #[arg(long)]
    synth_preset: Option<String>,
    /// Synthetic class means, e.g. "-2,0;2,0".
    #[arg(long)]
    synth_means: Option<String>,
    /// Shared standard deviation of the synthetic clusters.
    #[arg(long)]
    synth_std: Option<f64>,
    /// Samples per class for the synthetic source.
    #[arg(long)]
    synth_n_per_class: Option<usize>,
    /// Seed for the synthetic draw.
    #[arg(long)]
    synth_seed: Option<u64>,

    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,

    /// Noise rate; see also --gammas for a battery.
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma list of noise rates, one battery entry each.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Corrupt the validation split along with train.
    #[arg(long)]
    inject_val: bool,
    /// Do not inject noise (data is already noisy or meant clean).
    #[arg(long)]
    no_inject: bool,

    /// Training mode: default | lmm | uniform-vote-ablation.
    #[arg(long)]
    mode: Option<String>,
    /// Comma list of modes to run side by side.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Comma list of training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Prediction window width T.
    #[arg(long)]
    window_width: Option<usize>,
    /// Uncertainty threshold for the refurbishment gate.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Exponential time-weight parameter.
    #[arg(long)]
    eta: Option<f64>,
    /// Evidence mode: soft | hard.
    #[arg(long)]
    evidence: Option<String>,
    /// Architecture: softmax-linear | mlp.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden_units: Option<usize>,
    /// Optimizer: adam | sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Relaxation factor phi in [-0.1, 0.1].
    #[arg(long)]
    relaxation_factor: Option<f64>,
    /// Lower end of the launch loss band.
    #[arg(long)]
    loss_lower: Option<f64>,

    /// Output directory (env LMM_OUT_DIR overrides).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Name prefix for every artifact of this experiment.
    #[arg(long)]
    tag: Option<String>,
}

impl ExperimentArgs {
    fn resolve(&self) -> anyhow::Result<config::ExperimentConfig> {
        let table = match &self.config {
            Some(path) => Some(config::load_table(path)?),
            None => None,
        };
        let overrides = Overrides {
            csv: self.csv.clone(),
            classes: self.classes,
            synth_preset: self.synth_preset.clone(),
            synth_means: self.synth_means.clone(),
            synth_std: self.synth_std,
            synth_n_per_class: self.synth_n_per_class,
            synth_seed: self.synth_seed,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            split_seed: self.split_seed,
            gamma: self.gamma,
            gammas: self.gammas.clone(),
            noise_seed: self.noise_seed,
            inject_val: self.inject_val.then_some(true),
            no_inject: self.no_inject.then_some(true),
            modes: self
                .modes
                .clone()
                .or_else(|| self.mode.clone().map(|m| vec![m])),
            seeds: self.seeds.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            window_width: self.window_width,
            epsilon: self.epsilon,
            eta: self.eta,
            evidence: self.evidence.clone(),
            arch: self.arch.clone(),
            hidden_units: self.hidden_units,
            optimizer: self.optimizer.clone(),
            learning_rate: self.learning_rate,
            warmup_epochs: self.warmup_epochs,
            relaxation_factor: self.relaxation_factor,
            loss_lower: self.loss_lower,
            out_dir: self.out_dir.clone(),
            tag: self.tag.clone(),
        };
        config::resolve(table.as_ref(), &overrides)
    }
}

/// Exit-code classes for error reporting.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(train_err) = cause.downcast_ref::<TrainError>() {
            return match train_err {
                TrainError::Diverged { .. } | TrainError::Model(_) => 3,
                TrainError::Config(_) | TrainError::Startup(_) | TrainError::Refurbish(_) => 1,
                TrainError::Data(_) | TrainError::Metrics(_) | TrainError::History(_) => 2,
            };
        }
        if cause.downcast_ref::<lmm_core::data::DataError>().is_some()
            || cause.downcast_ref::<lmm_core::metrics::MetricsError>().is_some()
            || cause.downcast_ref::<lmm_core::noise::NoiseError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
        if cause.downcast_ref::<lmm_core::model::ModelError>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Inject {
            input,
            classes,
            gamma,
            seed,
            output,
            flip_log,
        } => {
            let (n, flips) =
                runner::run_inject(&input, classes, gamma, seed, &output, flip_log.as_deref())?;
            println!(
                "wrote {} ({n} rows, {flips} labels changed)",
                output.display()
            );
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            let written = runner::run_train_batteries(&config)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep {
            experiment,
            window_widths,
            epsilons,
            etas,
        } => {
            let config = experiment.resolve()?;
            let etas = etas.unwrap_or_else(|| vec![config.eta]);
            let written = runner::run_sweep(&config, &window_widths, &epsilons, &etas)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Selftrain {
            experiment,
            fractions,
        } => {
            let config = experiment.resolve()?;
            let written = runner::run_selftrain(&config, &fractions)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Eval {
            data,
            classes,
            psi,
            output,
        } => {
            let text = runner::run_eval(&data, classes, psi.as_deref(), output.as_deref())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
