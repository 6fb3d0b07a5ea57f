//! Experiment execution: dataset preparation, seed batteries, grid sweeps,
//! the three-arm self-training comparison, and aggregate tables. Runs for
//! independent seeds or grid cells execute in parallel; every artifact file
//! is named by its cell and seed and written atomically, so parallel runs
//! never collide and reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use lmm_core::data::{split, synth_gaussians, Dataset, LabelSpace, SplitSpec};
use lmm_core::metrics;
use lmm_core::noise::{inject, NoiseTransitionMatrix};
use lmm_core::report;
use lmm_core::train::{self_train, train, TrainMode, TrainingReport};

use crate::config::{DataSource, ExperimentConfig};

/// Train/val/test triple ready for a battery at one noise rate.
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub flips: usize,
}

pub fn load_source(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.source {
        DataSource::Csv { path, classes } => {
            let space = LabelSpace::new(*classes)?;
            Ok(Dataset::load_csv(path, space)?)
        }
        DataSource::Synth {
            spec,
            n_per_class,
            seed,
        } => Ok(synth_gaussians(spec, *n_per_class, *seed)?),
    }
}

/// Splits the source and, when enabled, corrupts the train split (and
/// optionally the validation split) at the given rate. The test split is
/// never corrupted: test metrics are always against clean labels.
pub fn prepare(config: &ExperimentConfig, dataset: &Dataset, gamma: f64) -> Result<PreparedData> {
    let spec = SplitSpec::new(
        config.split.train_fraction,
        config.split.val_fraction,
        config.split.test_fraction,
        config.split.seed,
    )?;
    let (train_split, val_split, test_split) = split(dataset, &spec)?;
    if !config.noise.enabled || gamma == 0.0 {
        return Ok(PreparedData {
            train: train_split,
            val: val_split,
            test: test_split,
            flips: 0,
        });
    }
    let matrix = NoiseTransitionMatrix::symmetric(dataset.num_classes(), gamma)?;
    let (noisy_train, flips) = inject(&train_split, &matrix, config.noise.seed)?;
    let val_out = if config.noise.inject_val {
        inject(&val_split, &matrix, config.noise.seed.wrapping_add(1))?.0
    } else {
        val_split
    };
    Ok(PreparedData {
        train: noisy_train,
        val: val_out,
        test: test_split,
        flips: flips.len(),
    })
}

/// Final metrics of one run, used for aggregate rows.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub test_acc: f64,
    pub test_auc: Option<f64>,
    pub purity: Option<f64>,
    pub kappa: Option<f64>,
    pub psi_size: usize,
    pub trigger_epoch: Option<usize>,
}

impl RunSummary {
    fn from_report(seed: u64, report: &TrainingReport) -> Self {
        Self {
            seed,
            test_acc: report.final_test_accuracy,
            test_auc: report.final_test_auc,
            purity: report.final_purity,
            kappa: report.final_kappa,
            psi_size: report.psi.len(),
            trigger_epoch: report.trigger_epoch,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from(
        "seed,test_acc,test_auc,purity,kappa,psi_size,trigger_epoch\n",
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.seed,
            s.test_acc,
            fmt_opt(s.test_auc),
            fmt_opt(s.purity),
            fmt_opt(s.kappa),
            s.psi_size,
            fmt_opt_usize(s.trigger_epoch),
        );
    }
    let col = |f: fn(&RunSummary) -> Option<f64>| -> (String, String) {
        let values: Vec<f64> = summaries.iter().filter_map(f).collect();
        if values.is_empty() {
            (String::new(), String::new())
        } else {
            let (m, s) = mean_std(&values);
            (m.to_string(), s.to_string())
        }
    };
    let (acc_m, acc_s) = col(|s| Some(s.test_acc));
    let (auc_m, auc_s) = col(|s| s.test_auc);
    let (pur_m, pur_s) = col(|s| s.purity);
    let (kap_m, kap_s) = col(|s| s.kappa);
    let (psi_m, psi_s) = col(|s| Some(s.psi_size as f64));
    let _ = writeln!(out, "mean,{acc_m},{auc_m},{pur_m},{kap_m},{psi_m},");
    let _ = writeln!(out, "std,{acc_s},{auc_s},{pur_s},{kap_s},{psi_s},");
    out
}

fn gamma_tag(gamma: f64) -> String {
    format!("g{:03}", (gamma * 100.0).round() as usize)
}

/// One battery: all configured modes and seeds at every configured noise
/// rate, with per-seed artifacts plus one aggregate per (gamma, mode).
pub fn run_train_batteries(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dataset = load_source(config)?;
    let mut written = Vec::new();
    let multi_gamma = config.noise.gammas.len() > 1;
    let mut battery_rows: Vec<(f64, TrainMode, Vec<RunSummary>)> = Vec::new();

    for &gamma in &config.noise.gammas {
        let data = prepare(config, &dataset, gamma)?;
        for &mode in &config.modes {
            let runs: Vec<(u64, TrainingReport)> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    let tc = config.train_config(mode, seed, gamma);
                    let report = train(&tc, &data.train, &data.val, &data.test)
                        .map_err(|e| anyhow!("seed {seed}: {e}"))?;
                    Ok((seed, report))
                })
                .collect::<Result<_>>()?;

            let cell = format!("{}_{}_{}", config.tag, gamma_tag(gamma), mode);
            let mut summaries = Vec::new();
            for (seed, report) in &runs {
                // format! instead of with_extension: tags may contain dots
                let epochs_path = config
                    .out_dir
                    .join(format!("{cell}_seed{seed}.epochs.csv"));
                report::write_epoch_csv(&epochs_path, report)?;
                written.push(epochs_path);
                let summary_path = config
                    .out_dir
                    .join(format!("{cell}_seed{seed}.summary.txt"));
                report::write_summary(
                    &summary_path,
                    report,
                    &[
                        ("tag", config.tag.clone()),
                        ("mode", mode.to_string()),
                        ("gamma", gamma.to_string()),
                        ("seed", seed.to_string()),
                        ("train_flips", data.flips.to_string()),
                    ],
                )?;
                written.push(summary_path);
                let psi_path = config.out_dir.join(format!("{cell}_seed{seed}.psi.csv"));
                report::write_psi_csv(&psi_path, &report.psi, data.train.num_classes())?;
                written.push(psi_path);
                summaries.push(RunSummary::from_report(*seed, report));
            }
            let aggregate_path = config.out_dir.join(format!("{cell}_aggregate.csv"));
            report::atomic_write(&aggregate_path, aggregate_csv(&summaries).as_bytes())?;
            written.push(aggregate_path);
            battery_rows.push((gamma, mode, summaries));
        }
    }

    if multi_gamma {
        let mut table = String::from(
            "gamma,mode,test_acc_mean,test_acc_std,purity_mean,purity_std,kappa_mean,kappa_std\n",
        );
        for (gamma, mode, summaries) in &battery_rows {
            let accs: Vec<f64> = summaries.iter().map(|s| s.test_acc).collect();
            let (acc_m, acc_s) = mean_std(&accs);
            let purities: Vec<f64> = summaries.iter().filter_map(|s| s.purity).collect();
            let kappas: Vec<f64> = summaries.iter().filter_map(|s| s.kappa).collect();
            let (pur_m, pur_s) = if purities.is_empty() {
                (String::new(), String::new())
            } else {
                let (m, s) = mean_std(&purities);
                (m.to_string(), s.to_string())
            };
            let (kap_m, kap_s) = if kappas.is_empty() {
                (String::new(), String::new())
            } else {
                let (m, s) = mean_std(&kappas);
                (m.to_string(), s.to_string())
            };
            let _ = writeln!(
                table,
                "{gamma},{mode},{acc_m},{acc_s},{pur_m},{pur_s},{kap_m},{kap_s}"
            );
        }
        let path = config.out_dir.join(format!("{}_battery.csv", config.tag));
        report::atomic_write(&path, table.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Grid sweep over window width, uncertainty threshold, and optionally eta.
/// Each cell runs every seed; failures are recorded per row and the sweep
/// continues.
pub fn run_sweep(
    config: &ExperimentConfig,
    window_widths: &[usize],
    epsilons: &[f64],
    etas: &[f64],
) -> Result<Vec<PathBuf>> {
    if window_widths.is_empty() || epsilons.is_empty() || etas.is_empty() {
        return Err(anyhow!("sweep grids must be nonempty"));
    }
    let dataset = load_source(config)?;
    let gamma = config.noise.gammas[0];
    let data = prepare(config, &dataset, gamma)?;
    let mode = config.modes.first().copied().unwrap_or(TrainMode::Lmm);

    let mut cells = Vec::new();
    for &t in window_widths {
        for &eps in epsilons {
            for &eta in etas {
                for &seed in &config.seeds {
                    cells.push((t, eps, eta, seed));
                }
            }
        }
    }
    let results: Vec<(usize, f64, f64, u64, Result<RunSummary, String>)> = cells
        .par_iter()
        .map(|&(t, eps, eta, seed)| {
            let mut tc = config.train_config(mode, seed, gamma);
            tc.window_width = t;
            tc.epsilon = eps;
            tc.eta = eta;
            let outcome = train(&tc, &data.train, &data.val, &data.test)
                .map(|r| RunSummary::from_report(seed, &r))
                .map_err(|e| e.to_string());
            (t, eps, eta, seed, outcome)
        })
        .collect();

    let mut table = String::from(
        "window_width,epsilon,eta,seed,status,test_acc,purity,kappa,psi_size,trigger_epoch\n",
    );
    for (t, eps, eta, seed, outcome) in &results {
        match outcome {
            Ok(s) => {
                let _ = writeln!(
                    table,
                    "{t},{eps},{eta},{seed},ok,{},{},{},{},{}",
                    s.test_acc,
                    fmt_opt(s.purity),
                    fmt_opt(s.kappa),
                    s.psi_size,
                    fmt_opt_usize(s.trigger_epoch),
                );
            }
            Err(msg) => {
                let clean = msg.replace([',', '\n'], ";");
                let _ = writeln!(table, "{t},{eps},{eta},{seed},error:{clean},,,,,");
            }
        }
    }

    // best cell by mean test accuracy over seeds that completed
    let mut best: Option<(usize, f64, f64, f64, usize)> = None;
    for &t in window_widths {
        for &eps in epsilons {
            for &eta in etas {
                let accs: Vec<f64> = results
                    .iter()
                    .filter(|(rt, reps, reta, _, r)| {
                        *rt == t && *reps == eps && *reta == eta && r.is_ok()
                    })
                    .map(|(_, _, _, _, r)| r.as_ref().unwrap().test_acc)
                    .collect();
                if accs.is_empty() {
                    continue;
                }
                let (mean, _) = mean_std(&accs);
                if best.is_none_or(|(_, _, _, b, _)| mean > b) {
                    best = Some((t, eps, eta, mean, accs.len()));
                }
            }
        }
    }

    let sweep_path = config.out_dir.join(format!("{}_sweep.csv", config.tag));
    report::atomic_write(&sweep_path, table.as_bytes())?;
    let mut written = vec![sweep_path];

    if let Some((t, eps, eta, acc, n)) = best {
        let mut text = String::new();
        let _ = writeln!(text, "best_window_width = {t}");
        let _ = writeln!(text, "best_epsilon = {eps}");
        let _ = writeln!(text, "best_eta = {eta}");
        let _ = writeln!(text, "best_mean_test_acc = {acc}");
        let _ = writeln!(text, "seeds_completed = {n}");
        let best_path = config.out_dir.join(format!("{}_sweep_best.txt", config.tag));
        report::atomic_write(&best_path, text.as_bytes())?;
        written.push(best_path);
    }
    Ok(written)
}

/// Three-arm self-training comparison at each labeled fraction: control
/// (labeled slice only), plain self-training, and self-training with
/// refurbished pseudo-labels.
pub fn run_selftrain(config: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<PathBuf>> {
    if fractions.is_empty() {
        return Err(anyhow!("need at least one labeled fraction"));
    }
    let dataset = load_source(config)?;
    let gamma = config.noise.gammas[0];
    // Pool keeps its labels; pseudo-labels are the noise source here.
    let data = prepare(config, &dataset, gamma)?;

    struct Row {
        fraction: f64,
        arm: &'static str,
        seed: u64,
        test_acc: f64,
        pseudo_purity: Option<f64>,
    }

    let mut cells = Vec::new();
    for &fraction in fractions {
        for &seed in &config.seeds {
            cells.push((fraction, seed));
        }
    }
    let rows: Vec<Vec<Row>> = cells
        .par_iter()
        .map(|&(fraction, seed)| -> Result<Vec<Row>> {
            let lmm_cfg = config.train_config(TrainMode::Lmm, seed, gamma);
            let plain_cfg = config.train_config(TrainMode::Default, seed, gamma);
            let with_lmm = self_train(&lmm_cfg, fraction, &data.train, &data.val, &data.test)?;
            let plain = self_train(&plain_cfg, fraction, &data.train, &data.val, &data.test)?;
            Ok(vec![
                Row {
                    fraction,
                    arm: "control",
                    seed,
                    test_acc: with_lmm.labeled_phase.final_test_accuracy,
                    pseudo_purity: None,
                },
                Row {
                    fraction,
                    arm: "selftrain",
                    seed,
                    test_acc: plain.combined_phase.final_test_accuracy,
                    pseudo_purity: plain.pseudo_label_purity,
                },
                Row {
                    fraction,
                    arm: "selftrain-lmm",
                    seed,
                    test_acc: with_lmm.combined_phase.final_test_accuracy,
                    pseudo_purity: with_lmm.pseudo_label_purity,
                },
            ])
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Row> = rows.into_iter().flatten().collect();

    let mut table = String::from("fraction,arm,seed,test_acc,pseudo_purity\n");
    for row in &rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            row.fraction,
            row.arm,
            row.seed,
            row.test_acc,
            fmt_opt(row.pseudo_purity),
        );
    }
    let detail_path = config.out_dir.join(format!("{}_selftrain.csv", config.tag));
    report::atomic_write(&detail_path, table.as_bytes())?;

    let mut agg = String::from("fraction,arm,test_acc_mean,test_acc_std\n");
    for &fraction in fractions {
        for arm in ["control", "selftrain", "selftrain-lmm"] {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.fraction == fraction && r.arm == arm)
                .map(|r| r.test_acc)
                .collect();
            let (m, s) = mean_std(&accs);
            let _ = writeln!(agg, "{fraction},{arm},{m},{s}");
        }
    }
    let agg_path = config
        .out_dir
        .join(format!("{}_selftrain_aggregate.csv", config.tag));
    report::atomic_write(&agg_path, agg.as_bytes())?;
    Ok(vec![detail_path, agg_path])
}

/// Audit of a labeled CSV against its own truth column, optionally with the
/// labels of a refurbished-set CSV substituted in.
pub fn run_eval(
    dataset_path: &Path,
    classes: usize,
    psi_path: Option<&Path>,
    output: Option<&Path>,
) -> Result<String> {
    let space = LabelSpace::new(classes)?;
    let dataset = Dataset::load_csv(dataset_path, space)?;
    if !dataset.has_truth_labels() {
        return Err(anyhow!(
            "{} has no truth_label column; nothing to audit against",
            dataset_path.display()
        ));
    }
    let mut current: std::collections::BTreeMap<usize, usize> = dataset
        .samples()
        .iter()
        .map(|s| (s.id, s.observed_label))
        .collect();
    if let Some(path) = psi_path {
        for (id, label) in report::read_psi_csv(path)? {
            if label >= classes {
                return Err(anyhow!("refurbished label {label} out of range"));
            }
            if current.contains_key(&id) {
                current.insert(id, label);
            }
        }
    }
    let truth = dataset.truth_labels().expect("checked above");
    let current_vec: Vec<usize> = dataset.samples().iter().map(|s| current[&s.id]).collect();
    let purity = metrics::data_purity(&dataset, &current)?;
    let kappa = metrics::cohen_kappa(&current_vec, &truth, classes)?;
    let acc = metrics::accuracy(&current_vec, &truth)?;
    let cm = metrics::confusion(&truth, &current_vec, classes)?;

    let mut out = String::new();
    let _ = writeln!(out, "samples = {}", dataset.len());
    let _ = writeln!(out, "purity = {purity}");
    let _ = writeln!(out, "kappa = {kappa}");
    let _ = writeln!(out, "accuracy = {acc}");
    let _ = writeln!(out, "confusion_rows_reference_truth:");
    out.push_str(&cm.to_string());
    if let Some(path) = output {
        report::atomic_write(path, out.as_bytes()).context("writing eval output")?;
    }
    Ok(out)
}

/// Injection as a standalone step: writes the corrupted CSV and a flip log.
pub fn run_inject(
    input: &Path,
    classes: usize,
    gamma: f64,
    seed: u64,
    output: &Path,
    flip_log: Option<&Path>,
) -> Result<(usize, usize)> {
    let space = LabelSpace::new(classes)?;
    let dataset = Dataset::load_csv(input, space)?;
    let matrix = NoiseTransitionMatrix::symmetric(classes, gamma)?;
    let (noisy, flips) = inject(&dataset, &matrix, seed)?;
    noisy.write_csv(output)?;
    if let Some(path) = flip_log {
        report::write_flip_log_csv(path, &flips)?;
    }
    Ok((noisy.len(), flips.len()))
}
