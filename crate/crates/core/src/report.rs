//! File output for experiment artifacts: per-epoch CSV, key-value summary,
//! refurbished-set CSV, and flip logs. Every writer goes through
//! [`atomic_write`] (write to a sibling temp file, then rename) so partially
//! written artifacts never appear, and all numbers use the shortest
//! round-trip decimal form so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::noise::FlipRecord;
use crate::refurbish::RefurbishedSet;
use crate::train::{SelfTrainReport, TrainingReport};

/// Writes `bytes` to `path` via a temp file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per epoch:
/// `epoch,train_loss,val_loss,val_acc,test_acc,purity,kappa,psi_size,lmm_active`.
pub fn epoch_csv(report: &TrainingReport) -> String {
    let mut out =
        String::from("epoch,train_loss,val_loss,val_acc,test_acc,purity,kappa,psi_size,lmm_active\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.val_acc,
            row.test_acc,
            fmt_opt(row.purity),
            fmt_opt(row.kappa),
            row.psi_size,
            u8::from(row.lmm_active),
        );
    }
    out
}

pub fn write_epoch_csv(path: &Path, report: &TrainingReport) -> io::Result<()> {
    atomic_write(path, epoch_csv(report).as_bytes())
}

/// Flat `key = value` summary of the final state of a run.
pub fn summary_text(report: &TrainingReport, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (key, value) in extra {
        let _ = writeln!(out, "{key} = {value}");
    }
    let _ = writeln!(out, "epochs_completed = {}", report.rows.len());
    let _ = writeln!(
        out,
        "trigger_epoch = {}",
        report
            .trigger_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "none".into())
    );
    let _ = writeln!(out, "final_test_accuracy = {}", report.final_test_accuracy);
    let _ = writeln!(out, "final_test_auc = {}", fmt_opt(report.final_test_auc));
    let _ = writeln!(out, "final_purity = {}", fmt_opt(report.final_purity));
    let _ = writeln!(out, "final_kappa = {}", fmt_opt(report.final_kappa));
    let _ = writeln!(out, "psi_size = {}", report.psi.len());
    let _ = writeln!(out, "skipped_batches = {}", report.skipped_batches);
    for warning in &report.warnings {
        let _ = writeln!(out, "warning = {warning}");
    }
    out
}

pub fn write_summary(path: &Path, report: &TrainingReport, extra: &[(&str, String)]) -> io::Result<()> {
    atomic_write(path, summary_text(report, extra).as_bytes())
}

/// Refurbished set as CSV:
/// `sample_id,refurb_label,epoch_assigned,p_0..p_{M-1}`, ids ascending.
pub fn psi_csv(psi: &RefurbishedSet, num_classes: usize) -> String {
    let mut out = String::from("sample_id,refurb_label,epoch_assigned");
    for j in 0..num_classes {
        let _ = write!(out, ",p_{j}");
    }
    out.push('\n');
    for (id, entry) in psi.iter() {
        let _ = write!(out, "{id},{},{}", entry.label, entry.epoch_assigned);
        for p in &entry.posterior {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

pub fn write_psi_csv(path: &Path, psi: &RefurbishedSet, num_classes: usize) -> io::Result<()> {
    atomic_write(path, psi_csv(psi, num_classes).as_bytes())
}

/// Reads back a refurbished-set CSV written by [`write_psi_csv`],
/// returning `(sample_id, refurb_label)` pairs.
pub fn read_psi_csv(path: &Path) -> io::Result<Vec<(usize, usize)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let parse = |idx: usize| -> io::Result<usize> {
            record
                .get(idx)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("bad field {idx} in {record:?}"),
                    )
                })
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Flip log as CSV: `id,old_label,new_label` in injection order.
pub fn flip_log_csv(flips: &[FlipRecord]) -> String {
    let mut out = String::from("id,old_label,new_label\n");
    for f in flips {
        let _ = writeln!(out, "{},{},{}", f.id, f.old_label, f.new_label);
    }
    out
}

pub fn write_flip_log_csv(path: &Path, flips: &[FlipRecord]) -> io::Result<()> {
    atomic_write(path, flip_log_csv(flips).as_bytes())
}

/// Summary of a self-training pipeline run.
pub fn self_train_summary(report: &SelfTrainReport, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (key, value) in extra {
        let _ = writeln!(out, "{key} = {value}");
    }
    let _ = writeln!(out, "labeled_count = {}", report.labeled_count);
    let _ = writeln!(out, "pseudo_count = {}", report.pseudo_count);
    let _ = writeln!(
        out,
        "pseudo_label_purity = {}",
        fmt_opt(report.pseudo_label_purity)
    );
    let _ = writeln!(
        out,
        "labeled_phase_test_accuracy = {}",
        report.labeled_phase.final_test_accuracy
    );
    let _ = writeln!(
        out,
        "combined_phase_test_accuracy = {}",
        report.combined_phase.final_test_accuracy
    );
    let _ = writeln!(
        out,
        "combined_trigger_epoch = {}",
        report
            .combined_phase
            .trigger_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "none".into())
    );
    out
}
