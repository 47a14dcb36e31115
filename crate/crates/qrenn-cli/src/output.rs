//! CSV and manifest emission. Every CSV carries a fixed documented header;
//! CSV bytes are a pure function of (config, seed, code version). The
//! manifest additionally records wall time and file hashes, which vary.

use anyhow::Context;
use qrenn_core::bench::{GradStatRow, OverlapRow, SptRow, SptSweepRow, TrainingMetrics};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

fn fmt(v: f64) -> String {
    // shortest round-trip representation keeps output bit-stable
    format!("{v}")
}

pub fn write_gradstats_csv(dir: &Path, rows: &[GradStatRow]) -> anyhow::Result<PathBuf> {
    let path = dir.join("gradstats.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "T", "samples", "mean", "variance", "stderr", "predicted_variance"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.slots.to_string(),
            r.samples.to_string(),
            fmt(r.mean),
            fmt(r.variance),
            fmt(r.stderr),
            r.predicted_variance.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_loss_csv(dir: &Path, curve: &[f64]) -> anyhow::Result<PathBuf> {
    let path = dir.join("loss.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epoch", "loss"])?;
    for (epoch, loss) in curve.iter().enumerate() {
        w.write_record([epoch.to_string(), fmt(*loss)])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_predictions_csv(dir: &Path, metrics: &TrainingMetrics) -> anyhow::Result<PathBuf> {
    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["index", "truth", "predicted"])?;
    for (i, (t, p)) in metrics.truth.iter().zip(&metrics.predictions).enumerate() {
        w.write_record([i.to_string(), t.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_spt_csv(dir: &Path, rows: &[SptRow]) -> anyhow::Result<PathBuf> {
    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["lambda", "truth", "predicted", "fhat"])?;
    for r in rows {
        w.write_record([fmt(r.lambda), r.truth.to_string(), r.predicted.to_string(), fmt(r.fhat)])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_sweep_csv(dir: &Path, rows: &[SptSweepRow]) -> anyhow::Result<PathBuf> {
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["train_size", "repeats", "mean_accuracy", "min_accuracy", "max_accuracy"])?;
    for r in rows {
        w.write_record([
            r.train_size.to_string(),
            r.repeats.to_string(),
            fmt(r.mean_accuracy),
            fmt(r.min_accuracy),
            fmt(r.max_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_overlap_csv(dir: &Path, rows: &[OverlapRow]) -> anyhow::Result<PathBuf> {
    let path = dir.join("overlap.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "lambda", "probe", "r2"])?;
    for r in rows {
        w.write_record([r.n.to_string(), fmt(r.lambda), r.probe.clone(), fmt(r.r2)])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {} for hashing", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}
