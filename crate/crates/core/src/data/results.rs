use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub angle_deg: f64,
    pub n_samples: usize,
    pub accuracy: f64,
}

/// Accuracy per rotation angle of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub model: String,
    pub seed: u64,
}

impl SweepResult {
    pub fn validate(&self) -> Result<()> {
        if self.records.windows(2).any(|w| w[1].angle_deg <= w[0].angle_deg) {
            return Err(Error::InvalidConfig("sweep angles must be strictly increasing".into()));
        }
        if self.records.iter().any(|r| !(0.0..=1.0).contains(&r.accuracy)) {
            return Err(Error::InvalidConfig("accuracy must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn accuracy_at(&self, angle: f64) -> Option<f64> {
        self.records.iter().find(|r| r.angle_deg == angle).map(|r| r.accuracy)
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.accuracy).sum::<f64>() / self.records.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub seconds: f64,
}

/// Run description written next to every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: serde_json::Value,
    pub seed: u64,
    /// Git-style blob hash of every checkpoint file, by file name.
    pub checkpoint: BTreeMap<String, String>,
}

/// SHA-256 of `"blob <len>\0" + bytes`, as git computes object ids in its
/// SHA-256 repository format.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn checkpoint_hashes(files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((name, git_blob_hash(&fs::read(p)?)))
        })
        .collect()
}

/// `<path>` with its extension replaced by `json`.
pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<PathBuf> {
    let target = path.with_extension("json");
    let mut json = serde_json::to_vec_pretty(sidecar)?;
    json.push(b'\n');
    fs::write(&target, json)?;
    Ok(target)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().from_writer(fs::File::create(path)?))
}

/// `angle_deg,n_samples,accuracy`, accuracy with six decimals.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["angle_deg", "n_samples", "accuracy"])?;
    for r in &result.records {
        w.write_record([
            r.angle_deg.to_string(),
            r.n_samples.to_string(),
            format!("{:.6}", r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {field} `{value}`")))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::format(path, format!("header {found:?}, expected {header:?}")));
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    read_rows(path, &["angle_deg", "n_samples", "accuracy"])?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(SweepRecord {
                angle_deg: parse(path, i + 2, "angle_deg", &rec[0])?,
                n_samples: parse(path, i + 2, "n_samples", &rec[1])?,
                accuracy: parse(path, i + 2, "accuracy", &rec[2])?,
            })
        })
        .collect()
}

/// `epoch,lr,train_loss,train_acc,seconds`.
pub fn write_epoch_log(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "lr", "train_loss", "train_acc", "seconds"])?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            format!("{:.6}", r.train_acc),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows(path, &["epoch", "lr", "train_loss", "train_acc", "seconds"])?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(EpochRecord {
                epoch: parse(path, i + 2, "epoch", &rec[0])?,
                lr: parse(path, i + 2, "lr", &rec[1])?,
                train_loss: parse(path, i + 2, "train_loss", &rec[2])?,
                train_acc: parse(path, i + 2, "train_acc", &rec[3])?,
                seconds: parse(path, i + 2, "seconds", &rec[4])?,
            })
        })
        .collect()
}
