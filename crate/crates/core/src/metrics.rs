//! Run-directory bookkeeping: metrics CSV, config snapshot, summary file,
//! and a content-hash manifest that makes every run self-describing.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::trainers::TrainRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256_hex(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Append-only CSV sink for training records.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> io::Result<MetricsWriter> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", TrainRecord::csv_header())?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, rec: &TrainRecord) -> io::Result<()> {
        writeln!(self.out, "{}", rec.csv_row())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// One run's output directory. Files are written under a fixed layout so
/// downstream tooling and reruns can find them by name.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> io::Result<RunDir> {
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    /// Points at an existing run directory without creating anything.
    pub fn at(root: &Path) -> RunDir {
        RunDir {
            root: root.to_path_buf(),
        }
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoint.bin")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn write_config_snapshot(&self, toml_text: &str) -> io::Result<()> {
        fs::write(self.config_path(), toml_text)
    }

    /// Key/value summary rows, stable two-column schema.
    pub fn write_summary(&self, pairs: &[(&str, String)]) -> io::Result<()> {
        let mut out = String::from("metric,value\n");
        for (k, v) in pairs {
            out.push_str(k);
            out.push(',');
            out.push_str(v);
            out.push('\n');
        }
        fs::write(self.summary_path(), out)
    }

    /// Hashes every standard output file present. Written last so the
    /// manifest covers the finished run.
    pub fn write_manifest(&self) -> io::Result<()> {
        let mut lines = String::new();
        for name in ["config.toml", "metrics.csv", "checkpoint.bin", "summary.csv"] {
            let p = self.root.join(name);
            if p.exists() {
                lines.push_str(&format!("{}  {}\n", file_sha256_hex(&p)?, name));
            }
        }
        fs::write(self.manifest_path(), lines)
    }
}
