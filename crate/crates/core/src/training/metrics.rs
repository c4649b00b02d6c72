//! Append-only CSV log of per-step losses.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,l_recon,l_kl_g,l_kl_l,l_post,l_adv_g,l_adv_d,l_fm,beta_g,beta_l,grad_norm";

/// Per-step scalars. KL values are unweighted; `l_final` is the weighted
/// generator objective and is not a CSV column.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub l_recon: f64,
    pub l_kl_g: f64,
    pub l_kl_l: f64,
    pub l_post: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_fm: f64,
    pub beta_g: f64,
    pub beta_l: f64,
    pub grad_norm: f64,
    pub l_final: f64,
    pub l_mel: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.l_recon,
            self.l_kl_g,
            self.l_kl_l,
            self.l_post,
            self.l_adv_g,
            self.l_adv_d,
            self.l_fm,
            self.beta_g,
            self.beta_l,
            self.grad_norm
        )
    }

    /// Weighted sum of the logged parts.
    pub fn recombined(&self, gamma: f64, delta: f64) -> f64 {
        self.l_recon
            + self.beta_g * self.l_kl_g
            + self.beta_l * self.l_kl_l
            + gamma * self.l_post
            + self.l_adv_g
            + delta * self.l_fm
    }
}

pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Opens for appending; writes the header when the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if fresh {
            log.line(METRICS_HEADER)?;
        }
        Ok(log)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        self.line(&m.csv_row())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}
