//! Small shared helpers: lossless float formatting and atomic file writes.

use std::fs;
use std::path::Path;

use crate::Result;

/// Format an `f64` with 17 significant digits.
///
/// 17 digits pin down a unique `f64`, so text produced here parses back
/// bit-exactly. Used for every float written to checkpoints and CSV files.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write `contents` to `path` atomically: write to a sibling temp file, then
/// rename over the target. A failed run never leaves a partial output file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(tmp_name(path)),
        None => std::path::PathBuf::from(tmp_name(path)),
    };
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn tmp_name(path: &Path) -> String {
    let base = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    format!(".{base}.tmp")
}

/// Unbiased sample statistics over a slice of measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    /// Unbiased sample variance (n-1 denominator); 0 when n < 2.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return SampleStats {
                mean: f64::NAN,
                variance: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                n: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)
        };
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        SampleStats {
            mean,
            variance,
            min,
            max,
            n,
        }
    }
}
